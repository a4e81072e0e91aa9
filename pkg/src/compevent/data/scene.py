"""Procedural clean video and the low-light / motion-blur degradation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])

SHAPES = ("rectangle", "disk")
TEXTURES = ("checker", "gradient", "noise")


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    texture: str
    center: tuple[float, float]  # (x, y) at latent frame 0
    size: tuple[float, float]  # half-extents for rectangles, (radius, radius) for disks
    velocity: tuple[float, float]  # px per latent frame
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    texture_scale: float = 4.0
    texture_seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    n_objects: int = 3
    latent_rate: int = 13
    background: float = 0.45
    max_speed: float = 1.5
    objects: tuple[ObjectSpec, ...] | None = None

    def validate(self) -> None:
        if self.height < 2 or self.width < 2:
            raise ValueError(f"degenerate canvas {self.height}x{self.width}")
        if self.latent_rate < 1 or self.latent_rate % 2 == 0:
            raise ValueError(f"latent_rate must be odd and positive, got {self.latent_rate}")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background luminance must be in [0, 1]")
        if self.max_speed < 0:
            raise ValueError("max_speed must be non-negative")

    def resolved_objects(self) -> tuple[ObjectSpec, ...]:
        if self.objects is not None:
            return self.objects
        rng = np.random.default_rng([self.seed, 1])
        objs = []
        for k in range(self.n_objects):
            shape = SHAPES[rng.integers(len(SHAPES))]
            texture = TEXTURES[rng.integers(len(TEXTURES))]
            lo = min(self.height, self.width)
            half = rng.uniform(0.1, 0.22, size=2) * lo
            if shape == "disk":
                half = np.array([half[0], half[0]])
            speed = rng.uniform(0.3, 1.0) * self.max_speed
            angle = rng.uniform(0, 2 * np.pi)
            objs.append(
                ObjectSpec(
                    shape=shape,
                    texture=texture,
                    center=(rng.uniform(0.2, 0.8) * self.width, rng.uniform(0.2, 0.8) * self.height),
                    size=(float(half[0]), float(half[1])),
                    velocity=(float(speed * np.cos(angle)), float(speed * np.sin(angle))),
                    color=tuple(float(c) for c in rng.uniform(0.3, 1.0, size=3)),
                    texture_scale=float(rng.uniform(2.0, 6.0)),
                    texture_seed=int(rng.integers(2**31)),
                )
            )
        return tuple(objs)


def _texture(obj: ObjectSpec, lx: np.ndarray, ly: np.ndarray) -> np.ndarray:
    """Texture luminance in [0.2, 1] at object-local coordinates."""
    s = obj.texture_scale
    if obj.texture == "checker":
        v = (np.floor(lx / s) + np.floor(ly / s)) % 2
        return 0.35 + 0.65 * v
    if obj.texture == "gradient":
        span = max(obj.size[0], 1e-6)
        return 0.2 + 0.8 * np.clip((lx + span) / (2 * span), 0.0, 1.0)
    # value noise on a coarse lattice, nearest lookup, fixed to the object
    rng = np.random.default_rng(obj.texture_seed)
    n = int(np.ceil(2 * max(obj.size) / s)) + 3
    lattice = rng.uniform(0.2, 1.0, size=(n, n))
    ix = np.clip(np.floor((lx + max(obj.size)) / s).astype(int) + 1, 0, n - 1)
    iy = np.clip(np.floor((ly + max(obj.size)) / s).astype(int) + 1, 0, n - 1)
    return lattice[iy, ix]


def _background(spec: SceneSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    rng = np.random.default_rng([spec.seed, 2])
    fx, fy, phase = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)
    pattern = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * x / w + fy * y / h) + phase)
    lum = spec.background * (0.6 + 0.4 * pattern)
    tint = rng.uniform(0.8, 1.0, size=3)
    return lum[None] * tint[:, None, None]


def render(spec: SceneSpec, t: float, objects: tuple[ObjectSpec, ...] | None = None) -> np.ndarray:
    """RGB frame (3, H, W) in [0, 1] at latent time ``t``."""
    objects = spec.resolved_objects() if objects is None else objects
    img = _background(spec)
    y, x = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    for obj in objects:
        cx = obj.center[0] + obj.velocity[0] * t
        cy = obj.center[1] + obj.velocity[1] * t
        lx, ly = x - cx, y - cy
        if obj.shape == "rectangle":
            mask = (np.abs(lx) <= obj.size[0]) & (np.abs(ly) <= obj.size[1])
        else:
            mask = lx * lx + ly * ly <= obj.size[0] ** 2
        if not mask.any():
            continue
        tex = _texture(obj, lx[mask], ly[mask])
        for c in range(3):
            img[c][mask] = tex * obj.color[c]
    return np.clip(img, 0.0, 1.0)


@dataclass
class SceneFrames:
    latents: np.ndarray  # (T, 3, H, W)
    targets: np.ndarray  # (n_output, 3, H, W)
    latent_rate: int

    def block(self, k: int) -> np.ndarray:
        """Latents exposed during output frame ``k``."""
        r = self.latent_rate
        return self.latents[k * r : (k + 1) * r]

    def event_span(self, k: int) -> np.ndarray:
        """Latents bounding the event window of frame ``k`` (one extra at the end)."""
        r = self.latent_rate
        return self.latents[k * r : (k + 1) * r + 1]


def synth_scene(spec: SceneSpec, n_output_frames: int) -> SceneFrames:
    """Latent sequence of ``n_output_frames * latent_rate + 1`` frames.

    The clean target of output frame k is the centre latent of its block.
    """
    spec.validate()
    if n_output_frames < 1:
        raise ValueError("n_output_frames must be >= 1")
    objects = spec.resolved_objects()
    r = spec.latent_rate
    total = n_output_frames * r + 1
    latents = np.stack([render(spec, float(j), objects) for j in range(total)]).astype(np.float32)
    targets = np.stack([latents[k * r + r // 2] for k in range(n_output_frames)])
    return SceneFrames(latents, targets, r)


@dataclass(frozen=True)
class DegradeSpec:
    blur_m: int = 6
    brightness: float = 0.15
    gamma: float = 2.2
    noise: float = 0.01

    def validate(self) -> None:
        if self.blur_m < 0:
            raise ValueError("blur_m must be >= 0")
        if not 0.0 < self.brightness <= 1.0:
            raise ValueError("brightness must be in (0, 1]")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def degrade(latents: np.ndarray, spec: DegradeSpec, seed: int = 0) -> np.ndarray:
    """Low-light blurry frame from an exposure block of latents (T, C, H, W).

    Averages the 2m+1 latents centred in the block, darkens with
    v -> b * v**gamma, adds seeded Gaussian noise and clips to [0, 1].
    """
    spec.validate()
    n = 2 * spec.blur_m + 1
    if len(latents) < n:
        raise ValueError(f"degrade needs >= {n} latents, got {len(latents)}")
    c = len(latents) // 2
    window = np.asarray(latents[c - spec.blur_m : c + spec.blur_m + 1], dtype=np.float64)
    v = window.mean(axis=0)
    v = spec.brightness * np.power(v, spec.gamma)
    if spec.noise > 0:
        v = v + np.random.default_rng(seed).normal(0.0, spec.noise, size=v.shape)
    return np.clip(v, 0.0, 1.0).astype(np.float32)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luma over the channel axis (axis -3)."""
    return np.tensordot(LUMA, np.asarray(rgb, dtype=np.float64), axes=([0], [-3]))
