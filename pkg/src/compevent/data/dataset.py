"""Synthetic three-frame samples and their on-disk layout.

A dataset directory holds ``train/`` and ``eval/`` splits, each with one
subdirectory per sample::

    sample_0000/
        frame_0.cten  frame_1.cten  frame_2.cten     degraded inputs
        target_0.cten target_1.cten target_2.cten    clean centre latents
        events_0.evt  events_1.evt  events_2.evt     one window per frame

Frames may be stored as binary PPM instead of CTEN (``image_format="ppm"``).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..tensor import ComplexTensor, FormatError, cten_bytes, cten_size, load_cten
from .events import (
    DEFAULT_EPS_LOG,
    DEFAULT_THRESHOLD,
    EventStream,
    evt_bytes,
    evt_size,
    read_events,
    simulate_events,
    voxelize,
)
from .scene import DegradeSpec, SceneSpec, degrade, luminance, synth_scene

N_FRAMES = 3
FRAME_PERIOD = 0.04  # seconds per output frame


@dataclass(frozen=True)
class DataConfig:
    height: int = 64
    width: int = 64
    n_objects: int = 3
    latent_rate: int = 13
    background: float = 0.45
    max_speed: float = 1.5
    blur_m: int = 6
    brightness: float = 0.15
    gamma: float = 2.2
    noise: float = 0.01
    threshold: float = DEFAULT_THRESHOLD
    eps_log: float = DEFAULT_EPS_LOG
    seed: int = 0

    def degrade_spec(self) -> DegradeSpec:
        return DegradeSpec(self.blur_m, self.brightness, self.gamma, self.noise)

    def scene_spec(self, sample_seed: int) -> SceneSpec:
        return SceneSpec(
            seed=sample_seed, height=self.height, width=self.width, n_objects=self.n_objects,
            latent_rate=self.latent_rate, background=self.background, max_speed=self.max_speed,
        )

    def validate(self) -> None:
        self.scene_spec(0).validate()
        self.degrade_spec().validate()
        if 2 * self.blur_m + 1 > self.latent_rate:
            raise ValueError(
                f"blur window 2m+1={2 * self.blur_m + 1} exceeds latent_rate={self.latent_rate}"
            )
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


@dataclass
class Sample:
    name: str
    frames: np.ndarray  # (3, 3, H, W) degraded
    targets: np.ndarray  # (3, 3, H, W) clean
    events: list[EventStream]

    def event_grids(self, bins: int) -> np.ndarray:
        return np.stack([voxelize(es, bins) for es in self.events])


def sample_seed(base_seed: int, split: str, index: int) -> int:
    salt = {"train": 0, "eval": 1}.get(split, 2)
    return int(np.random.SeedSequence([base_seed, salt, index]).generate_state(1)[0])


def generate_sample(cfg: DataConfig, index: int, split: str = "train") -> Sample:
    cfg.validate()
    seed = sample_seed(cfg.seed, split, index)
    scene = synth_scene(cfg.scene_spec(seed), N_FRAMES)
    spec = cfg.degrade_spec()
    frames, events = [], []
    for k in range(N_FRAMES):
        frames.append(degrade(scene.block(k), spec, seed=seed + k + 1))
        t0 = k * FRAME_PERIOD
        events.append(
            simulate_events(
                luminance(scene.event_span(k)), cfg.threshold, cfg.eps_log, t0, t0 + FRAME_PERIOD
            )
        )
    return Sample(f"sample_{index:04d}", np.stack(frames), scene.targets.astype(np.float32), events)


# --- PPM --------------------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def ppm_bytes(img: np.ndarray) -> bytes:
    """Binary P6 PPM from a (3, H, W) float image in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM expects (3, H, W), got {img.shape}")
    _, h, w = img.shape
    return f"P6\n{w} {h}\n255\n".encode() + to_uint8(img).transpose(1, 2, 0).tobytes()


def parse_ppm(buf: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header", pos)
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise FormatError(f"unsupported PPM magic {tokens[0]!r}", 0)
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}", pos)
    pos += 1
    need = 3 * w * h
    if len(buf) - pos < need:
        raise FormatError(f"truncated PPM payload: need {need} bytes, have {len(buf) - pos}", pos)
    data = np.frombuffer(buf, np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return (data.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def write_ppm(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_bytes(img))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_ppm(fh.read())


# --- image files ------------------------------------------------------------


def real_cten_bytes(img: np.ndarray) -> bytes:
    return cten_bytes(ComplexTensor(torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))))


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".ppm":
        return read_ppm(path)
    return load_cten(path).re.numpy()


def _find(d: Path, stem: str) -> Path:
    for ext in (".cten", ".ppm"):
        if (d / f"{stem}{ext}").exists():
            return d / f"{stem}{ext}"
    raise FileNotFoundError(f"missing {stem}.cten/.ppm in {d}")


def write_sample(directory, sample: Sample, image_format: str = "cten") -> Path:
    if image_format not in ("cten", "ppm"):
        raise ValueError(f"unknown image format {image_format!r}")
    d = Path(directory) / sample.name
    d.mkdir(parents=True, exist_ok=True)
    for k in range(N_FRAMES):
        for stem, img in (("frame", sample.frames[k]), ("target", sample.targets[k])):
            payload = real_cten_bytes(img) if image_format == "cten" else ppm_bytes(img)
            (d / f"{stem}_{k}.{image_format}").write_bytes(payload)
        (d / f"events_{k}.evt").write_bytes(evt_bytes(sample.events[k]))
    return d


def read_sample(directory) -> Sample:
    d = Path(directory)
    frames = np.stack([read_image(_find(d, f"frame_{k}")) for k in range(N_FRAMES)])
    targets = np.stack([read_image(_find(d, f"target_{k}")) for k in range(N_FRAMES)])
    events = [read_events(d / f"events_{k}.evt") for k in range(N_FRAMES)]
    return Sample(d.name, frames, targets, events)


def write_dataset(directory, samples: list[Sample], image_format: str = "cten") -> list[Path]:
    os.makedirs(directory, exist_ok=True)
    return [write_sample(directory, s, image_format) for s in samples]


def read_dataset(directory) -> list[Sample]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    return [read_sample(p) for p in sorted(d.iterdir()) if p.is_dir() and p.name.startswith("sample_")]


def sample_nbytes(sample: Sample) -> int:
    """Byte size of a CTEN-format sample directory, from shapes and event counts."""
    img = cten_size(sample.frames.shape[1:])
    return 2 * N_FRAMES * img + sum(evt_size(len(es)) for es in sample.events)


def to_tensors(samples: list[Sample], bins: int) -> tuple[list[torch.Tensor], list[torch.Tensor], list[torch.Tensor]]:
    """Batch samples into per-frame (N, C, H, W) tensors: frames, event grids, targets."""
    frames = np.stack([s.frames for s in samples])
    targets = np.stack([s.targets for s in samples])
    grids = np.stack([s.event_grids(bins) for s in samples])
    split = lambda a: [torch.from_numpy(np.ascontiguousarray(a[:, k])) for k in range(N_FRAMES)]
    return split(frames), split(grids), split(targets)


def config_fields() -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(DataConfig)}
