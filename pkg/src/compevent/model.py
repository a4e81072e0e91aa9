"""End-to-end restoration network and its ablation variants."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .csfl import UNet
from .gru import BidirectionalGRU
from .tensor import ComplexTensor, ShapeError, check_finite, concat_channels

CHARBONNIER_EPS = 1e-3

FUSION_MODES = ("complex", "real-concat")
TEMPORAL_MODES = ("gru", "static", "frame-concat")
CLN_MODES = ("whiten", "separate", "concat-real")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 16
    event_bins: int = 5
    levels: int = 3
    blocks: int = 2
    fusion: str = "complex"
    temporal: str = "gru"
    freq_branch: bool = True
    cln: str = "whiten"
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion {self.fusion!r}; expected one of {FUSION_MODES}")
        if self.temporal not in TEMPORAL_MODES:
            raise ValueError(f"unknown temporal {self.temporal!r}; expected one of {TEMPORAL_MODES}")
        if self.cln not in CLN_MODES:
            raise ValueError(f"unknown cln {self.cln!r}; expected one of {CLN_MODES}")
        if self.channels < 1 or self.event_bins < 1 or self.blocks < 1:
            raise ValueError("channels, event_bins and blocks must be positive")
        if not 2 <= self.levels <= 4:
            raise ValueError(f"levels must be in 2..4, got {self.levels}")

    @property
    def width(self) -> int:
        """Feature width actually used; the real variant is narrowed to keep its size."""
        if self.fusion == "real-concat":
            return max(1, round(self.channels / math.sqrt(2)))
        return self.channels

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_mapping(cls, values: dict) -> "ModelConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise KeyError(f"unknown model config key {key!r}")
            kwargs[key] = _parse(fields[key].type, raw)
        return cls(**kwargs)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    return str(v)


def _parse(type_name, raw):
    if not isinstance(raw, str):
        return raw
    if type_name in ("bool", bool):
        if raw.lower() in ("on", "true", "1", "yes"):
            return True
        if raw.lower() in ("off", "false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_name in ("int", int):
        return int(raw)
    return raw


# Letters follow the ablation tables: (a) full model, (b)-(e) core components,
# (f)-(g) normalization.
VARIANTS = {
    "a": {},
    "b": {"fusion": "real-concat"},
    "c": {"temporal": "static"},
    "d": {"temporal": "frame-concat"},
    "e": {"freq_branch": False},
    "f": {"cln": "separate"},
    "g": {"cln": "concat-real"},
}

VARIANT_NAMES = {
    "a": "full",
    "b": "w/o complex (concat)",
    "c": "w/o GRU (static)",
    "d": "w/o GRU (concat)",
    "e": "w/o freq branch",
    "f": "w/o CLN (separate)",
    "g": "w/o CLN (concat)",
}


def variant_config(letter: str, base: ModelConfig | None = None) -> ModelConfig:
    if letter not in VARIANTS:
        raise ValueError(f"unknown variant {letter!r}; expected one of {sorted(VARIANTS)}")
    base = base or ModelConfig()
    return dataclasses.replace(base, **VARIANTS[letter])


class EmbeddingNet(nn.Module):
    """Three real 3x3 convs with GeLU in between: in -> C -> C -> C."""

    def __init__(self, in_channels: int, channels: int, seed: int):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList()
        for cin in (in_channels, channels, channels):
            conv = nn.Conv2d(cin, channels, 3, padding=1)
            bound = 1.0 / math.sqrt(cin * 9)
            with torch.no_grad():
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen) * 2 - 1) * bound)
                conv.bias.copy_((torch.rand(conv.bias.shape, generator=gen) * 2 - 1) * bound)
            self.convs.append(conv)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.gelu(x, approximate="none")
        return x


class CompEvent(nn.Module):
    N_FRAMES = 3

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.width
        s = cfg.seed * 100_003
        self.embed_frame = EmbeddingNet(3, c, s + 1)
        self.embed_event = EmbeddingNet(cfg.event_bins, c, s + 2)
        if cfg.temporal == "gru":
            self.gru = BidirectionalGRU(c, s + 100, cfg.fusion)
            unet_in = 2 * c * self.N_FRAMES
        else:
            self.gru = None
            unet_in = c * self.N_FRAMES if cfg.temporal == "frame-concat" else c
        self.unet = UNet(
            unet_in, c, cfg.levels, cfg.blocks, self.N_FRAMES, s + 1000,
            cfg.fusion, cfg.cln, cfg.freq_branch,
        )
        # residual heads start at zero: restoration is the identity at init
        self.project = nn.ModuleList(nn.Conv2d(2 * c, 3, 1) for _ in range(self.N_FRAMES))
        for conv in self.project:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    @property
    def multiple(self) -> int:
        return self.unet.multiple

    def embed(self, frame: torch.Tensor, events: torch.Tensor) -> ComplexTensor:
        """Z = F_R(frame) + i F_I(events)."""
        if frame.shape[0] != events.shape[0] or frame.shape[2:] != events.shape[2:]:
            raise ShapeError(
                f"frame {tuple(frame.shape)} and events {tuple(events.shape)} disagree on N/H/W"
            )
        return ComplexTensor(self.embed_frame(frame), self.embed_event(events))

    def align(self, zs: Sequence[ComplexTensor]) -> list[ComplexTensor]:
        if self.cfg.temporal == "gru":
            return self.gru(zs)
        return list(zs)

    def residuals(self, frames: Sequence[torch.Tensor], events: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        """Per-frame real residual maps for padded inputs."""
        zs = [self.embed(f, e) for f, e in zip(frames, events)]
        aligned = self.align(zs)
        if self.cfg.temporal == "static":
            n = aligned[0].shape[0]
            heads = self.unet(concat_batch(aligned))
            feats = [slice_batch(heads[k], k * n, (k + 1) * n) for k in range(self.N_FRAMES)]
        else:
            feats = self.unet(concat_channels(aligned))
        return [proj(torch.cat([h.re, h.im], dim=1)) for proj, h in zip(self.project, feats)]

    def forward(self, frames: Sequence[torch.Tensor], events: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        """Unclamped restored frames ``I_k + r_k`` at the input resolution."""
        if len(frames) != self.N_FRAMES or len(events) != self.N_FRAMES:
            raise ShapeError(f"expected {self.N_FRAMES} frames and event grids")
        shape = frames[0].shape
        for f in frames:
            if f.shape != shape or f.shape[1] != 3:
                raise ShapeError(f"frames must share shape (N, 3, H, W); got {tuple(f.shape)}")
        for e in events:
            if e.shape[0] != shape[0] or e.shape[2:] != shape[2:] or e.shape[1] != self.cfg.event_bins:
                raise ShapeError(
                    f"event grid {tuple(e.shape)} incompatible with frames {tuple(shape)} "
                    f"and {self.cfg.event_bins} bins"
                )
        h, w = shape[2], shape[3]
        ph, pw = (-h) % self.multiple, (-w) % self.multiple
        pf = [pad_reflect(f, ph, pw) for f in frames]
        pe = [pad_reflect(e, ph, pw) for e in events]
        res = self.residuals(pf, pe)
        out = [f + r[:, :, :h, :w] for f, r in zip(frames, res)]
        for k, o in enumerate(out):
            check_finite(o, f"restored frame {k}")
        return out

    @torch.no_grad()
    def restore(self, frames, events) -> list[torch.Tensor]:
        return [o.clamp(0.0, 1.0) for o in self(frames, events)]


def pad_reflect(x: torch.Tensor, ph: int, pw: int) -> torch.Tensor:
    if ph == 0 and pw == 0:
        return x
    # reflect needs pad < extent; fall back to replicate for tiny inputs
    mode = "reflect" if ph < x.shape[2] and pw < x.shape[3] else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode)


def concat_batch(parts: Sequence[ComplexTensor]) -> ComplexTensor:
    return ComplexTensor(torch.cat([p.re for p in parts]), torch.cat([p.im for p in parts]))


def slice_batch(x: ComplexTensor, start: int, stop: int) -> ComplexTensor:
    return ComplexTensor(x.re[start:stop], x.im[start:stop])


def charbonnier_loss(pred: Sequence[torch.Tensor], target: Sequence[torch.Tensor], eps: float = CHARBONNIER_EPS) -> torch.Tensor:
    """Mean sqrt(d^2 + eps^2) over every pixel of every frame."""
    if isinstance(pred, torch.Tensor):
        pred, target = [pred], [target]
    if len(pred) != len(target):
        raise ShapeError("loss: frame counts differ")
    total, count = 0.0, 0
    for p, t in zip(pred, target):
        if p.shape != t.shape:
            raise ShapeError(f"loss: shape mismatch {tuple(p.shape)} vs {tuple(t.shape)}")
        d = p - t
        total = total + torch.sqrt(d * d + eps * eps).sum()
        count += d.numel()
    return total / count


def build_variant(cfg: ModelConfig | str) -> CompEvent:
    if isinstance(cfg, str):
        cfg = variant_config(cfg)
    return CompEvent(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
