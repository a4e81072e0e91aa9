"""Gradient-verification suite and quick self-test, shared by the CLI and tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import torch
from torch import nn

from .autodiff import GradCheckReport, corrupt_backward, grad_check
from .csfl import CSFB, FrequencyBranch
from .gru import CGMCell, cgm_step
from .layers import (
    ComplexConv2d,
    ComplexLayerNorm,
    ConvGeometry,
    split_gelu,
    split_sigmoid,
    split_tanh,
    transposed_geometry,
)
from .model import CompEvent, ModelConfig
from .tensor import ComplexTensor, fft2d, ifft2d

GRAD_OPS = (
    "conv", "conv_strided", "conv_depthwise", "conv_transposed",
    "split_sigmoid", "split_tanh", "split_gelu",
    "cln", "fft_path", "gru_2step", "csfb", "end_to_end",
)


@dataclass
class GradCheckSettings:
    h: float = 1e-4
    tol: float = 1e-3
    samples: int = 64
    e2e_samples: int = 4
    seed: int = 0


def randomize_(module: nn.Module, seed: int, scale: float = 0.3) -> nn.Module:
    """Overwrite every parameter with seeded noise (zero-initialized layers included)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_((torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 - 1) * scale)
    return module


def _rand(shape, gen) -> torch.Tensor:
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _leaf(shape, gen) -> torch.Tensor:
    return _rand(shape, gen).requires_grad_(True)


def _projection(out: ComplexTensor | torch.Tensor, weights) -> torch.Tensor:
    if isinstance(out, ComplexTensor):
        return (out.re * weights[0]).sum() + (out.im * weights[1]).sum()
    return (out * weights[0]).sum()


def _named(module: nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + n: p for n, p in module.named_parameters()}


def _fragment(op: str, seed: int, corrupt: bool) -> tuple[Callable[[], torch.Tensor], dict[str, torch.Tensor]]:
    """Build (loss closure, parameters to check) for one op category."""
    gen = torch.Generator().manual_seed(seed)
    mark = (lambda t: corrupt_backward(t)) if corrupt else (lambda t: t)

    def cmark(z: ComplexTensor) -> ComplexTensor:
        return ComplexTensor(mark(z.re), mark(z.im)) if corrupt else z

    if op.startswith("conv"):
        geom = {
            "conv": ConvGeometry(2, 3, 3, 1, 1),
            "conv_strided": ConvGeometry(3, 2, 3, 2, 1),
            "conv_depthwise": ConvGeometry(4, 4, 3, 1, 1, groups=4),
            "conv_transposed": transposed_geometry(3, 2, 3, 2),
        }[op]
        conv = randomize_(ComplexConv2d(geom, seed), seed).double()
        x_re, x_im = _leaf((2, geom.in_channels, 6, 6), gen), _leaf((2, geom.in_channels, 6, 6), gen)
        out_shape = conv(ComplexTensor(x_re, x_im)).shape
        w = (_rand(out_shape, gen), _rand(out_shape, gen))
        params = {"input.re": x_re, "input.im": x_im, **_named(conv)}
        return (lambda: _projection(cmark(conv(ComplexTensor(x_re, x_im))), w)), params

    if op.startswith("split_"):
        fn = {"split_sigmoid": split_sigmoid, "split_tanh": split_tanh, "split_gelu": split_gelu}[op]
        x_re, x_im = _leaf((2, 3, 5, 5), gen), _leaf((2, 3, 5, 5), gen)
        w = (_rand((2, 3, 5, 5), gen), _rand((2, 3, 5, 5), gen))
        return (lambda: _projection(cmark(fn(ComplexTensor(x_re, x_im))), w)), {"input.re": x_re, "input.im": x_im}

    if op == "cln":
        norm = ComplexLayerNorm(4).double()
        with torch.no_grad():
            norm.gamma.add_(_rand(norm.gamma.shape, gen) * 0.2)
            norm.beta_re.copy_(_rand((4,), gen) * 0.1)
        x_re, x_im = _leaf((2, 4, 5, 5), gen), _leaf((2, 4, 5, 5), gen)
        w = (_rand((2, 4, 5, 5), gen), _rand((2, 4, 5, 5), gen))
        params = {"input.re": x_re, "input.im": x_im, **_named(norm)}
        return (lambda: _projection(cmark(norm(ComplexTensor(x_re, x_im))), w)), params

    if op == "fft_path":
        branch = randomize_(FrequencyBranch(3, seed), seed).double()
        x_re, x_im = _leaf((1, 3, 6, 5), gen), _leaf((1, 3, 6, 5), gen)
        w = (_rand((1, 3, 6, 5), gen), _rand((1, 3, 6, 5), gen))

        def loss():
            spec = cmark(fft2d(ComplexTensor(x_re, x_im)))
            return _projection(ifft2d(branch.chain(spec)), w)

        return loss, {"input.re": x_re, "input.im": x_im, **_named(branch)}

    if op == "gru_2step":
        cell = randomize_(CGMCell(3, seed), seed).double()
        zs = [(_leaf((1, 3, 5, 5), gen), _leaf((1, 3, 5, 5), gen)) for _ in range(2)]
        w = (_rand((1, 3, 5, 5), gen), _rand((1, 3, 5, 5), gen))

        def loss():
            h = ComplexTensor(torch.zeros(1, 3, 5, 5, dtype=torch.float64))
            for z_re, z_im in zs:
                h = cmark(cgm_step(ComplexTensor(z_re, z_im), h, cell))
            return _projection(h, w)

        params = {f"z{t}.{c}": zs[t][i] for t in range(2) for i, c in enumerate(("re", "im"))}
        params.update(_named(cell))
        return loss, params

    if op == "csfb":
        block = randomize_(CSFB(8, seed), seed, 0.2).double()
        with torch.no_grad():
            for norm in (block.cln1, block.cln2):
                norm.gamma.copy_(torch.eye(2, dtype=torch.float64).repeat(8, 1, 1) * 0.7
                                 + _rand(norm.gamma.shape, gen) * 0.1)
        x_re, x_im = _leaf((1, 8, 8, 8), gen), _leaf((1, 8, 8, 8), gen)
        w = (_rand((1, 8, 8, 8), gen), _rand((1, 8, 8, 8), gen))
        params = {"input.re": x_re, "input.im": x_im, **_named(block)}
        return (lambda: _projection(cmark(block(ComplexTensor(x_re, x_im))), w)), params

    if op == "end_to_end":
        model = tiny_model(seed).double()
        frames = [torch.rand((1, 3, 16, 16), generator=gen, dtype=torch.float64) for _ in range(3)]
        events = [_rand((1, 2, 16, 16), gen) for _ in range(3)]
        w = [_rand((1, 3, 16, 16), gen) for _ in range(3)]

        def loss():
            outs = model(frames, events)
            return sum((mark(o) * wk).sum() for o, wk in zip(outs, w))

        return loss, _named(model)

    raise ValueError(f"unknown grad-check op {op!r}")


def tiny_model(seed: int = 0) -> CompEvent:
    model = CompEvent(ModelConfig(channels=4, event_bins=2, levels=2, blocks=1, seed=seed))
    randomize_(model, seed, 0.25)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, ComplexLayerNorm):
                m.gamma.copy_(torch.eye(2).repeat(m.channels, 1, 1) * 0.7)
    return model


def run_grad_checks(
    settings: GradCheckSettings | None = None,
    ops: Iterable[str] = GRAD_OPS,
    corrupt: Iterable[str] = (),
) -> list[GradCheckReport]:
    """Finite-difference check of every op category; ``corrupt`` names ops whose
    backward is deliberately scaled (fault injection)."""
    s = settings or GradCheckSettings()
    corrupt = set(corrupt)
    reports = []
    for i, op in enumerate(ops):
        fn, params = _fragment(op, s.seed + i, op in corrupt)
        samples = s.e2e_samples if op == "end_to_end" else s.samples
        reports.append(grad_check(fn, params, s.h, s.tol, samples, s.seed, name=op))
    return reports
