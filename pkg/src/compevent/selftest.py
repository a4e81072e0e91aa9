"""Fast numerical self-test: each fast path against its slow reference."""

from __future__ import annotations

import numpy as np
import torch

from . import oracles
from .data.dataset import DataConfig, generate_sample
from .data.events import voxelize
from .gru import CGMCell, cgm_step
from .layers import ComplexConv2d, ConvGeometry, complex_layer_norm, transposed_geometry
from .model import CompEvent, ModelConfig
from .tensor import ComplexTensor, fft2d, ifft2d


def _ct(rng, shape) -> ComplexTensor:
    return ComplexTensor(torch.from_numpy(rng.standard_normal(shape)), torch.from_numpy(rng.standard_normal(shape)))


def _np(z: ComplexTensor) -> np.ndarray:
    return z.re.numpy() + 1j * z.im.numpy()


def _kernel(conv: ComplexConv2d) -> np.ndarray:
    return conv.weight_re.detach().numpy() + 1j * conv.weight_im.detach().numpy()


def _bias(conv: ComplexConv2d) -> np.ndarray:
    return conv.bias_re.detach().numpy() + 1j * conv.bias_im.detach().numpy()


def check_conv(rng) -> float:
    worst = 0.0
    for geom in (ConvGeometry(2, 3, 3, 1, 1), ConvGeometry(3, 2, 3, 2, 1),
                 ConvGeometry(4, 4, 3, 1, 1, groups=4), transposed_geometry(2, 3, 2, 2)):
        conv = ComplexConv2d(geom, seed=int(rng.integers(1 << 30))).double()
        with torch.no_grad():
            conv.bias_re.normal_()
            conv.bias_im.normal_()
        x = _ct(rng, (1, geom.in_channels, 5, 6))
        with torch.no_grad():
            got = _np(conv(x))
        ref_fn = oracles.direct_conv_transpose2d if geom.transposed else oracles.direct_conv2d
        ref = ref_fn(_np(x), _kernel(conv), _bias(conv), geom.stride, geom.padding, geom.groups)
        worst = max(worst, float(np.abs(got - ref).max()))
    return worst


def check_fft(rng) -> float:
    x = _ct(rng, (1, 2, 5, 7))
    spec = fft2d(x)
    a = float(np.abs(_np(spec) - oracles.naive_dft2(_np(x))).max())
    b = float(np.abs(_np(ifft2d(spec)) - _np(x)).max())
    return max(a, b)


def check_cln(rng) -> float:
    x = _ct(rng, (2, 4, 8, 8))
    x = ComplexTensor(x.re * 3 + 1, x.im * 0.5 + x.re)
    gamma = torch.eye(2, dtype=torch.float64).repeat(4, 1, 1)
    zero = torch.zeros(4, dtype=torch.float64)
    y = _np(complex_layer_norm(x, gamma, zero, zero))
    means, covs = oracles.pair_statistics(y)
    return max(float(np.abs(means).max()), float(np.abs(covs - np.eye(2)).max()))


def check_gru(rng) -> float:
    cell = CGMCell(2, seed=3).double()
    z, h = _ct(rng, (1, 2, 5, 5)), _ct(rng, (1, 2, 5, 5))
    with torch.no_grad():
        got = _np(cgm_step(z, h, cell))
    ks = []
    for conv in (cell.conv_r, cell.conv_u, cell.conv_h):
        ks += [_kernel(conv), _bias(conv)]
    ref = oracles.gru_step(_np(z), _np(h), *ks)
    return float(np.abs(got - ref).max())


def check_identity() -> bool:
    model = CompEvent(ModelConfig(channels=4, event_bins=2, levels=2, blocks=1))
    gen = torch.Generator().manual_seed(0)
    frames = [torch.rand((1, 3, 9, 13), generator=gen) for _ in range(3)]
    events = [torch.randn((1, 2, 9, 13), generator=gen) for _ in range(3)]
    with torch.no_grad():
        out = model(frames, events)
    return all(torch.equal(o, f) for o, f in zip(out, frames))


def check_events() -> float:
    s = generate_sample(DataConfig(height=16, width=16, seed=1), 0)
    worst = 0.0
    for es in s.events:
        grid = voxelize(es, 5)
        worst = max(worst, abs(float(grid.sum()) - float(es.p.astype(np.int64).sum())))
    return worst


def run_selftest(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn, tol in (
        ("conv_oracle", lambda: check_conv(rng), 1e-9),
        ("fft_oracle", lambda: check_fft(rng), 1e-9),
        ("cln_whitening", lambda: check_cln(rng), 1e-4),
        ("gru_oracle", lambda: check_gru(rng), 1e-9),
        ("event_mass", check_events, 1e-6),
    ):
        err = fn()
        out.append((name, err <= tol, f"max_err={err:.3e} tol={tol:g}"))
    out.append(("identity_at_init", check_identity(), ""))
    return out
