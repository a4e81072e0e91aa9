import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from compevent import oracles
from compevent.layers import (
    ComplexConv2d,
    ComplexLayerNorm,
    ConcatLayerNorm,
    ConvGeometry,
    SeparateLayerNorm,
    complex_conv2d,
    complex_layer_norm,
    param_count,
    real_param_count,
    split_gelu,
    split_sigmoid,
    split_tanh,
    transposed_geometry,
)
from compevent.tensor import ComplexTensor, ShapeError, scale

from conftest import as_np, conv_oracle, rand_ct, random_conv_case


def _set(conv, k_re, k_im):
    with torch.no_grad():
        conv.weight_re.copy_(k_re)
        conv.weight_im.copy_(k_im)


def test_identity_and_i_kernels(rng):
    conv = ComplexConv2d(ConvGeometry(3, 3, 1, bias=False)).double()
    eye = torch.eye(3, dtype=torch.float64).view(3, 3, 1, 1)
    x = rand_ct(rng, (2, 3, 4, 5))
    _set(conv, eye, torch.zeros_like(eye))
    out = conv(x)
    assert torch.equal(out.re, x.re) and torch.equal(out.im, x.im)
    _set(conv, torch.zeros_like(eye), eye)
    out = conv(x)
    assert torch.equal(out.re, -x.im) and torch.equal(out.im, x.re)


def test_conv_matches_direct_summation(rng):
    geom = ConvGeometry(2, 2, 3, 1, 1)
    conv = ComplexConv2d(geom, seed=3).double()
    x = rand_ct(rng, (1, 2, 5, 5))
    assert np.abs(as_np(conv(x)) - conv_oracle(conv, x)).max() < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_random_geometries_match_oracle(seed):
    rng = np.random.default_rng(seed)
    conv, shape = random_conv_case(rng)
    x = rand_ct(rng, shape)
    assert np.abs(as_np(conv(x)) - conv_oracle(conv, x)).max() < 1e-9


def test_float32_path_matches_oracle(rng):
    conv, shape = random_conv_case(rng)
    conv = conv.float()
    x = rand_ct(rng, shape, torch.float32)
    assert np.abs(as_np(conv(x)) - conv_oracle(conv, x)).max() < 1e-5


def test_block_real_form(rng):
    # [[K_R, -K_E], [K_E, K_R]] on stacked (M_R, M_E)
    geom = ConvGeometry(3, 2, 3, 2, 1)
    conv = ComplexConv2d(geom, seed=1).double()
    x = rand_ct(rng, (2, 3, 7, 6))
    kr, ke = conv.weight_re.detach(), conv.weight_im.detach()
    y_re = F.conv2d(x.re, kr, stride=2, padding=1) - F.conv2d(x.im, ke, stride=2, padding=1)
    y_im = F.conv2d(x.im, kr, stride=2, padding=1) + F.conv2d(x.re, ke, stride=2, padding=1)
    out = conv(x)
    torch.testing.assert_close(out.re, y_re, atol=1e-5, rtol=0)
    torch.testing.assert_close(out.im, y_im, atol=1e-5, rtol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_complex_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    conv, shape = random_conv_case(rng)
    with torch.no_grad():
        conv.bias_re.zero_()
        conv.bias_im.zero_()
    x = rand_ct(rng, shape)
    lhs = as_np(conv(scale(x, alpha)))
    rhs = alpha * as_np(conv(x))
    assert np.abs(lhs - rhs).max() < 1e-5 * max(1.0, abs(alpha))


@pytest.mark.parametrize("k,s,groups", [(3, 2, 1), (2, 2, 1), (1, 2, 1), (3, 1, 1), (3, 2, 4)])
def test_transposed_is_adjoint(rng, k, s, groups):
    cin, cout = 4, 4
    fwd = ConvGeometry(cout, cin, k, s, (k - 1) // 2, groups, bias=False)
    tr = transposed_geometry(cin, cout, k, s, groups, bias=False)
    kr = torch.from_numpy(rng.standard_normal(fwd.weight_shape))
    ke = torch.from_numpy(rng.standard_normal(fwd.weight_shape))
    x = rand_ct(rng, (1, cout, 8, 8))
    y = rand_ct(rng, (1, cin, 4 if s == 2 else 8, 4 if s == 2 else 8))
    ax = complex_conv2d(x, kr, ke, fwd)
    # adjoint of K is the transposed conv with the conjugate kernel
    aty = complex_conv2d(y, kr, -ke, tr)
    assert aty.shape == x.shape
    lhs = float((ax.re * y.re).sum() + (ax.im * y.im).sum())
    rhs = float((x.re * aty.re).sum() + (x.im * aty.im).sum())
    assert abs(lhs - rhs) < 1e-4 * max(1.0, abs(lhs))


@pytest.mark.parametrize("k,s", [(2, 2), (3, 2), (1, 2), (3, 1), (4, 2), (3, 3)])
def test_transposed_output_is_stride_times_input(rng, k, s):
    conv = ComplexConv2d(transposed_geometry(2, 3, k, s)).double()
    out = conv(rand_ct(rng, (1, 2, 5, 7)))
    assert out.shape == (1, 3, 5 * s, 7 * s)


def test_invalid_geometry():
    with pytest.raises(ShapeError):
        ConvGeometry(3, 4, 3, groups=2)
    with pytest.raises(ShapeError):
        ConvGeometry(2, 2, 3, stride=0)
    with pytest.raises(ShapeError):
        ComplexConv2d(ConvGeometry(2, 2, 1))(ComplexTensor(torch.zeros(1, 3, 4, 4)))
    with pytest.raises(ShapeError):
        ComplexConv2d(ConvGeometry(2, 2, 5))(ComplexTensor(torch.zeros(1, 2, 3, 3)))


def test_param_count_examples():
    assert param_count(ConvGeometry(8, 8, 3, bias=False)) == 1152
    assert real_param_count(16, 16, 3) == 2304
    assert param_count(ConvGeometry(8, 8, 3, groups=8, bias=False)) == 144
    assert param_count(ConvGeometry(4, 6, 1)) == 60
    conv = ComplexConv2d(ConvGeometry(4, 6, 1))
    assert sum(p.numel() for p in conv.parameters()) == conv.param_count() == 60


def test_split_activations():
    z = ComplexTensor(torch.zeros(1), torch.zeros(1))
    s = split_sigmoid(z)
    assert s.re.item() == 0.5 and s.im.item() == 0.5
    t = split_tanh(z)
    assert t.re.item() == 0.0 and t.im.item() == 0.0
    g = split_gelu(ComplexTensor(torch.tensor([1.0], dtype=torch.float64), torch.tensor([-1.0], dtype=torch.float64)))
    assert abs(g.re.item() - 0.8413447) < 1e-7 and abs(g.im.item() + 0.1586553) < 1e-7


def test_activations_match_scalar_oracles(rng):
    z = rand_ct(rng, (2, 3, 4, 4))
    zn = as_np(z)
    np.testing.assert_allclose(as_np(split_sigmoid(z)), oracles.split(oracles.sigmoid, zn), atol=1e-12)
    np.testing.assert_allclose(as_np(split_tanh(z)), oracles.split(np.tanh, zn), atol=1e-12)
    np.testing.assert_allclose(as_np(split_gelu(z)), oracles.split(oracles.gelu, zn), atol=1e-12)


def test_split_tanh_conjugation(rng):
    z = rand_ct(rng, (1, 2, 3, 3))
    a = split_tanh(z.conj())
    b = split_tanh(z).conj()
    assert torch.equal(a.re, b.re) and torch.equal(a.im, b.im)


def _eye_gamma(c):
    return torch.eye(2, dtype=torch.float64).repeat(c, 1, 1)


def test_cln_fixed_point(rng):
    # already white: zero mean, identity covariance over (C, H, W)
    pts = rng.standard_normal((2, 4 * 8 * 8))
    pts -= pts.mean(axis=1, keepdims=True)
    l = np.linalg.cholesky(pts @ pts.T / pts.shape[1])
    pts = np.linalg.solve(l, pts)
    x = ComplexTensor(torch.from_numpy(pts[0].reshape(1, 4, 8, 8)), torch.from_numpy(pts[1].reshape(1, 4, 8, 8)))
    z = torch.zeros(4, dtype=torch.float64)
    out = complex_layer_norm(x, _eye_gamma(4), z, z)
    assert np.abs(as_np(out) - as_np(x)).max() < 1e-4


def test_cln_constant_input_returns_beta():
    x = ComplexTensor(torch.full((2, 3, 4, 4), 0.7, dtype=torch.float64), torch.full((2, 3, 4, 4), -1.2, dtype=torch.float64))
    beta_re = torch.tensor([0.1, 0.2, 0.3], dtype=torch.float64)
    beta_im = torch.tensor([-1.0, 0.0, 2.0], dtype=torch.float64)
    out = complex_layer_norm(x, _eye_gamma(3), beta_re, beta_im)
    # the centred signal is zero up to the rounding of the mean
    torch.testing.assert_close(out.re, beta_re.view(1, 3, 1, 1).expand(2, 3, 4, 4), atol=1e-9, rtol=0)
    torch.testing.assert_close(out.im, beta_im.view(1, 3, 1, 1).expand(2, 3, 4, 4), atol=1e-9, rtol=0)


def test_cln_statistics_oracle(rng):
    x = rand_ct(rng, (3, 16, 32, 32), torch.float32)
    x = ComplexTensor(2 * x.re + 0.5, 0.3 * x.im - 1.5 * x.re + 2)
    z = torch.zeros(16)
    out = complex_layer_norm(x, torch.eye(2).repeat(16, 1, 1), z, z)
    means, covs = oracles.pair_statistics(as_np(out))
    assert np.abs(means).max() < 1e-4
    assert np.abs(covs - np.eye(2)).max() < 1e-3
    corr = covs[:, 0, 1] / np.sqrt(covs[:, 0, 0] * covs[:, 1, 1])
    assert np.abs(corr).max() < 1e-2


def test_cln_module_init():
    m = ComplexLayerNorm(5)
    torch.testing.assert_close(m.gamma, (torch.eye(2) / math.sqrt(2)).repeat(5, 1, 1))
    assert not m.beta_re.any() and not m.beta_im.any()
    with pytest.raises(ShapeError):
        m(ComplexTensor(torch.zeros(1, 4, 2, 2)))
    with pytest.raises(ShapeError):
        m(ComplexTensor(torch.zeros(4, 2, 2)))


@torch.no_grad()
def test_ablation_norms(rng):
    x = rand_ct(rng, (2, 4, 6, 6))
    sep = SeparateLayerNorm(4).double()(x)
    for plane in (sep.re, sep.im):
        assert abs(float(plane.mean())) < 1e-6 and abs(float(plane.var(unbiased=False)) - 1) < 1e-3
    cat = ConcatLayerNorm(4).double()(x)
    both = torch.cat([cat.re, cat.im], 1)
    assert abs(float(both[0].mean())) < 1e-6 and abs(float(both[0].var(unbiased=False)) - 1) < 1e-3
