"""Complex convolution, split activations and complex layer normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .tensor import ComplexTensor, NumericalError, ShapeError, _maybe_check, seeded_init

CLN_EPS = 1e-5


@dataclass(frozen=True)
class ConvGeometry:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    transposed: bool = False
    bias: bool = True

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.groups < 1 or self.padding < 0:
            raise ShapeError(f"invalid conv geometry {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}"
            )
        if self.transposed:
            op = self.output_padding
            if not 0 <= op < self.stride:
                raise ShapeError(
                    f"transposed conv k={self.kernel_size} s={self.stride} p={self.padding} "
                    f"cannot produce exactly stride x input"
                )

    @property
    def output_padding(self) -> int:
        # (H-1)s - 2p + k + op == sH
        return self.stride - self.kernel_size + 2 * self.padding

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        if self.transposed:
            return (self.in_channels, self.out_channels // self.groups, k, k)
        return (self.out_channels, self.in_channels // self.groups, k, k)

    @property
    def fans(self) -> tuple[int, int]:
        k2 = self.kernel_size**2
        return (self.in_channels // self.groups * k2, self.out_channels // self.groups * k2)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        if self.transposed:
            return h * self.stride, w * self.stride
        k, s, p = self.kernel_size, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def transposed_geometry(in_channels, out_channels, kernel_size, stride, groups=1, bias=True):
    """Transposed conv whose output is exactly ``stride`` times its input."""
    return ConvGeometry(
        in_channels, out_channels, kernel_size, stride, (kernel_size - 1) // 2, groups, True, bias
    )


def _real_conv(x, w, geom: ConvGeometry, groups: int | None = None):
    g = geom.groups if groups is None else groups
    if geom.transposed:
        return F.conv_transpose2d(
            x, w, stride=geom.stride, padding=geom.padding,
            output_padding=geom.output_padding, groups=g,
        )
    return F.conv2d(x, w, stride=geom.stride, padding=geom.padding, groups=g)


def _check_input(M: ComplexTensor, geom: ConvGeometry) -> None:
    if M.ndim != 4:
        raise ShapeError(f"conv input must be rank 4, got {M.shape}")
    if M.shape[1] != geom.in_channels:
        raise ShapeError(f"conv expects {geom.in_channels} input channels, got {M.shape[1]}")
    if not geom.transposed:
        h, w = M.shape[2] + 2 * geom.padding, M.shape[3] + 2 * geom.padding
        if h < geom.kernel_size or w < geom.kernel_size:
            raise ShapeError(
                f"padded input {h}x{w} smaller than kernel {geom.kernel_size}"
            )


def complex_conv2d(
    M: ComplexTensor,
    k_re: torch.Tensor,
    k_im: torch.Tensor,
    geom: ConvGeometry,
    b_re: torch.Tensor | None = None,
    b_im: torch.Tensor | None = None,
) -> ComplexTensor:
    """(K_R*M_R - K_E*M_E) + i(K_R*M_E + K_E*M_R), plus optional complex bias."""
    _check_input(M, geom)
    if geom.groups == 1:
        # one real conv with the 2x2 block kernel [[K_R, -K_E], [K_E, K_R]]
        if geom.transposed:
            w = torch.cat([torch.cat([k_re, k_im], 1), torch.cat([-k_im, k_re], 1)], 0)
        else:
            w = torch.cat([torch.cat([k_re, -k_im], 1), torch.cat([k_im, k_re], 1)], 0)
        y = _real_conv(torch.cat([M.re, M.im], dim=1), w, geom)
        c = geom.out_channels
        out_re, out_im = y[:, :c], y[:, c:]
    else:
        n = M.shape[0]
        both = torch.cat([M.re, M.im], dim=0)
        kr = _real_conv(both, k_re, geom)
        ke = _real_conv(both, k_im, geom)
        out_re = kr[:n] - ke[n:]
        out_im = kr[n:] + ke[:n]
    if b_re is not None:
        out_re = out_re + b_re.view(1, -1, 1, 1)
        out_im = out_im + b_im.view(1, -1, 1, 1)
    return _maybe_check(ComplexTensor(out_re, out_im), "complex_conv2d")


def param_count(geom: ConvGeometry) -> int:
    """Real scalars in a complex conv: both kernel planes plus the complex bias."""
    k2 = geom.kernel_size**2
    n = 2 * geom.out_channels * (geom.in_channels // geom.groups) * k2
    if geom.bias:
        n += 2 * geom.out_channels
    return n


def real_param_count(in_channels, out_channels, kernel_size, groups=1, bias=False) -> int:
    n = out_channels * (in_channels // groups) * kernel_size**2
    return n + (out_channels if bias else 0)


class ComplexConv2d(nn.Module):
    """Complex convolution with a shared kernel ``K = K_R + i K_E``."""

    def __init__(self, geom: ConvGeometry, seed: int = 0, init: str = "uniform-complex"):
        super().__init__()
        self.geom = geom
        fan_in, fan_out = geom.fans
        w = seeded_init(geom.weight_shape, init, seed, fan_in, fan_out)
        self.weight_re = nn.Parameter(w.re)
        self.weight_im = nn.Parameter(w.im)
        if geom.bias:
            self.bias_re = nn.Parameter(torch.zeros(geom.out_channels))
            self.bias_im = nn.Parameter(torch.zeros(geom.out_channels))
        else:
            self.register_parameter("bias_re", None)
            self.register_parameter("bias_im", None)

    def forward(self, M: ComplexTensor) -> ComplexTensor:
        return complex_conv2d(M, self.weight_re, self.weight_im, self.geom, self.bias_re, self.bias_im)

    def zero_(self) -> "ComplexConv2d":
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def param_count(self) -> int:
        return param_count(self.geom)

    def extra_repr(self) -> str:
        g = self.geom
        kind = "transposed " if g.transposed else ""
        return f"{kind}{g.in_channels}->{g.out_channels}, k={g.kernel_size}, s={g.stride}, groups={g.groups}"


class RealStackConv2d(nn.Module):
    """Real-valued stand-in for :class:`ComplexConv2d`.

    The two planes are stacked as 2C real channels and mixed by an
    unconstrained real kernel, so the real/imag coupling is learned rather
    than fixed by complex multiplication.  Grouped convs use twice the groups,
    which keeps depthwise layers depthwise.
    """

    def __init__(self, geom: ConvGeometry, seed: int = 0, init: str = "uniform-complex"):
        super().__init__()
        self.geom = geom
        self.real_groups = 1 if geom.groups == 1 else 2 * geom.groups
        k = geom.kernel_size
        cin, cout = 2 * geom.in_channels, 2 * geom.out_channels
        if geom.transposed:
            shape = (cin, cout // self.real_groups, k, k)
        else:
            shape = (cout, cin // self.real_groups, k, k)
        fan_in, fan_out = geom.fans
        if init == "zeros":
            w = torch.zeros(shape)
        else:
            gen = torch.Generator().manual_seed(int(seed))
            # matches the output variance of the complex initializer
            b = math.sqrt(3.0 / (fan_in + fan_out)) * (math.sqrt(2.0) if self.real_groups > 1 else 1.0)
            w = ((torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * b).float()
        self.weight = nn.Parameter(w)
        if geom.bias:
            self.bias = nn.Parameter(torch.zeros(cout))
        else:
            self.register_parameter("bias", None)

    def forward(self, M: ComplexTensor) -> ComplexTensor:
        _check_input(M, self.geom)
        x = torch.cat([M.re, M.im], dim=1)
        y = _real_conv(x, self.weight, self.geom, groups=self.real_groups)
        if self.bias is not None:
            y = y + self.bias.view(1, -1, 1, 1)
        c = self.geom.out_channels
        return ComplexTensor(y[:, :c], y[:, c:])

    def zero_(self) -> "RealStackConv2d":
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


# --- split activations --------------------------------------------------------


def split_sigmoid(z: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(torch.sigmoid(z.re), torch.sigmoid(z.im))


def split_tanh(z: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(torch.tanh(z.re), torch.tanh(z.im))


def split_gelu(z: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(F.gelu(z.re, approximate="none"), F.gelu(z.im, approximate="none"))


# --- normalization ------------------------------------------------------------


def whiten_pairs(X: ComplexTensor, eps: float = CLN_EPS) -> ComplexTensor:
    """Per-sample centring and 2x2 whitening of the (real, imag) pairs over (C, H, W)."""
    if X.ndim != 4:
        raise ShapeError(f"complex_layer_norm expects rank 4, got {X.shape}")
    dims = (1, 2, 3)
    cr = X.re - X.re.mean(dims, keepdim=True)
    ci = X.im - X.im.mean(dims, keepdim=True)
    vrr = (cr * cr).mean(dims, keepdim=True) + eps
    vii = (ci * ci).mean(dims, keepdim=True) + eps
    vri = (cr * ci).mean(dims, keepdim=True)
    det = vrr * vii - vri * vri
    if bool((det.detach() <= 0).any()):
        raise NumericalError("complex_layer_norm: covariance not positive definite")
    s = torch.sqrt(det)
    t = torch.sqrt(vrr + vii + 2 * s)
    inv = 1.0 / (s * t)
    wrr = (vii + s) * inv
    wii = (vrr + s) * inv
    wri = -vri * inv
    return ComplexTensor(wrr * cr + wri * ci, wri * cr + wii * ci)


def complex_layer_norm(
    X: ComplexTensor,
    gamma: torch.Tensor,
    beta_re: torch.Tensor,
    beta_im: torch.Tensor,
    eps: float = CLN_EPS,
) -> ComplexTensor:
    """Whitening layer norm followed by a per-channel 2x2 affine map and complex offset.

    ``gamma`` has shape (C, 2, 2) acting on the (real, imag) column vector.
    """
    w = whiten_pairs(X, eps)
    g = gamma
    g00 = g[:, 0, 0].view(1, -1, 1, 1)
    g01 = g[:, 0, 1].view(1, -1, 1, 1)
    g10 = g[:, 1, 0].view(1, -1, 1, 1)
    g11 = g[:, 1, 1].view(1, -1, 1, 1)
    out = ComplexTensor(
        g00 * w.re + g01 * w.im + beta_re.view(1, -1, 1, 1),
        g10 * w.re + g11 * w.im + beta_im.view(1, -1, 1, 1),
    )
    return _maybe_check(out, "complex_layer_norm")


class ComplexLayerNorm(nn.Module):
    def __init__(self, channels: int, eps: float = CLN_EPS):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.channels = channels
        self.eps = eps
        eye = torch.eye(2) / math.sqrt(2.0)
        self.gamma = nn.Parameter(eye.repeat(channels, 1, 1))
        self.beta_re = nn.Parameter(torch.zeros(channels))
        self.beta_im = nn.Parameter(torch.zeros(channels))

    def forward(self, X: ComplexTensor) -> ComplexTensor:
        if X.shape[1] != self.channels:
            raise ShapeError(f"norm expects {self.channels} channels, got {X.shape[1]}")
        return complex_layer_norm(X, self.gamma, self.beta_re, self.beta_im, self.eps)


def _layer_norm(x: torch.Tensor, eps: float) -> torch.Tensor:
    dims = (1, 2, 3)
    c = x - x.mean(dims, keepdim=True)
    return c / torch.sqrt((c * c).mean(dims, keepdim=True) + eps)


class SeparateLayerNorm(nn.Module):
    """Independent real layer norms on the two planes."""

    def __init__(self, channels: int, eps: float = CLN_EPS):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(2, channels))
        self.bias = nn.Parameter(torch.zeros(2, channels))

    def forward(self, X: ComplexTensor) -> ComplexTensor:
        re = _layer_norm(X.re, self.eps) * self.weight[0].view(1, -1, 1, 1) + self.bias[0].view(1, -1, 1, 1)
        im = _layer_norm(X.im, self.eps) * self.weight[1].view(1, -1, 1, 1) + self.bias[1].view(1, -1, 1, 1)
        return ComplexTensor(re, im)


class ConcatLayerNorm(nn.Module):
    """One real layer norm over the stacked 2C channels."""

    def __init__(self, channels: int, eps: float = CLN_EPS):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(2 * channels))
        self.bias = nn.Parameter(torch.zeros(2 * channels))

    def forward(self, X: ComplexTensor) -> ComplexTensor:
        x = _layer_norm(torch.cat([X.re, X.im], dim=1), self.eps)
        x = x * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)
        c = self.channels
        return ComplexTensor(x[:, :c], x[:, c:])


NORMS = {"whiten": ComplexLayerNorm, "separate": SeparateLayerNorm, "concat-real": ConcatLayerNorm}
CONVS = {"complex": ComplexConv2d, "real-concat": RealStackConv2d}


def make_norm(kind: str, channels: int) -> nn.Module:
    try:
        return NORMS[kind](channels)
    except KeyError:
        raise ValueError(f"unknown cln mode {kind!r}; expected one of {sorted(NORMS)}") from None


def make_conv(fusion: str, geom: ConvGeometry, seed: int, init: str = "uniform-complex") -> nn.Module:
    try:
        cls = CONVS[fusion]
    except KeyError:
        raise ValueError(f"unknown fusion mode {fusion!r}; expected one of {sorted(CONVS)}") from None
    return cls(geom, seed=seed, init=init)
