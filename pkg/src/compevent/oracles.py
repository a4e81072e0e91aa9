"""Slow reference implementations used to check the fast paths.

Everything here works on numpy ``complex128`` arrays with explicit loops or
dense sums and shares no code with the torch kernels it is compared against.
"""

from __future__ import annotations

import math

import numpy as np


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized 2-D DFT of the last two axes by direct O((HW)^2) summation."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    ys, xs = np.arange(h), np.arange(w)
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (u * ys[:, None] / h + v * xs[None, :] / w))
            out[..., u, v] = (x * phase).sum(axis=(-2, -1))
    return out


def direct_conv2d(
    m: np.ndarray,
    k: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> np.ndarray:
    """sum_{ci,u,v} K[co, ci, u, v] * M[ci, y*s+u-p, x*s+v-p] in complex arithmetic.

    ``m`` is (N, Cin, H, W); ``k`` is (Cout, Cin/groups, kh, kw).
    """
    m = np.asarray(m, np.complex128)
    k = np.asarray(k, np.complex128)
    n, cin, h, w = m.shape
    cout, cin_g, kh, kw = k.shape
    cout_g = cout // groups
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), np.complex128)
    for b in range(n):
        for co in range(cout):
            g = co // cout_g
            for y in range(ho):
                for x in range(wo):
                    acc = 0j
                    for cl in range(cin_g):
                        ci = g * cin_g + cl
                        for u in range(kh):
                            yy = y * stride + u - padding
                            if not 0 <= yy < h:
                                continue
                            for v in range(kw):
                                xx = x * stride + v - padding
                                if 0 <= xx < w:
                                    acc += k[co, cl, u, v] * m[b, ci, yy, xx]
                    out[b, co, y, x] = acc
            if bias is not None:
                out[b, co] += bias[co]
    return out


def direct_conv_transpose2d(
    m: np.ndarray,
    k: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> np.ndarray:
    """Scatter form of the transposed conv, cropped to exactly stride x input.

    ``k`` is (Cin, Cout/groups, kh, kw).
    """
    m = np.asarray(m, np.complex128)
    k = np.asarray(k, np.complex128)
    n, cin, h, w = m.shape
    _, cout_g, kh, kw = k.shape
    cin_g = cin // groups
    cout = cout_g * groups
    fh = (h - 1) * stride + kh + stride
    fw = (w - 1) * stride + kw + stride
    full = np.zeros((n, cout, fh, fw), np.complex128)
    for b in range(n):
        for ci in range(cin):
            g = ci // cin_g
            for cl in range(cout_g):
                co = g * cout_g + cl
                for y in range(h):
                    for x in range(w):
                        val = m[b, ci, y, x]
                        for u in range(kh):
                            for v in range(kw):
                                full[b, co, y * stride + u, x * stride + v] += k[ci, cl, u, v] * val
    out = full[:, :, padding : padding + stride * h, padding : padding + stride * w].copy()
    if bias is not None:
        out += np.asarray(bias, np.complex128)[None, :, None, None]
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def gelu(x: np.ndarray) -> np.ndarray:
    erf = np.vectorize(math.erf)
    return x * 0.5 * (1.0 + erf(np.asarray(x, np.float64) / math.sqrt(2.0)))


def split(fn, z: np.ndarray) -> np.ndarray:
    return fn(z.real) + 1j * fn(z.imag)


def gru_step(z: np.ndarray, h: np.ndarray, kr, br, ku, bu, kh, bh) -> np.ndarray:
    """The four recurrent equations, one by one, with 3x3 zero-padded convs."""
    zh = np.concatenate([z, h], axis=1)
    r = split(sigmoid, direct_conv2d(zh, kr, br, 1, 1))
    u = split(sigmoid, direct_conv2d(zh, ku, bu, 1, 1))
    cand = split(np.tanh, direct_conv2d(np.concatenate([z, r * h], axis=1), kh, bh, 1, 1))
    return (1 - u) * h + u * cand


def pair_statistics(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample mean (re, im) and 2x2 population covariance over (C, H, W)."""
    x = np.asarray(x, np.complex128)
    means, covs = [], []
    for sample in x:
        pts = np.stack([sample.real.ravel(), sample.imag.ravel()])
        mu = pts.mean(axis=1)
        c = pts - mu[:, None]
        means.append(mu)
        covs.append(c @ c.T / pts.shape[1])
    return np.array(means), np.array(covs)


def windowed_ssim(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5,
                  k1: float = 0.01, k2: float = 0.03) -> float:
    """SSIM by explicit iteration over every valid window of every plane."""
    a = np.asarray(a, np.float64).reshape(-1, *np.shape(a)[-2:])
    b = np.asarray(b, np.float64).reshape(-1, *np.shape(b)[-2:])
    r = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(r**2) / (2 * sigma**2))
    win = np.outer(g1, g1)
    win /= win.sum()
    c1, c2 = k1**2, k2**2
    plane_means = []
    for pa, pb in zip(a, b):
        vals = []
        for y in range(pa.shape[0] - size + 1):
            for x in range(pa.shape[1] - size + 1):
                wa = pa[y : y + size, x : x + size]
                wb = pb[y : y + size, x : x + size]
                ma, mb = (win * wa).sum(), (win * wb).sum()
                va = (win * (wa - ma) ** 2).sum()
                vb = (win * (wb - mb) ** 2).sum()
                cov = (win * (wa - ma) * (wb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
        plane_means.append(np.mean(vals))
    return float(np.mean(plane_means))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return 100.0 if mse < 1e-10 else -10.0 * math.log10(mse)


def voxel_counts(xs, ys, ts, ps, t_start, t_end, bins, height, width) -> np.ndarray:
    """Event-by-event accumulation into the (bins, H, W) grid."""
    grid = np.zeros((bins, height, width))
    for x, y, t, p in zip(xs, ys, ts, ps):
        pos = (t - t_start) / (t_end - t_start) * (bins - 1)
        lo = int(math.floor(pos))
        frac = pos - lo
        grid[lo, y, x] += p * (1 - frac)
        if frac > 0:
            grid[lo + 1, y, x] += p * frac
    return grid


def temporal_mean(latents: np.ndarray, m: int) -> np.ndarray:
    """Mean of the 2m+1 latents centred in the sequence, summed one at a time."""
    c = len(latents) // 2
    acc = np.zeros(latents[0].shape, np.float64)
    for j in range(c - m, c + m + 1):
        acc += latents[j]
    return acc / (2 * m + 1)
