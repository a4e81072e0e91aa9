"""Complex tensors stored as paired real/imaginary planes.

Every feature map in the network is a :class:`ComplexTensor`.  The two planes
are ordinary torch tensors, so autograd sees a complex value as its pair of
real components.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

CTEN_MAGIC = b"CTEN1\x00"

Scalar = Union[complex, float, int]


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces NaN or infinity."""


class FormatError(ValueError):
    """Raised on malformed binary files; carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


_debug = os.environ.get("COMPEVENT_DEBUG", "") not in ("", "0")


def set_debug(enabled: bool) -> None:
    """Toggle the post-op non-finite sweep."""
    global _debug
    _debug = bool(enabled)


def debug_enabled() -> bool:
    return _debug


@dataclass(frozen=True)
class Shape4:
    n: int
    c: int
    h: int
    w: int

    def numel(self) -> int:
        return self.n * self.c * self.h * self.w


class ComplexTensor:
    """Dense complex array held as two same-shaped real tensors."""

    __slots__ = ("re", "im")

    def __init__(self, re: torch.Tensor, im: torch.Tensor | None = None):
        if im is None:
            im = torch.zeros_like(re)
        if re.shape != im.shape:
            raise ShapeError(f"real {tuple(re.shape)} and imag {tuple(im.shape)} differ")
        if re.dtype != im.dtype:
            im = im.to(re.dtype)
        self.re = re
        self.im = im
        if _debug:
            check_finite(self, "construct")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.re.shape)

    @property
    def dtype(self) -> torch.dtype:
        return self.re.dtype

    @property
    def ndim(self) -> int:
        return self.re.dim()

    def shape4(self) -> Shape4:
        if self.ndim != 4:
            raise ShapeError(f"expected rank 4, got shape {self.shape}")
        return Shape4(*self.shape)

    def numel(self) -> int:
        return self.re.numel()

    def to(self, dtype: torch.dtype) -> "ComplexTensor":
        return ComplexTensor(self.re.to(dtype), self.im.to(dtype))

    def detach(self) -> "ComplexTensor":
        return ComplexTensor(self.re.detach(), self.im.detach())

    def clone(self) -> "ComplexTensor":
        return ComplexTensor(self.re.clone(), self.im.clone())

    def conj(self) -> "ComplexTensor":
        return ComplexTensor(self.re, -self.im)

    def as_torch_complex(self) -> torch.Tensor:
        return torch.complex(self.re, self.im)

    @classmethod
    def from_torch_complex(cls, z: torch.Tensor) -> "ComplexTensor":
        return cls(z.real, z.imag)

    def numpy(self) -> np.ndarray:
        return self.re.detach().cpu().numpy() + 1j * self.im.detach().cpu().numpy()

    @classmethod
    def from_numpy(cls, z: np.ndarray, dtype: torch.dtype = torch.float32) -> "ComplexTensor":
        z = np.asarray(z)
        return cls(
            torch.as_tensor(np.ascontiguousarray(z.real), dtype=dtype),
            torch.as_tensor(np.ascontiguousarray(np.imag(z)), dtype=dtype),
        )

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, ComplexTensor):
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return ComplexTensor(-self.re, -self.im)

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape}, dtype={self.dtype})"


def _same_shape(a: ComplexTensor, b: ComplexTensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _maybe_check(t: ComplexTensor, where: str) -> ComplexTensor:
    if _debug:
        check_finite(t, where)
    return t


def check_finite(t: ComplexTensor | torch.Tensor, where: str = "tensor") -> None:
    """Raise :class:`NumericalError` if ``t`` holds any NaN/inf."""
    planes = (t.re, t.im) if isinstance(t, ComplexTensor) else (t,)
    for name, plane in zip(("real", "imag"), planes):
        bad = ~torch.isfinite(plane.detach())
        if bool(bad.any()):
            idx = tuple(int(i) for i in bad.nonzero()[0])
            raise NumericalError(
                f"non-finite value in {where} ({name} plane) at index {idx}, "
                f"{int(bad.sum())} bad element(s)"
            )


def hadamard(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    _same_shape(a, b, "hadamard")
    out = ComplexTensor(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)
    return _maybe_check(out, "hadamard")


def componentwise(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Product of matching components; the real-valued analogue of hadamard."""
    _same_shape(a, b, "componentwise")
    return _maybe_check(ComplexTensor(a.re * b.re, a.im * b.im), "componentwise")


def add(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    _same_shape(a, b, "add")
    return _maybe_check(ComplexTensor(a.re + b.re, a.im + b.im), "add")


def sub(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    _same_shape(a, b, "sub")
    return _maybe_check(ComplexTensor(a.re - b.re, a.im - b.im), "sub")


def scale(a: ComplexTensor, alpha: Scalar) -> ComplexTensor:
    alpha = complex(alpha)
    if alpha.imag == 0.0:
        out = ComplexTensor(a.re * alpha.real, a.im * alpha.real)
    else:
        out = ComplexTensor(
            a.re * alpha.real - a.im * alpha.imag,
            a.re * alpha.imag + a.im * alpha.real,
        )
    return _maybe_check(out, "scale")


def rsub_scalar(alpha: Scalar, a: ComplexTensor) -> ComplexTensor:
    """``alpha - a`` for a complex scalar ``alpha``."""
    alpha = complex(alpha)
    return ComplexTensor(alpha.real - a.re, alpha.imag - a.im)


def concat_channels(parts: Sequence[ComplexTensor]) -> ComplexTensor:
    if len(parts) == 0:
        raise ShapeError("concat_channels: empty list")
    first = parts[0]
    if first.ndim != 4:
        raise ShapeError(f"concat_channels: expected rank 4, got {first.shape}")
    n, _, h, w = first.shape
    for p in parts[1:]:
        if p.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: N/H/W mismatch {first.shape} vs {p.shape}")
    if len(parts) == 1:
        return first
    return ComplexTensor(
        torch.cat([p.re for p in parts], dim=1), torch.cat([p.im for p in parts], dim=1)
    )


def slice_channels(x: ComplexTensor, start: int, stop: int) -> ComplexTensor:
    return ComplexTensor(x.re[:, start:stop], x.im[:, start:stop])


def split_channels(x: ComplexTensor, sizes: Sequence[int]) -> list[ComplexTensor]:
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    out, start = [], 0
    for s in sizes:
        out.append(slice_channels(x, start, start + s))
        start += s
    return out


def fft2d(x: ComplexTensor) -> ComplexTensor:
    """Unnormalized 2-D DFT over the last two axes of a rank-4 tensor."""
    if x.ndim != 4:
        raise ShapeError(f"fft2d: expected rank 4, got shape {x.shape}")
    z = torch.fft.fft2(torch.complex(x.re, x.im), dim=(-2, -1), norm="backward")
    return _maybe_check(ComplexTensor(z.real, z.imag), "fft2d")


def ifft2d(x: ComplexTensor) -> ComplexTensor:
    """Inverse of :func:`fft2d`, scaled by 1/(H*W)."""
    if x.ndim != 4:
        raise ShapeError(f"ifft2d: expected rank 4, got shape {x.shape}")
    z = torch.fft.ifft2(torch.complex(x.re, x.im), dim=(-2, -1), norm="backward")
    return _maybe_check(ComplexTensor(z.real, z.imag), "ifft2d")


INIT_SCHEMES = ("zeros", "uniform-complex", "unit-gaussian")


def fan_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(3.0 / (fan_in + fan_out))


def seeded_init(
    shape: Sequence[int],
    scheme: str,
    seed: int,
    fan_in: int | None = None,
    fan_out: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> ComplexTensor:
    """Deterministic complex initializer.

    ``uniform-complex`` draws both planes from U(-b, b) with
    b = sqrt(3 / (fan_in + fan_out)); the fans default to the trailing extents.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        return ComplexTensor(torch.zeros(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))
    gen = torch.Generator().manual_seed(int(seed))
    if scheme == "uniform-complex":
        if fan_in is None or fan_out is None:
            receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
            fan_in = shape[1] * receptive if len(shape) > 1 else shape[0]
            fan_out = shape[0] * receptive
        b = fan_bound(fan_in, fan_out)
        re = (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * b
        im = (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * b
        return ComplexTensor(re.to(dtype), im.to(dtype))
    if scheme == "unit-gaussian":
        re = torch.randn(shape, generator=gen, dtype=torch.float64)
        im = torch.randn(shape, generator=gen, dtype=torch.float64)
        return ComplexTensor(re.to(dtype), im.to(dtype))
    raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")


# --- CTEN binary format -----------------------------------------------------


def cten_bytes(t: ComplexTensor) -> bytes:
    shape = t.shape
    if len(shape) > 255:
        raise ShapeError("CTEN supports rank <= 255")
    head = CTEN_MAGIC + struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    re = t.re.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
    im = t.im.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
    return head + re.tobytes() + im.tobytes()


def cten_size(shape: Sequence[int]) -> int:
    return len(CTEN_MAGIC) + 1 + 4 * len(shape) + 8 * int(np.prod(shape, dtype=np.int64))


def parse_cten(buf: bytes, offset: int = 0) -> tuple[ComplexTensor, int]:
    """Decode one CTEN tensor starting at ``offset``; returns (tensor, next offset)."""
    end = offset + len(CTEN_MAGIC)
    if len(buf) < end:
        raise FormatError("truncated CTEN magic", offset)
    if buf[offset:end] != CTEN_MAGIC:
        raise FormatError(f"bad CTEN magic {buf[offset:end]!r}", offset)
    if len(buf) < end + 1:
        raise FormatError("truncated CTEN rank", end)
    rank = buf[end]
    pos = end + 1
    if len(buf) < pos + 4 * rank:
        raise FormatError("truncated CTEN extents", pos)
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    nbytes = 4 * count
    if len(buf) < pos + 2 * nbytes:
        raise FormatError(
            f"truncated CTEN payload: need {2 * nbytes} bytes, have {len(buf) - pos}", pos
        )
    re = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
    im = np.frombuffer(buf, dtype="<f4", count=count, offset=pos + nbytes).reshape(shape)
    pos += 2 * nbytes
    t = ComplexTensor(
        torch.from_numpy(re.astype(np.float32)), torch.from_numpy(im.astype(np.float32))
    )
    return t, pos


def save_cten(path: str | os.PathLike, t: ComplexTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(cten_bytes(t))


def load_cten(path: str | os.PathLike) -> ComplexTensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = parse_cten(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after CTEN tensor", end)
    return t
