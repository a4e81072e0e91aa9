"""Gradients, finite-difference verification, the optimizer and checkpoints.

Reverse-mode differentiation is torch autograd run on the real and imaginary
planes separately, i.e. every complex value is treated as a point in R^2.
The finite-difference checker below is the independent check on it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import torch
from torch import nn

from .tensor import ComplexTensor, FormatError, NumericalError, cten_bytes, parse_cten

CKPT_MAGIC = b"CKPT1\x00"
_PAIR_SUFFIXES = ("_re", "_im")


class GradError(RuntimeError):
    pass


@dataclass
class Parameter:
    """A learnable value seen as one complex tensor.

    ``im`` is None for parameters that are real by construction (the real
    embedding convs, projection heads, norm affines); their imaginary part
    reads as zero.
    """

    name: str
    re: torch.Tensor
    im: torch.Tensor | None = None

    @property
    def value(self) -> ComplexTensor:
        return ComplexTensor(self.re, self.im if self.im is not None else torch.zeros_like(self.re))

    @property
    def grad(self) -> ComplexTensor:
        def g(t):
            if t is None:
                return torch.zeros_like(self.re)
            return t.grad if t.grad is not None else torch.zeros_like(t)

        return ComplexTensor(g(self.re).detach(), g(self.im).detach())

    def tensors(self) -> list[tuple[str, torch.Tensor]]:
        out = [(self.name + (".re" if self.im is not None else ""), self.re)]
        if self.im is not None:
            out.append((self.name + ".im", self.im))
        return out

    def numel(self) -> int:
        return self.re.numel() * (2 if self.im is not None else 1)


def parameters(module: nn.Module) -> list[Parameter]:
    """Group ``foo_re`` / ``foo_im`` torch parameters into complex Parameters."""
    named = dict(module.named_parameters())
    out, seen = [], set()
    for name, p in named.items():
        if name in seen:
            continue
        if name.endswith("_re") and name[:-3] + "_im" in named:
            base = name[:-3]
            out.append(Parameter(base, p, named[base + "_im"]))
            seen.update((name, base + "_im"))
        elif name.endswith("_im") and name[:-3] + "_re" in named:
            continue
        else:
            out.append(Parameter(name, p))
            seen.add(name)
    return out


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        for _, t in p.tensors():
            t.grad = None


def backward(loss: torch.Tensor | None, params: Iterable[Parameter]) -> None:
    """Populate ``grad`` of every Parameter with dloss/d(re) and dloss/d(im).

    Parameters the loss does not depend on end up with zero gradient.
    """
    params = list(params)
    if loss is None or not isinstance(loss, torch.Tensor):
        raise GradError("backward called before any forward pass recorded a loss")
    if loss.numel() != 1:
        raise GradError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    leaves = [t for p in params for _, t in p.tensors()]
    for t in leaves:
        t.grad = None
    if loss.requires_grad:
        grads = torch.autograd.grad(loss.reshape(()), leaves, allow_unused=True)
    else:
        grads = [None] * len(leaves)
    for t, g in zip(leaves, grads):
        t.grad = torch.zeros_like(t) if g is None else g.detach()


# --- finite-difference verification ---------------------------------------


class _ScaleGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, factor):
        ctx.factor = factor
        return x.view_as(x)

    @staticmethod
    def backward(ctx, g):
        return g * ctx.factor, None


def corrupt_backward(x: torch.Tensor, factor: float = 1.5) -> torch.Tensor:
    """Identity in the forward pass, scaled gradient in the backward pass (fault injection)."""
    return _ScaleGrad.apply(x, factor)


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: dict[str, float] = field(default_factory=dict)
    coordinates: int = 0
    tol: float = 1e-3

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} op={self.name} max_rel_err={self.worst:.3e} coords={self.coordinates} tol={self.tol:g}"


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(
    fragment: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    h: float = 1e-4,
    tol: float = 1e-3,
    max_samples: int = 64,
    seed: int = 0,
    name: str = "fragment",
) -> GradCheckReport:
    """Compare autograd against central differences on sampled coordinates.

    ``fragment`` evaluates a scalar loss from the current values of
    ``params`` (real leaf tensors, normally float64).  At most
    ``max_samples`` coordinates per tensor are perturbed.
    """
    params = dict(params)
    with torch.no_grad():
        a, b = fragment(), fragment()
    if a.numel() != 1:
        raise GradError(f"{name}: loss must be scalar")
    if not torch.equal(a, b):
        raise GradError(f"{name}: fragment is not deterministic ({a.item()!r} vs {b.item()!r})")

    tensors = list(params.values())
    for t in tensors:
        t.grad = None
    loss = fragment()
    if loss.requires_grad:
        grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    else:
        grads = [None] * len(tensors)

    report = GradCheckReport(name, tol=tol)
    for idx, ((pname, t), g) in enumerate(zip(params.items(), grads)):
        g = torch.zeros_like(t) if g is None else g.detach()
        n = t.numel()
        rng = np.random.default_rng([seed, idx, zlib.crc32(pname.encode())])
        coords = rng.choice(n, size=min(n, max_samples), replace=False)
        flat = t.data.view(-1)
        gflat = g.reshape(-1)
        worst = 0.0
        with torch.no_grad():
            for i in coords:
                i = int(i)
                orig = flat[i].item()
                flat[i] = orig + h
                lp = fragment().item()
                flat[i] = orig - h
                lm = fragment().item()
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                worst = max(worst, _rel(gflat[i].item(), fd))
        report.max_rel_error[pname] = worst
        report.coordinates += len(coords)
    return report


# --- optimizer ---------------------------------------------------------------


class Adam:
    """Adaptive-moment optimizer applied independently to every real plane."""

    def __init__(self, params: Iterable[Parameter], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: torch.zeros_like(t) for p in self.params for n, t in p.tensors()}
        self.v = {n: torch.zeros_like(t) for p in self.params for n, t in p.tensors()}

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def _check(self) -> None:
        bad = []
        for p in self.params:
            for n, t in p.tensors():
                if t.grad is not None and not bool(torch.isfinite(t.grad).all()):
                    bad.append(n)
        if bad:
            raise NumericalError(
                f"non-finite gradients at step {self.step_count + 1} in: {', '.join(bad[:8])}"
                + (f" (+{len(bad) - 8} more)" if len(bad) > 8 else "")
            )

    @torch.no_grad()
    def step(self) -> None:
        self._check()
        self.step_count += 1
        c1 = 1 - self.beta1**self.step_count
        c2 = 1 - self.beta2**self.step_count
        for p in self.params:
            for n, t in p.tensors():
                if t.grad is None:
                    continue
                g = t.grad
                m, v = self.m[n], self.v[n]
                m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
                denom = (v / c2).sqrt_().add_(self.eps)
                t.addcdiv_(m, denom, value=-self.lr / c1)

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for n, t in self.m.items():
            out[f"adam.m/{n}"] = t
        for n, t in self.v.items():
            out[f"adam.v/{n}"] = t
        return out

    def load_state_tensors(self, records: Mapping[str, torch.Tensor], step_count: int) -> None:
        for n in self.m:
            self.m[n].copy_(records[f"adam.m/{n}"])
            self.v[n].copy_(records[f"adam.v/{n}"])
        self.step_count = step_count


# --- checkpoints ---------------------------------------------------------------


def checkpoint_bytes(header: str, records: Mapping[str, ComplexTensor]) -> bytes:
    hb = header.encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<I", len(hb)), hb]
    for name, t in records.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        parts += [struct.pack("<H", len(nb)), nb, cten_bytes(t)]
    return b"".join(parts)


def parse_checkpoint(buf: bytes) -> tuple[str, dict[str, ComplexTensor]]:
    m = len(CKPT_MAGIC)
    if buf[:m] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(buf[:m])!r}", 0)
    if len(buf) < m + 4:
        raise FormatError("truncated checkpoint header length", m)
    (hlen,) = struct.unpack_from("<I", buf, m)
    pos = m + 4
    if len(buf) < pos + hlen:
        raise FormatError("truncated checkpoint header", pos)
    header = buf[pos : pos + hlen].decode("utf-8")
    pos += hlen
    records = {}
    while pos < len(buf):
        if len(buf) < pos + 2:
            raise FormatError("truncated record name length", pos)
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) < pos + nlen:
            raise FormatError("truncated record name", pos)
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        records[name], pos = parse_cten(buf, pos)
    return header, records


def parameter_records(params: Iterable[Parameter]) -> dict[str, ComplexTensor]:
    return {p.name: p.value.detach() for p in params}


def save_checkpoint(path, header: str, params: Iterable[Parameter], extra: Mapping[str, torch.Tensor] | None = None) -> None:
    records = parameter_records(params)
    for name, t in (extra or {}).items():
        records[name] = ComplexTensor(t.detach())
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(header, records))


def load_checkpoint(path) -> tuple[str, dict[str, ComplexTensor]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return parse_checkpoint(buf)
    except FormatError as exc:
        err = FormatError(f"{path}: {exc}")
        err.offset = exc.offset
        raise err from None


@torch.no_grad()
def assign_parameters(params: Iterable[Parameter], records: Mapping[str, ComplexTensor]) -> None:
    for p in params:
        if p.name not in records:
            raise KeyError(f"checkpoint has no record for parameter {p.name!r}")
        t = records[p.name]
        if tuple(t.shape) != tuple(p.re.shape):
            raise ValueError(f"shape mismatch for {p.name}: checkpoint {t.shape}, model {tuple(p.re.shape)}")
        p.re.copy_(t.re)
        if p.im is not None:
            p.im.copy_(t.im)
