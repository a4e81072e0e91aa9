"""Complex GRU cell and the bidirectional runner used for temporal alignment."""

from __future__ import annotations

from typing import Callable, Sequence

import torch
from torch import nn

from .layers import ConvGeometry, make_conv, split_sigmoid, split_tanh
from .tensor import (
    ComplexTensor,
    ShapeError,
    add,
    componentwise,
    concat_channels,
    hadamard,
    rsub_scalar,
    slice_channels,
)

Gate = Callable[[ComplexTensor], ComplexTensor]


class CGMCell(nn.Module):
    """Reset, update and candidate convolutions, each 2C -> C with a 3x3 kernel."""

    def __init__(self, channels: int, seed: int = 0, fusion: str = "complex"):
        super().__init__()
        self.channels = channels
        self.fusion = fusion
        geom = ConvGeometry(2 * channels, channels, 3, 1, 1)
        self.conv_r = make_conv(fusion, geom, seed)
        self.conv_u = make_conv(fusion, geom, seed + 1)
        self.conv_h = make_conv(fusion, geom, seed + 2)

    @property
    def product(self) -> Callable[[ComplexTensor, ComplexTensor], ComplexTensor]:
        return hadamard if self.fusion == "complex" else componentwise

    def forward(self, z: ComplexTensor, h_prev: ComplexTensor) -> ComplexTensor:
        return cgm_step(z, h_prev, self)


def cgm_step(
    z: ComplexTensor,
    h_prev: ComplexTensor,
    cell: CGMCell,
    reset_gate: Gate | None = None,
    update_gate: Gate | None = None,
) -> ComplexTensor:
    """One recurrent update.

    ``reset_gate`` / ``update_gate`` replace the computed gates when given;
    they receive the computed gate and return the one to use (test stubs).
    """
    if z.shape != h_prev.shape:
        raise ShapeError(f"cgm_step: input {z.shape} and hidden {h_prev.shape} differ")
    if z.shape[1] != cell.channels:
        raise ShapeError(f"cgm_step: cell has {cell.channels} channels, input has {z.shape[1]}")
    mul = cell.product
    zh = concat_channels([z, h_prev])
    r = split_sigmoid(cell.conv_r(zh))
    u = split_sigmoid(cell.conv_u(zh))
    if reset_gate is not None:
        r = reset_gate(r)
    if update_gate is not None:
        u = update_gate(u)
    cand = split_tanh(cell.conv_h(concat_channels([z, mul(r, h_prev)])))
    return add(mul(rsub_scalar(1.0, u), h_prev), mul(u, cand))


def zeros_like(x: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(torch.zeros_like(x.re), torch.zeros_like(x.im))


def run_direction(seq: Sequence[ComplexTensor], cell: CGMCell) -> list[ComplexTensor]:
    h = zeros_like(seq[0])
    states = []
    for z in seq:
        h = cgm_step(z, h, cell)
        states.append(h)
    return states


def run_bidirectional(
    seq: Sequence[ComplexTensor], fwd: CGMCell, bwd: CGMCell
) -> list[ComplexTensor]:
    """Per-frame concat of forward and backward hidden states (2C channels each)."""
    if len(seq) == 0:
        raise ShapeError("run_bidirectional: empty sequence")
    shape = seq[0].shape
    for z in seq:
        if z.shape != shape:
            raise ShapeError(f"run_bidirectional: frame shapes differ {shape} vs {z.shape}")
    forward = run_direction(seq, fwd)
    backward = run_direction(seq[::-1], bwd)[::-1]
    return [concat_channels([f, b]) for f, b in zip(forward, backward)]


def swap_halves(x: ComplexTensor) -> ComplexTensor:
    c = x.shape[1] // 2
    return concat_channels([slice_channels(x, c, 2 * c), slice_channels(x, 0, c)])


class BidirectionalGRU(nn.Module):
    def __init__(self, channels: int, seed: int = 0, fusion: str = "complex"):
        super().__init__()
        self.fwd = CGMCell(channels, seed, fusion)
        self.bwd = CGMCell(channels, seed + 10, fusion)

    def forward(self, seq: Sequence[ComplexTensor]) -> list[ComplexTensor]:
        return run_bidirectional(seq, self.fwd, self.bwd)
