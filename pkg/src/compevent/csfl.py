"""Space-frequency blocks and the U-Net trunk built from them."""

from __future__ import annotations

import itertools

from torch import nn

from .layers import ConvGeometry, make_conv, make_norm, split_gelu, transposed_geometry
from .tensor import ComplexTensor, ShapeError, add, concat_channels, fft2d, ifft2d

EXPANSION = 2


class Branch(nn.Module):
    """pw1 -> depthwise 3x3 -> sGeLU -> pw2.

    ``pw2`` starts at zero so a fresh branch contributes nothing to the
    residual sum.  Setting ``linear`` skips the activation (used by tests).
    """

    def __init__(self, channels: int, seed: int, fusion: str = "complex", expansion: int = EXPANSION):
        super().__init__()
        hidden = expansion * channels
        self.channels = channels
        self.pw1 = make_conv(fusion, ConvGeometry(channels, hidden, 1), seed)
        self.dw = make_conv(fusion, ConvGeometry(hidden, hidden, 3, 1, 1, groups=hidden), seed + 1)
        self.pw2 = make_conv(fusion, ConvGeometry(hidden, channels, 1), seed + 2, init="zeros")
        self.linear = False

    def chain(self, x: ComplexTensor) -> ComplexTensor:
        y = self.dw(self.pw1(x))
        if not self.linear:
            y = split_gelu(y)
        return self.pw2(y)

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"branch expects {self.channels} channels, got {x.shape[1]}")
        return self.chain(x)


class SpatialBranch(Branch):
    pass


class FrequencyBranch(Branch):
    """The same chain applied to the full complex spectrum, then inverted."""

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"branch expects {self.channels} channels, got {x.shape[1]}")
        return ifft2d(self.chain(fft2d(x)))


class CFFN(nn.Module):
    def __init__(self, channels: int, seed: int, fusion: str = "complex", expansion: int = EXPANSION):
        super().__init__()
        self.pw3 = make_conv(fusion, ConvGeometry(channels, expansion * channels, 1), seed)
        self.pw4 = make_conv(fusion, ConvGeometry(expansion * channels, channels, 1), seed + 1, init="zeros")

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        return self.pw4(split_gelu(self.pw3(x)))


class CSFB(nn.Module):
    """Complex space-frequency block.

    X'  = CLN(X)
    X'' = X + spatial(X') + freq(X')
    out = CFFN(CLN(X'')) + X''
    """

    def __init__(
        self,
        channels: int,
        seed: int = 0,
        fusion: str = "complex",
        cln: str = "whiten",
        freq_branch: bool = True,
    ):
        super().__init__()
        self.cln1 = make_norm(cln, channels)
        self.cln2 = make_norm(cln, channels)
        self.spatial = SpatialBranch(channels, seed, fusion)
        self.freq = FrequencyBranch(channels, seed + 3, fusion) if freq_branch else None
        self.cffn = CFFN(channels, seed + 6, fusion)

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        xn = self.cln1(x)
        y = add(x, self.spatial(xn))
        if self.freq is not None:
            y = add(y, self.freq(xn))
        return add(self.cffn(self.cln2(y)), y)


class UNet(nn.Module):
    """Encoder-decoder over CSFB stacks.

    Level ``l`` runs at resolution / 2**l with ``channels * 2**l`` channels;
    the deepest level is the bottleneck.  Skips are concatenated with the
    upsampled features and mixed by a 1x1 conv.
    """

    def __init__(
        self,
        in_channels: int,
        channels: int = 16,
        levels: int = 3,
        blocks: int = 2,
        n_heads: int = 3,
        seed: int = 0,
        fusion: str = "complex",
        cln: str = "whiten",
        freq_branch: bool = True,
    ):
        super().__init__()
        if not 2 <= levels <= 4:
            raise ValueError(f"levels must be in 2..4, got {levels}")
        seeds = itertools.count(seed, 16)
        widths = [channels * 2**l for l in range(levels)]
        self.levels = levels
        self.widths = widths

        def stack(width: int) -> nn.Sequential:
            return nn.Sequential(
                *[CSFB(width, next(seeds), fusion, cln, freq_branch) for _ in range(blocks)]
            )

        self.fuse = make_conv(fusion, ConvGeometry(in_channels, channels, 1), next(seeds))
        self.encoders = nn.ModuleList(stack(w) for w in widths)
        self.down = nn.ModuleList(
            make_conv(fusion, ConvGeometry(widths[l], widths[l + 1], 3, 2, 1), next(seeds))
            for l in range(levels - 1)
        )
        self.up = nn.ModuleList(
            make_conv(fusion, transposed_geometry(widths[l + 1], widths[l], 2, 2), next(seeds))
            for l in range(levels - 1)
        )
        self.skip = nn.ModuleList(
            make_conv(fusion, ConvGeometry(2 * widths[l], widths[l], 1), next(seeds))
            for l in range(levels - 1)
        )
        self.decoders = nn.ModuleList(stack(widths[l]) for l in range(levels - 1))
        self.heads = nn.ModuleList(
            make_conv(fusion, ConvGeometry(channels, channels, 1), next(seeds)) for _ in range(n_heads)
        )

    @property
    def multiple(self) -> int:
        return 2 ** (self.levels - 1)

    def trunk(self, x: ComplexTensor) -> ComplexTensor:
        h, w = x.shape[2], x.shape[3]
        if h % self.multiple or w % self.multiple:
            raise ShapeError(f"U-Net input {h}x{w} not divisible by {self.multiple}")
        x = self.fuse(x)
        skips = []
        for l in range(self.levels):
            x = self.encoders[l](x)
            if l < self.levels - 1:
                skips.append(x)
                x = self.down[l](x)
        for l in reversed(range(self.levels - 1)):
            x = self.up[l](x)
            x = self.skip[l](concat_channels([skips[l], x]))
            x = self.decoders[l](x)
        return x

    def forward(self, x: ComplexTensor) -> list[ComplexTensor]:
        feat = self.trunk(x)
        return [head(feat) for head in self.heads]
