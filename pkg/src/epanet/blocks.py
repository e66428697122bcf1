"""Convolutional building blocks.

The atomic unit is CBS (conv + batch norm + SiLU).  On top of it sit the
residual ``Bottleneck``, the split/stack/concat ``C2f`` fusion block, and the
multi-scale ``MSDDSPBottleneck`` whose four branches (staged dilated convs,
depthwise-separable conv, pointwise conv, identity) are re-merged under a
per-channel branch softmax.  ``MSC2f`` is C2f with the multi-scale bottleneck
swapped in.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigurationError, NumericError, SmallSpatialWarning

__all__ = [
    "BlockConfig",
    "BranchStats",
    "ConvBNSiLU",
    "Bottleneck",
    "C2f",
    "MSC2f",
    "StagedDilatedConv",
    "DepthwiseSeparableConv",
    "MSDDSPBottleneck",
    "channel_soft_attention",
]


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Padding that keeps stride-1 output size equal to input size (odd kernels)."""
    return dilation * (kernel - 1) // 2


def _check_finite(x: Tensor, where: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite values in input to {where}")


@dataclass(frozen=True)
class BlockConfig:
    """Validated hyper-parameters for a single block."""

    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    dilation: int = 1
    n_bottlenecks: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError("kernel must be a positive odd int")
        if self.stride < 1 or self.dilation < 1:
            raise ConfigurationError("stride and dilation must be positive")
        if self.n_bottlenecks < 0:
            raise ConfigurationError("n_bottlenecks must be non-negative")


class ConvBNSiLU(nn.Module):
    """CBS: Conv2d (no bias) -> BatchNorm2d -> SiLU, with "same" padding."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 1, stride: int = 1,
                 dilation: int = 1):
        super().__init__()
        cfg = BlockConfig(c_in, c_out, kernel, stride, dilation)
        self.conv = nn.Conv2d(
            cfg.in_channels, cfg.out_channels, cfg.kernel, cfg.stride,
            padding=same_padding(cfg.kernel, cfg.dilation),
            dilation=cfg.dilation, bias=False,
        )
        self.bn = nn.BatchNorm2d(cfg.out_channels)
        self.act = nn.SiLU()

    @classmethod
    def from_config(cls, cfg: BlockConfig) -> "ConvBNSiLU":
        return cls(cfg.in_channels, cfg.out_channels, cfg.kernel, cfg.stride, cfg.dilation)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 4:
            raise ConfigurationError(f"expected a rank-4 tensor, got rank {x.dim()}")
        if x.shape[1] != self.conv.in_channels:
            raise ConfigurationError(
                f"channel mismatch: input has {x.shape[1]}, block expects {self.conv.in_channels}"
            )
        _check_finite(x, "ConvBNSiLU")
        return self.act(self.bn(self.conv(x)))


class Bottleneck(nn.Module):
    """Residual block: Conv3x3(SiLU(BN(Conv1x1(x)))) + x.

    Channel count is preserved throughout so the skip connection type-checks.
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels < 1:
            raise ConfigurationError("channels must be positive")
        self.cv1 = nn.Conv2d(channels, channels, 1, bias=False)
        self.bn = nn.BatchNorm2d(channels)
        self.cv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=True)
        self.channels = channels

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"residual add undefined: input has {x.shape[1]} channels, "
                f"block was built for {self.channels}"
            )
        _check_finite(x, "Bottleneck")
        return self.cv2(F.silu(self.bn(self.cv1(x)))) + x


@dataclass
class BranchStats:
    """Per-branch channel statistics and attention weights.

    ``s`` and ``beta`` are shaped (B, 4, C) where C is the per-branch channel
    count; ``beta`` sums to 1 over the branch axis at every channel position.
    """

    s: Tensor
    beta: Tensor


def channel_soft_attention(branches) -> BranchStats:
    """Global-average-pool each branch, then softmax over branches per channel."""
    branches = list(branches)
    if len(branches) != 4:
        raise ConfigurationError(f"expected 4 branches, got {len(branches)}")
    shape = branches[0].shape
    for i, b in enumerate(branches):
        if b.shape != shape:
            raise ConfigurationError(
                f"branch {i} shape {tuple(b.shape)} != branch 0 shape {tuple(shape)}"
            )
    s = torch.stack([b.mean(dim=(2, 3)) for b in branches], dim=1)  # (B, 4, C)
    beta = torch.softmax(s, dim=1)
    return BranchStats(s=s, beta=beta)


class StagedDilatedConv(nn.Module):
    """Three stacked 3x3 convs with dilation 1, 2, 4 (stride 1, "same" padding).

    The trailing resize slot is an identity: with stride-1 same-padded convs the
    spatial size never changes, so there is nothing to resize.  Effective
    receptive field grows 3 -> 7 -> 15.
    """

    RECEPTIVE_FIELD = 15
    WIDEST_KERNEL_SUPPORT = 9  # 3x3 kernel at dilation 4

    def __init__(self, channels: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=same_padding(3, d), dilation=d, bias=True)
            for d in (1, 2, 4)
        )
        self.resize = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = conv(x)
        return self.resize(x)


class DepthwiseSeparableConv(nn.Module):
    """Depthwise 3x3 conv followed by a pointwise 1x1 conv."""

    def __init__(self, channels: int):
        super().__init__()
        self.dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels, bias=True)
        self.pw = nn.Conv2d(channels, channels, 1, bias=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.pw(self.dw(x))


class MSDDSPBottleneck(nn.Module):
    """Multi-scale diverse-division short-path bottleneck.

    Pipeline: a 1x1 CBS adjusts the input, the result is split into four equal
    channel groups processed by (1) staged dilated convs, (2) a depthwise-
    separable conv, (3) a pointwise conv, (4) identity.  The concatenated
    branch outputs form the short path Y1; a per-channel softmax over the four
    branches' pooled statistics reweights the branches into Y2; the block
    returns Y1 + Y2.  Shape preserving.
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels % 4 != 0:
            raise ConfigurationError(
                f"multi-scale bottleneck needs channels divisible by 4, got {channels}"
            )
        q = channels // 4
        self.adjust = ConvBNSiLU(channels, channels, 1)
        self.dc = StagedDilatedConv(q)
        self.dsc = DepthwiseSeparableConv(q)
        self.pwc = nn.Conv2d(q, q, 1, bias=True)
        self.channels = channels

    def branch_outputs(self, x: Tensor):
        """Adjust, split in four, and run each branch. Returns the four maps."""
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"channel mismatch: input has {x.shape[1]}, block expects {self.channels}"
            )
        _check_finite(x, "MSDDSPBottleneck")
        h, w = x.shape[2], x.shape[3]
        if min(h, w) < StagedDilatedConv.WIDEST_KERNEL_SUPPORT:
            warnings.warn(
                f"spatial size {h}x{w} is smaller than the widest dilated kernel's "
                "padded support (9x9); zero padding dominates",
                SmallSpatialWarning,
                stacklevel=2,
            )
        x1, x2, x3, x4 = torch.chunk(self.adjust(x), 4, dim=1)
        return [self.dc(x1), self.dsc(x2), self.pwc(x3), x4]

    def forward_with_stats(self, x: Tensor):
        outs = self.branch_outputs(x)
        y1 = torch.cat(outs, dim=1)
        stats = channel_soft_attention(outs)
        weighted = [o * stats.beta[:, n].unsqueeze(-1).unsqueeze(-1) for n, o in enumerate(outs)]
        y2 = torch.cat(weighted, dim=1)
        return y1 + y2, stats

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_stats(x)[0]


class C2f(nn.Module):
    """Cross-stage-partial fusion block with two 1x1 convolutions.

    A 1x1 conv projects the input to ``c_out`` channels which are split in
    half; N stacked bottlenecks transform the first half; the transformed half
    and the untouched half are concatenated, projected by a second 1x1 conv,
    and the block input is added back.  The outer residual requires
    ``c_in == c_out``; configuring a width change drops it (``residual`` is
    False and model summaries report the deviation).
    """

    def __init__(self, c_in: int, c_out: int, n: int = 1, block: str = "plain"):
        super().__init__()
        if n < 0:
            raise ConfigurationError("n must be non-negative")
        if c_out % 2 != 0:
            raise ConfigurationError(
                f"internal width must be even so the split halves channels, got {c_out}"
            )
        hidden = c_out // 2
        if block == "plain":
            blocks = [Bottleneck(hidden) for _ in range(n)]
        elif block == "msddsp":
            if hidden % 4 != 0:
                raise ConfigurationError(
                    f"multi-scale internal width must be divisible by 4, got {hidden}"
                )
            blocks = [MSDDSPBottleneck(hidden) for _ in range(n)]
        else:
            raise ConfigurationError(f"unknown inner block type {block!r}")
        self.cv1 = nn.Conv2d(c_in, c_out, 1, bias=True)
        self.cv2 = nn.Conv2d(c_out, c_out, 1, bias=True)
        self.blocks = nn.ModuleList(blocks)
        self.c_in = c_in
        self.c_out = c_out
        self.residual = c_in == c_out

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.c_in:
            raise ConfigurationError(
                f"channel mismatch: input has {x.shape[1]}, block expects {self.c_in}"
            )
        _check_finite(x, type(self).__name__)
        fa, fb = torch.chunk(self.cv1(x), 2, dim=1)
        for blk in self.blocks:
            fa = blk(fa)
        y = self.cv2(torch.cat([fa, fb], dim=1))
        return y + x if self.residual else y


class MSC2f(C2f):
    """C2f with the multi-scale bottleneck substituted for the plain one."""

    def __init__(self, c_in: int, c_out: int, n: int = 1):
        super().__init__(c_in, c_out, n, block="msddsp")
