"""SP-Detect: decoupled anchor-free detection head.

Each pyramid output gets two branches (classification and box regression) of
two 3x3 CBS blocks followed by a 1x1 conv.  Per level the head emits one
(B, 4 + num_classes, H, W) tensor: four box distances first (left, top,
right, bottom from the cell center, pre-softplus), then class logits
(pre-sigmoid).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .blocks import ConvBNSiLU
from .errors import ConfigurationError

__all__ = ["RawPredictions", "DetectHead", "softplus_inverse"]


@dataclass
class RawPredictions:
    """Raw per-level head outputs plus the geometry needed to decode them."""

    levels: list[Tensor]            # each (B, 4 + num_classes, H_l, W_l)
    strides: tuple[int, ...]
    num_classes: int

    @property
    def batch_size(self) -> int:
        return self.levels[0].shape[0]

    def total_cells(self) -> int:
        return sum(t.shape[-1] * t.shape[-2] for t in self.levels)


def softplus_inverse(y: Tensor) -> Tensor:
    """Inverse of softplus, stable for large y: x = y + log(1 - exp(-y))."""
    y = torch.clamp(y, min=1e-8)
    return y + torch.log(-torch.expm1(-y))


class DetectHead(nn.Module):
    def __init__(self, widths: list[int], strides: tuple[int, ...], num_classes: int):
        super().__init__()
        if len(widths) != len(strides):
            raise ConfigurationError(
                f"{len(widths)} feature levels for {len(strides)} strides"
            )
        if num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        self.strides = tuple(int(s) for s in strides)
        self.num_classes = num_classes
        self.cls_branches = nn.ModuleList()
        self.reg_branches = nn.ModuleList()
        for w in widths:
            self.cls_branches.append(nn.Sequential(
                ConvBNSiLU(w, w, 3), ConvBNSiLU(w, w, 3),
                nn.Conv2d(w, num_classes, 1, bias=True),
            ))
            self.reg_branches.append(nn.Sequential(
                ConvBNSiLU(w, w, 3), ConvBNSiLU(w, w, 3),
                nn.Conv2d(w, 4, 1, bias=True),
            ))

    def forward(self, features: list[Tensor]) -> RawPredictions:
        if len(features) != len(self.strides):
            raise ConfigurationError(
                f"head got {len(features)} levels, configured for {len(self.strides)}"
            )
        levels = []
        for feat, cls_b, reg_b in zip(features, self.cls_branches, self.reg_branches):
            levels.append(torch.cat([reg_b(feat), cls_b(feat)], dim=1))
        return RawPredictions(levels=levels, strides=self.strides,
                              num_classes=self.num_classes)


def cell_centers(h: int, w: int, stride: int, device=None, dtype=None) -> Tensor:
    """Pixel coordinates of every cell center at a level, shaped (h*w, 2)."""
    ys = (torch.arange(h, device=device, dtype=dtype) + 0.5) * stride
    xs = (torch.arange(w, device=device, dtype=dtype) + 0.5) * stride
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=1)
