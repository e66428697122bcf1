"""Receptive-field probing via input-gradient support."""

from __future__ import annotations

import torch

from ..errors import NumericError

__all__ = ["receptive_field_probe"]


def receptive_field_probe(module, input_size: int, in_channels: int) -> tuple[int, int]:
    """Spatial extent (h, w) of the input region influencing one center output pixel.

    Runs the module in double precision on a zero input, back-propagates from
    the center output position and returns the bounding-box extent of the
    nonzero input gradient.  A zero input keeps every pre-activation at the
    operating point, so the support equals the architectural receptive field
    for conv/norm/SiLU stacks.
    """
    module = module.double().eval()
    x = torch.zeros(1, in_channels, input_size, input_size, dtype=torch.float64,
                    requires_grad=True)
    y = module(x)
    cy, cx = y.shape[-2] // 2, y.shape[-1] // 2
    target = y[..., cy, cx].sum()
    grad = torch.autograd.grad(target, x)[0].abs().sum(dim=(0, 1))
    rows = torch.nonzero(grad.sum(dim=1) > 0).reshape(-1)
    cols = torch.nonzero(grad.sum(dim=0) > 0).reshape(-1)
    if rows.numel() == 0 or cols.numel() == 0:
        raise NumericError("dead module: center output pixel has all-zero input gradient")
    return (
        int(rows.max() - rows.min() + 1),
        int(cols.max() - cols.min() + 1),
    )
