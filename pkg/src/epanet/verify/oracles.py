"""Straight-line oracles for the core blocks and the top-down pyramid.

Each oracle reads the parameters out of a torch module and recomputes the
forward pass with the loop-based numpy primitives from ``naive``.  The torch
code path is never invoked, so agreement between the two is meaningful.
"""

from __future__ import annotations

import numpy as np

from ..blocks import Bottleneck, C2f, ConvBNSiLU, MSDDSPBottleneck
from ..errors import ConfigurationError
from .naive import (
    naive_batchnorm,
    naive_branch_softmax,
    naive_conv2d,
    naive_gap,
    naive_silu,
    naive_upsample_nearest,
)

__all__ = [
    "oracle_cbs",
    "oracle_bottleneck",
    "oracle_c2f",
    "oracle_msddsp",
    "oracle_fpn",
    "equation_oracle",
]


def _np(t):
    return t.detach().cpu().numpy().astype(np.float64)


def _conv_params(conv):
    w = _np(conv.weight)
    b = _np(conv.bias) if conv.bias is not None else None
    return w, b


def _apply_conv(x, conv):
    w, b = _conv_params(conv)
    return naive_conv2d(
        x, w, b,
        stride=conv.stride[0],
        padding=conv.padding[0],
        dilation=conv.dilation[0],
        groups=conv.groups,
    )


def _apply_bn(x, bn):
    return naive_batchnorm(
        x, _np(bn.weight), _np(bn.bias), _np(bn.running_mean), _np(bn.running_var), bn.eps
    )


def oracle_cbs(block: ConvBNSiLU, x) -> np.ndarray:
    """conv -> inference-mode batch norm -> SiLU."""
    return naive_silu(_apply_bn(_apply_conv(np.asarray(x, np.float64), block.conv), block.bn))


def oracle_bottleneck(block: Bottleneck, x) -> np.ndarray:
    """Conv3x3(SiLU(BN(Conv1x1(x)))) + x."""
    x = np.asarray(x, dtype=np.float64)
    h = _apply_conv(x, block.cv1)
    h = _apply_bn(h, block.bn)
    h = naive_silu(h)
    h = _apply_conv(h, block.cv2)
    return h + x


def oracle_msddsp(block: MSDDSPBottleneck, x) -> np.ndarray:
    """CBS adjust, 4-way split, DC/DSC/PWC/identity branches, short path plus
    branch-softmax reweighted path."""
    x = np.asarray(x, dtype=np.float64)
    adjusted = oracle_cbs(block.adjust, x)
    q = adjusted.shape[1] // 4
    parts = [adjusted[:, i * q:(i + 1) * q] for i in range(4)]

    dc = parts[0]
    for conv in block.dc.convs:
        dc = _apply_conv(dc, conv)
    dsc = _apply_conv(_apply_conv(parts[1], block.dsc.dw), block.dsc.pw)
    pwc = _apply_conv(parts[2], block.pwc)
    outs = [dc, dsc, pwc, parts[3]]

    y1 = np.concatenate(outs, axis=1)
    stats = np.stack([naive_gap(o) for o in outs], axis=1)  # (B, 4, q)
    beta = naive_branch_softmax(stats)
    weighted = [outs[n] * beta[:, n][:, :, None, None] for n in range(4)]
    y2 = np.concatenate(weighted, axis=1)
    return y1 + y2


def oracle_c2f(block: C2f, x) -> np.ndarray:
    """Split(Conv1x1(x)) -> stacked bottlenecks on the first half -> concat ->
    Conv1x1 -> + x (when the block keeps its outer residual)."""
    x = np.asarray(x, dtype=np.float64)
    projected = _apply_conv(x, block.cv1)
    half = projected.shape[1] // 2
    fa, fb = projected[:, :half], projected[:, half:]
    for inner in block.blocks:
        if isinstance(inner, MSDDSPBottleneck):
            fa = oracle_msddsp(inner, fa)
        else:
            fa = oracle_bottleneck(inner, fa)
    y = _apply_conv(np.concatenate([fa, fb], axis=1), block.cv2)
    return y + x if block.residual else y


def oracle_fpn(graph, features: dict[int, np.ndarray]) -> list[np.ndarray]:
    """Literal top-down pass over the canonical ``fpn`` preset.

    P5 = Lat5(C5); P4 = Conv3x3(Lat4(C4) + up2(P5)); P3 likewise.  Outputs in
    declared order (P3, P4, P5).
    """
    spec = graph.spec
    if spec.name != "fpn":
        raise ConfigurationError("oracle_fpn only understands the fpn preset")

    def lateral(dst):
        for i, e in enumerate(spec.edges):
            if e.dst == dst and e.transform == "lateral_1x1":
                return graph.edge_transforms[i]
        raise ConfigurationError(f"no lateral edge into {dst}")

    c3 = np.asarray(features[3], np.float64)
    c4 = np.asarray(features[4], np.float64)
    c5 = np.asarray(features[5], np.float64)

    p5 = _apply_conv(c5, lateral("P5"))
    p4 = _apply_conv(
        _apply_conv(c4, lateral("P4")) + naive_upsample_nearest(p5, 2),
        graph.node_merges["P4"],
    )
    p3 = _apply_conv(
        _apply_conv(c3, lateral("P3")) + naive_upsample_nearest(p4, 2),
        graph.node_merges["P3"],
    )
    return [p3, p4, p5]


_ORACLES = {
    "fpn": oracle_fpn,
    "c2f": oracle_c2f,
    "bottleneck": oracle_bottleneck,
    "msddsp": oracle_msddsp,
}


def equation_oracle(name: str, inputs, module):
    """Dispatch to the named straight-line oracle."""
    if name not in _ORACLES:
        raise ConfigurationError(
            f"unknown oracle {name!r}; valid names: {', '.join(sorted(_ORACLES))}"
        )
    return _ORACLES[name](module, inputs)
