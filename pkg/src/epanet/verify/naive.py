"""Loop-based numpy primitives used by the equation oracles.

Everything here is a direct transcription of the textbook definition: one
output pixel at a time, double precision, no shared code with the torch
implementations.  Transparency beats speed on purpose.
"""

from __future__ import annotations

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    """2-D convolution computed from the definition.

    x: (B, Cin, H, W), w: (Cout, Cin/groups, KH, KW), b: (Cout,) or None.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bsz, c_in, h, wd = x.shape
    c_out, c_grp, kh, kw = w.shape
    assert c_in % groups == 0 and c_out % groups == 0
    assert c_grp == c_in // groups

    xp = np.zeros((bsz, c_in, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x

    h_out = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    w_out = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((bsz, c_out, h_out, w_out), dtype=np.float64)

    span_h = dilation * (kh - 1) + 1
    span_w = dilation * (kw - 1) + 1
    for n in range(bsz):
        for co in range(c_out):
            g = co // (c_out // groups)
            ci0 = g * c_grp
            kernel = w[co]
            for oh in range(h_out):
                for ow in range(w_out):
                    patch = xp[
                        n,
                        ci0:ci0 + c_grp,
                        oh * stride:oh * stride + span_h:dilation,
                        ow * stride:ow * stride + span_w:dilation,
                    ]
                    out[n, co, oh, ow] = float((patch * kernel).sum())
            if b is not None:
                out[n, co] += float(b[co])
    return out


def naive_batchnorm(x, gamma, beta, mean, var, eps):
    """Inference-mode batch norm: (x - mean) / sqrt(var + eps) * gamma + beta."""
    x = np.asarray(x, dtype=np.float64)
    shape = (1, -1, 1, 1)
    return (
        (x - np.reshape(mean, shape)) / np.sqrt(np.reshape(var, shape) + eps)
    ) * np.reshape(gamma, shape) + np.reshape(beta, shape)


def naive_silu(x):
    """x * sigmoid(x), elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return x / (1.0 + np.exp(-x))


def naive_upsample_nearest(x, factor):
    """Nearest-neighbour upsampling by an integer factor."""
    x = np.asarray(x, dtype=np.float64)
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def naive_gap(x):
    """Global average pooling: spatial mean per channel, (B, C, H, W) -> (B, C)."""
    x = np.asarray(x, dtype=np.float64)
    bsz, c, h, w = x.shape
    out = np.zeros((bsz, c), dtype=np.float64)
    for n in range(bsz):
        for ch in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[n, ch, i, j]
            out[n, ch] = acc / (h * w)
    return out


def naive_branch_softmax(stats):
    """Softmax across the branch axis of stacked statistics (B, N, C)."""
    stats = np.asarray(stats, dtype=np.float64)
    e = np.exp(stats)
    return e / e.sum(axis=1, keepdims=True)
