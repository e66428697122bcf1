"""Parameter, FLOP and latency profiling.

FLOPs use per-layer closed forms with multiply-accumulates counted twice:

* Conv2d:      2 * k_h * k_w * C_in * C_out * H_out * W_out / groups
* BatchNorm2d: 2 per output element (scale + shift)
* SiLU:        1 per output element
* MaxPool2d:   k_h * k_w per output element
* Upsample / Identity: 0 (copies)

Cheap elementwise glue (residual adds, concat, softmax over four branches) is
not counted; convolutions dominate by orders of magnitude.  Params and FLOPs
are exact and deterministic for a fixed configuration; latency is the median
of timed forwards after warmup.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch
from torch import nn

__all__ = ["LayerProfile", "ProfileReport", "profile_forward", "profile_model"]


@dataclass
class LayerProfile:
    name: str
    kind: str
    params: int
    flops: int
    out_shape: tuple


@dataclass
class ProfileReport:
    params: int
    flops: int
    latency_ms: float | None
    input_size: int
    per_layer: list[LayerProfile] = field(default_factory=list)

    def layer_flops_total(self) -> int:
        return sum(l.flops for l in self.per_layer)

    def to_text(self) -> str:
        lines = [
            f"params        {self.params:,}",
            f"flops         {self.flops:,}  ({self.flops / 1e9:.3f} G at {self.input_size})",
        ]
        if self.latency_ms is not None:
            lines.append(f"latency       {self.latency_ms:.2f} ms (median)")
        return "\n".join(lines)


def _layer_flops(module: nn.Module, out: torch.Tensor) -> int | None:
    if isinstance(module, nn.Conv2d):
        kh, kw = module.kernel_size
        h, w = out.shape[-2], out.shape[-1]
        return 2 * kh * kw * module.in_channels * module.out_channels * h * w // module.groups
    if isinstance(module, nn.BatchNorm2d):
        return 2 * out.numel()
    if isinstance(module, nn.SiLU):
        return out.numel()
    if isinstance(module, nn.MaxPool2d):
        k = module.kernel_size
        kh, kw = (k, k) if isinstance(k, int) else k
        return kh * kw * out.numel()
    if isinstance(module, (nn.Upsample, nn.Identity)):
        return 0
    return None


def profile_forward(model: nn.Module, run, input_size: int,
                    latency_runs: int = 0, warmup: int = 3) -> ProfileReport:
    """Profile ``model`` by executing ``run()`` once under shape-capturing hooks.

    ``run`` is a zero-argument callable that performs one forward pass of the
    model on a representative input.  When ``latency_runs`` > 0 the median
    wall time of that callable is measured after ``warmup`` extra calls.
    """
    layers: list[LayerProfile] = []
    handles = []

    def make_hook(name):
        def hook(module, args, out):
            if not isinstance(out, torch.Tensor):
                return
            flops = _layer_flops(module, out)
            if flops is None:
                return
            params = sum(p.numel() for p in module.parameters(recurse=False))
            layers.append(LayerProfile(name, type(module).__name__, params,
                                       flops, tuple(out.shape)))
        return hook

    for name, module in model.named_modules():
        if len(list(module.children())) == 0:
            handles.append(module.register_forward_hook(make_hook(name)))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            run()
    finally:
        for h in handles:
            h.remove()

    latency = None
    if latency_runs > 0:
        with torch.no_grad():
            for _ in range(warmup):
                run()
            times = []
            for _ in range(latency_runs):
                t0 = time.perf_counter()
                run()
                times.append((time.perf_counter() - t0) * 1000.0)
        times.sort()
        mid = len(times) // 2
        latency = times[mid] if len(times) % 2 else 0.5 * (times[mid - 1] + times[mid])
    if was_training:
        model.train()

    params = sum(p.numel() for p in model.parameters())
    flops = sum(l.flops for l in layers)
    return ProfileReport(params=params, flops=flops, latency_ms=latency,
                         input_size=input_size, per_layer=layers)


def profile_model(model: nn.Module, input_size: int, latency_runs: int = 0,
                  warmup: int = 3, batch: int = 1, channels: int = 3) -> ProfileReport:
    """Profile a model whose forward takes a (batch, channels, S, S) image."""
    x = torch.zeros(batch, channels, input_size, input_size)

    def run():
        model(x)

    return profile_forward(model, run, input_size, latency_runs, warmup)
