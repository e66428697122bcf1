"""Cost comparison across pyramid topologies at matched widths."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ..profiler import profile_forward
from ..pyramid import build_graph, count_params, preset_topology

__all__ = ["TopologyRow", "TopologyReport", "topology_report", "check_param_order"]

# params(fpn) <= params(bifpn) <= params(epa) < params(panet)
_ORDER_CHAIN = [("fpn", "bifpn", "<="), ("bifpn", "epa", "<="), ("epa", "panet", "<")]

# published cost ratio between the pruned aggregation pyramid and the full
# bottom-up one, reported next to ours for manual comparison (never asserted)
REFERENCE_EPA_PANET_RATIO = 1.6 / 2.3


@dataclass
class TopologyRow:
    name: str
    params: int
    flops: int
    latency_ms: float | None


@dataclass
class TopologyReport:
    rows: list[TopologyRow]
    violations: list[str] = field(default_factory=list)
    epa_panet_ratio: float | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"name": r.name, "params": r.params, "flops": r.flops,
                 "latency_ms": r.latency_ms}
                for r in self.rows
            ],
            "violations": list(self.violations),
            "epa_panet_ratio": self.epa_panet_ratio,
            "reference_epa_panet_ratio": REFERENCE_EPA_PANET_RATIO,
            "ok": self.ok,
        }

    def to_text(self) -> str:
        lines = [f"{'topology':<18}{'params':>12}{'flops':>16}{'latency_ms':>12}"]
        for r in self.rows:
            lat = f"{r.latency_ms:.2f}" if r.latency_ms is not None else "-"
            lines.append(f"{r.name:<18}{r.params:>12,}{r.flops:>16,}{lat:>12}")
        if self.epa_panet_ratio is not None:
            lines.append(
                f"epa/panet param ratio: {self.epa_panet_ratio:.3f} "
                f"(reference {REFERENCE_EPA_PANET_RATIO:.2f})"
            )
        for v in self.violations:
            lines.append(f"ORDERING VIOLATION: {v}")
        return "\n".join(lines)


def check_param_order(params: dict[str, int]) -> list[str]:
    """Violated pairs of the expected cost chain among the presets present."""
    violations = []
    for a, b, op in _ORDER_CHAIN:
        if a in params and b in params:
            ok = params[a] <= params[b] if op == "<=" else params[a] < params[b]
            if not ok:
                violations.append(
                    f"params({a})={params[a]:,} not {op} params({b})={params[b]:,}"
                )
    return violations


def topology_report(presets, width: int = 64, backbone_widths=None,
                    input_size: int = 256, latency_runs: int = 0) -> TopologyReport:
    """One profiler row per preset, plus the param-ordering check.

    All graphs are built at the same node ``width`` over the same backbone
    widths, and profiled on synthetic features for a square ``input_size``.
    """
    if backbone_widths is None:
        backbone_widths = {3: width, 4: 2 * width, 5: 4 * width}
    rows = []
    params: dict[str, int] = {}
    for name in presets:
        graph = build_graph(preset_topology(name, width=width), backbone_widths)
        feats = {
            level: torch.zeros(1, backbone_widths[level],
                               input_size // 2 ** level, input_size // 2 ** level)
            for level in backbone_widths
        }

        def run(g=graph, f=feats):
            g(f)

        prof = profile_forward(graph, run, input_size, latency_runs=latency_runs)
        n_params = count_params(graph)
        params[name] = n_params
        rows.append(TopologyRow(name, n_params, prof.flops, prof.latency_ms))

    ratio = None
    if "epa" in params and "panet" in params and params["panet"]:
        ratio = params["epa"] / params["panet"]
    return TopologyReport(rows=rows, violations=check_param_order(params),
                          epa_panet_ratio=ratio)
