"""Declarative feature-pyramid fusion graphs.

A ``FusionGraphSpec`` lists nodes (pyramid level, width, merge rule, optional
fusion block) and typed edges (lateral 1x1, up/down resampling, identity).
``build_graph`` instantiates it into a runnable ``FusionGraph`` over a given
set of backbone widths.  Five presets ship with the package: ``fpn``,
``fully_connected``, ``panet``, ``bifpn`` and ``epa``.

Semantics, fixed here once for every preset:

* ``lateral_1x1``   -- 1x1 conv (with bias) projecting src width to dst width.
* ``up2``/``up4``   -- nearest-neighbour upsample; a 1x1 conv is inserted only
                       when src and dst widths differ.
* ``down2``/``down4`` -- strided 3x3 convs (one per factor-2 step) by default;
                       edges may opt into parameter-free max-pooling
                       (``pool: true``) with a 1x1 conv only on width change.
* merge ``sum``     -- elementwise sum of all inputs followed by a 3x3 conv;
                       a single-input sum node is a passthrough.  Nodes may
                       opt into a depthwise-separable fusion conv
                       (``fuse: dwsep``).
* merge ``concat_then_1x1`` -- channel concat followed by a 1x1 conv
                       projecting to the node width (always parametric).
* ``block``         -- optional C2f / MS-C2f applied after the merge.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import torch
import yaml
from torch import Tensor, nn

from .blocks import C2f, MSC2f
from .errors import ConfigurationError, GraphCycleError, NumericError

__all__ = [
    "FusionNode",
    "FusionEdge",
    "FusionGraphSpec",
    "FusionGraph",
    "PRESET_NAMES",
    "preset_topology",
    "build_graph",
    "count_params",
    "spec_to_yaml",
    "spec_from_yaml",
    "load_topology_file",
]

TRANSFORMS = ("lateral_1x1", "up2", "up4", "down2", "down4", "identity")
TAGS = ("baseline", "green_longrange", "blue_cross")
MERGES = ("sum", "concat_then_1x1")
BLOCKS = ("none", "c2f", "msc2f")
FUSES = ("conv3x3", "dwsep")

PRESET_NAMES = ("fpn", "fully_connected", "panet", "bifpn", "epa")

_SCALE = {"lateral_1x1": 0, "identity": 0, "up2": 1, "up4": 2, "down2": -1, "down4": -2}


@dataclass(frozen=True)
class FusionNode:
    """One pyramid node.  ``backbone`` nodes are fed directly by the backbone
    and have their width resolved at build time (``width`` may be None)."""

    id: str
    level: int
    width: int | None = None
    block: str = "none"
    merge: str = "sum"
    fuse: str = "conv3x3"
    backbone: bool = False


@dataclass(frozen=True)
class FusionEdge:
    src: str
    dst: str
    transform: str
    tag: str = "baseline"
    pool: bool = False


@dataclass
class FusionGraphSpec:
    name: str
    nodes: list[FusionNode]
    edges: list[FusionEdge]
    outputs: list[str]
    levels: tuple[int, int] = (3, 5)
    block_depth: int = 1

    def node(self, node_id: str) -> FusionNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise ConfigurationError(f"no node {node_id!r} in spec {self.name!r}")

    def in_edges(self, node_id: str) -> list[tuple[int, FusionEdge]]:
        return [(i, e) for i, e in enumerate(self.edges) if e.dst == node_id]

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(ids) != len(set(ids)):
            raise ConfigurationError(f"duplicate node ids in spec {self.name!r}")
        lo, hi = self.levels
        by_id = {n.id: n for n in self.nodes}
        for n in self.nodes:
            if not (lo <= n.level <= hi):
                raise ConfigurationError(
                    f"node {n.id!r}: level {n.level} outside configured range {lo}..{hi}"
                )
            if not n.backbone and (n.width is None or n.width < 1):
                raise ConfigurationError(f"node {n.id!r}: width must be a positive int")
            if n.block not in BLOCKS:
                raise ConfigurationError(f"node {n.id!r}: unknown block {n.block!r}")
            if n.merge not in MERGES:
                raise ConfigurationError(f"node {n.id!r}: unknown merge {n.merge!r}")
            if n.fuse not in FUSES:
                raise ConfigurationError(f"node {n.id!r}: unknown fuse {n.fuse!r}")
        for e in self.edges:
            if e.src not in by_id or e.dst not in by_id:
                raise ConfigurationError(f"edge {e.src}->{e.dst}: unknown endpoint")
            if e.transform not in TRANSFORMS:
                raise ConfigurationError(
                    f"edge {e.src}->{e.dst}: unknown transform {e.transform!r}"
                )
            if e.tag not in TAGS:
                raise ConfigurationError(f"edge {e.src}->{e.dst}: unknown tag {e.tag!r}")
            expected = _SCALE[e.transform]
            actual = by_id[e.src].level - by_id[e.dst].level
            if actual != expected:
                raise ConfigurationError(
                    f"edge {e.src}->{e.dst}: transform {e.transform} changes scale by "
                    f"2^{expected} but levels differ by {actual}"
                )
            if e.pool and not e.transform.startswith("down"):
                raise ConfigurationError(
                    f"edge {e.src}->{e.dst}: pool only applies to down transforms"
                )
        for n in self.nodes:
            incoming = self.in_edges(n.id)
            if n.backbone and incoming:
                raise ConfigurationError(f"backbone node {n.id!r} must not have inputs")
            if not n.backbone and not incoming:
                raise ConfigurationError(f"node {n.id!r} has no incoming edges")
        if not self.outputs:
            raise ConfigurationError("spec declares no outputs")
        for out in self.outputs:
            if out not in by_id:
                raise ConfigurationError(f"unknown output node {out!r}")
        order = self.execution_order()  # raises on cycles
        reachable = self._reachable_from_backbone()
        for out in self.outputs:
            if out not in reachable:
                raise ConfigurationError(
                    f"output node {out!r} is not reachable from any backbone input"
                )
        del order

    def execution_order(self) -> list[str]:
        """Deterministic topological order of non-backbone nodes (Kahn)."""
        indeg = {n.id: 0 for n in self.nodes}
        for e in self.edges:
            indeg[e.dst] += 1
        ready = [n.id for n in self.nodes if indeg[n.id] == 0]
        order = []
        while ready:
            cur = ready.pop(0)
            order.append(cur)
            for e in self.edges:
                if e.src == cur:
                    indeg[e.dst] -= 1
                    if indeg[e.dst] == 0 and e.dst not in ready:
                        ready.append(e.dst)
        if len(order) != len(self.nodes):
            stuck = sorted(set(indeg) - set(order))
            raise GraphCycleError(f"cycle detected among nodes {stuck}")
        by_id = {n.id: n for n in self.nodes}
        return [nid for nid in order if not by_id[nid].backbone]

    def _reachable_from_backbone(self) -> set[str]:
        reached = {n.id for n in self.nodes if n.backbone}
        changed = True
        while changed:
            changed = False
            for e in self.edges:
                if e.src in reached and e.dst not in reached:
                    reached.add(e.dst)
                    changed = True
        return reached


# --------------------------------------------------------------------------
# Preset topologies
# --------------------------------------------------------------------------

def preset_topology(name: str, width: int = 64, depth: int = 1) -> FusionGraphSpec:
    """Return the canonical spec for one of the shipped pyramid topologies.

    ``width`` is the unified fusion-node width, ``depth`` the bottleneck count
    inside C2f / MS-C2f blocks (only the ``epa`` preset carries blocks).
    """
    builders = {
        "fpn": _preset_fpn,
        "fully_connected": _preset_fully_connected,
        "panet": _preset_panet,
        "bifpn": _preset_bifpn,
        "epa": _preset_epa,
    }
    if name not in builders:
        raise ConfigurationError(
            f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}"
        )
    spec = builders[name](width, depth)
    spec.validate()
    return spec


def _backbone_nodes() -> list[FusionNode]:
    return [FusionNode(f"C{l}", level=l, backbone=True) for l in (3, 4, 5)]


def _preset_fpn(width: int, depth: int) -> FusionGraphSpec:
    del depth  # the plain top-down pyramid carries no fusion blocks
    nodes = _backbone_nodes() + [
        FusionNode("P5", 5, width),
        FusionNode("P4", 4, width),
        FusionNode("P3", 3, width),
    ]
    edges = [
        FusionEdge("C5", "P5", "lateral_1x1"),
        FusionEdge("C4", "P4", "lateral_1x1"),
        FusionEdge("P5", "P4", "up2"),
        FusionEdge("C3", "P3", "lateral_1x1"),
        FusionEdge("P4", "P3", "up2"),
    ]
    return FusionGraphSpec("fpn", nodes, edges, outputs=["P3", "P4", "P5"])


def _preset_fully_connected(width: int, depth: int) -> FusionGraphSpec:
    del depth
    nodes = _backbone_nodes() + [FusionNode(f"P{l}", l, width) for l in (3, 4, 5)]
    updown = {1: "up2", 2: "up4", -1: "down2", -2: "down4"}
    edges = []
    for dst in (3, 4, 5):
        for src in (3, 4, 5):
            diff = src - dst
            transform = "lateral_1x1" if diff == 0 else updown[diff]
            edges.append(FusionEdge(f"C{src}", f"P{dst}", transform))
    return FusionGraphSpec("fully_connected", nodes, edges, outputs=["P3", "P4", "P5"])


def _preset_panet(width: int, depth: int) -> FusionGraphSpec:
    del depth
    nodes = _backbone_nodes() + [
        FusionNode("P5", 5, width),
        FusionNode("P4", 4, width),
        FusionNode("P3", 3, width),
        FusionNode("N3", 3, width),
        FusionNode("N4", 4, width),
        FusionNode("N5", 5, width),
    ]
    edges = [
        FusionEdge("C5", "P5", "lateral_1x1"),
        FusionEdge("C4", "P4", "lateral_1x1"),
        FusionEdge("P5", "P4", "up2"),
        FusionEdge("C3", "P3", "lateral_1x1"),
        FusionEdge("P4", "P3", "up2"),
        FusionEdge("P3", "N3", "identity"),
        FusionEdge("N3", "N4", "down2"),
        FusionEdge("P4", "N4", "identity"),
        FusionEdge("N4", "N5", "down2"),
        FusionEdge("P5", "N5", "identity"),
    ]
    return FusionGraphSpec("panet", nodes, edges, outputs=["N3", "N4", "N5"])


def _preset_bifpn(width: int, depth: int) -> FusionGraphSpec:
    """Bidirectional connectivity with weightless merges.

    Keeps BiFPN's efficiency traits: pooled downsampling and a depthwise-
    separable fusion conv on the interior top-down node.  The top input feeds
    both directions, and the middle input reaches both the interior and the
    output node (the two-path shortcut).
    """
    del depth
    nodes = _backbone_nodes() + [
        FusionNode("P4td", 4, width, fuse="dwsep"),
        FusionNode("P3", 3, width),
        FusionNode("P4", 4, width),
        FusionNode("P5", 5, width),
    ]
    edges = [
        FusionEdge("C4", "P4td", "lateral_1x1"),
        FusionEdge("C5", "P4td", "up2"),
        FusionEdge("C3", "P3", "lateral_1x1"),
        FusionEdge("P4td", "P3", "up2"),
        FusionEdge("C4", "P4", "lateral_1x1"),
        FusionEdge("P4td", "P4", "identity"),
        FusionEdge("P3", "P4", "down2", pool=True),
        FusionEdge("C5", "P5", "lateral_1x1"),
        FusionEdge("P4", "P5", "down2", pool=True),
    ]
    return FusionGraphSpec("bifpn", nodes, edges, outputs=["P3", "P4", "P5"])


def _preset_epa(width: int, depth: int) -> FusionGraphSpec:
    """Efficient path aggregation: top-down baseline, long-range skip edges
    across two levels (tag ``green_longrange``), a single-path same-level
    cross connection from the backbone into the middle output (tag
    ``blue_cross``), and no bottom-up path into the middle level."""
    nodes = _backbone_nodes() + [
        FusionNode("P5", 5, width),
        FusionNode("P4", 4, width),
        FusionNode("N3", 3, width, block="msc2f", merge="concat_then_1x1"),
        FusionNode("N4", 4, width, block="c2f", merge="concat_then_1x1"),
        FusionNode("N5", 5, width, block="msc2f", merge="concat_then_1x1"),
    ]
    edges = [
        FusionEdge("C5", "P5", "lateral_1x1"),
        FusionEdge("C4", "P4", "lateral_1x1"),
        FusionEdge("P5", "P4", "up2"),
        FusionEdge("C3", "N3", "lateral_1x1"),
        FusionEdge("P4", "N3", "up2"),
        FusionEdge("C5", "N3", "up4", tag="green_longrange"),
        FusionEdge("P4", "N4", "identity"),
        FusionEdge("C4", "N4", "lateral_1x1", tag="blue_cross"),
        FusionEdge("P5", "N5", "identity"),
        FusionEdge("N3", "N5", "down4", tag="green_longrange"),
    ]
    return FusionGraphSpec("epa", nodes, edges, outputs=["N3", "N4", "N5"],
                           block_depth=depth)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def spec_to_yaml(spec: FusionGraphSpec) -> str:
    doc = {
        "topology_version": 1,
        "name": spec.name,
        "levels": list(spec.levels),
        "block_depth": spec.block_depth,
        "nodes": [],
        "edges": [],
        "outputs": list(spec.outputs),
    }
    for n in spec.nodes:
        entry = {"id": n.id, "level": n.level}
        if n.backbone:
            entry["backbone"] = True
        else:
            entry["width"] = n.width
            entry["merge"] = n.merge
            entry["block"] = n.block
            if n.fuse != "conv3x3":
                entry["fuse"] = n.fuse
        doc["nodes"].append(entry)
    for e in spec.edges:
        entry = {"src": e.src, "dst": e.dst, "transform": e.transform}
        if e.tag != "baseline":
            entry["tag"] = e.tag
        if e.pool:
            entry["pool"] = True
        doc["edges"].append(entry)
    return yaml.safe_dump(doc, sort_keys=False)


_NODE_KEYS = {"id", "level", "width", "merge", "block", "fuse", "backbone"}
_EDGE_KEYS = {"src", "dst", "transform", "tag", "pool"}
_TOP_KEYS = {"topology_version", "name", "levels", "block_depth", "nodes", "edges", "outputs"}


def spec_from_yaml(text: str) -> FusionGraphSpec:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ConfigurationError("topology file must contain a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown topology keys: {sorted(unknown)}")
    if doc.get("topology_version") != 1:
        raise ConfigurationError("missing or unsupported topology_version (expected 1)")
    nodes = []
    for raw in doc.get("nodes", []):
        bad = set(raw) - _NODE_KEYS
        if bad:
            raise ConfigurationError(f"unknown node keys: {sorted(bad)}")
        nodes.append(
            FusionNode(
                id=str(raw["id"]),
                level=int(raw["level"]),
                width=raw.get("width"),
                block=raw.get("block", "none"),
                merge=raw.get("merge", "sum"),
                fuse=raw.get("fuse", "conv3x3"),
                backbone=bool(raw.get("backbone", False)),
            )
        )
    edges = []
    for raw in doc.get("edges", []):
        bad = set(raw) - _EDGE_KEYS
        if bad:
            raise ConfigurationError(f"unknown edge keys: {sorted(bad)}")
        edges.append(
            FusionEdge(
                src=str(raw["src"]),
                dst=str(raw["dst"]),
                transform=str(raw["transform"]),
                tag=raw.get("tag", "baseline"),
                pool=bool(raw.get("pool", False)),
            )
        )
    spec = FusionGraphSpec(
        name=str(doc.get("name", "custom")),
        nodes=nodes,
        edges=edges,
        outputs=[str(o) for o in doc.get("outputs", [])],
        levels=tuple(doc.get("levels", (3, 5))),
        block_depth=int(doc.get("block_depth", 1)),
    )
    spec.validate()
    return spec


def load_topology_file(path) -> FusionGraphSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_yaml(fh.read())


def packaged_topology(name: str) -> str:
    """The YAML text of a preset as shipped inside the package."""
    return resources.files("epanet").joinpath(f"topologies/{name}.yaml").read_text()


# --------------------------------------------------------------------------
# Graph instantiation and execution
# --------------------------------------------------------------------------

class _UpSample(nn.Module):
    """Nearest upsample with an optional width-adapting 1x1 conv."""

    def __init__(self, factor: int, c_in: int, c_out: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=factor, mode="nearest")
        self.proj = nn.Conv2d(c_in, c_out, 1, bias=True) if c_in != c_out else nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(self.up(x))


class _DownConv(nn.Module):
    """One strided 3x3 conv per factor-2 step."""

    def __init__(self, factor: int, c_in: int, c_out: int):
        super().__init__()
        steps = []
        c = c_in
        for _ in range(factor.bit_length() - 1):
            steps.append(nn.Conv2d(c, c_out, 3, stride=2, padding=1, bias=True))
            c = c_out
        self.steps = nn.Sequential(*steps)

    def forward(self, x: Tensor) -> Tensor:
        return self.steps(x)


class _DownPool(nn.Module):
    """Max-pool downsampling with an optional width-adapting 1x1 conv."""

    def __init__(self, factor: int, c_in: int, c_out: int):
        super().__init__()
        self.pool = nn.MaxPool2d(kernel_size=factor, stride=factor)
        self.proj = nn.Conv2d(c_in, c_out, 1, bias=True) if c_in != c_out else nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(self.pool(x))


class _DwSepFuse(nn.Module):
    """Depthwise 3x3 + pointwise 1x1 fusion conv."""

    def __init__(self, width: int):
        super().__init__()
        self.dw = nn.Conv2d(width, width, 3, padding=1, groups=width, bias=True)
        self.pw = nn.Conv2d(width, width, 1, bias=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.pw(self.dw(x))


def _make_transform(edge: FusionEdge, c_in: int, c_out: int) -> nn.Module:
    if edge.transform == "lateral_1x1":
        return nn.Conv2d(c_in, c_out, 1, bias=True)
    if edge.transform == "identity":
        if c_in != c_out:
            raise ConfigurationError(
                f"edge {edge.src}->{edge.dst}: identity requires equal widths "
                f"({c_in} vs {c_out})"
            )
        return nn.Identity()
    factor = 2 ** abs(_SCALE[edge.transform])
    if edge.transform.startswith("up"):
        return _UpSample(factor, c_in, c_out)
    if edge.pool:
        return _DownPool(factor, c_in, c_out)
    return _DownConv(factor, c_in, c_out)


class FusionGraph(nn.Module):
    """An instantiated fusion graph, executable over backbone features."""

    def __init__(self, spec: FusionGraphSpec, backbone_widths: dict[int, int]):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.backbone_widths = dict(backbone_widths)
        depth = max(1, int(spec.block_depth))

        widths: dict[str, int] = {}
        for n in spec.nodes:
            if n.backbone:
                if n.level not in backbone_widths:
                    raise ConfigurationError(
                        f"backbone provides no level {n.level} required by node {n.id!r}"
                    )
                widths[n.id] = backbone_widths[n.level]
            else:
                widths[n.id] = n.width
        self.node_widths = widths

        self.edge_transforms = nn.ModuleList(
            _make_transform(e, widths[e.src], widths[e.dst]) for e in spec.edges
        )

        merges: dict[str, nn.Module] = {}
        blocks: dict[str, nn.Module] = {}
        for n in spec.nodes:
            if n.backbone:
                continue
            n_in = len(spec.in_edges(n.id))
            w = widths[n.id]
            if n.merge == "sum":
                # every transform projects to the node width (identity enforces it),
                # so summed inputs always type-check
                if n_in >= 2:
                    merges[n.id] = _DwSepFuse(w) if n.fuse == "dwsep" else nn.Conv2d(
                        w, w, 3, padding=1, bias=True
                    )
                else:
                    merges[n.id] = nn.Identity()
            else:  # concat_then_1x1
                merges[n.id] = nn.Conv2d(n_in * w, w, 1, bias=True)
            if n.block == "c2f":
                blocks[n.id] = C2f(w, w, n=depth)
            elif n.block == "msc2f":
                blocks[n.id] = MSC2f(w, w, n=depth)
        self.node_merges = nn.ModuleDict(merges)
        self.node_blocks = nn.ModuleDict(blocks)
        self.execution_order = spec.execution_order()

    @property
    def output_widths(self) -> list[int]:
        return [self.node_widths[o] for o in self.spec.outputs]

    @property
    def output_levels(self) -> list[int]:
        return [self.spec.node(o).level for o in self.spec.outputs]

    def forward(self, features: dict[int, Tensor]) -> list[Tensor]:
        spec = self.spec
        values: dict[str, Tensor] = {}
        base_size = None
        for n in spec.nodes:
            if not n.backbone:
                continue
            if n.level not in features:
                raise ConfigurationError(f"missing level {n.level} in backbone features")
            f = features[n.level]
            if f.shape[1] != self.node_widths[n.id]:
                raise ConfigurationError(
                    f"level {n.level} has {f.shape[1]} channels, graph expects "
                    f"{self.node_widths[n.id]}"
                )
            implied = f.shape[-1] * (2 ** n.level)
            if base_size is None:
                base_size = implied
            elif implied != base_size:
                raise ConfigurationError(
                    f"level {n.level} spatial size {f.shape[-1]} is inconsistent "
                    f"with the other levels"
                )
            values[n.id] = f

        for nid in self.execution_order:
            node = spec.node(nid)
            inputs = []
            for i, e in spec.in_edges(nid):
                inputs.append(self.edge_transforms[i](values[e.src]))
            if node.merge == "sum":
                merged = inputs[0]
                for t in inputs[1:]:
                    merged = merged + t
                merged = self.node_merges[nid](merged)
            else:
                merged = self.node_merges[nid](torch.cat(inputs, dim=1))
            if nid in self.node_blocks:
                merged = self.node_blocks[nid](merged)
            if not torch.isfinite(merged).all():
                raise NumericError(f"non-finite values at fusion node {nid!r}")
            values[nid] = merged
        return [values[o] for o in spec.outputs]


def build_graph(spec: FusionGraphSpec, backbone_widths: dict[int, int]) -> FusionGraph:
    """Instantiate parameters for every edge transform and node of ``spec``."""
    return FusionGraph(spec, backbone_widths)


def count_params(graph: FusionGraph) -> int:
    """Exact count of learnable scalars in edge transforms and node machinery."""
    return sum(p.numel() for p in graph.parameters())
