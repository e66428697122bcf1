"""Full detector: backbone + fusion pyramid + SP-Detect head.

Also home to prediction decoding (anchor-free distance decode + class-wise
greedy NMS), the training loss (BCE classification + IoU box regression with
center-in-cell assignment), and checkpoint IO.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from dataclasses import replace as dataclass_replace

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .backbone import CSPBackbone
from .errors import ConfigurationError
from .head import DetectHead, RawPredictions, cell_centers, softplus_inverse
from .pyramid import (
    PRESET_NAMES,
    FusionGraphSpec,
    build_graph,
    load_topology_file,
    preset_topology,
    spec_from_yaml,
    spec_to_yaml,
)

__all__ = [
    "Detection",
    "DetectorConfig",
    "EPANet",
    "LossBreakdown",
    "compute_loss",
    "decode_predictions",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: tuple[float, float, float, float]  # x1, y1, x2, y2 in input-image pixels
    image_id: str = ""


@dataclass
class DetectorConfig:
    num_classes: int
    input_size: int = 640
    width_scale: float = 1.0
    depth_scale: float = 1.0
    neck_width: int = 64
    # preset name, path to a topology file, inline topology YAML, or a spec object
    topology: str | FusionGraphSpec = "epa"
    strides: tuple[int, ...] = (8, 16, 32)
    backbone_block: str = "plain"    # plain | msddsp

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        if self.input_size % max(self.strides):
            raise ConfigurationError(
                f"input_size {self.input_size} not divisible by max stride {max(self.strides)}"
            )
        if self.width_scale <= 0 or self.depth_scale <= 0:
            raise ConfigurationError("width_scale and depth_scale must be positive")

    @property
    def depth(self) -> int:
        return max(1, int(round(self.depth_scale)))


# width/depth/neck presets for the two shipped model scales
MODEL_SCALES = {
    "nano": dict(width_scale=1.0, depth_scale=1.0, neck_width=64),
    "s": dict(width_scale=2.0, depth_scale=2.0, neck_width=192),
}


class EPANet(nn.Module):
    """Backbone, fusion graph and detection head wired per a DetectorConfig."""

    def __init__(self, config: DetectorConfig):
        super().__init__()
        self.config = config
        self.backbone = CSPBackbone(
            width_scale=config.width_scale,
            depth=config.depth,
            block=config.backbone_block,
        )
        if isinstance(config.topology, FusionGraphSpec):
            spec = config.topology
        elif config.topology in PRESET_NAMES:
            spec = preset_topology(config.topology, width=config.neck_width,
                                   depth=config.depth)
        elif "\n" in config.topology:  # inline YAML (self-describing checkpoints)
            spec = spec_from_yaml(config.topology)
        else:
            spec = load_topology_file(config.topology)
        self.neck = build_graph(spec, self.backbone.widths)
        expected_levels = [int(math.log2(s)) for s in config.strides]
        if self.neck.output_levels != expected_levels:
            raise ConfigurationError(
                f"topology outputs levels {self.neck.output_levels}, strides "
                f"{config.strides} require {expected_levels}"
            )
        self.head = DetectHead(self.neck.output_widths, config.strides,
                               config.num_classes)

    def forward(self, image: Tensor) -> RawPredictions:
        return self.head(self.neck(self.backbone(image)))

    @torch.no_grad()
    def predict(self, image: Tensor, conf_thresh: float = 0.25,
                nms_iou: float = 0.5, max_det: int = 300):
        return decode_predictions(self(image), conf_thresh, nms_iou, max_det=max_det)


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------

def _box_iou_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise IoU between (N, 4) and (M, 4) corner boxes."""
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union.clamp(min=1e-12)


def _greedy_nms(boxes: Tensor, scores: Tensor, iou_thresh: float) -> list[int]:
    """Greedy NMS over one class; ties broken by original index (stable)."""
    order = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))
    keep: list[int] = []
    suppressed = [False] * len(order)
    ious = _box_iou_matrix(boxes, boxes)
    for pos, i in enumerate(order):
        if suppressed[pos]:
            continue
        keep.append(i)
        for pos2 in range(pos + 1, len(order)):
            if not suppressed[pos2] and float(ious[i, order[pos2]]) > iou_thresh:
                suppressed[pos2] = True
    return keep


def decode_predictions(raw: RawPredictions, conf_thresh: float, nms_iou: float,
                       max_det: int = 300) -> list[list[Detection]]:
    """Decode raw head outputs into per-image detection lists.

    Every (cell, class) whose sigmoid score reaches ``conf_thresh`` becomes a
    candidate box via softplus distances scaled by the level stride; class-wise
    greedy NMS at ``nms_iou`` then prunes overlaps.  Results are sorted by
    descending score and clipped to the input-image bounds.
    """
    if not (0.0 < conf_thresh < 1.0):
        raise ConfigurationError("conf_thresh must be in (0, 1)")
    if not (0.0 < nms_iou <= 1.0):
        raise ConfigurationError("nms_iou must be in (0, 1]")
    n_cls = raw.num_classes
    batch = raw.batch_size
    image_size = raw.levels[0].shape[-1] * raw.strides[0]

    results: list[list[Detection]] = []
    for b in range(batch):
        boxes_all, scores_all, classes_all = [], [], []
        for level, stride in zip(raw.levels, raw.strides):
            t = level[b].detach()
            h, w = t.shape[-2], t.shape[-1]
            centers = cell_centers(h, w, stride, dtype=t.dtype)
            dists = F.softplus(t[:4].reshape(4, -1).T) * stride  # (cells, 4): l,t,r,b
            boxes = torch.stack([
                centers[:, 0] - dists[:, 0],
                centers[:, 1] - dists[:, 1],
                centers[:, 0] + dists[:, 2],
                centers[:, 1] + dists[:, 3],
            ], dim=1)
            scores = torch.sigmoid(t[4:].reshape(n_cls, -1))     # (classes, cells)
            cls_idx, cell_idx = torch.nonzero(scores >= conf_thresh, as_tuple=True)
            if cls_idx.numel() == 0:
                continue
            boxes_all.append(boxes[cell_idx])
            scores_all.append(scores[cls_idx, cell_idx])
            classes_all.append(cls_idx)
        dets: list[Detection] = []
        if boxes_all:
            boxes = torch.cat(boxes_all).clamp(min=0.0)
            boxes[:, 0::2] = boxes[:, 0::2].clamp(max=float(image_size))
            boxes[:, 1::2] = boxes[:, 1::2].clamp(max=float(image_size))
            scores = torch.cat(scores_all)
            classes = torch.cat(classes_all)
            valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
            for cls in classes[valid].unique().tolist():
                mask = valid & (classes == cls)
                idx = torch.nonzero(mask).reshape(-1)
                keep = _greedy_nms(boxes[idx], scores[idx], nms_iou)
                for k in keep:
                    i = int(idx[k])
                    dets.append(Detection(
                        class_id=int(cls),
                        score=float(scores[i]),
                        box=tuple(float(v) for v in boxes[i]),
                    ))
        dets.sort(key=lambda d: -d.score)
        results.append(dets[:max_det])
    return results


def encode_box(box, center, stride: int) -> Tensor:
    """Raw regression 4-vector reproducing ``box`` from ``center`` on decode."""
    cx, cy = center
    x1, y1, x2, y2 = box
    dists = torch.tensor([cx - x1, cy - y1, x2 - cx, y2 - cy], dtype=torch.float64)
    return softplus_inverse(torch.clamp(dists / stride, min=1e-4))


# --------------------------------------------------------------------------
# Loss
# --------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    cls: Tensor
    box: Tensor
    total: Tensor
    num_positives: int = 0

    def detach_floats(self) -> tuple[float, float, float]:
        return (
            float(self.cls.detach()),
            float(self.box.detach()),
            float(self.total.detach()),
        )


def _best_level(box, strides) -> int:
    """Index of the stride best matching the box size (ideal stride ~ sqrt(area)/4)."""
    x1, y1, x2, y2 = box
    ideal = math.sqrt(max((x2 - x1) * (y2 - y1), 1e-8)) / 4.0
    diffs = [abs(math.log2(ideal / s)) for s in strides]
    return diffs.index(min(diffs))


def compute_loss(raw: RawPredictions, targets, lambda_box: float = 7.5) -> LossBreakdown:
    """BCE classification over all cells plus (1 - IoU) regression on positives.

    ``targets`` is one list of GroundTruthBox per batch image, in input-image
    pixels.  A ground-truth box is assigned to the cell containing its center
    at the level whose stride best matches its size; when two boxes claim the
    same cell the smaller one wins.  Both terms are normalized by the positive
    count; ``total = cls + lambda_box * box``.
    """
    n_cls = raw.num_classes
    batch = raw.batch_size
    if len(targets) != batch:
        raise ConfigurationError(f"{len(targets)} target lists for batch of {batch}")
    device = raw.levels[0].device
    dtype = raw.levels[0].dtype

    cls_targets = [torch.zeros_like(level[:, 4:]) for level in raw.levels]
    # positives[level] -> list of (batch, cy, cx, gt_box)
    positives: list[list[tuple[int, int, int, tuple]]] = [[] for _ in raw.levels]
    claimed: dict[tuple[int, int, int, int], float] = {}

    for b, boxes in enumerate(targets):
        for gt in boxes:
            if gt.area() <= 0:
                warnings.warn(f"skipping degenerate ground-truth box {gt.box}")
                continue
            li = _best_level(gt.box, raw.strides)
            stride = raw.strides[li]
            h, w = raw.levels[li].shape[-2], raw.levels[li].shape[-1]
            x1, y1, x2, y2 = gt.box
            cx = min(max(int((x1 + x2) / 2 / stride), 0), w - 1)
            cy = min(max(int((y1 + y2) / 2 / stride), 0), h - 1)
            key = (b, li, cy, cx)
            if key in claimed and claimed[key] <= gt.area():
                continue  # an equal or smaller box already owns this cell
            if key in claimed:
                # evict the larger previous owner
                cls_targets[li][b, :, cy, cx] = 0.0
                positives[li] = [p for p in positives[li]
                                 if not (p[0] == b and p[1] == cy and p[2] == cx)]
            claimed[key] = gt.area()
            cls_targets[li][b, gt.class_id, cy, cx] = 1.0
            positives[li].append((b, cy, cx, gt.box))

    n_pos = sum(len(p) for p in positives)
    denom = max(1, n_pos)

    cls_loss = torch.zeros((), device=device, dtype=dtype)
    for level, tgt in zip(raw.levels, cls_targets):
        cls_loss = cls_loss + F.binary_cross_entropy_with_logits(
            level[:, 4:], tgt, reduction="sum"
        )
    cls_loss = cls_loss / denom

    box_loss = torch.zeros((), device=device, dtype=dtype)
    for li, (level, pos) in enumerate(zip(raw.levels, positives)):
        if not pos:
            continue
        stride = raw.strides[li]
        h, w = level.shape[-2], level.shape[-1]
        b_idx = torch.tensor([p[0] for p in pos], device=device)
        cy = torch.tensor([p[1] for p in pos], device=device)
        cx = torch.tensor([p[2] for p in pos], device=device)
        reg = level[b_idx, :4, cy, cx]                       # (n, 4)
        dists = F.softplus(reg) * stride
        centers_x = (cx.to(dtype) + 0.5) * stride
        centers_y = (cy.to(dtype) + 0.5) * stride
        pred = torch.stack([
            centers_x - dists[:, 0], centers_y - dists[:, 1],
            centers_x + dists[:, 2], centers_y + dists[:, 3],
        ], dim=1)
        gt = torch.tensor([p[3] for p in pos], device=device, dtype=dtype)
        iou = _box_iou_matrix(pred, gt).diagonal()
        box_loss = box_loss + (1.0 - iou).sum()
    box_loss = box_loss / denom

    total = cls_loss + lambda_box * box_loss
    return LossBreakdown(cls=cls_loss, box=box_loss, total=total, num_positives=n_pos)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(model: EPANet, path, step: int = 0) -> None:
    if isinstance(model.config.topology, FusionGraphSpec):
        # inline the spec so the checkpoint stays self-describing
        cfg = asdict(dataclass_replace(model.config,
                                       topology=spec_to_yaml(model.config.topology)))
    else:
        cfg = asdict(model.config)
    cfg["strides"] = list(cfg["strides"])
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "config": cfg,
            "state_dict": model.state_dict(),
            "step": int(step),
        },
        path,
    )


def load_checkpoint(path) -> tuple[EPANet, DetectorConfig, int]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version in {path}")
    cfg_dict = dict(payload["config"])
    cfg_dict["strides"] = tuple(cfg_dict["strides"])
    config = DetectorConfig(**cfg_dict)
    model = EPANet(config)
    model.load_state_dict(payload["state_dict"])
    return model, config, int(payload["step"])
