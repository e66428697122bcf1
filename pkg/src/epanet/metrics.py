"""Detection metrics: IoU, greedy matching, interpolated AP and full reports.

AP uses the 101-point interpolation of the precision envelope by default
(``mode="101"``); ``"all"`` and ``"11"`` are available for sensitivity
checks.  Detections are pooled over all images and ranked jointly by score;
matching is class-aware and per-image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ConfigurationError

__all__ = [
    "iou",
    "match_detections",
    "average_precision",
    "evaluate",
    "EvalReport",
    "IOU_THRESHOLDS",
]

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def iou(a, b) -> float:
    """Intersection over union of two corner boxes; 0 when disjoint."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if ax2 <= ax1 or ay2 <= ay1 or bx2 <= bx1 or by2 <= by1:
        raise ConfigurationError(f"degenerate box: {a if ax2 <= ax1 or ay2 <= ay1 else b}")
    ix = min(ax2, bx2) - max(ax1, bx1)
    iy = min(ay2, by2) - max(ay1, by1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def match_detections(dets, gts, iou_thresh: float):
    """Greedy TP/FP flags for one image's detections.

    Detections are processed in descending score order (ties keep input
    order); each one matches the highest-IoU unmatched same-class ground
    truth with IoU >= ``iou_thresh``.  Returns flags aligned with the sorted
    order together with the sort order itself.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched = [False] * len(gts)
    flags = []
    for i in order:
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[j] or gt.class_id != det.class_id:
                continue
            v = iou(det.box, gt.box)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_thresh:
            matched[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags, order


def average_precision(flags, n_gt: int, mode: str = "101") -> float:
    """AP from TP/FP flags ordered by descending score.

    ``mode``: "101" (envelope sampled at 101 recall points), "all"
    (every-point area), or "11" (legacy 11-point sampling).  With no ground
    truth, AP is 0.0 if any detections exist and 1.0 (vacuous) otherwise.
    """
    if n_gt < 0:
        raise ConfigurationError("n_gt must be non-negative")
    if n_gt == 0:
        return 0.0 if flags else 1.0
    if not flags:
        return 0.0
    tp = fp = 0
    precisions, recalls = [], []
    for flag in flags:
        if flag:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    # precision envelope: running max from the right
    envelope = list(precisions)
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])

    def env_at(recall: float) -> float:
        for r, p in zip(recalls, envelope):
            if r >= recall - 1e-12:
                return p
        return 0.0

    if mode == "101":
        points = [i / 100 for i in range(101)]
        return sum(env_at(r) for r in points) / len(points)
    if mode == "11":
        points = [i / 10 for i in range(11)]
        return sum(env_at(r) for r in points) / len(points)
    if mode == "all":
        area = 0.0
        prev_r = 0.0
        for r, p in zip(recalls, envelope):
            area += (r - prev_r) * p
            prev_r = r
        return area
    raise ConfigurationError(f"unknown AP mode {mode!r}")


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    ap_per_iou: dict[float, float]
    map50: float
    map50_95: float
    conf_thresh: float = 0.25
    n_images: int = 0
    n_detections: int = 0
    n_gt: int = 0

    def to_dict(self) -> dict:
        d = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "map50": self.map50,
            "map50_95": self.map50_95,
            "ap_per_iou": {f"{k:.2f}": v for k, v in self.ap_per_iou.items()},
            "conf_thresh": self.conf_thresh,
            "n_images": self.n_images,
            "n_detections": self.n_detections,
            "n_gt": self.n_gt,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [
            f"images      {self.n_images}",
            f"detections  {self.n_detections}   ground truth {self.n_gt}",
            f"P {self.precision:.4f}  R {self.recall:.4f}  F1 {self.f1:.4f}  "
            f"(conf {self.conf_thresh})",
            f"mAP50 {self.map50:.4f}   mAP50-95 {self.map50_95:.4f}",
        ]
        return "\n".join(lines)


def _pooled_flags(dets_by_image, gts_by_image, image_order, iou_thresh):
    """Flags for all detections pooled over images, ranked by global score."""
    ranked = []  # (score, image_rank, det_rank_in_image, flag)
    for rank, image_id in enumerate(image_order):
        dets = dets_by_image.get(image_id, [])
        gts = gts_by_image.get(image_id, [])
        flags, order = match_detections(dets, gts, iou_thresh)
        for pos, i in enumerate(order):
            ranked.append((-dets[i].score, rank, pos, flags[pos]))
    ranked.sort()
    return [f for *_rank, f in ranked]


def evaluate(dets_all, gts_all, conf_thresh: float = 0.25,
             image_ids=None, ap_mode: str = "101") -> EvalReport:
    """Full evaluation over a set of images.

    AP per IoU threshold is computed over all detections regardless of score;
    precision/recall/F1 are the operating point at IoU 0.5 with detections
    filtered to ``score >= conf_thresh``.  ``image_ids`` fixes the evaluated
    image universe (required to credit zero-box background images); when
    omitted it is derived from the ground truth.
    """
    gts_by_image: dict[str, list] = {}
    for gt in gts_all:
        gts_by_image.setdefault(gt.image_id, []).append(gt)
    if image_ids is None:
        image_universe = list(dict.fromkeys(gt.image_id for gt in gts_all))
    else:
        image_universe = list(image_ids)
    known = set(image_universe)
    for gt in gts_all:
        if gt.image_id not in known:
            raise ConfigurationError(f"ground truth references unknown image {gt.image_id!r}")
    dets_by_image: dict[str, list] = {}
    for det in dets_all:
        if det.image_id not in known:
            raise ConfigurationError(f"detection references unknown image {det.image_id!r}")
        dets_by_image.setdefault(det.image_id, []).append(det)

    n_gt = len(gts_all)
    ap_per_iou = {}
    for thresh in IOU_THRESHOLDS:
        flags = _pooled_flags(dets_by_image, gts_by_image, image_universe, thresh)
        ap_per_iou[thresh] = average_precision(flags, n_gt, mode=ap_mode)

    conf_dets = {
        img: [d for d in dets if d.score >= conf_thresh]
        for img, dets in dets_by_image.items()
    }
    flags50 = _pooled_flags(conf_dets, gts_by_image, image_universe, 0.5)
    tp = sum(flags50)
    n_det = len(flags50)
    precision = tp / n_det if n_det else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0

    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        ap_per_iou=ap_per_iou,
        map50=ap_per_iou[0.5],
        map50_95=sum(ap_per_iou.values()) / len(ap_per_iou),
        conf_thresh=conf_thresh,
        n_images=len(image_universe),
        n_detections=sum(len(d) for d in dets_by_image.values()),
        n_gt=n_gt,
    )
