"""Brute-force references for detection post-processing and metrics.

Deliberately unoptimized nested-loop transcriptions, kept independent of the
implementations in ``detector`` and ``metrics`` so they can act as oracles.
"""

from __future__ import annotations

__all__ = [
    "ref_iou",
    "brute_force_nms",
    "brute_force_match",
    "literal_ap_101",
    "reference_evaluate",
]


def ref_iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    ix1, iy1 = max(ax1, bx1), max(ay1, by1)
    ix2, iy2 = min(ax2, bx2), min(ay2, by2)
    iw, ih = ix2 - ix1, iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def brute_force_nms(boxes, scores, classes, iou_thresh: float) -> list[int]:
    """Quadratic NMS: a candidate survives unless a kept higher-ranked box of
    the same class overlaps it above the threshold.  Rank = (-score, index)."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        suppressed = False
        for j in kept:
            if classes[j] == classes[i] and ref_iou(boxes[j], boxes[i]) > iou_thresh:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return kept


def brute_force_match(dets, gts, iou_thresh: float):
    """Greedy matching flags, aligned with descending-score det order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gts)
    flags = []
    for i in order:
        best, best_j = 0.0, -1
        for j in range(len(gts)):
            if taken[j] or gts[j].class_id != dets[i].class_id:
                continue
            v = ref_iou(dets[i].box, gts[j].box)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= iou_thresh:
            taken[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags, order


def literal_ap_101(flags, n_gt: int) -> float:
    """101-point interpolated AP, written out literally."""
    if n_gt == 0:
        return 0.0 if flags else 1.0
    if not flags:
        return 0.0
    tp = fp = 0
    pr = []
    for f in flags:
        tp, fp = tp + (1 if f else 0), fp + (0 if f else 1)
        pr.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for k in range(101):
        r = k / 100.0
        best = 0.0
        for recall, precision in pr:
            if recall >= r - 1e-12 and precision > best:
                best = precision
        # the envelope at r is the max precision among points with recall >= r
        total += best
    return total / 101.0


def reference_evaluate(dets_all, gts_all, conf_thresh: float, image_ids,
                       iou_thresholds) -> dict:
    """Compose the brute-force pieces into full report numbers."""
    gts_by_image = {img: [] for img in image_ids}
    for g in gts_all:
        gts_by_image[g.image_id].append(g)
    dets_by_image = {img: [] for img in image_ids}
    for d in dets_all:
        dets_by_image[d.image_id].append(d)

    def pooled(dets_map, thresh):
        ranked = []
        for rank, img in enumerate(image_ids):
            flags, order = brute_force_match(dets_map[img], gts_by_image[img], thresh)
            for pos, i in enumerate(order):
                ranked.append((-dets_map[img][i].score, rank, pos, flags[pos]))
        ranked.sort()
        return [f for *_r, f in ranked]

    n_gt = len(gts_all)
    ap = {t: literal_ap_101(pooled(dets_by_image, t), n_gt) for t in iou_thresholds}

    conf_map = {img: [d for d in ds if d.score >= conf_thresh]
                for img, ds in dets_by_image.items()}
    flags50 = pooled(conf_map, 0.5)
    tp = sum(flags50)
    precision = tp / len(flags50) if flags50 else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "ap_per_iou": ap,
        "map50": ap[0.5],
        "map50_95": sum(ap.values()) / len(ap),
    }
