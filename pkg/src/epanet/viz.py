"""Feature-map heatmaps and detection overlays as PNG files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .data import Sample, letterbox
from .detector import EPANet
from .train import image_to_tensor

__all__ = ["save_feature_heatmaps", "save_detection_overlay", "visualize_sample"]


def _heatmap_to_image(feat: torch.Tensor, out_size: int) -> Image.Image:
    """Channel-mean of one (C, H, W) map, normalized to 8-bit grayscale."""
    m = feat.mean(dim=0)
    lo, hi = float(m.min()), float(m.max())
    if hi - lo < 1e-12:
        norm = torch.zeros_like(m)
    else:
        norm = (m - lo) / (hi - lo)
    arr = (norm.numpy() * 255).astype(np.uint8)
    return Image.fromarray(arr, mode="L").resize((out_size, out_size), Image.NEAREST)


@torch.no_grad()
def save_feature_heatmaps(model: EPANet, image: np.ndarray, out_dir) -> list[Path]:
    """Write one heatmap PNG per pyramid output level."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    boxed, _ = letterbox(image, model.config.input_size)
    feats = model.neck(model.backbone(image_to_tensor(boxed).unsqueeze(0)))
    paths = []
    for node_id, feat in zip(model.neck.spec.outputs, feats):
        path = out_dir / f"heatmap_{node_id}.png"
        _heatmap_to_image(feat[0], model.config.input_size).save(path)
        paths.append(path)
    return paths


def save_detection_overlay(image: np.ndarray, detections, path,
                           class_names=None) -> Path:
    """Draw boxes with class/score labels onto the image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil = Image.fromarray(image).convert("RGB")
    draw = ImageDraw.Draw(pil)
    for det in detections:
        x1, y1, x2, y2 = det.box
        draw.rectangle([x1, y1, x2, y2], outline=(255, 64, 64), width=2)
        name = class_names[det.class_id] if class_names else str(det.class_id)
        draw.text((x1 + 2, max(0, y1 - 10)), f"{name} {det.score:.2f}",
                  fill=(255, 255, 0))
    pil.save(path)
    return path


@torch.no_grad()
def visualize_sample(model: EPANet, sample: Sample, out_dir,
                     conf_thresh: float = 0.25, nms_iou: float = 0.5) -> list[Path]:
    """Heatmaps plus a detection overlay for one sample."""
    from .train import evaluate_model

    out_dir = Path(out_dir)
    paths = save_feature_heatmaps(model, sample.image, out_dir)
    _, dets = evaluate_model(model, [sample], conf_thresh=conf_thresh, nms_iou=nms_iou)
    overlay = save_detection_overlay(sample.image, dets,
                                     out_dir / f"overlay_{sample.image_id}.png")
    return paths + [overlay]
