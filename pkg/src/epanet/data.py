"""Dataset ingestion, letterboxing and the synthetic-shapes generator.

Labels follow the YOLO text layout: ``images/{split}/`` and
``labels/{split}/`` under a common root, one ``class cx cy w h`` line per box
with coordinates normalized to [0, 1].  An image without a label file is a
valid zero-box background sample.
"""

from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigurationError

__all__ = [
    "GroundTruthBox",
    "Sample",
    "YoloDataset",
    "load_yolo_dataset",
    "synth_dataset",
    "materialize_dataset",
    "letterbox",
    "LetterboxTransform",
]

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
PAD_VALUE = 114  # neutral gray used by letterbox padding


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    box: tuple[float, float, float, float]  # x1, y1, x2, y2 in pixels
    image_id: str = ""

    def area(self) -> float:
        x1, y1, x2, y2 = self.box
        return max(0.0, x2 - x1) * max(0.0, y2 - y1)


@dataclass
class Sample:
    image: np.ndarray                 # H x W x 3 uint8
    boxes: list[GroundTruthBox]
    image_id: str


def _parse_label_line(line: str, width: int, height: int, image_id: str,
                      num_classes: int | None):
    parts = line.split()
    if len(parts) != 5:
        return None
    try:
        cls = int(parts[0])
        cx, cy, w, h = (float(p) for p in parts[1:])
    except ValueError:
        return None
    if cls < 0 or (num_classes is not None and cls >= num_classes):
        return None
    if w <= 0 or h <= 0:
        return None
    x1 = max(0.0, (cx - w / 2) * width)
    y1 = max(0.0, (cy - h / 2) * height)
    x2 = min(float(width), (cx + w / 2) * width)
    y2 = min(float(height), (cy + h / 2) * height)
    if x2 <= x1 or y2 <= y1:
        return None
    return GroundTruthBox(cls, (x1, y1, x2, y2), image_id)


class YoloDataset:
    """Lazy sequence of samples from a YOLO-layout dataset root."""

    def __init__(self, root, split: str, num_classes: int | None = None):
        self.root = Path(root)
        self.split = split
        self.num_classes = num_classes
        self.images_dir = self.root / "images" / split
        self.labels_dir = self.root / "labels" / split
        if not self.images_dir.is_dir():
            raise ConfigurationError(f"missing split directory {self.images_dir}")
        if not self.labels_dir.is_dir():
            raise ConfigurationError(f"missing split directory {self.labels_dir}")
        self.paths = sorted(
            p for p in self.images_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        self.warning_counts: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, idx: int) -> Sample:
        path = self.paths[idx]
        image = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
        h, w = image.shape[:2]
        image_id = path.stem
        boxes: list[GroundTruthBox] = []
        label_path = self.labels_dir / f"{path.stem}.txt"
        if label_path.is_file():
            skipped = 0
            for line in label_path.read_text().splitlines():
                if not line.strip():
                    continue
                box = _parse_label_line(line, w, h, image_id, self.num_classes)
                if box is None:
                    skipped += 1
                else:
                    boxes.append(box)
            if skipped:
                self.warning_counts[label_path.name] = skipped
                log.warning("%s: skipped %d malformed label line(s)", label_path, skipped)
        return Sample(image=image, boxes=boxes, image_id=image_id)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def load_yolo_dataset(root, split: str, num_classes: int | None = None) -> YoloDataset:
    return YoloDataset(root, split, num_classes)


# --------------------------------------------------------------------------
# Synthetic shapes
# --------------------------------------------------------------------------

def _palette(classes: int) -> list[tuple[int, int, int]]:
    colors = []
    for c in range(classes):
        r, g, b = colorsys.hsv_to_rgb(c / max(1, classes), 0.95, 0.95)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return colors


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.integers(40, 110, size=(size // 8, size // 8, 3), dtype=np.uint8)
    base = np.kron(coarse, np.ones((8, 8, 1), dtype=np.uint8))
    noise = rng.integers(0, 25, size=(size, size, 3), dtype=np.uint8)
    return np.clip(base.astype(np.int16) + noise, 0, 255).astype(np.uint8)


def synth_dataset(seed: int, n: int, size: int = 64, classes: int = 3) -> list[Sample]:
    """Deterministic colored-shape scenes with exact boxes.

    Same (seed, n, size, classes) always produces bitwise-identical samples.
    Each image holds 1-4 objects; even classes draw rectangles, odd classes
    ellipses, and every class gets a distinct saturated color against a dim
    textured background.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if size % 32:
        raise ConfigurationError("size must be divisible by 32")
    rng = np.random.default_rng(seed)
    palette = _palette(classes)
    samples = []
    for idx in range(n):
        image_id = f"synth_{seed}_{idx:05d}"
        bg = _background(rng, size)
        pil = Image.fromarray(bg)
        draw = ImageDraw.Draw(pil)
        boxes: list[GroundTruthBox] = []
        for _ in range(int(rng.integers(1, 5))):
            cls = int(rng.integers(0, classes))
            w = float(rng.uniform(size / 8, size / 3))
            h = float(rng.uniform(size / 8, size / 3))
            x1 = float(rng.uniform(1, size - w - 1))
            y1 = float(rng.uniform(1, size - h - 1))
            x2, y2 = x1 + w, y1 + h
            color = palette[cls]
            if cls % 2 == 0:
                draw.rectangle([x1, y1, x2, y2], fill=color)
            else:
                draw.ellipse([x1, y1, x2, y2], fill=color)
            boxes.append(GroundTruthBox(cls, (x1, y1, x2, y2), image_id))
        samples.append(Sample(np.asarray(pil, dtype=np.uint8), boxes, image_id))
    return samples


def materialize_dataset(samples, root, split: str) -> None:
    """Write samples to the YOLO directory layout under ``root``."""
    root = Path(root)
    images_dir = root / "images" / split
    labels_dir = root / "labels" / split
    images_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(s.image).save(images_dir / f"{s.image_id}.png")
        h, w = s.image.shape[:2]
        lines = []
        for b in s.boxes:
            x1, y1, x2, y2 = b.box
            lines.append(
                f"{b.class_id} {(x1 + x2) / 2 / w:.6f} {(y1 + y2) / 2 / h:.6f} "
                f"{(x2 - x1) / w:.6f} {(y2 - y1) / h:.6f}"
            )
        (labels_dir / f"{s.image_id}.txt").write_text("\n".join(lines) + ("\n" if lines else ""))


# --------------------------------------------------------------------------
# Letterboxing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LetterboxTransform:
    scale: float
    pad_x: float
    pad_y: float
    orig_w: int
    orig_h: int
    target: int

    def box_to_network(self, box):
        x1, y1, x2, y2 = box
        return (
            x1 * self.scale + self.pad_x,
            y1 * self.scale + self.pad_y,
            x2 * self.scale + self.pad_x,
            y2 * self.scale + self.pad_y,
        )

    def box_to_original(self, box):
        x1, y1, x2, y2 = box
        inv = 1.0 / self.scale
        return (
            min(max((x1 - self.pad_x) * inv, 0.0), self.orig_w),
            min(max((y1 - self.pad_y) * inv, 0.0), self.orig_h),
            min(max((x2 - self.pad_x) * inv, 0.0), self.orig_w),
            min(max((y2 - self.pad_y) * inv, 0.0), self.orig_h),
        )


def letterbox(image: np.ndarray, target_size: int):
    """Aspect-preserving resize plus symmetric gray padding to a square.

    Returns the padded image and the transform mapping original-image boxes to
    network space (and back, within a pixel).
    """
    if target_size % 32:
        raise ConfigurationError("target_size must be divisible by 32")
    h, w = image.shape[:2]
    scale = min(target_size / w, target_size / h)
    new_w = max(1, round(w * scale))
    new_h = max(1, round(h * scale))
    if (new_w, new_h) != (w, h):
        resized = np.asarray(
            Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR), dtype=np.uint8
        )
    else:
        resized = image
    pad_x = (target_size - new_w) // 2
    pad_y = (target_size - new_h) // 2
    out = np.full((target_size, target_size, 3), PAD_VALUE, dtype=np.uint8)
    out[pad_y:pad_y + new_h, pad_x:pad_x + new_w] = resized
    return out, LetterboxTransform(scale=scale, pad_x=float(pad_x), pad_y=float(pad_y),
                                   orig_w=w, orig_h=h, target=target_size)
