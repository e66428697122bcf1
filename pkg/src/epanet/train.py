"""Training and evaluation loops for desk-scale experiments.

A single top-level seed fans out into independent streams for parameter
initialization, data ordering and augmentation, so runs with the same seed
and config reproduce their loss curves exactly.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import GroundTruthBox, letterbox
from .detector import Detection, EPANet, compute_loss, decode_predictions, save_checkpoint
from .errors import ConfigurationError
from .metrics import evaluate

__all__ = [
    "TrainConfig",
    "TrainResult",
    "derive_seed",
    "seed_init",
    "train_model",
    "evaluate_model",
    "samples_to_batch",
]


def derive_seed(seed: int, stream: str) -> int:
    """Stable per-purpose seed derived from the top-level seed."""
    return (seed * 1_000_003 + zlib.crc32(stream.encode())) % (2 ** 31)


def seed_init(seed: int) -> None:
    """Seed parameter initialization (torch global RNG)."""
    torch.manual_seed(derive_seed(seed, "init"))


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lambda_box: float = 7.5
    augment: bool = False
    log_every: int = 1
    warmup_steps: int = 20

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigurationError("steps and batch_size must be positive")


@dataclass
class TrainResult:
    losses: list[tuple[int, float, float, float]]  # step, cls, box, total
    final_loss: float
    checkpoint: Path | None = None


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).float() / 255.0


def samples_to_batch(samples, input_size: int, augment_rng=None):
    """Letterbox samples to the network size and stack them into a batch.

    Returns the image tensor, per-image target lists (network space) and the
    letterbox transforms.  With ``augment_rng`` set, applies a horizontal flip
    to half the samples.
    """
    images, targets, transforms = [], [], []
    for s in samples:
        image, boxes = s.image, s.boxes
        if augment_rng is not None and augment_rng.random() < 0.5:
            w = image.shape[1]
            image = image[:, ::-1]
            boxes = [
                GroundTruthBox(b.class_id,
                               (w - b.box[2], b.box[1], w - b.box[0], b.box[3]),
                               b.image_id)
                for b in boxes
            ]
        boxed, tf = letterbox(image, input_size)
        images.append(image_to_tensor(boxed))
        targets.append([
            GroundTruthBox(b.class_id, tf.box_to_network(b.box), b.image_id)
            for b in boxes
        ])
        transforms.append(tf)
    return torch.stack(images), targets, transforms


def train_model(model: EPANet, samples, cfg: TrainConfig, seed: int = 0,
                out_dir=None) -> TrainResult:
    """Run the loop; optionally write losses.csv and a final checkpoint."""
    if len(samples) == 0:
        raise ConfigurationError("empty training set")
    data_rng = np.random.default_rng(derive_seed(seed, "data"))
    aug_rng = np.random.default_rng(derive_seed(seed, "augment")) if cfg.augment else None

    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr,
                                momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    input_size = model.config.input_size
    model.train()

    order: list[int] = []
    losses = []
    for step in range(1, cfg.steps + 1):
        batch_idx = []
        while len(batch_idx) < cfg.batch_size:
            if not order:
                order = list(data_rng.permutation(len(samples)))
            batch_idx.append(order.pop(0))
        batch = [samples[i] for i in batch_idx]
        images, targets, _ = samples_to_batch(batch, input_size, aug_rng)

        warmup = min(1.0, step / max(1, cfg.warmup_steps))
        for group in optimizer.param_groups:
            group["lr"] = cfg.lr * warmup

        raw = model(images)
        breakdown = compute_loss(raw, targets, lambda_box=cfg.lambda_box)
        optimizer.zero_grad()
        breakdown.total.backward()
        optimizer.step()
        if step % cfg.log_every == 0 or step == cfg.steps:
            c, b, t = breakdown.detach_floats()
            losses.append((step, c, b, t))

    checkpoint = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "losses.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "cls", "box", "total"])
            for row in losses:
                writer.writerow([row[0], f"{row[1]:.10f}", f"{row[2]:.10f}", f"{row[3]:.10f}"])
        checkpoint = out_dir / "model.pt"
        save_checkpoint(model, checkpoint, step=cfg.steps)

    return TrainResult(losses=losses, final_loss=losses[-1][3], checkpoint=checkpoint)


@torch.no_grad()
def evaluate_model(model: EPANet, samples, conf_thresh: float = 0.25,
                   nms_iou: float = 0.5, max_det: int = 300,
                   ap_mode: str = "101"):
    """Run inference over samples and score it; boxes are mapped back to
    original image pixels before matching."""
    model.eval()
    input_size = model.config.input_size
    all_dets: list[Detection] = []
    all_gts: list[GroundTruthBox] = []
    image_ids = []
    # decode at a low floor so AP ranks the full score range; the operating
    # point for P/R/F1 is applied inside evaluate()
    decode_thresh = min(0.05, conf_thresh)
    for s in samples:
        image_ids.append(s.image_id)
        all_gts.extend(s.boxes)
        images, _, tfs = samples_to_batch([s], input_size)
        raw = model(images)
        dets = decode_predictions(raw, decode_thresh, nms_iou, max_det=max_det)[0]
        tf = tfs[0]
        for d in dets:
            box = tf.box_to_original(d.box)
            if box[2] <= box[0] or box[3] <= box[1]:
                continue
            all_dets.append(Detection(d.class_id, d.score, box, s.image_id))
    report = evaluate(all_dets, all_gts, conf_thresh=conf_thresh,
                      image_ids=image_ids, ap_mode=ap_mode)
    return report, all_dets
