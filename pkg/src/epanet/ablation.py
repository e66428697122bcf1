"""Block-swap ablation harness: {plain, msddsp} bottlenecks x {fpn, epa} necks.

Each configuration trains briefly on the same synthetic set; the harness
records parameter counts and the loss trajectory and checks that training
does not diverge (final loss finite and down at least 50% from step 1).
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import synth_dataset
from .detector import DetectorConfig, EPANet
from .train import TrainConfig, seed_init, train_model

__all__ = ["AblationRow", "block_swap_ablation", "ablation_table"]

CONFIGS = [
    ("plain", "fpn"),
    ("plain", "epa"),
    ("msddsp", "fpn"),
    ("msddsp", "epa"),
]


@dataclass
class AblationRow:
    backbone_block: str
    topology: str
    params: int
    first_loss: float
    final_loss: float

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.first_loss if self.first_loss else float("inf")

    @property
    def converged(self) -> bool:
        import math
        return math.isfinite(self.final_loss) and self.final_loss <= 0.5 * self.first_loss


def block_swap_ablation(steps: int = 150, n_images: int = 8, image_size: int = 64,
                        num_classes: int = 3, seed: int = 0,
                        batch_size: int = 8, lr: float = 0.02) -> list[AblationRow]:
    samples = synth_dataset(seed=seed, n=n_images, size=image_size, classes=num_classes)
    rows = []
    for block, topology in CONFIGS:
        seed_init(seed)
        model = EPANet(DetectorConfig(
            num_classes=num_classes, input_size=image_size,
            topology=topology, backbone_block=block,
        ))
        result = train_model(
            model, samples,
            TrainConfig(steps=steps, batch_size=batch_size, lr=lr),
            seed=seed,
        )
        rows.append(AblationRow(
            backbone_block=block,
            topology=topology,
            params=sum(p.numel() for p in model.parameters()),
            first_loss=result.losses[0][3],
            final_loss=result.final_loss,
        ))
    return rows


def ablation_table(rows) -> str:
    lines = [f"{'bottleneck':<12}{'topology':<10}{'params':>12}{'loss@1':>12}"
             f"{'loss@end':>12}{'ratio':>8}  converged"]
    for r in rows:
        lines.append(
            f"{r.backbone_block:<12}{r.topology:<10}{r.params:>12,}"
            f"{r.first_loss:>12.4f}{r.final_loss:>12.4f}{r.loss_ratio:>8.3f}  "
            f"{'yes' if r.converged else 'NO'}"
        )
    return "\n".join(lines)
