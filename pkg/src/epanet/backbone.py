"""CSP-style backbone: a stem plus four stages of strided CBS + C2f."""

from __future__ import annotations

from torch import Tensor, nn

from .blocks import C2f, ConvBNSiLU
from .errors import ConfigurationError

__all__ = ["CSPBackbone", "scale_width"]

# nano-scale base widths for stem and the four stages; features are taken from
# stages 2..4 (strides 8, 16, 32)
BASE_WIDTHS = (16, 32, 64, 128, 256)


def scale_width(width: int, scale: float) -> int:
    """Scale a channel count, keeping it a positive multiple of 8."""
    return max(8, int(round(width * scale / 8)) * 8)


class CSPBackbone(nn.Module):
    """Feature extractor emitting levels 3..5 at strides 8, 16, 32.

    ``block`` selects the bottleneck flavour inside every C2f ("plain" or
    "msddsp"), which is the swap exercised by the ablation harness.
    """

    def __init__(self, width_scale: float = 1.0, depth: int = 1, block: str = "plain"):
        super().__init__()
        w = [scale_width(b, width_scale) for b in BASE_WIDTHS]
        self.stem = ConvBNSiLU(3, w[0], kernel=3, stride=2)
        self.stages = nn.ModuleList()
        for i in range(1, 5):
            self.stages.append(nn.Sequential(
                ConvBNSiLU(w[i - 1], w[i], kernel=3, stride=2),
                C2f(w[i], w[i], n=depth, block=block),
            ))
        self.widths = {3: w[2], 4: w[3], 5: w[4]}

    def forward(self, image: Tensor) -> dict[int, Tensor]:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ConfigurationError("backbone expects a (B, 3, H, W) image tensor")
        if image.shape[-1] % 32 or image.shape[-2] % 32:
            raise ConfigurationError(
                f"image size {tuple(image.shape[-2:])} is not divisible by 32; "
                "letterbox the input to a multiple of 32"
            )
        x = self.stem(image)
        feats: dict[int, Tensor] = {}
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i >= 1:  # stages 2..4 produce levels 3..5
                feats[i + 2] = x
        return feats
