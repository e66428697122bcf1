import numpy as np
import pytest
import torch
from torch import nn


@pytest.fixture(autouse=True)
def _ignore_small_spatial_warning():
    import warnings

    from epanet.errors import SmallSpatialWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallSpatialWarning)
        yield


def randomize_batchnorm(module: nn.Module, seed: int = 0) -> None:
    """Give every BN layer non-trivial running stats and affine params so
    inference-mode comparisons actually exercise the normalization."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.BatchNorm2d):
                m.running_mean.uniform_(-0.5, 0.5, generator=gen)
                m.running_var.uniform_(0.5, 2.0, generator=gen)
                m.weight.uniform_(0.5, 1.5, generator=gen)
                m.bias.uniform_(-0.3, 0.3, generator=gen)


def zero_params(module: nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
