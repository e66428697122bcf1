import math

import numpy as np
import pytest
import torch

from epanet.blocks import (
    BlockConfig,
    Bottleneck,
    C2f,
    ConvBNSiLU,
    MSC2f,
    MSDDSPBottleneck,
    channel_soft_attention,
)
from epanet.errors import ConfigurationError, NumericError, SmallSpatialWarning
from epanet.verify import oracle_bottleneck, oracle_c2f, oracle_msddsp

from conftest import randomize_batchnorm, zero_params


def scalar_silu(v: float) -> float:
    return v / (1.0 + math.exp(-v))


class TestBlockConfig:
    def test_valid(self):
        BlockConfig(8, 16, kernel=3, stride=2)

    @pytest.mark.parametrize("kwargs", [
        dict(in_channels=0, out_channels=8),
        dict(in_channels=8, out_channels=8, kernel=2),
        dict(in_channels=8, out_channels=8, kernel=-3),
        dict(in_channels=8, out_channels=8, stride=0),
        dict(in_channels=8, out_channels=8, n_bottlenecks=-1),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            BlockConfig(**kwargs)


class TestConvBNSiLU:
    def test_zeros_stay_zero(self):
        block = ConvBNSiLU(8, 8, kernel=3)
        x = torch.zeros(1, 8, 16, 16)
        for mode in (block.train(), block.eval()):
            assert torch.equal(mode(x), torch.zeros(1, 8, 16, 16))

    def test_stride_shape(self):
        block = ConvBNSiLU(16, 24, kernel=3, stride=2).eval()
        assert block(torch.randn(1, 16, 32, 32)).shape == (1, 24, 16, 16)
        assert block(torch.randn(1, 16, 33, 33)).shape == (1, 24, 17, 17)

    def test_identity_conv_equals_scalar_silu(self):
        block = ConvBNSiLU(4, 4, kernel=1).double().eval()
        with torch.no_grad():
            block.conv.weight.copy_(torch.eye(4, dtype=torch.float64).reshape(4, 4, 1, 1))
        block.bn.eps = 0.0  # running stats are identity; eps would perturb the pass-through
        x = torch.randn(1, 4, 8, 8, dtype=torch.float64)
        out = block(x)
        expected = torch.tensor(
            [[scalar_silu(float(v)) for v in row] for row in x.reshape(4, -1)],
            dtype=torch.float64,
        ).reshape(1, 4, 8, 8)
        assert torch.allclose(out, expected, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigurationError):
            ConvBNSiLU(8, 8)(torch.zeros(1, 4, 8, 8))

    def test_non_finite_input(self):
        x = torch.zeros(1, 4, 4, 4)
        x[0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericError):
            ConvBNSiLU(4, 4)(x)


class TestBottleneck:
    def test_zero_params_is_identity(self):
        block = Bottleneck(8).eval()
        zero_params(block)
        x = torch.randn(2, 8, 6, 6)
        assert torch.equal(block(x), x)

    def test_zero_input_zero_bias_gives_zeros(self):
        block = Bottleneck(8).eval()
        with torch.no_grad():
            block.cv2.bias.zero_()
        x = torch.zeros(1, 8, 6, 6)
        assert torch.equal(block(x), x)

    def test_matches_naive_oracle(self):
        torch.manual_seed(3)
        block = Bottleneck(8).double().eval()
        randomize_batchnorm(block, seed=3)
        x = torch.randn(1, 8, 6, 6, dtype=torch.float64)
        got = block(x).detach().numpy()
        expected = oracle_bottleneck(block, x.numpy())
        assert np.abs(got - expected).max() < 1e-10

    def test_channel_mismatch_is_config_error(self):
        with pytest.raises(ConfigurationError):
            Bottleneck(8)(torch.zeros(1, 4, 6, 6))


class TestC2f:
    def test_zeroed_projections_identity(self):
        block = C2f(16, 16, n=0).eval()
        zero_params(block)
        x = torch.randn(1, 16, 8, 8)
        assert torch.equal(block(x), x)

    @pytest.mark.parametrize("n", [0, 1, 2])
    def test_shape_preservation(self, n):
        block = C2f(32, 32, n=n).eval()
        assert block(torch.randn(1, 32, 20, 20)).shape == (1, 32, 20, 20)

    def test_matches_composition_oracle(self):
        torch.manual_seed(5)
        block = C2f(16, 16, n=1).double().eval()
        randomize_batchnorm(block, seed=5)
        x = torch.randn(1, 16, 8, 8, dtype=torch.float64)
        got = block(x).detach().numpy()
        expected = oracle_c2f(block, x.numpy())
        assert np.abs(got - expected).max() < 1e-10

    def test_odd_internal_width_rejected(self):
        with pytest.raises(ConfigurationError):
            C2f(16, 15)

    def test_width_change_drops_residual(self):
        block = C2f(16, 32, n=1)
        assert not block.residual
        assert block(torch.randn(1, 16, 8, 8)).shape == (1, 32, 8, 8)


class TestChannelSoftAttention:
    def test_equal_branches_give_quarter_weights(self):
        branches = [torch.full((2, 4, 5, 5), 3.0) for _ in range(4)]
        stats = channel_soft_attention(branches)
        assert torch.allclose(stats.s, torch.full((2, 4, 4), 3.0))
        assert torch.allclose(stats.beta, torch.full((2, 4, 4), 0.25))

    def test_single_hot_branch(self):
        branches = [torch.full((1, 1, 3, 3), 1.0)] + [torch.zeros(1, 1, 3, 3)] * 3
        beta = channel_soft_attention(branches).beta.reshape(4)
        hot = math.e / (math.e + 3.0)
        cold = 1.0 / (math.e + 3.0)
        assert abs(float(beta[0]) - hot) < 1e-6
        for v in beta[1:]:
            assert abs(float(v) - cold) < 1e-6

    def test_normalization_over_random_trials(self):
        gen = torch.Generator().manual_seed(7)
        for _ in range(1000):
            branches = [torch.randn(1, 3, 4, 4, generator=gen) * 3 for _ in range(4)]
            beta = channel_soft_attention(branches).beta
            assert torch.all((beta.sum(dim=1) - 1.0).abs() < 1e-6)

    def test_shape_mismatch(self):
        branches = [torch.zeros(1, 2, 4, 4)] * 3 + [torch.zeros(1, 2, 4, 5)]
        with pytest.raises(ConfigurationError):
            channel_soft_attention(branches)

    def test_wrong_branch_count(self):
        with pytest.raises(ConfigurationError):
            channel_soft_attention([torch.zeros(1, 2, 4, 4)] * 3)


class TestMSDDSPBottleneck:
    def test_zero_input_gives_uniform_attention_and_zero_output(self):
        block = MSDDSPBottleneck(8).eval()
        with torch.no_grad():
            for name, p in block.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
        x = torch.zeros(1, 8, 16, 16)
        y, stats = block.forward_with_stats(x)
        assert torch.equal(stats.s, torch.zeros(1, 4, 2))
        assert torch.allclose(stats.beta, torch.full((1, 4, 2), 0.25))
        assert torch.equal(y, torch.zeros(1, 8, 16, 16))

    def test_shape_preservation(self):
        block = MSDDSPBottleneck(16).eval()
        assert block(torch.randn(1, 16, 32, 32)).shape == (1, 16, 32, 32)

    def test_matches_equation_oracle(self):
        torch.manual_seed(11)
        block = MSDDSPBottleneck(8).double().eval()
        randomize_batchnorm(block, seed=11)
        x = torch.randn(1, 8, 12, 12, dtype=torch.float64)
        got = block(x).detach().numpy()
        expected = oracle_msddsp(block, x.numpy())
        assert np.abs(got - expected).max() < 1e-9

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ConfigurationError):
            MSDDSPBottleneck(6)

    def test_small_spatial_warns(self):
        block = MSDDSPBottleneck(8).eval()
        with pytest.warns(SmallSpatialWarning):
            block(torch.randn(1, 8, 6, 6))


class TestMSC2f:
    def test_shape_preservation(self):
        block = MSC2f(64, 64, n=1).eval()
        assert block(torch.randn(1, 64, 10, 10)).shape == (1, 64, 10, 10)

    def test_zero_projections_identity(self):
        block = MSC2f(16, 16, n=1).eval()
        with torch.no_grad():
            block.cv1.weight.zero_()
            block.cv1.bias.zero_()
            block.cv2.weight.zero_()
            block.cv2.bias.zero_()
        x = torch.randn(1, 16, 12, 12)
        assert torch.equal(block(x), x)

    def test_matches_composition_oracle(self):
        torch.manual_seed(13)
        block = MSC2f(16, 16, n=1).double().eval()
        randomize_batchnorm(block, seed=13)
        x = torch.randn(1, 16, 12, 12, dtype=torch.float64)
        got = block(x).detach().numpy()
        expected = oracle_c2f(block, x.numpy())
        assert np.abs(got - expected).max() < 1e-9

    def test_internal_width_divisibility(self):
        with pytest.raises(ConfigurationError):
            MSC2f(4, 4, n=1)  # split half = 2, not divisible by 4


class TestDeterminism:
    def test_fixed_params_fixed_input_bitwise_identical(self):
        torch.manual_seed(21)
        block = MSC2f(16, 16, n=1).eval()
        x = torch.randn(1, 16, 12, 12)
        with torch.no_grad():
            assert torch.equal(block(x), block(x))
