#!/usr/bin/env python3
"""
Pytest tests for the hierarchical model
Quantizer behaviour, level wiring and shapes for one, two and three levels
"""

import pytest
import numpy as np
import sys
import os

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.config import ModelConfig
from src.exceptions import ConfigError
from src.network import (HierarchicalModel, dequantize, quantization_grid, quantize, quantize_hard,
                         quantize_soft, residual_input)
from src.preproc import RgbImage, preprocess
from src.tensor import Tensor, backward, grad_check, no_grad, precision


def tiny_config(levels=3, **overrides):
    return ModelConfig(**{**dict(N=8, K=2, C_f=4, C_d=2, levels=levels, mixtures=2, res_blocks=1), **overrides})


@pytest.fixture
def rng():
    return np.random.default_rng(5)


@pytest.fixture
def stack(rng):
    img = RgbImage(rng.integers(0, 256, size=(11, 14, 3), dtype=np.uint8))
    return preprocess(img, 8)


class TestQuantizer:
    """25-level grid on [-1, 1]"""

    def test_grid(self):
        grid = quantization_grid(25)
        assert len(grid) == 25
        assert grid[0] == -1.0 and grid[-1] == 1.0
        assert grid[12] == pytest.approx(0.0)

    def test_examples(self):
        np.testing.assert_array_equal(quantize_hard(np.array([0.0, 1.7, -1.0])), [12, 24, 0])

    def test_midpoint_goes_to_lower_index(self):
        np.testing.assert_array_equal(quantize_hard(np.array([-0.5, 0.5]), levels=3), [0, 1])

    def test_nan_maps_to_zero(self):
        assert quantize_hard(np.array([np.nan]))[0] == 12

    def test_dequantize_inverts_on_grid(self):
        symbols = np.arange(25)
        np.testing.assert_array_equal(quantize_hard(dequantize(symbols)), symbols)

    def test_soft_quantizer_is_odd_and_monotone(self):
        with precision(np.float64):
            x = np.linspace(-1, 1, 41)
            out = quantize_soft(Tensor(x)).data
        np.testing.assert_allclose(out, -out[::-1], atol=1e-12)
        assert np.all(np.diff(out) > 0)
        assert np.all(np.abs(out) <= 1)

    @pytest.mark.parametrize("dtype,eps,tolerance", [(np.float32, 5e-3, 1e-2), (np.float64, 1e-5, 1e-6)])
    def test_soft_quantizer_gradient(self, dtype, eps, tolerance):
        points = np.random.default_rng(6).uniform(-0.9, 0.9, size=10)
        with precision(dtype):
            for x in points:
                assert grad_check(lambda t: quantize_soft(t).sum(), [np.array([x])], eps=eps) < tolerance, x

    def test_straight_through_forward_is_hard(self, rng):
        x = Tensor(rng.uniform(-1, 1, size=(2, 3)), requires_grad=True)
        values, symbols = quantize(x)
        np.testing.assert_array_equal(values.data, dequantize(symbols))
        grads = backward(values.sum(), {"x": x})
        assert np.all(grads["x"] > 0)

    def test_no_grad_input_gives_plain_tensor(self):
        values, _ = quantize(Tensor([0.3]))
        assert values.creator is None

    def test_residual_input_range(self):
        x = residual_input(np.array([0, 255])).data
        np.testing.assert_allclose(x, [-1.0, 1.0])


class TestShapes:
    """Latent sizes through every level"""

    def test_three_level_encode(self, stack):
        model = HierarchicalModel(tiny_config(3))
        encoded = model.encode(stack)
        assert sorted(encoded.latents) == [1, 2]
        assert encoded.latents[1].shape == (stack.P, 2, 4, 4)
        assert encoded.latents[2].shape == (stack.P, 2, 2, 2)
        assert (encoded.labels.P, encoded.labels.K) == (stack.P, 2)
        assert encoded.shared.shape == (2, model.config.shared_length)
        assert encoded.latents[1].max() < 25

    def test_two_level_encode(self, stack):
        encoded = HierarchicalModel(tiny_config(2)).encode(stack)
        assert sorted(encoded.latents) == [1]
        assert encoded.shared.shape == (2, 2 * 2 * 2)

    def test_one_level_has_no_clustering(self, stack):
        model = HierarchicalModel(tiny_config(1))
        encoded = model.encode(stack)
        assert model.cluster_head is None
        assert encoded.labels is None and encoded.shared is None
        assert encoded.latents[1].shape == (stack.P, 2, 4, 4)

    def test_decoder_params(self, stack):
        model = HierarchicalModel(tiny_config(3))
        encoded = model.encode(stack)
        top = model.top_input(encoded.labels, encoded.shared)
        assert top.shape == (stack.P, 2, 1, 1)
        features, params = model.decoder_level(3, top)
        assert features.shape == (stack.P, 4, 2, 2)
        assert params.means.shape == (stack.P, 2, 2, 2, 2)
        assert not params.conditional
        features, params = model.decoder_level(2, model.latent_input(encoded.latents[2]), features)
        features, params = model.decoder_level(1, model.latent_input(encoded.latents[1]), features)
        assert params.means.shape == (stack.P, 3, 2, 8, 8)
        assert params.conditional

    @pytest.mark.parametrize("N,flatten", [(16, 5), (32, 20), (64, 80), (128, 320)])
    def test_sides_halve_per_level(self, rng, N, flatten):
        """Level n works at N / 2^n through the encoders, the cluster head and the decoders"""
        config = tiny_config(3, N=N, C_d=5)
        assert config.head_flatten_length == flatten
        model = HierarchicalModel(config)
        stack = preprocess(RgbImage(rng.integers(0, 256, size=(N + 5, N - 3, 3), dtype=np.uint8)), N)
        encoded = model.encode(stack)
        P = stack.P
        assert P == 2
        assert encoded.latents[1].shape == (P, 5, N // 2, N // 2)
        assert encoded.latents[2].shape == (P, 5, N // 4, N // 4)
        assert encoded.shared.shape == (2, 5 * (N // 8) ** 2) == (2, config.shared_length)

        features, params = model.decoder_level(3, model.top_input(encoded.labels, encoded.shared))
        assert model.top_input(encoded.labels, encoded.shared).shape == (P, 5, N // 8, N // 8)
        assert params.means.shape == (P, 5, 2, N // 4, N // 4)
        features, params = model.decoder_level(2, model.latent_input(encoded.latents[2]), features)
        assert params.means.shape == (P, 5, 2, N // 2, N // 2)
        features, params = model.decoder_level(1, model.latent_input(encoded.latents[1]), features)
        assert features.shape == (P, 4, N, N)
        assert params.means.shape == (P, 3, 2, N, N)

    def test_target_names(self):
        assert [HierarchicalModel(tiny_config(3)).target_name(n) for n in (1, 2, 3)] == ["L_r", "L_zQ1", "L_cluster"]
        assert HierarchicalModel(tiny_config(1)).target_name(1) == "L_r"

    def test_invalid_levels(self):
        with pytest.raises(ConfigError):
            HierarchicalModel(tiny_config(4))


class TestForward:
    """Training pass"""

    @pytest.mark.parametrize("levels,names", [
        (3, {"L_r", "L_zQ1", "L_cluster"}),
        (2, {"L_r", "L_cluster"}),
        (1, {"L_r"}),
    ])
    def test_terms(self, stack, levels, names):
        result = HierarchicalModel(tiny_config(levels)).forward_full(stack.symbols)
        assert set(result.terms) == names
        assert all(np.isfinite(t.item()) and t.item() > 0 for t in result.terms.values())
        assert result.raw_bits > 0

    def test_raw_bits_without_clustering(self, stack):
        result = HierarchicalModel(tiny_config(1)).forward_full(stack.symbols)
        assert result.raw_bits == pytest.approx(stack.P * 2 * 4 * 4 * np.log2(25))

    def test_mask_lowers_residual_cost(self, stack):
        model = HierarchicalModel(tiny_config(3))
        full = model.forward_full(stack.symbols).terms["L_r"].item()
        masked = model.forward_full(stack.symbols, stack.valid_mask()).terms["L_r"].item()
        assert masked < full

    def test_gradients_reach_every_level(self, stack):
        model = HierarchicalModel(tiny_config(3))
        params = model.parameters()
        grads = backward(model.forward_full(stack.symbols).total, params)
        assert all(np.all(np.isfinite(g)) for g in grads.values())
        for prefix in ("encoders.0.", "decoders.0.", "decoders.2.", "cluster_head.classifier."):
            assert any(np.any(grads[name] != 0) for name in params if name.startswith(prefix)), prefix

    def test_same_seed_same_model(self, stack):
        first = HierarchicalModel(tiny_config(3)).forward_full(stack.symbols).total.item()
        second = HierarchicalModel(tiny_config(3)).forward_full(stack.symbols).total.item()
        assert first == second

    def test_cluster_loss_matches_forward(self, stack):
        model = HierarchicalModel(tiny_config(3))
        encoded = model.encode(stack)
        with no_grad():
            bits, features = model.cluster_loss(model.top_input(encoded.labels, encoded.shared), encoded.latents[2])
        assert features.shape == (stack.P, 4, 2, 2)
        assert bits.item() == pytest.approx(model.forward_full(stack.symbols).terms["L_cluster"].item(), rel=1e-5)

    def test_decoders_see_only_quantized_latents(self, stack):
        """Moving continuous latents inside their quantizer bins changes no decoder output"""
        model = HierarchicalModel(tiny_config(3))
        with no_grad():
            _, latent = model.encoders[0](residual_input(stack.symbols))
        position = (np.clip(latent.data.astype(np.float64), -1.0, 1.0) + 1.0) * 12
        margin = np.abs(position - np.floor(position) - 0.5).min() / 12
        before = model.forward_full(stack.symbols)

        bias = model.encoders[0].to_latent.bias
        bias.data = bias.data + np.float32(0.25 * margin)
        with no_grad():
            _, moved = model.encoders[0](residual_input(stack.symbols))
        assert not np.array_equal(moved.data, latent.data)
        after = model.forward_full(stack.symbols)

        np.testing.assert_array_equal(after.latents[1], before.latents[1])
        for name, bits in before.terms.items():
            assert after.terms[name].item() == bits.item(), name

    def test_seed_changes_weights(self):
        a = HierarchicalModel(tiny_config(3, seed=0)).state_dict()
        b = HierarchicalModel(tiny_config(3, seed=1)).state_dict()
        assert any(not np.array_equal(a[name], b[name]) for name in a)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
