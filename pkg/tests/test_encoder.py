import numpy as np
import pytest

from supctc.encoder import (
    EncoderParams,
    ShapeMismatch,
    TooShort,
    encode_batch,
    encode_with_cache,
    encoder_backward,
    init_encoder,
    output_length,
)


def tiny_encoder(seed=0, feature_dim=3, hidden_dim=4, conv_width=2, conv_stride=2, num_layers=2):
    return init_encoder(
        feature_dim=feature_dim,
        hidden_dim=hidden_dim,
        conv_width=conv_width,
        conv_stride=conv_stride,
        num_layers=num_layers,
        seed=seed,
    )


def scalar_loss(params: EncoderParams, features_list, probe):
    """Deterministic scalar functional of the encoder outputs."""
    reps = encode_batch(params, features_list)
    total = 0.0
    for rep in reps:
        h = rep.valid
        total += float((h * probe[: h.shape[0]]).sum() + np.sin(h).sum())
    return total


class TestShapes:
    def test_output_length_matches_strided_window_count(self):
        assert output_length(10, 3, 2) == 4
        assert output_length(3, 3, 2) == 1
        assert output_length(4, 3, 1) == 2

    def test_too_few_frames_raises(self):
        with pytest.raises(TooShort):
            output_length(2, 3, 1)
        params = tiny_encoder(conv_width=4)
        with pytest.raises(TooShort):
            encode_batch(params, [np.zeros((3, 3))])

    def test_wrong_feature_dim_raises(self):
        params = tiny_encoder(feature_dim=3)
        with pytest.raises(ShapeMismatch):
            encode_batch(params, [np.zeros((6, 5))])

    def test_valid_lengths_and_padding(self):
        params = tiny_encoder()
        reps = encode_batch(params, [np.ones((6, 3)), np.ones((10, 3))])
        assert reps[0].valid_len == output_length(6, 2, 2)
        assert reps[1].valid_len == output_length(10, 2, 2)
        t_max = max(r.valid_len for r in reps)
        for rep in reps:
            assert rep.values.shape[0] == t_max
            np.testing.assert_array_equal(rep.values[rep.valid_len:], 0.0)

    def test_batched_and_single_encoding_agree_bitwise(self):
        rng = np.random.default_rng(3)
        params = tiny_encoder()
        feats = [rng.standard_normal((n, 3)) for n in (5, 9, 12)]
        batched = encode_batch(params, feats)
        for f, rep in zip(feats, batched):
            alone = encode_batch(params, [f])[0]
            np.testing.assert_array_equal(alone.valid, rep.valid)


class TestInit:
    def test_deterministic(self):
        a = tiny_encoder(seed=5)
        b = tiny_encoder(seed=5)
        np.testing.assert_array_equal(a.conv_kernel, b.conv_kernel)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weight, lb.weight)
            np.testing.assert_array_equal(la.bias, lb.bias)

    def test_scales_bounded_by_fan_in(self):
        params = tiny_encoder(feature_dim=4, hidden_dim=6, conv_width=3)
        assert np.abs(params.conv_kernel).max() <= 1 / np.sqrt(3 * 4)
        for layer in params.layers:
            assert np.abs(layer.weight).max() <= 1 / np.sqrt(6)

    def test_layer_count_and_shapes(self):
        params = tiny_encoder(num_layers=3, hidden_dim=5, feature_dim=2, conv_width=2)
        assert len(params.layers) == 3
        assert params.conv_kernel.shape == (5, 2, 2)
        for layer in params.layers:
            assert layer.weight.shape == (5, 5)
            assert layer.bias.shape == (5,)


class TestBackward:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        params = tiny_encoder(seed=1)
        feats = [rng.standard_normal((n, 3)) for n in (6, 9)]
        probe = rng.standard_normal((8, 4))

        reps, cache = encode_with_cache(params, feats)
        grad_h = []
        for rep in reps:
            g = np.zeros_like(rep.values)
            h = rep.valid
            g[: rep.valid_len] = probe[: h.shape[0]] + np.cos(h)
            grad_h.append(g)
        grads = encoder_backward(params, cache, grad_h)

        eps = 1e-6

        def fd(read, write):
            base = read()
            out = np.zeros_like(base)
            flat = base.ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                write(base)
                up = scalar_loss(params, feats, probe)
                flat[idx] = orig - eps
                write(base)
                down = scalar_loss(params, feats, probe)
                flat[idx] = orig
                write(base)
                out.ravel()[idx] = (up - down) / (2 * eps)
            return out

        num_kernel = fd(lambda: params.conv_kernel, lambda v: None)
        np.testing.assert_allclose(grads.conv_kernel, num_kernel, rtol=1e-6, atol=1e-8)
        for li, layer in enumerate(params.layers):
            num_w = fd(lambda: layer.weight, lambda v: None)
            np.testing.assert_allclose(grads.layers[li].weight, num_w, rtol=1e-6, atol=1e-8)
            num_b = fd(lambda: layer.bias, lambda v: None)
            np.testing.assert_allclose(grads.layers[li].bias, num_b, rtol=1e-6, atol=1e-8)

    def test_padded_gradient_rows_are_ignored(self):
        rng = np.random.default_rng(11)
        params = tiny_encoder(seed=2)
        feats = [rng.standard_normal((5, 3)), rng.standard_normal((11, 3))]
        reps, cache = encode_with_cache(params, feats)
        grad_clean = [np.zeros_like(r.values) for r in reps]
        for g, r in zip(grad_clean, reps):
            g[: r.valid_len] = 1.0
        grads_a = encoder_backward(params, cache, grad_clean)
        grad_dirty = [g.copy() for g in grad_clean]
        grad_dirty[0][reps[0].valid_len:] = 99.0  # junk beyond the valid region
        grads_b = encoder_backward(params, cache, grad_dirty)
        np.testing.assert_array_equal(grads_a.conv_kernel, grads_b.conv_kernel)

    def test_wrong_batch_size_raises(self):
        params = tiny_encoder()
        reps, cache = encode_with_cache(params, [np.ones((6, 3))])
        with pytest.raises(ShapeMismatch):
            encoder_backward(params, cache, [np.zeros_like(reps[0].values)] * 2)
