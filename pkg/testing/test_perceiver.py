# Run tests:
# python -m pytest -rP testing/test_perceiver.py

import math

import numpy as np
import pytest

import gradcheck
from config import PerceiverConfig
from perceiver import (PerceiverLayerWeights, PerceiverState, add_time_encodings, flatten_frames, perceiver_layer,
                       unflatten_frames, video_perceiver_forward)
from tensor import ShapeException, Tensor

PERMUTATION_CONFIG = PerceiverConfig(T=4, n=3, d=6, m=3, p=1, H=2, d_h=3)


def t(data):
    return Tensor(np.array(data, dtype=np.float64))


def relative_change(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(a))


def scalar_gelu(x: float) -> float:
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


class TestPerceiver:

    def test_add_time_encodings(self):
        features = t([[[1], [2]], [[3], [4]]])
        out = add_time_encodings(features, t([[[10]], [[20]]]))
        assert out.data.tolist() == [[[11], [12]], [[23], [24]]]

        assert np.array_equal(add_time_encodings(features, Tensor(np.zeros((2, 1, 1)))).data, features.data)

        zeros = Tensor(np.zeros((2, 3, 2)))
        enc = t([[[1, 2]], [[3, 4]]])
        out = add_time_encodings(zeros, enc).data
        for i in range(3):
            assert np.array_equal(out[:, i, :], enc.data[:, 0, :])

    def test_add_time_encodings_shape(self):
        with pytest.raises(ShapeException):
            add_time_encodings(Tensor(np.zeros((2, 3, 2))), Tensor(np.zeros((3, 1, 2))))

    def test_flatten_frames(self):
        single = np.arange(6.0).reshape(1, 3, 2)
        assert np.array_equal(flatten_frames(Tensor(single)).data, single[0])

        stacked = flatten_frames(t([[[1, 2]], [[3, 4]]]))
        assert stacked.data.tolist() == [[1, 2], [3, 4]]

        features = np.random.default_rng(0).normal(size=(3, 4, 5))
        flat = flatten_frames(Tensor(features))
        assert np.array_equal(flat.data[1 * 4 + 2], features[1, 2])
        assert np.array_equal(unflatten_frames(flat, 3, 4).data, features)

    def test_layer_scalar_oracle(self):
        w_q, w_k, w_v, w_o = 0.7, -1.3, 0.4, 1.9
        beta, w1, b1, w2, b2 = 0.3, [0.5, -0.2, 1.1, 0.8], [0.1, 0.0, -0.4, 0.2], [0.6, -0.9, 0.3, 1.2], -0.05
        z, f = 0.8, -1.5
        weights = PerceiverLayerWeights(
            w_q=[t([[w_q]])], w_k=[t([[w_k]])], w_v=[t([[w_v]])], w_o=t([[w_o]]),
            ffn_gamma=t([1.0]), ffn_beta=t([beta]),
            ffn_w1=t([w1]), ffn_b1=t(b1), ffn_w2=t([[w] for w in w2]), ffn_b2=t([b2]),
        )
        out = perceiver_layer(t([[z]]), t([[f]]), weights)

        # Keys and values come from [feature, latent]
        q = z * w_q
        logits = [q * f * w_k, q * z * w_k]
        top = max(logits)
        e = [math.exp(x - top) for x in logits]
        attn = (e[0] * f * w_v + e[1] * z * w_v) / (e[0] + e[1])
        x = z + attn * w_o
        # A single-column layer norm outputs beta
        ffn = sum(scalar_gelu(beta * w1[j] + b1[j]) * w2[j] for j in range(4)) + b2
        assert out.data[0, 0] == pytest.approx(x + ffn, abs=1e-12)

    def test_layer_shape(self):
        state = PerceiverState(PERMUTATION_CONFIG, 0)
        feats = Tensor(np.random.default_rng(0).normal(size=(12, 6)))
        assert perceiver_layer(state.params['latents'], feats, state.layer(0)).shape == (3, 6)

    def test_forward_shape(self):
        config = PerceiverConfig(T=2, n=3, d=4, m=2, p=1, H=1, d_h=2)
        state = PerceiverState(config, 0)
        features = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)))
        assert video_perceiver_forward(features, state).shape == (2, 4)

    def test_forward_shape_independent_of_T_and_n(self):
        for T, n in [(1, 1), (3, 7), (5, 2)]:
            state = PerceiverState(PerceiverConfig(T=T, n=n, d=4, m=3, p=2, H=2, d_h=2), 0)
            features = Tensor(np.random.default_rng(T).normal(size=(T, n, 4)))
            assert video_perceiver_forward(features, state).shape == (3, 4)

    def test_forward_short_video(self):
        state = PerceiverState(PERMUTATION_CONFIG, 0)
        features = Tensor(np.random.default_rng(2).normal(size=(2, 3, 6)))
        assert video_perceiver_forward(features, state).shape == (3, 6)

    def test_forward_shape_errors(self):
        state = PerceiverState(PERMUTATION_CONFIG, 0)
        with pytest.raises(ShapeException):
            video_perceiver_forward(Tensor(np.zeros((4, 3, 5))), state)
        with pytest.raises(ShapeException):
            video_perceiver_forward(Tensor(np.zeros((5, 3, 6))), state)

    def test_layers_have_independent_weights(self):
        state = PerceiverState(PERMUTATION_CONFIG._replace(p=2), 0)
        assert not np.array_equal(state.params['layers.0.w_o'].data, state.params['layers.1.w_o'].data)

    def test_feature_row_permutation(self):
        rng = np.random.default_rng(3)
        state = PerceiverState(PERMUTATION_CONFIG, 3, init_std=0.5)
        feats = rng.normal(size=(12, 6))
        out = perceiver_layer(state.params['latents'], Tensor(feats), state.layer(0)).data
        shuffled = perceiver_layer(state.params['latents'], Tensor(feats[rng.permutation(12)]), state.layer(0)).data
        assert relative_change(out, shuffled) < 1e-9

    def test_frame_permutation_properties(self):
        changed = 0
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            state = PerceiverState(PERMUTATION_CONFIG, seed, init_std=0.5)
            features = rng.normal(size=(4, 3, 6))
            perm = np.roll(np.arange(4), 1)
            out = video_perceiver_forward(Tensor(features), state).data

            # Frames and their encodings permuted together
            joint = PerceiverState(PERMUTATION_CONFIG, seed, init_std=0.5)
            joint.params['time_enc'] = Tensor(state.params['time_enc'].data[perm])
            moved = video_perceiver_forward(Tensor(features[perm]), joint).data
            assert relative_change(out, moved) < 1e-9

            # Frames only
            moved = video_perceiver_forward(Tensor(features[perm]), state).data
            if relative_change(out, moved) > 1e-6:
                changed += 1

            # No encodings at all
            state.params['time_enc'] = Tensor.zeros((4, 1, 6))
            plain = video_perceiver_forward(Tensor(features), state).data
            moved = video_perceiver_forward(Tensor(features[perm]), state).data
            assert relative_change(plain, moved) < 1e-9

        assert changed >= 18

    def test_state_is_seeded(self):
        a = PerceiverState(PERMUTATION_CONFIG, 5)
        b = PerceiverState(PERMUTATION_CONFIG, 5)
        c = PerceiverState(PERMUTATION_CONFIG, 6)
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
        assert not np.array_equal(a.params['latents'].data, c.params['latents'].data)

    @pytest.mark.parametrize('layers', [1, 2])
    def test_gradients(self, layers):
        for seed in range(20):
            check = gradcheck.perceiver_check(seed, layers)
            errors = gradcheck.check_gradients(check.loss_fn, check.params, 1e-5)
            assert max(errors.values()) < 1e-5, errors
