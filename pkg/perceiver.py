"""
Video Perceiver: compress T x n x d spatio-temporal features into m learned tokens.

Time encodings (T x 1 x d) are added to the features, the result is flattened to Tn x d, and p cross-attention
layers let the m learned latents query the flattened features concatenated with the latents themselves.
"""

import math
from typing import NamedTuple

import numpy as np

from config import PerceiverConfig
from tensor import (ShapeException, Tensor, add, concat_cols, concat_rows, gelu, layer_norm, linear, matmul, reshape,
                    scale, softmax_rows, take_rows, transpose)
from util import seeded_rng


class PerceiverLayerWeights(NamedTuple):
    w_q: list[Tensor]   # per head, d x d_h
    w_k: list[Tensor]   # per head, d x d_h
    w_v: list[Tensor]   # per head, d x d_h
    w_o: Tensor         # H*d_h x d, applied to the concatenated heads
    ffn_gamma: Tensor
    ffn_beta: Tensor
    ffn_w1: Tensor      # d x 4d
    ffn_b1: Tensor
    ffn_w2: Tensor      # 4d x d
    ffn_b2: Tensor


class PerceiverState:
    """
    Learnable latents, time encodings and independent weights for each of the p layers. Parameters live in one flat
    name -> Tensor dict so training and checkpoints can treat every component the same way.
    """

    def __init__(self, config: PerceiverConfig, seed: int, init_std: float = 0.02, trainable: bool = True,
                 ln_eps: float = 1e-5):
        self.config = config
        self.ln_eps = ln_eps
        self.params: dict[str, Tensor] = {}

        rng = seeded_rng(seed, 'perceiver')
        c = config

        def normal(shape):
            return Tensor.randn(rng, shape, init_std, trainable)

        self.params['latents'] = normal((c.m, c.d))
        self.params['time_enc'] = normal((c.T, 1, c.d))
        for i in range(c.p):
            prefix = f'layers.{i}'
            for h in range(c.H):
                self.params[f'{prefix}.w_q.{h}'] = normal((c.d, c.d_h))
                self.params[f'{prefix}.w_k.{h}'] = normal((c.d, c.d_h))
                self.params[f'{prefix}.w_v.{h}'] = normal((c.d, c.d_h))
            self.params[f'{prefix}.w_o'] = normal((c.H * c.d_h, c.d))
            self.params[f'{prefix}.ffn.gamma'] = Tensor(np.ones(c.d), trainable)
            self.params[f'{prefix}.ffn.beta'] = Tensor.zeros((c.d,), trainable)
            self.params[f'{prefix}.ffn.w1'] = normal((c.d, 4 * c.d))
            self.params[f'{prefix}.ffn.b1'] = Tensor.zeros((4 * c.d,), trainable)
            self.params[f'{prefix}.ffn.w2'] = normal((4 * c.d, c.d))
            self.params[f'{prefix}.ffn.b2'] = Tensor.zeros((c.d,), trainable)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def layer(self, i: int) -> PerceiverLayerWeights:
        prefix = f'layers.{i}'
        p = self.params
        heads = range(self.config.H)
        return PerceiverLayerWeights(
            w_q=[p[f'{prefix}.w_q.{h}'] for h in heads],
            w_k=[p[f'{prefix}.w_k.{h}'] for h in heads],
            w_v=[p[f'{prefix}.w_v.{h}'] for h in heads],
            w_o=p[f'{prefix}.w_o'],
            ffn_gamma=p[f'{prefix}.ffn.gamma'],
            ffn_beta=p[f'{prefix}.ffn.beta'],
            ffn_w1=p[f'{prefix}.ffn.w1'],
            ffn_b1=p[f'{prefix}.ffn.b1'],
            ffn_w2=p[f'{prefix}.ffn.w2'],
            ffn_b2=p[f'{prefix}.ffn.b2'],
        )


def add_time_encodings(features: Tensor, time_enc: Tensor) -> Tensor:
    """out[t, i, :] = F[t, i, :] + E[t, 0, :]"""
    if len(features.shape) != 3 or time_enc.shape != (features.shape[0], 1, features.shape[2]):
        raise ShapeException(f'time encodings {time_enc.shape} do not fit features {features.shape}')
    return add(features, time_enc)


def flatten_frames(features: Tensor) -> Tensor:
    """Row t * n + i of the result is F[t, i, :]"""
    if len(features.shape) != 3:
        raise ShapeException(f'expected T x n x d features, got {features.shape}')
    T, n, d = features.shape
    return reshape(features, (T * n, d))


def unflatten_frames(rows: Tensor, T: int, n: int) -> Tensor:
    if len(rows.shape) != 2 or rows.shape[0] != T * n:
        raise ShapeException(f'cannot unflatten {rows.shape} into {T} x {n} frames')
    return reshape(rows, (T, n, rows.shape[1]))


def attention_head(queries: Tensor, keys_values: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor,
                   q_scale: float) -> Tensor:
    """softmax((queries W_q) (kv W_k)^T * q_scale) (kv W_v)"""
    q = matmul(queries, w_q)
    k = matmul(keys_values, w_k)
    v = matmul(keys_values, w_v)
    weights = softmax_rows(scale(matmul(q, transpose(k)), q_scale))
    return matmul(weights, v)


def multi_head_attention(queries: Tensor, keys_values: Tensor, weights: PerceiverLayerWeights) -> Tensor:
    d_h = weights.w_q[0].shape[1]
    heads = [attention_head(queries, keys_values, w_q, w_k, w_v, 1.0 / math.sqrt(d_h))
             for w_q, w_k, w_v in zip(weights.w_q, weights.w_k, weights.w_v)]
    return matmul(concat_cols(heads), weights.w_o)


def feed_forward(x: Tensor, gamma: Tensor, beta: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
                 ln_eps: float) -> Tensor:
    """LN -> Linear(c -> 4c) -> GELU -> Linear(4c -> c)"""
    return linear(gelu(linear(layer_norm(x, gamma, beta, ln_eps), w1, b1)), w2, b2)


def perceiver_layer(latents: Tensor, feats: Tensor, weights: PerceiverLayerWeights, ln_eps: float = 1e-5) -> Tensor:
    if len(latents.shape) != 2 or len(feats.shape) != 2 or latents.shape[1] != feats.shape[1]:
        raise ShapeException(f'latents {latents.shape} and features {feats.shape} must share d')

    keys_values = concat_rows([feats, latents])
    x = add(latents, multi_head_attention(latents, keys_values, weights))
    return add(x, feed_forward(x, weights.ffn_gamma, weights.ffn_beta, weights.ffn_w1, weights.ffn_b1,
                               weights.ffn_w2, weights.ffn_b2, ln_eps))


def video_perceiver_forward(features: Tensor, state: PerceiverState) -> Tensor:
    """
    Resample T' x n x d features (T' <= T; frame t uses time encoding t) into m x d tokens. Videos shorter than the
    configured T use the first T' encodings.
    """
    c = state.config
    if len(features.shape) != 3 or features.shape[2] != c.d or not 1 <= features.shape[0] <= c.T:
        raise ShapeException(f'features {features.shape} do not fit T <= {c.T}, d = {c.d}')

    time_enc = state.params['time_enc']
    if features.shape[0] < c.T:
        time_enc = take_rows(time_enc, range(features.shape[0]))

    feats = flatten_frames(add_time_encodings(features, time_enc))
    latents = state.params['latents']
    for i in range(c.p):
        latents = perceiver_layer(latents, feats, state.layer(i), state.ln_eps)
    return latents
