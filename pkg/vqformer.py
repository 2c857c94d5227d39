"""
Visual-Query Transformer: video tokens are the queries, question token embeddings are the keys and values.

    O_a = sum_h softmax((LN(M) W_Q^h / s_q) (X W_K^h)^T) (X W_V^h) W_O^h
    M'  = O_a tanh(g_attn) + M W_M
    M'' = FeedForward(M') tanh(g_ff) + M'

Both gates start at 0, so a fresh block maps M to M W_M exactly.
"""

import numpy as np

from config import VQFormerConfig
from perceiver import attention_head, feed_forward
from tensor import ShapeException, Tensor, add, layer_norm, matmul, scale_by, tanh_elem
from util import seeded_rng


class VQFormerState:
    def __init__(self, config: VQFormerConfig, seed: int, init_std: float = 0.02, trainable: bool = True,
                 ln_eps: float = 1e-5):
        self.config = config
        self.ln_eps = ln_eps
        self.params: dict[str, Tensor] = {}

        rng = seeded_rng(seed, 'vqformer')
        c = config

        def normal(shape):
            return Tensor.randn(rng, shape, init_std, trainable)

        self.params['norm.gamma'] = Tensor(np.ones(c.d), trainable)
        self.params['norm.beta'] = Tensor.zeros((c.d,), trainable)
        for h in range(c.H):
            self.params[f'w_q.{h}'] = normal((c.d, c.d_h))
            self.params[f'w_k.{h}'] = normal((c.d_text, c.d_h))
            self.params[f'w_v.{h}'] = normal((c.d_text, c.d_h))
            self.params[f'w_o.{h}'] = normal((c.d_h, c.d_text))
        self.params['w_m'] = normal((c.d, c.d_text))
        self.params['g_attn'] = Tensor.zeros((), trainable)
        self.params['g_ff'] = Tensor.zeros((), trainable)
        self.params['ffn.gamma'] = Tensor(np.ones(c.d_text), trainable)
        self.params['ffn.beta'] = Tensor.zeros((c.d_text,), trainable)
        self.params['ffn.w1'] = normal((c.d_text, 4 * c.d_text))
        self.params['ffn.b1'] = Tensor.zeros((4 * c.d_text,), trainable)
        self.params['ffn.w2'] = normal((4 * c.d_text, c.d_text))
        self.params['ffn.b2'] = Tensor.zeros((c.d_text,), trainable)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def head(self, h: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        p = self.params
        return p[f'w_q.{h}'], p[f'w_k.{h}'], p[f'w_v.{h}'], p[f'w_o.{h}']


def stacked_output_weights(state: VQFormerState) -> np.ndarray:
    """The per-head W_O blocks stacked into one (H * d_h) x d_text projection."""
    return np.vstack([state.params[f'w_o.{h}'].data for h in range(state.config.H)])


def _check_inputs(video: Tensor, text: Tensor, config: VQFormerConfig):
    if len(video.shape) != 2 or video.shape[1] != config.d:
        raise ShapeException(f'video tokens {video.shape} must be m x {config.d}')
    if len(text.shape) != 2 or text.shape[1] != config.d_text:
        raise ShapeException(f'text embeddings {text.shape} must be l x {config.d_text}')
    if text.shape[0] < 1:
        raise ShapeException('the question must have at least one token')


def head_outputs(video: Tensor, text: Tensor, state: VQFormerState) -> list[Tensor]:
    """Per-head attention outputs before the W_O projection, each m x d_h."""
    _check_inputs(video, text, state.config)
    normed = layer_norm(video, state.params['norm.gamma'], state.params['norm.beta'], state.ln_eps)
    outputs = []
    for h in range(state.config.H):
        w_q, w_k, w_v, _ = state.head(h)
        # Q is divided by s_q, with no further 1/sqrt(d_h)
        outputs.append(attention_head(normed, text, w_q, w_k, w_v, 1.0 / state.config.s_q))
    return outputs


def vq_cross_attention(video: Tensor, text: Tensor, state: VQFormerState) -> Tensor:
    """Sum of the per-head projected outputs, m x d_text."""
    combined = None
    for h, out in enumerate(head_outputs(video, text, state)):
        projected = matmul(out, state.params[f'w_o.{h}'])
        combined = projected if combined is None else add(combined, projected)
    return combined


def vqformer_forward(video: Tensor, text: Tensor, state: VQFormerState) -> Tensor:
    p = state.params
    attended = vq_cross_attention(video, text, state)
    m1 = add(scale_by(attended, tanh_elem(p['g_attn'])), matmul(video, p['w_m']))
    ff = feed_forward(m1, p['ffn.gamma'], p['ffn.beta'], p['ffn.w1'], p['ffn.b1'], p['ffn.w2'], p['ffn.b2'],
                      state.ln_eps)
    return add(scale_by(ff, tanh_elem(p['g_ff'])), m1)
