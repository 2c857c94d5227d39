"""
Compare reverse-mode gradients against central finite differences.

Each check builder returns a loss function over a flat name -> Tensor dict together with the parameters to check.
Losses project module outputs onto a fixed random matrix; a plain sum would hide layer norm gradients, which sum to
zero over each row.
"""

import copy
import math
from typing import Callable, NamedTuple

import numpy as np

from config import PerceiverConfig, VQFormerConfig, gradcheck_config
from model import Vaquita
from perceiver import PerceiverState, video_perceiver_forward
from tensor import (Tape, Tensor, backward, concat_cols, concat_rows, finite_diff_grad, gelu, layer_norm,
                    log_softmax_rows, matmul, mean_axis, mul, reshape, scale_by, softmax_rows, sum_all, take_rows,
                    tanh_elem, transpose)
from util import seeded_rng
from vqformer import VQFormerState, vqformer_forward

THRESHOLD = 1e-4
DEFAULT_H = 1e-5

TINY_PERCEIVER = PerceiverConfig(T=2, n=2, d=3, m=2, p=1, H=1, d_h=2)
TINY_VQFORMER = VQFormerConfig(d=3, d_text=4, H=1, d_h=2, s_q=math.sqrt(2.0))
TINY_INIT_STD = 0.5


class GradCheck(NamedTuple):
    loss_fn: Callable[[dict[str, Tensor]], Tensor]
    params: dict[str, Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||, 1e-8)"""
    diff = np.linalg.norm(np.asarray(analytic) - np.asarray(numeric))
    return float(diff / max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8))


def check_gradients(loss_fn: Callable[[dict[str, Tensor]], Tensor], params: dict[str, Tensor],
                    h: float = DEFAULT_H) -> dict[str, float]:
    """Relative error between the tape gradient and the finite-difference gradient, per parameter."""
    with Tape():
        loss = loss_fn(params)
    backward(loss)
    analytic = {name: p.grad for name, p in params.items()}

    errors = {}
    for name, p in params.items():
        def f(x: Tensor, name=name) -> Tensor:
            return loss_fn({**params, name: x})

        errors[name] = relative_error(analytic[name], finite_diff_grad(f, p, h).data)
    return errors


def _projection(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _projected_loss(out: Tensor, weights: Tensor) -> Tensor:
    return sum_all(mul(out, weights))


def tensor_check(seed: int) -> GradCheck:
    """A composite touching every differentiable primitive."""
    rng = seeded_rng(seed, 'gradcheck.tensor')
    params = {
        'a': Tensor(rng.normal(size=(3, 4)), True),
        'b': Tensor(rng.normal(size=(4, 3)), True),
        'gamma': Tensor(1.0 + 0.1 * rng.normal(size=3), True),
        'beta': Tensor(0.1 * rng.normal(size=3), True),
        'gate': Tensor(np.array(rng.uniform(0.2, 0.8)), True),
        'table': Tensor(rng.normal(size=(5, 3)), True),
    }
    weights = _projection(rng, (4, 6))

    def loss_fn(p: dict[str, Tensor]) -> Tensor:
        x = layer_norm(gelu(matmul(p['a'], p['b'])), p['gamma'], p['beta'])
        x = concat_rows([x, take_rows(p['table'], [4, 0, 4])])
        attn = matmul(softmax_rows(matmul(x, transpose(x))), x)
        y = concat_cols([scale_by(tanh_elem(attn), tanh_elem(p['gate'])), log_softmax_rows(x)])
        pooled = reshape(mean_axis(reshape(y, (3, 2, 6)), 1), (3, 6))
        return _projected_loss(concat_rows([pooled, take_rows(y, [0])]), weights)

    return GradCheck(loss_fn, params)


def _with_params(state, params: dict[str, Tensor]):
    clone = copy.copy(state)
    clone.params = params
    return clone


def perceiver_check(seed: int, layers: int = 1) -> GradCheck:
    config = TINY_PERCEIVER._replace(p=layers)
    state = PerceiverState(config, seed, TINY_INIT_STD)
    rng = seeded_rng(seed, 'gradcheck.perceiver')
    features = Tensor(rng.normal(size=(config.T, config.n, config.d)))
    weights = _projection(rng, (config.m, config.d))

    def loss_fn(p: dict[str, Tensor]) -> Tensor:
        return _projected_loss(video_perceiver_forward(features, _with_params(state, p)), weights)

    return GradCheck(loss_fn, dict(state.parameters()))


def open_gates(rng: np.random.Generator) -> dict[str, Tensor]:
    """Nonzero gates; at exactly zero the attention branch gets no gradient at all."""
    return {name: Tensor(np.array(rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 0.9)), True)
            for name in ['g_attn', 'g_ff']}


def vqformer_check(seed: int) -> GradCheck:
    state = VQFormerState(TINY_VQFORMER, seed, TINY_INIT_STD)
    rng = seeded_rng(seed, 'gradcheck.vqformer')
    state.params.update(open_gates(rng))
    video = Tensor(rng.normal(size=(2, TINY_VQFORMER.d)))
    text = Tensor(rng.normal(size=(3, TINY_VQFORMER.d_text)))
    weights = _projection(rng, (2, TINY_VQFORMER.d_text))

    def loss_fn(p: dict[str, Tensor]) -> Tensor:
        return _projected_loss(vqformer_forward(video, text, _with_params(state, p)), weights)

    return GradCheck(loss_fn, dict(state.parameters()))


GRADCHECK_VOCAB = ['red', 'cube', 'moves']


def model_check(seed: int) -> GradCheck:
    """The full pipeline loss against every trainable parameter, frozen encoder and decoder."""
    config = gradcheck_config()._replace(seed=seed, vocab=list(GRADCHECK_VOCAB))
    model = Vaquita(config)
    rng = seeded_rng(seed, 'gradcheck.model')
    for name, gate in open_gates(rng).items():
        model.set_parameter(f'vqformer.{name}', gate)

    frames = rng.normal(size=(4, config.encoder.raw_dim))
    question = 'red cube moves'
    answer_ids = model.answer_ids('cube red')

    def loss_fn(p: dict[str, Tensor]) -> Tensor:
        return model.with_parameters(p).loss(frames, question, answer_ids, 'train')

    return GradCheck(loss_fn, model.trainable_parameters())


MODULES: dict[str, dict[str, Callable[[int], GradCheck]]] = {
    'tensor': {'tensor': tensor_check},
    'perceiver': {'perceiver': perceiver_check, 'perceiver_p2': lambda seed: perceiver_check(seed, layers=2)},
    'vqformer': {'vqformer': vqformer_check},
    'model': {'model': model_check},
}


def run_checks(module: str, seeds: list[int], h: float = DEFAULT_H) -> dict[str, float]:
    """Largest relative error per parameter group ('check.parameter') over all seeds."""
    worst: dict[str, float] = {}
    for check_name, build in MODULES[module].items():
        for seed in seeds:
            check = build(seed)
            for name, err in check_gradients(check.loss_fn, check.params, h).items():
                key = f'{check_name}.{name}'
                worst[key] = max(worst.get(key, 0.0), err)
    return worst
