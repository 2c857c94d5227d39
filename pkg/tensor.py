"""
Dense 64-bit tensors with tape-based reverse-mode differentiation.

Operations only record onto a tape while one is active:

    with Tape() as tape:
        loss = sum_all(matmul(a, b))
    backward(loss)

Outside a tape every result is a constant (requires_grad is False), which is how frozen components and plain
inference run. A tape can be replayed once.
"""

import contextlib
import math
from typing import Callable, NamedTuple, Sequence

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

# Ops whose adjoint is deliberately perturbed, see corrupted_adjoint()
_corrupted_ops: set[str] = set()

# Stack of active tapes, innermost last
_tapes: list['Tape'] = []


class ShapeException(Exception):
    pass


class NumericException(Exception):
    pass


class ContractException(Exception):
    pass


class Tensor:
    """
    An immutable row-major array of 64-bit floats. Leaves created by the caller may set requires_grad; results of
    operations inherit it from their inputs, but only while a tape is recording.
    """

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericException('tensor data contains NaN or Inf')
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @staticmethod
    def zeros(shape: Sequence[int], requires_grad: bool = False) -> 'Tensor':
        return Tensor(np.zeros(shape), requires_grad)

    @staticmethod
    def randn(rng: np.random.Generator, shape: Sequence[int], std: float = 1.0,
              requires_grad: bool = False) -> 'Tensor':
        return Tensor(rng.normal(0.0, std, size=tuple(shape)), requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractException(f'item() needs a single element, shape is {self.shape}')
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad})'


class Node(NamedTuple):
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """
    Ordered record of the operations of one forward pass. Nodes are appended in execution order, which is a
    topological order, so backward simply walks the list in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._consumed = False

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _tapes.remove(self)
        return False

    def record(self, node: Node):
        if self._consumed:
            raise ContractException('tape was already replayed, record a new forward pass')
        node.out._tape = self
        self.nodes.append(node)

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise ContractException(f'loss must be a scalar, shape is {loss.shape}')
        if loss._tape is not self:
            raise ContractException('loss was not recorded on this tape')
        if self._consumed:
            raise ContractException('backward was already run on this tape')
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}

        for node in reversed(self.nodes):
            # Leaves are remembered even if the loss does not reach them, they get zeros below
            for inp in node.inputs:
                if inp.requires_grad and inp._tape is None:
                    leaves[id(inp)] = inp

            g = grads.pop(id(node.out), None)
            if g is None:
                continue

            input_grads = node.vjp(g)
            if node.op in _corrupted_ops:
                input_grads = tuple(None if ig is None else ig * 1.01 for ig in input_grads)

            for inp, ig in zip(node.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + ig if key in grads else ig

        for key, leaf in leaves.items():
            leaf.grad = np.asarray(grads.get(key, np.zeros_like(leaf.data)))


def backward(loss: Tensor):
    """Populate .grad on every requires_grad leaf recorded on the loss's tape."""
    if loss._tape is None:
        raise ContractException('loss has no recorded operations, run the forward pass inside a Tape')
    loss._tape.backward(loss)


def recording() -> bool:
    return len(_tapes) > 0


@contextlib.contextmanager
def corrupted_adjoint(op: str):
    """Test hook: scale the adjoint of one op by 1.01 so gradient checks must fail."""
    _corrupted_ops.add(op)
    try:
        yield
    finally:
        _corrupted_ops.discard(op)


def _result(op: str, arr: np.ndarray, inputs: tuple[Tensor, ...],
            vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]) -> Tensor:
    # 0-d results come back from numpy as scalars
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericException(f'{op} produced NaN or Inf')
    arr.flags.writeable = False

    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out._tape = None
    out.requires_grad = recording() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        _tapes[-1].record(Node(op, out, inputs, vjp))
    return out


def _need_rank(op: str, t: Tensor, rank: int):
    if len(t.shape) != rank:
        raise ShapeException(f'{op} expects a rank {rank} tensor, got shape {t.shape}')


def ordered_sum(a: np.ndarray, axis: int | None = None, keepdims: bool = False) -> np.ndarray:
    """
    Sum along axis (all elements if None) strictly left to right in row-major order, so the result does not depend
    on numpy's pairwise summation.
    """
    a = np.asarray(a, dtype=np.float64)
    if axis is None:
        total = ordered_sum(a.reshape(-1), 0)
        return total.reshape((1,) * a.ndim) if keepdims else total
    parts = np.moveaxis(a, axis, 0)
    total = np.zeros(parts.shape[1:])
    for part in parts:
        total = total + part
    total = np.asarray(total)
    return np.expand_dims(total, axis) if keepdims else total


def ordered_mean(a: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    return ordered_sum(a, axis, keepdims) / a.shape[axis]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to shape, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = ordered_sum(g, 0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = ordered_sum(g, axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need_rank('matmul', a, 2)
    _need_rank('matmul', b, 2)
    if a.shape[1] != b.shape[0]:
        raise ShapeException(f'matmul inner dimensions differ: {a.shape} x {b.shape}')

    def vjp(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _result('matmul', a.data @ b.data, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """
    Elementwise a + b. b may have the same shape as a, or a shape that broadcasts to it without changing it: a bias
    row (c,) over a r x c matrix, or time encodings T x 1 x d over T x n x d.
    """
    if a.shape != b.shape:
        try:
            out_shape = np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeException(f'add shapes differ: {a.shape} + {b.shape}')
        if out_shape != a.shape:
            raise ShapeException(f'add would broadcast {a.shape} up to {out_shape}')

    def vjp(g):
        return (g if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result('add', a.data + b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeException(f'mul shapes differ: {a.shape} * {b.shape}')

    def vjp(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _result('mul', a.data * b.data, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a constant."""
    return _result('scale', x.data * c, (x,), lambda g: (g * c,))


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a differentiable single-element tensor, e.g. a tanh gate."""
    if s.size != 1:
        raise ShapeException(f'scale_by needs a single-element factor, got shape {s.shape}')
    factor = s.data.reshape(-1)[0]

    def vjp(g):
        return (g * factor if x.requires_grad else None,
                ordered_sum(g * x.data).reshape(s.shape) if s.requires_grad else None)

    return _result('scale_by', x.data * factor, (x, s), vjp)


def transpose(x: Tensor) -> Tensor:
    _need_rank('transpose', x, 2)
    return _result('transpose', np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise ShapeException(f'cannot reshape {x.shape} to {shape}')
    return _result('reshape', x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(x.shape),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 0:
        raise ShapeException('concat_rows needs at least one tensor')
    for p in parts:
        _need_rank('concat_rows', p, 2)
        if p.shape[1] != parts[0].shape[1]:
            raise ShapeException(f'concat_rows column counts differ: {[p.shape for p in parts]}')
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result('concat_rows', np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 0:
        raise ShapeException('concat_cols needs at least one tensor')
    for p in parts:
        _need_rank('concat_cols', p, 2)
        if p.shape[0] != parts[0].shape[0]:
            raise ShapeException(f'concat_cols row counts differ: {[p.shape for p in parts]}')
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result('concat_cols', np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def take_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather along the first axis. Repeated indices are allowed; their gradients add up."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(x.shape) == 0:
        raise ShapeException('take_rows needs at least rank 1')
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeException(f'take_rows index out of range for {x.shape[0]} rows')

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result('take_rows', x.data[idx].copy(), (x,), vjp)


def embed_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    _need_rank('embed_lookup', table, 2)
    return take_rows(table, ids)


def sum_all(x: Tensor) -> Tensor:
    return _result('sum_all', ordered_sum(x.data), (x,), lambda g: (np.full(x.shape, g.reshape(-1)[0]),))


def mean_axis(x: Tensor, axis: int) -> Tensor:
    extent = x.shape[axis]

    def vjp(g):
        return (np.repeat(np.expand_dims(g, axis), extent, axis=axis) / extent,)

    return _result('mean_axis', ordered_mean(x.data, axis), (x,), vjp)


def tanh_elem(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result('tanh', y, (x,), lambda g: (g * (1.0 - y * y),))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    v = x.data
    t = np.tanh(GELU_C * (v + GELU_A * v ** 3))

    def vjp(g):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return _result('gelu', 0.5 * v * (1.0 + t), (x,), vjp)


def causal_mask(rows: int) -> np.ndarray:
    """Allowed positions: row i may attend to columns 0..i."""
    return np.tril(np.ones((rows, rows), dtype=bool))


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """
    Row softmax. With a boolean mask, disallowed entries get probability exactly 0; every row must allow at least
    one entry.
    """
    _need_rank('softmax_rows', x, 2)
    if x.shape[1] < 1:
        raise ShapeException('softmax_rows on an empty row')
    v = x.data
    if mask is not None:
        if mask.shape != x.shape:
            raise ShapeException(f'mask shape {mask.shape} does not match {x.shape}')
        if not np.all(mask.any(axis=1)):
            raise ShapeException('mask leaves a row with nothing to attend to')
        v = np.where(mask, v, -np.inf)
    e = np.exp(v - v.max(axis=1, keepdims=True))
    p = e / ordered_sum(e, 1, keepdims=True)

    def vjp(g):
        return (p * (g - ordered_sum(g * p, 1, keepdims=True)),)

    return _result('softmax_rows', p, (x,), vjp)


def log_softmax_rows(x: Tensor) -> Tensor:
    _need_rank('log_softmax_rows', x, 2)
    if x.shape[1] < 1:
        raise ShapeException('log_softmax_rows on an empty row')
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(ordered_sum(np.exp(shifted), 1, keepdims=True))
    p = np.exp(out)

    def vjp(g):
        return (g - p * ordered_sum(g, 1, keepdims=True),)

    return _result('log_softmax_rows', out, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row (x - mean) / sqrt(var + eps) * gamma + beta, var is the biased (divide by c) variance."""
    _need_rank('layer_norm', x, 2)
    c = x.shape[1]
    if c < 1 or gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeException(f'layer_norm parameters {gamma.shape}, {beta.shape} do not fit rows of {c}')
    if eps <= 0:
        raise ContractException(f'layer_norm eps must be positive, got {eps}')

    mu = ordered_mean(x.data, 1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt(ordered_mean(centered * centered, 1, keepdims=True) + eps)
    xhat = centered * inv_std

    def vjp(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv_std * (dxhat - ordered_mean(dxhat, 1, keepdims=True)
                            - xhat * ordered_mean(dxhat * xhat, 1, keepdims=True))
        return (gx,
                ordered_sum(g * xhat, 0) if gamma.requires_grad else None,
                ordered_sum(g, 0) if beta.requires_grad else None)

    return _result('layer_norm', xhat * gamma.data + beta.data, (x, gamma, beta), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central differences (f(x + h e) - f(x - h e)) / 2h for every coordinate of x."""
    if h <= 0:
        raise ContractException(f'finite difference step must be positive, got {h}')

    def evaluate(arr: np.ndarray) -> float:
        value = f(Tensor(arr))
        value = value.item() if isinstance(value, Tensor) else float(value)
        if not math.isfinite(value):
            raise NumericException('function is not finite near the evaluation point')
        return value

    base = x.data.copy()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        shifted = base.copy()
        shifted.reshape(-1)[i] += h
        up = evaluate(shifted)
        shifted.reshape(-1)[i] -= 2 * h
        down = evaluate(shifted)
        flat[i] = (up - down) / (2 * h)
    return Tensor(grad)
