"""
Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations executed while a :class:`Tape` is active record a backward rule on
it; operations executed with no active tape produce plain constants, which is
how evaluation runs without paying for gradients.

Broadcasting is limited to a leading batch: the second operand of a binary op
must have the full shape of the first or a trailing suffix of it.
"""

import logging
import threading

import numpy as np

from .exceptions import ContractError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

_local = threading.local()
_check_finite = True


def set_finite_checks(enabled):
    """Toggle the non-finite assertion (on for tests, off for timed runs)."""
    global _check_finite
    _check_finite = bool(enabled)


def _active_tape():
    stack = getattr(_local, 'stack', None)
    return stack[-1] if stack else None


class Tensor:
    """A dense row-major float64 array with an optional gradient buffer."""

    __slots__ = ('data', 'requires_grad', 'grad', 'name', '_tape')

    def __init__(self, data, requires_grad=False, name=None):
        data = np.array(data, dtype=np.float64)
        if _check_finite and not np.isfinite(data).all():
            raise NonFiniteError(f'non-finite values in tensor {name or "<anonymous>"}')
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f'item() on tensor of shape {self.shape}')
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate(self, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise DimensionError(f'gradient shape {grad.shape} != tensor shape {self.data.shape}')
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}{flag})'


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class Operation:
    __slots__ = ('name', 'inputs', 'output', 'backward_fn')

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of operations. Use as a context manager to make it the
    active tape for the current thread.
    """

    def __init__(self):
        self.operations = []

    def __enter__(self):
        stack = getattr(_local, 'stack', None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.operations)

    def record(self, name, inputs, output, backward_fn):
        output.requires_grad = True
        output._tape = self
        self.operations.append(Operation(name, inputs, output, backward_fn))

    def backward(self, loss):
        if loss.data.size != 1 or loss.ndim != 0:
            raise ContractError(f'backward() needs a scalar loss, got shape {loss.shape}')
        if loss._tape is not self and not loss.requires_grad:
            raise ContractError('loss is not on the tape and does not require grad')
        loss.accumulate(np.ones_like(loss.data))
        for op in reversed(self.operations):
            upstream = op.output.grad
            if upstream is None:
                continue
            grads = op.backward_fn(upstream)
            for tensor, grad in zip(op.inputs, grads):
                if grad is not None and tensor.requires_grad:
                    tensor.accumulate(grad)


def backward(loss):
    """Populate `grad` on every requires_grad tensor reachable from `loss`."""
    if loss._tape is None:
        if loss.data.size != 1 or loss.ndim != 0:
            raise ContractError(f'backward() needs a scalar loss, got shape {loss.shape}')
        if not loss.requires_grad:
            raise ContractError('loss is not on any tape')
        loss.accumulate(np.ones_like(loss.data))
        return
    loss._tape.backward(loss)


def _result(name, value, inputs, backward_fn):
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(name, inputs, out, backward_fn)
    return out


def _check_operands(name, a, b):
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f'{name}: shape {b.shape} does not broadcast onto {a.shape}')


def _reduce_to(grad, shape):
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.reshape((-1,) + shape).sum(axis=0) if lead else grad


def _check_axis(x, axis):
    if axis is None:
        return None
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f'axis {axis} invalid for shape {x.shape}')
    return axis % x.ndim


# --- linear algebra -------------------------------------------------------

def matmul(a, b):
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or (a.ndim == 2 and b.ndim == 3):
        raise DimensionError(f'matmul: unsupported ranks {a.shape} x {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f'matmul: inner dimensions differ {a.shape} x {b.shape}')
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f'matmul: batch dimensions differ {a.shape} x {b.shape}')
    av, bv = a.data, b.data

    def backward_fn(g):
        da = g @ np.swapaxes(bv, -1, -2)
        db = np.swapaxes(av, -1, -2) @ g
        if bv.ndim == 2 and av.ndim == 3:
            db = db.sum(axis=0)
        return da, db

    return _result('matmul', av @ bv, (a, b), backward_fn)


def reshape(x, shape):
    shape = tuple(shape)
    try:
        value = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f'reshape {x.shape} -> {shape}: {exc}') from exc
    original = x.shape
    return _result('reshape', value, (x,), lambda g: (g.reshape(original),))


def transpose(x, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f'transpose axes {axes} invalid for shape {x.shape}')
    inverse = tuple(np.argsort(axes))
    return _result('transpose', x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


# --- elementwise ----------------------------------------------------------

def add(a, b):
    if b.ndim > a.ndim:
        a, b = b, a
    _check_operands('add', a, b)
    return _result('add', a.data + b.data, (a, b),
                   lambda g: (g, _reduce_to(g, b.shape)))


def sub(a, b):
    _check_operands('sub', a, b)
    return _result('sub', a.data - b.data, (a, b),
                   lambda g: (g, -_reduce_to(g, b.shape)))


def mul(a, b):
    if b.ndim > a.ndim:
        a, b = b, a
    _check_operands('mul', a, b)
    av, bv = a.data, b.data
    return _result('mul', av * bv, (a, b),
                   lambda g: (g * bv, _reduce_to(g * av, bv.shape)))


def scale(x, factor):
    factor = float(factor)
    return _result('scale', x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result('sigmoid', y, (x,), lambda g: (g * y * (1.0 - y),))


def silu(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    xv = x.data
    return _result('silu', xv * s, (x,), lambda g: (g * (s + xv * s * (1.0 - s)),))


def softmax(x, axis=-1):
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result('softmax', y, (x,), backward_fn)


def normalize_rows(x):
    """Divide each row by its sum over the last axis."""
    total = x.data.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise ContractError('normalize_rows: a row sums to zero')
    y = x.data / total

    def backward_fn(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) / total,)

    return _result('normalize_rows', y, (x,), backward_fn)


# --- reductions -----------------------------------------------------------

def sum(x, axis=None):  # noqa: A001
    axis = _check_axis(x, axis)
    shape = x.shape

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result('sum', x.data.sum(axis=axis), (x,), backward_fn)


def mean(x, axis=None):
    axis = _check_axis(x, axis)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ContractError('mean over an empty axis')
    return scale(sum(x, axis), 1.0 / count)


# --- normalization and lookup ---------------------------------------------

def layer_norm(x, gain, bias, eps=1e-5):
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f'layer_norm: gain/bias must have shape ({d},)')
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gv = gain.data

    def backward_fn(g):
        dxhat = g * gv
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        return dx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _result('layer_norm', xhat * gv + bias.data, (x, gain, bias), backward_fn)


def embedding_lookup(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f'embedding id out of range [0, {table.shape[0]})')
    rows = table.shape[0]

    def backward_fn(g):
        dtable = np.zeros((rows,) + g.shape[ids.ndim:])
        np.add.at(dtable, ids, g)
        return (dtable,)

    return _result('embedding_lookup', table.data[ids], (table,), backward_fn)


def take_rows(x, index):
    """Gather rows (axis 0) of `x`."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def backward_fn(g):
        dx = np.zeros(shape)
        np.add.at(dx, index, g)
        return (dx,)

    return _result('take_rows', x.data[index], (x,), backward_fn)


def take(x, rows, cols):
    """Gather the elements x[rows[k], cols[k]] of a matrix into a vector."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    shape = x.shape

    def backward_fn(g):
        dx = np.zeros(shape)
        np.add.at(dx, (rows, cols), g)
        return (dx,)

    return _result('take', x.data[rows, cols], (x,), backward_fn)


def scale_rows(x, weights):
    """Multiply row k of matrix `x` by weights[k]."""
    if weights.shape != (x.shape[0],):
        raise DimensionError(f'scale_rows: weights {weights.shape} vs rows {x.shape[0]}')
    xv, wv = x.data, weights.data

    def backward_fn(g):
        return g * wv[:, None], (g * xv).sum(axis=1)

    return _result('scale_rows', xv * wv[:, None], (x, weights), backward_fn)


def scatter_rows(x, index, n_rows):
    """Sum the rows of `x` into a zero matrix of n_rows rows at `index`."""
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n_rows,) + x.shape[1:])
    np.add.at(out, index, x.data)
    return _result('scatter_rows', out, (x,), lambda g: (g[index],))


# --- losses ---------------------------------------------------------------

def cross_entropy(logits, targets, reduction='mean'):
    """Token-level negative log-likelihood of `targets` under softmax(`logits`)."""
    if logits.ndim != 2:
        raise DimensionError(f'cross_entropy expects (tokens, vocab) logits, got {logits.shape}')
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, vocab = logits.shape
    if targets.shape[0] != n:
        raise DimensionError(f'{targets.shape[0]} targets for {n} logit rows')
    if n == 0:
        raise ContractError('cross_entropy over zero tokens')
    if targets.min() < 0 or targets.max() >= vocab:
        raise DimensionError(f'target id out of range [0, {vocab})')
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    nll = -log_probs[np.arange(n), targets]
    divisor = n if reduction == 'mean' else 1

    def backward_fn(g):
        dlogits = np.exp(log_probs)
        dlogits[np.arange(n), targets] -= 1.0
        return (dlogits * (g / divisor),)

    return _result('cross_entropy', nll.sum() / divisor, (logits,), backward_fn)
