"""Small dense-tensor engine with reverse-mode automatic differentiation.

Only the operations the AGT network needs are provided. Every array is
float64; gradient checking at 1e-4 is not reliable in single precision.

Each op records its inputs and a backward closure on the output tensor.
Tensors carry a creation counter, so sorting the reachable nodes by that
counter yields a topological order; ``backward`` walks it once in reverse
and then releases the graph (one tape per step).
"""

import itertools
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

CE_EPSILON = 1e-12

_creation_counter = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Raised for inputs an op is undefined on (e.g. a fully masked softmax)."""


class NonDeterministicClosureError(RuntimeError):
    """Raised by gradcheck when two forward passes disagree."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None
        self._id = next(_creation_counter)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn):
    """Wrap ``data`` as an op output; record the graph only when needed."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), _bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), _bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), _bw)


def matmul(a, b):
    """Matrix product over the last two axes, broadcasting leading axes.

    ``a`` may be ``(..., m, k)`` and ``b`` either ``(k, n)`` or ``(..., k, n)``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")

    def _bw(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), _bw)


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)

    def _bw(g):
        _accumulate(x, g * (1.0 - t * t))

    return _result(t, (x,), _bw)


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)

    def _bw(g):
        _accumulate(x, g * s * (1.0 - s))

    return _result(s, (x,), _bw)


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


def reshape(x, shape):
    x = as_tensor(x)

    def _bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), _bw)


def concat(a, b):
    """Concatenate along the last axis; leading axes must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim:
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat leading axes differ: {a.shape} vs {b.shape}")
    p = a.shape[-1]

    def _bw(g):
        _accumulate(a, g[..., :p])
        _accumulate(b, g[..., p:])

    return _result(np.concatenate([a.data, b.data], axis=-1), (a, b), _bw)


def _softmax_last(z, mask=None):
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(x, p):
    def _bw(g):
        _accumulate(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _bw


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    p = _softmax_last(x.data)
    return _result(p, (x,), _softmax_backward(x, p))


def masked_softmax(scores, mask):
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions come out as exactly 0 and receive no gradient.
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match scores {scores.shape}")
    if not mask.any(axis=-1).all():
        raise DegenerateInputError("masked_softmax: every position of some row is masked")
    p = _softmax_last(scores.data, mask)
    return _result(p, (scores,), _softmax_backward(scores, p))


def cross_entropy(probabilities, targets):
    """Mean of -log p[target] over the leading axis, floored at CE_EPSILON.

    ``probabilities`` is ``(C,)`` with an int target, or ``(batch, C)`` with
    one target per row.
    """
    probabilities = as_tensor(probabilities)
    p = probabilities.data
    single = p.ndim == 1
    p2 = p[None, :] if single else p
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n_classes = p2.shape[-1]
    if t.shape[0] != p2.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {p2.shape[0]} rows")
    if ((t < 0) | (t >= n_classes)).any():
        raise ValueError(f"target out of range 0..{n_classes - 1}: {t.tolist()}")
    rows = np.arange(p2.shape[0])
    picked = p2[rows, t]
    clamped = np.maximum(picked, CE_EPSILON)
    loss = float(-np.log(clamped).mean())

    def _bw(g):
        d = np.zeros_like(p2)
        live = picked > CE_EPSILON
        d[rows[live], t[live]] = -g / (clamped[live] * p2.shape[0])
        _accumulate(probabilities, d[0] if single else d)

    return _result(np.array(loss), (probabilities,), _bw)


def sum_all(x):
    x = as_tensor(x)

    def _bw(g):
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _result(np.array(x.data.sum()), (x,), _bw)


def backward(loss):
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers. The graph behind
    ``loss`` is released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack.extend(t._parents)
    order = sorted(nodes.values(), key=lambda t: t._id, reverse=True)

    # Interior nodes get fresh buffers; leaves keep accumulating.
    for t in order:
        if t._backward is not None:
            t.grad = np.zeros_like(t.data)
    _accumulate(loss, np.ones_like(loss.data))
    for t in order:
        if t._backward is not None:
            t._backward(t.grad)
    for t in order:
        t._parents = ()
        t._backward = None


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    tolerance: float
    results: List[GradcheckResult] = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def lines(self):
        for r in self.results:
            yield f"{r.name}\t{r.max_rel_error:.3e}\t{'pass' if r.passed else 'FAIL'}"


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return np.abs(a - n) / denom


def gradcheck(
    closure: Callable[[], Tensor],
    parameters: Sequence[Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-4,
    names: Optional[Sequence[str]] = None,
) -> GradcheckReport:
    """Compare analytic gradients of ``closure()`` with central differences.

    ``closure`` must rebuild the scalar loss from the current parameter
    values on every call and must be deterministic.
    """
    report = GradcheckReport(tolerance=tolerance)
    parameters = list(parameters)
    if not parameters:
        return report
    if names is None:
        names = [p.name or f"param{i}" for i, p in enumerate(parameters)]

    first = float(closure().data)
    second = float(closure().data)
    if first != second:
        raise NonDeterministicClosureError(
            f"closure returned {first!r} then {second!r}; disable dropout and fix inputs"
        )

    for p in parameters:
        p.zero_grad()
    backward(closure())
    analytic = {id(p): p.grad.copy() for p in parameters}

    for name, p in zip(names, parameters):
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(closure().data)
            flat[i] = orig - h
            f_minus = float(closure().data)
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * h)
        err = float(relative_error(analytic[id(p)], numeric).max()) if p.data.size else 0.0
        report.results.append(GradcheckResult(name, err, err <= tolerance))
    return report


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


__all__ = [
    "CE_EPSILON",
    "DegenerateInputError",
    "GradcheckReport",
    "GradcheckResult",
    "NonDeterministicClosureError",
    "ShapeError",
    "Tensor",
    "activation",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "cross_entropy",
    "gradcheck",
    "masked_softmax",
    "matmul",
    "mul",
    "parameter",
    "relative_error",
    "reshape",
    "sigmoid",
    "softmax",
    "sub",
    "sum_all",
    "tanh",
]
