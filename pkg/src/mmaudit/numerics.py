"""Minimal dense-tensor engine with a reverse-mode tape.

Only the primitives needed by the adapter and the distillation regularizer
are provided. Every op records a node on the innermost active :class:`Tape`
when at least one input requires a gradient; :func:`backward` replays the
tape in reverse.

Backward rules live in ``BACKWARD`` keyed by op kind so a single rule can be
swapped out (the certification suite relies on this for fault injection).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class EmptySequenceError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class OracleError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor values must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    cache: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def clear(self) -> None:
        self.nodes.clear()


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _emit(kind: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, **cache) -> Tensor:
    out_data = np.asarray(out_data, dtype=np.float64)
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"{kind} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._tape = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    stack = _stack()
    if out.requires_grad and stack:
        tape = stack[-1]
        tape.nodes.append(Node(kind, inputs, out, cache))
        out._tape = tape
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``b`` may be a vector (matrix-vector product)."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    return _emit("matmul", (a, b), a.data @ b.data)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    raise DimensionError(f"cannot broadcast {b.shape} against {a.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit("add", (a, b), a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit("sub", (a, b), a.data - b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit("mul", (a, b), a.data * b.data)


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        op = {"add": add, "sub": sub, "mul": mul}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return op(a, b)


def scale(s, x: Tensor) -> Tensor:
    """Multiply ``x`` by a scalar tensor (shape () or (1,)) or a float."""
    s = _as_tensor(s)
    if s.data.size != 1:
        raise DimensionError(f"scale factor must be scalar, got {s.shape}")
    return _emit("scale", (s, x), s.data.reshape(()) * x.data)


def tanh(x: Tensor) -> Tensor:
    return _emit("tanh", (x,), np.tanh(x.data))


# sigmoid outputs are kept strictly inside (0, 1); saturation would otherwise
# round them to exactly 0 or 1 once |x| exceeds ~37 (upper) or ~745 (lower)
SIGMOID_LO = float(np.nextafter(0.0, 1.0))
SIGMOID_HI = float(np.nextafter(1.0, 0.0))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))  # split by sign so exp never overflows
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", (x,), np.clip(out, SIGMOID_LO, SIGMOID_HI))


def relu(x: Tensor) -> Tensor:
    return _emit("relu", (x,), np.where(x.data > 0, x.data, 0.0))


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        op = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return op(x)


def mean_axis(x: Tensor) -> Tensor:
    """Column means of an L x d matrix."""
    if x.data.ndim != 2:
        raise DimensionError(f"mean_axis expects a matrix, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptySequenceError("cannot pool an empty sequence")
    return _emit("mean_axis", (x,), x.data.mean(axis=0))


def softmax(logits: Tensor) -> Tensor:
    z = logits.data
    if z.ndim != 1 or z.shape[0] < 2:
        raise DimensionError(f"softmax expects a vector of length >= 2, got {logits.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logit")
    e = np.exp(z - z.max())
    return _emit("softmax", (logits,), e / e.sum())


def log(x: Tensor, eps: float = 0.0) -> Tensor:
    """Natural log of ``x + eps``; inputs must stay positive."""
    shifted = x.data + eps
    if np.any(shifted <= 0):
        raise NumericError("log of a non-positive value")
    return _emit("log", (x,), np.log(shifted), eps=eps)


def sum_all(x: Tensor) -> Tensor:
    return _emit("sum", (x,), np.asarray(x.data.sum()))


# ---------------------------------------------------------------- backward rules

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def _bw_matmul(node, g):
    a, b = node.inputs
    if b.data.ndim == 1:
        return np.outer(g, b.data), a.data.T @ g
    return g @ b.data.T, a.data.T @ g


def _bw_add(node, g):
    a, b = node.inputs
    return g, _unbroadcast(g, b.shape)


def _bw_sub(node, g):
    a, b = node.inputs
    return g, -_unbroadcast(g, b.shape)


def _bw_mul(node, g):
    a, b = node.inputs
    return g * b.data, _unbroadcast(g * a.data, b.shape)


def _bw_scale(node, g):
    s, x = node.inputs
    gs = np.asarray(np.sum(g * x.data)).reshape(s.shape)
    return gs, g * s.data.reshape(())


def _bw_tanh(node, g):
    t = node.output.data
    return (g * (1.0 - t * t),)


def _bw_sigmoid(node, g):
    s = node.output.data
    return (g * s * (1.0 - s),)


def _bw_relu(node, g):
    return (g * (node.inputs[0].data > 0),)


def _bw_mean_axis(node, g):
    x = node.inputs[0]
    return (np.broadcast_to(g / x.shape[0], x.shape).copy(),)


def _bw_softmax(node, g):
    p = node.output.data
    return (p * (g - np.dot(p, g)),)


def _bw_log(node, g):
    return (g / (node.inputs[0].data + node.cache["eps"]),)


def _bw_sum(node, g):
    return (np.full(node.inputs[0].shape, float(g)),)


BACKWARD = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "tanh": _bw_tanh,
    "sigmoid": _bw_sigmoid,
    "relu": _bw_relu,
    "mean_axis": _bw_mean_axis,
    "softmax": _bw_softmax,
    "log": _bw_log,
    "sum": _bw_sum,
}


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked leaf.

    Repeated calls add to existing ``.grad`` values.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not recorded on a tape")
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = adj.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, BACKWARD[node.kind](node, g)):
            if not inp.requires_grad:
                continue
            key = id(inp)
            if key in adj:
                adj[key] = adj[key] + gi
            else:
                adj[key] = gi
            if inp._tape is None:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = adj[key].reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------- oracle

def _named(params) -> dict[str, Tensor]:
    if isinstance(params, dict):
        return dict(params)
    return {str(i): p for i, p in enumerate(params)}


def numeric_grad(f, params, step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences ``(f(t + h e_i) - f(t - h e_i)) / 2h`` for every coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    named = _named(params)
    with Tape():
        f0 = f(params).item()
    with Tape():
        f1 = f(params).item()
    if f0 != f1:
        raise OracleError(f"objective is not deterministic: {f0!r} != {f1!r}")
    out = {}
    for name, p in named.items():
        flat = p.data.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with Tape():
                fp = f(params).item()
            flat[i] = orig - step
            with Tape():
                fm = f(params).item()
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * step)
        out[name] = num.reshape(p.shape)
    return out


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def analytic_grad(f, params) -> dict[str, np.ndarray]:
    named = _named(params)
    for p in named.values():
        p.requires_grad = True
        p.zero_grad()
    with Tape():
        backward(f(params))
    return {k: np.zeros(p.shape) if p.grad is None else p.grad.copy() for k, p in named.items()}


def grad_check_report(f, params, step: float = 1e-5) -> dict[str, float]:
    """Per-tensor worst relative error between tape and central differences.

    ``f`` maps the (mutable) parameter tensors to a scalar Tensor. Relative
    error uses the denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    analytic = analytic_grad(f, params)
    numeric = numeric_grad(f, params, step)
    return {k: float(relative_error(analytic[k], numeric[k]).max(initial=0.0)) for k in analytic}


def grad_check(f, params, step: float = 1e-5) -> float:
    return max(grad_check_report(f, params, step).values(), default=0.0)
