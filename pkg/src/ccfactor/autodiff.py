"""Minimal define-by-run reverse-mode differentiation over numpy float64 arrays.

A :class:`Graph` is an append-only tape. Every operation evaluates eagerly,
appends a record (op name, input node ids, cached value, vector-Jacobian
closure) and returns a :class:`Node`. Because inputs always exist before
the node that consumes them, the tape order is already a topological
order and :meth:`Graph.backward` simply walks it in reverse.

Example
-------
>>> g = Graph()
>>> x = g.param("x", [3.0])
>>> grads = g.backward(g.sum(x * x))
>>> float(grads["x"][0])
6.0
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

# Finite stand-in for log(0); keeps every cached value finite.
NEG_INF = -1e30

GRL_MODES = ("reverse", "identity", "freeze")


class ValidationError(ValueError):
    """Bad input, bad shape, or bad configuration."""


class ShapeError(ValidationError):
    """Operand shapes incompatible with an operation."""


class NumericalError(ArithmeticError):
    """Non-finite values, divergence, or failed gradient checks."""


def as_tensor(x, name: str | None = None) -> np.ndarray:
    """Return a read-only, contiguous float64 copy of ``x``.

    Raises NumericalError if any element is NaN or infinite.
    """
    arr = np.array(x, dtype=np.float64, copy=True, order="C")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        label = f" '{name}'" if name else ""
        raise NumericalError(f"tensor{label} contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


class Node:
    """Handle to one tape entry. Supports ``+ - * @`` and indexing."""

    __slots__ = ("graph", "id", "op", "inputs", "value", "requires_grad", "vjp")

    def __init__(self, graph, id_, op, inputs, value, requires_grad, vjp):
        self.graph = graph
        self.id = id_
        self.op = op
        self.inputs = inputs
        self.value = value
        self.requires_grad = requires_grad
        self.vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    def _lift(self, other) -> "Node":
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.graph.scale(self, float(other))
        return self.graph.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, self._lift(other))

    def __getitem__(self, index):
        return self.graph.slice(self, index)


class Graph:
    """Append-only computation tape.

    ``grl_mode`` controls :meth:`grad_reverse`: ``"reverse"`` negates the
    gradient, ``"identity"`` passes it through unchanged (ablation), and
    ``"freeze"`` replays recorded forward values as constants so that no
    gradient crosses the reversal at all (used by the finite-difference
    oracle in :mod:`ccfactor.gradcheck`).
    """

    def __init__(self, grl_mode: str = "reverse", frozen_grl: Sequence[np.ndarray] | None = None):
        if grl_mode not in GRL_MODES:
            raise ValidationError(f"grl_mode must be one of {GRL_MODES}, got {grl_mode!r}")
        if grl_mode == "freeze" and frozen_grl is None:
            raise ValidationError("grl_mode='freeze' needs frozen_grl values")
        self.grl_mode = grl_mode
        self.frozen_grl = list(frozen_grl) if frozen_grl is not None else None
        self.grl_values: list[np.ndarray] = []
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    # -- tape -------------------------------------------------------------

    def _push(self, op: str, inputs: tuple[Node, ...], value: np.ndarray, vjp: Callable | None) -> Node:
        for inp in inputs:
            if inp.graph is not self:
                raise ValidationError(f"node {inp.id} belongs to a different graph")
        requires_grad = any(i.requires_grad for i in inputs)
        node = Node(self, len(self.nodes), op, inputs, value, requires_grad, vjp if requires_grad else None)
        self.nodes.append(node)
        return node

    def _shape_error(self, op: str, msg: str) -> ShapeError:
        return ShapeError(f"node {len(self.nodes)} ({op}): {msg}")

    def constant(self, value) -> Node:
        arr = value if isinstance(value, np.ndarray) and value.dtype == np.float64 else np.asarray(value, dtype=np.float64)
        return self._push("constant", (), arr, None)

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ValidationError(f"parameter {name!r} bound twice")
        arr = as_tensor(value, name)
        node = Node(self, len(self.nodes), "param", (), arr, True, None)
        self.nodes.append(node)
        self.params[name] = node
        return node

    def bind(self, params: dict[str, np.ndarray], prefix: str = "") -> dict[str, Node]:
        """Register every array in ``params`` whose name starts with ``prefix``."""
        return {k: self.param(k, v) for k, v in params.items() if k.startswith(prefix)}

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim < 2 or b.value.ndim < 2:
            raise self._shape_error("matmul", f"operands must be at least 2-D, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise self._shape_error("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        try:
            out = np.matmul(av, bv)
        except ValueError as exc:
            raise self._shape_error("matmul", str(exc)) from None

        def vjp(g):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape) if a.requires_grad else None
            gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape) if b.requires_grad else None
            return ga, gb

        return self._push("matmul", (a, b), out, vjp)

    def _broadcast(self, op: str, a: Node, b: Node) -> None:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise self._shape_error(op, f"cannot broadcast {a.shape} with {b.shape}") from None

    def add(self, a: Node, b: Node) -> Node:
        self._broadcast("add", a, b)
        sa, sb = a.shape, b.shape
        return self._push("add", (a, b), a.value + b.value, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Node, b: Node) -> Node:
        self._broadcast("sub", a, b)
        sa, sb = a.shape, b.shape
        return self._push("sub", (a, b), a.value - b.value, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        """Elementwise (Hadamard) product with broadcasting."""
        self._broadcast("mul", a, b)
        av, bv = a.value, b.value
        return self._push("mul", (a, b), av * bv, lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._push("scale", (a,), a.value * c, lambda g: (g * c,))

    def dot(self, a: Node, b: Node) -> Node:
        """Inner product along the last axis."""
        if a.shape[-1:] != b.shape[-1:]:
            raise self._shape_error("dot", f"last dimensions differ: {a.shape} . {b.shape}")
        self._broadcast("dot", a, b)
        av, bv = a.value, b.value

        def vjp(g):
            g = g[..., None]
            return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

        return self._push("dot", (a, b), np.sum(av * bv, axis=-1), vjp)

    # -- elementwise nonlinearities ---------------------------------------

    def relu(self, a: Node) -> Node:
        live = a.value > 0
        return self._push("relu", (a,), np.where(live, a.value, 0.0), lambda g: (g * live,))

    def logistic(self, a: Node) -> Node:
        s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
        return self._push("logistic", (a,), s, lambda g: (g * s * (1.0 - s),))

    sigmoid = logistic

    def tanh(self, a: Node) -> Node:
        t = np.tanh(a.value)
        return self._push("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))

    def exp(self, a: Node) -> Node:
        e = np.exp(a.value)
        return self._push("exp", (a,), e, lambda g: (g * e,))

    def log(self, a: Node) -> Node:
        av = a.value
        if np.any(av <= 0):
            raise NumericalError(f"node {len(self.nodes)} (log): non-positive input")
        return self._push("log", (a,), np.log(av), lambda g: (g / av,))

    def grad_reverse(self, a: Node) -> Node:
        """Identity forward; multiplies the incoming gradient by -1 backward."""
        self.grl_values.append(a.value)
        if self.grl_mode == "freeze":
            idx = len(self.grl_values) - 1
            if idx >= len(self.frozen_grl):
                raise ValidationError("more grad_reverse calls than frozen values")
            return self.constant(self.frozen_grl[idx])
        if self.grl_mode == "identity":
            return self._push("grad_identity", (a,), a.value, lambda g: (g,))
        return self._push("grad_reverse", (a,), a.value, lambda g: (-g,))

    def stop_gradient(self, a: Node) -> Node:
        return self.constant(a.value)

    def dropout(self, a: Node, rate: float, rng: np.random.Generator | None) -> Node:
        """Inverted dropout; identity when ``rng`` is None (evaluation) or rate is 0."""
        if rng is None or rate <= 0.0:
            return a
        if not 0.0 <= rate < 1.0:
            raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
        keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
        return self._push("dropout", (a,), a.value * keep, lambda g: (g * keep,))

    # -- structure --------------------------------------------------------

    def concat(self, parts: Sequence[Node], axis: int = -1) -> Node:
        parts = tuple(parts)
        try:
            out = np.concatenate([p.value for p in parts], axis=axis)
        except ValueError as exc:
            raise self._shape_error("concat", str(exc)) from None
        ax = axis % out.ndim
        bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

        def vjp(g):
            return tuple(np.split(g, bounds, axis=ax))

        return self._push("concat", parts, out, vjp)

    def stack(self, parts: Sequence[Node], axis: int = 0) -> Node:
        parts = tuple(parts)
        try:
            out = np.stack([p.value for p in parts], axis=axis)
        except ValueError as exc:
            raise self._shape_error("stack", str(exc)) from None
        ax = axis % out.ndim

        def vjp(g):
            return tuple(np.take(g, i, axis=ax) for i in range(len(parts)))

        return self._push("stack", parts, out, vjp)

    def slice(self, a: Node, index) -> Node:
        """Numpy indexing, basic or advanced; backward scatters (and sums duplicates)."""
        try:
            out = a.value[index]
        except IndexError as exc:
            raise self._shape_error("slice", str(exc)) from None
        shape = a.shape
        basic = _is_basic_index(index)

        def vjp(g):
            full = np.zeros(shape)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return self._push("slice", (a,), np.ascontiguousarray(out), vjp)

    def reshape(self, a: Node, shape: tuple[int, ...]) -> Node:
        try:
            out = a.value.reshape(shape)
        except ValueError as exc:
            raise self._shape_error("reshape", str(exc)) from None
        old = a.shape
        return self._push("reshape", (a,), out, lambda g: (g.reshape(old),))

    def transpose(self, a: Node, axes: Sequence[int]) -> Node:
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        return self._push("transpose", (a,), np.transpose(a.value, axes), lambda g: (np.transpose(g, inv),))

    # -- reductions -------------------------------------------------------

    def sum(self, a: Node, axis=None, keepdims: bool = False) -> Node:
        shape = a.shape
        out = np.asarray(np.sum(a.value, axis=axis, keepdims=keepdims), dtype=np.float64)
        if axis is None and not keepdims:
            out = out.reshape(1)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            elif axis is None:
                g = np.reshape(g, (1,) * len(shape))
            return (np.broadcast_to(g, shape).copy(),)

        return self._push("sum", (a,), out, vjp)

    def mean(self, a: Node, axis=None, keepdims: bool = False) -> Node:
        count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
        return self.scale(self.sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))

    def logsumexp(self, a: Node, axis: int = -1, keepdims: bool = False) -> Node:
        av = a.value
        m = np.max(av, axis=axis, keepdims=True)
        shifted = np.exp(av - m)
        total = np.sum(shifted, axis=axis, keepdims=True)
        out = m + np.log(total)
        soft = shifted / total
        if not keepdims:
            out = np.squeeze(out, axis=axis)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (g * soft,)

        return self._push("logsumexp", (a,), out, vjp)

    def log_softmax(self, a: Node, axis: int = -1) -> Node:
        return self.sub(a, self.logsumexp(a, axis=axis, keepdims=True))

    def mse(self, a: Node, b: Node) -> Node:
        """Mean of squared elementwise differences; scalar."""
        if a.shape != b.shape:
            raise self._shape_error("mse", f"shapes differ: {a.shape} vs {b.shape}")
        diff = a.value - b.value
        n = float(diff.size)
        return self._push("mse", (a, b), np.array([np.sum(diff * diff) / n]),
                          lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))

    def softmax_cross_entropy(self, logits: Node, labels: Iterable[int]) -> Node:
        """Mean categorical cross-entropy of rows of ``logits`` (n x C) against integer labels."""
        labels = np.asarray(list(labels), dtype=np.int64)
        lv = logits.value
        if lv.ndim != 2 or lv.shape[0] != labels.shape[0]:
            raise self._shape_error("softmax_cross_entropy", f"logits {lv.shape} vs {labels.shape[0]} labels")
        m = lv.max(axis=1, keepdims=True)
        logz = m[:, 0] + np.log(np.exp(lv - m).sum(axis=1))
        rows = np.arange(lv.shape[0])
        n = float(lv.shape[0])
        out = np.array([np.sum(logz - lv[rows, labels]) / n])

        def vjp(g):
            p = np.exp(lv - logz[:, None])
            p[rows, labels] -= 1.0
            return (g * p / n,)

        return self._push("softmax_cross_entropy", (logits,), out, vjp)

    # -- backward ---------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` for every bound parameter.

        Parameters the loss does not depend on get zero arrays.
        """
        if loss.graph is not self:
            raise ValidationError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ValidationError(f"loss must be scalar, node {loss.id} has shape {loss.shape}")
        if not np.all(np.isfinite(loss.value)):
            raise NumericalError(f"loss node {loss.id} is not finite")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        leaf: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.vjp is None:
                if node.op == "param":
                    leaf[node.id] = g
                continue
            for inp, ig in zip(node.inputs, node.vjp(g)):
                if ig is None or not inp.requires_grad:
                    continue
                prev = grads.get(inp.id)
                grads[inp.id] = ig if prev is None else prev + ig
        out = {}
        for name, node in self.params.items():
            g = leaf.get(node.id)
            out[name] = np.zeros(node.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(node.shape)
        return out
