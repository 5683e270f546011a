"""Finite-difference verification of tape gradients.

The loss under test is given as a builder ``loss_fn(graph, params) -> Node``
so it can be re-evaluated at perturbed parameter values on fresh graphs.

Gradient reversal needs care: a reversal is the identity in the forward
pass, so a plain finite difference sees the un-reversed derivative. When a
graph contains reversals the oracle additionally evaluates the loss with
every reversal output frozen at its unperturbed value, which isolates the
derivative ``D`` along paths that avoid reversals. With ``F`` the plain
finite difference, the reversed-path derivative is ``F - D`` and the
expected analytic gradient is ``D - (F - D) = 2D - F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Graph, Node, NumericalError, ValidationError

LossFn = Callable[[Graph, dict[str, np.ndarray]], Node]


@dataclass
class GradReport:
    eps: float
    errors: dict[str, float] = field(default_factory=dict)
    abs_errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol

    def worst(self) -> tuple[str, float]:
        if not self.errors:
            return "", 0.0
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def _scalar(node: Node) -> float:
    if node.value.size != 1:
        raise ValidationError(f"loss must be scalar, got shape {node.shape}")
    return float(node.value.reshape(-1)[0])


def _rel(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(
    loss_fn: LossFn,
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    directions: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradReport:
    """Compare analytic gradients against central finite differences.

    With ``directions=None`` every scalar entry of every parameter is
    perturbed. Otherwise each parameter is checked along ``directions``
    random unit directions (seeded), comparing ``grad . v`` against the
    directional difference quotient; this keeps the cost linear in the
    number of parameter tensors rather than their size.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValidationError(f"eps must lie in (0, 1e-2], got {eps}")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    g = Graph()
    loss = loss_fn(g, params)
    _scalar(loss)
    analytic = g.backward(loss)
    frozen = list(g.grl_values)

    def evaluate(p: dict[str, np.ndarray]) -> tuple[float, float]:
        full = _scalar(loss_fn(Graph(), p))
        if not frozen:
            return full, full
        direct = _scalar(loss_fn(Graph(grl_mode="freeze", frozen_grl=frozen), p))
        return full, direct

    def expected(plus: tuple[float, float], minus: tuple[float, float]) -> float:
        d_full = (plus[0] - minus[0]) / (2 * eps)
        if not frozen:
            return d_full
        d_direct = (plus[1] - minus[1]) / (2 * eps)
        return 2.0 * d_direct - d_full

    rng = np.random.default_rng(seed)
    report = GradReport(eps=eps)
    for name, value in params.items():
        if name not in analytic:
            continue
        grad = analytic[name]
        if directions is None:
            basis = (np.eye(value.size)[i].reshape(value.shape) for i in range(value.size))
        else:
            vs = []
            for _ in range(directions):
                v = rng.standard_normal(value.shape)
                vs.append(v / np.linalg.norm(v))
            basis = iter(vs)
        worst_rel, worst_abs = 0.0, 0.0
        for v in basis:
            p_plus = dict(params)
            p_minus = dict(params)
            p_plus[name] = value + eps * v
            p_minus[name] = value - eps * v
            num = expected(evaluate(p_plus), evaluate(p_minus))
            ana = float(np.sum(grad * v))
            if not np.isfinite(num):
                raise NumericalError(f"finite difference for {name!r} is not finite")
            worst_rel = max(worst_rel, _rel(ana, num, floor))
            worst_abs = max(worst_abs, abs(ana - num))
        report.errors[name] = worst_rel
        report.abs_errors[name] = worst_abs
    return report


def jitter_biases(params: dict[str, np.ndarray], rng: np.random.Generator, scale: float = 0.1) -> dict[str, np.ndarray]:
    """Copy of ``params`` with every bias vector drawn from ``N(0, scale^2)``.

    Freshly initialised networks have all-zero biases, so with narrow layers
    a whole ReLU layer can be inactive and the next pre-activation sits
    exactly on the kink, where a central difference averages the two
    one-sided slopes. Random biases move the check point off that set.
    """
    return {k: (rng.normal(0.0, scale, v.shape) if k.endswith("/b") else v) for k, v in params.items()}
