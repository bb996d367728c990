"""Euler-Lagrange dynamics from a configuration metric and the modified
Sasaki metric on the tangent bundle with weights (a, b, c)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import WeightsInvalid
from .systems import SystemModel
from .tensor import MetricField, christoffel, lie_derivative


@dataclass
class LagrangianSystem:
    """Mechanical system on a configuration space with metric g.

    ``gamma``, when given, overrides the numerically computed Christoffel
    symbols of g (shape (n, n, n), gamma[l, a, b]). ``source`` is an optional
    forcing term S(q) added to the velocity dynamics.
    """

    config_dim: int
    g: MetricField
    weights: tuple[float, float, float]
    source: Callable[[np.ndarray], np.ndarray] | None = None
    gamma: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __post_init__(self):
        a, b, c = self.weights
        if a <= 0 or b <= 0 or c * c >= a * b:
            raise WeightsInvalid(
                f"weights (a, b, c)=({a:g}, {b:g}, {c:g}) need a, b > 0 and c^2 < ab"
            )

    def christoffel_at(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.gamma is not None:
            return np.asarray(self.gamma(q), dtype=float)
        return christoffel(self.g, q)


def euler_lagrange_dynamics(lag: LagrangianSystem) -> SystemModel:
    """State (q, v) with qdot = v, vdot_l = -Gamma^l_ab v_a v_b + S_l(q);
    the measured output is q."""
    n = lag.config_dim

    def f(x):
        q, v = x[:n], x[n:]
        gam = lag.christoffel_at(q)
        acc = -np.einsum("lab,a,b->l", gam, v, v)
        if lag.source is not None:
            acc = acc + np.asarray(lag.source(q), dtype=float)
        return np.concatenate([v, acc])

    def h(x):
        return np.array(x[:n], dtype=float)

    def dh(x):
        return np.hstack([np.eye(n), np.zeros((n, n))])

    return SystemModel(
        state_dim=2 * n,
        output_dim=n,
        f=f,
        h=h,
        dh=dh,
        name=lag.name or "euler_lagrange",
    )


def sasaki_metric(lag: LagrangianSystem) -> MetricField:
    """Tangent-bundle metric from the quadratic form

        a eta^T g eta + b (omega + G eta)^T g (omega + G eta)
            - 2c eta^T g (omega + G eta)

    on displacements (eta, omega), where G[b, i] = Gamma^b_ai v_a."""
    n = lag.config_dim
    a, b, c = lag.weights

    def eval_p(x):
        q, v = x[:n], x[n:]
        g = lag.g(q)
        gam = lag.christoffel_at(q)
        G = np.einsum("bai,a->bi", gam, v)
        gG = g @ G
        P = np.empty((2 * n, 2 * n))
        P[:n, :n] = a * g + b * G.T @ gG - c * (gG + gG.T)
        P[:n, n:] = b * gG.T - c * g
        P[n:, :n] = P[:n, n:].T
        P[n:, n:] = b * g
        return P

    return MetricField(dim=2 * n, eval=eval_p, kind="sasaki",
                       name=lag.name or "sasaki")


def verify_tangential_identity(lag: LagrangianSystem, samples, tol: float = 1e-8) -> dict:
    """Checks that the velocity block of L_f P equals -2c g(q) at each sample.

    Tangent vectors (0, omega) are annihilated by dh, so this is the
    detectability quadratic form on the output kernel. Returns a report with
    the max entrywise deviation.
    """
    n = lag.config_dim
    _, _, c = lag.weights
    system = euler_lagrange_dynamics(lag)
    P = sasaki_metric(lag)
    max_dev = 0.0
    worst = None
    for x in np.atleast_2d(np.asarray(samples, dtype=float)):
        L = lie_derivative(P, x, system.f, system.df)
        target = -2.0 * c * lag.g(x[:n])
        dev = float(np.max(np.abs(L[n:, n:] - target)))
        if dev > max_dev:
            max_dev = dev
            worst = x.copy()
    return {
        "max_deviation": max_dev,
        "tolerance": tol,
        "passed": bool(max_dev <= tol),
        "worst_sample": None if worst is None else worst.tolist(),
        "sample_count": int(np.atleast_2d(np.asarray(samples)).shape[0]),
    }


def exp_metric_toy(a: float = 1.0, b: float = 1.0, c: float = 0.5) -> LagrangianSystem:
    """One-degree-of-freedom system with configuration metric exp(-2q).

    Its Christoffel symbol is the constant -1, so the free dynamics are
    qdot = v, vdot = v^2.
    """

    def g_eval(q):
        return np.array([[np.exp(-2.0 * q[0])]])

    def g_partials(q):
        return np.array([[[-2.0 * np.exp(-2.0 * q[0])]]])

    g = MetricField(dim=1, eval=g_eval, analytic_partials=g_partials,
                    name="exp(-2q)")
    return LagrangianSystem(
        config_dim=1,
        g=g,
        weights=(a, b, c),
        gamma=lambda q: np.full((1, 1, 1), -1.0),
        name="exp_metric_toy",
    )


BUNDLED_LAGRANGIANS = {
    "exp_metric_toy": exp_metric_toy,
}
