"""Dynamical-system abstraction and the bundled worked examples.

Bundled models: a harmonic oscillator with unknown frequency (state
(x1, x2, x3), frequency sqrt(x3)) and a one-degree-of-freedom toy whose
configuration metric is exp(-2q).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, DomainExit
from .integrate import OdeSolution, fd_jacobian, solve_ode
from .tensor import MetricField


@dataclass(frozen=True)
class SystemModel:
    """Autonomous system xdot = f(x), y = h(x) with Jacobian callbacks.

    ``lie_outputs[k]`` is a pair (L_f^k h, its Jacobian); entry 0 is h itself.
    Models are immutable; all evaluation is pure.
    """

    state_dim: int
    output_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray] = None
    dh: Callable[[np.ndarray], np.ndarray] = None
    domain_predicate: Callable[[np.ndarray], bool] = lambda x: True
    lie_outputs: Sequence[tuple[Callable, Callable]] = ()
    name: str = ""

    def __post_init__(self):
        if self.df is None:
            object.__setattr__(self, "df", lambda x: fd_jacobian(self.f, x, self.state_dim))
        if self.dh is None:
            object.__setattr__(
                self,
                "dh",
                lambda x: fd_jacobian(
                    lambda z: np.atleast_1d(self.h(z)), x, self.output_dim
                ),
            )

    def require_domain(self, x):
        if not self.domain_predicate(np.asarray(x, dtype=float)):
            raise DomainError(f"point {x} outside domain of {self.name or 'system'}")


@dataclass
class TrajectorySegment:
    """Sampled solution t -> X(x, t); time grid may run backward."""

    base_point: np.ndarray
    time_grid: np.ndarray
    states: np.ndarray
    integrator_metadata: dict = field(default_factory=dict)

    def state_at_end(self) -> np.ndarray:
        return self.states[-1]


def integrate(
    system: SystemModel,
    x0,
    t_span,
    tol: float = 1e-8,
    fixed_dt: float | None = None,
    t_eval=None,
) -> TrajectorySegment:
    """Integrate the plant over ``t_span`` (backward spans allowed).

    Raises DomainExit (carrying the partial segment) as soon as a sampled
    state violates the domain predicate; exits are reported, never clamped.
    """
    x0 = np.asarray(x0, dtype=float)
    system.require_domain(x0)
    sol = solve_ode(lambda t, x: np.asarray(system.f(x), dtype=float), t_span, x0,
                    tol=tol, fixed_dt=fixed_dt, t_eval=t_eval)
    for i, x in enumerate(sol.states):
        if not system.domain_predicate(x):
            seg = TrajectorySegment(x0, sol.times[:i], sol.states[:i], sol.metadata)
            raise DomainExit(
                f"trajectory left domain at t={sol.times[i]:.6g}",
                segment=seg,
                exit_time=float(sol.times[i]),
            )
    return TrajectorySegment(x0, sol.times, sol.states, sol.metadata)


def system_flow(system: SystemModel, tol: float = 1e-10):
    """Returns (x, t) -> X(x, t) backed by the adaptive integrator."""

    def flow(x, t):
        if t == 0:
            return np.asarray(x, dtype=float)
        return integrate(system, x, (0.0, t), tol=tol).state_at_end()

    return flow


# ---------------------------------------------------------------------------
# Harmonic oscillator with unknown frequency
# ---------------------------------------------------------------------------

def harmonic_oscillator() -> SystemModel:
    """n=3 oscillator: f = (x2, -x3 x1, 0), y = x1, valid for x3 > 0."""

    def f(x):
        return np.array([x[1], -x[2] * x[0], 0.0])

    def df(x):
        return np.array([[0.0, 1.0, 0.0], [-x[2], 0.0, -x[0]], [0.0, 0.0, 0.0]])

    def h(x):
        return np.array([x[0]])

    def dh(x):
        return np.array([[1.0, 0.0, 0.0]])

    lie_outputs = (
        (lambda x: x[0], lambda x: np.array([1.0, 0.0, 0.0])),
        (lambda x: x[1], lambda x: np.array([0.0, 1.0, 0.0])),
        (lambda x: -x[2] * x[0], lambda x: np.array([-x[2], 0.0, -x[0]])),
        (lambda x: -x[2] * x[1], lambda x: np.array([0.0, -x[2], -x[1]])),
        (lambda x: x[2] ** 2 * x[0], lambda x: np.array([x[2] ** 2, 0.0, 2.0 * x[2] * x[0]])),
    )
    return SystemModel(
        state_dim=3,
        output_dim=1,
        f=f,
        h=h,
        df=df,
        dh=dh,
        domain_predicate=lambda x: x[2] > 0.0,
        lie_outputs=lie_outputs,
        name="harmonic_oscillator",
    )


def oscillator_closed_flow(x, t):
    """Closed-form oscillator solution; frequency sqrt(x3) is invariant."""
    x = np.asarray(x, dtype=float)
    w = np.sqrt(x[2])
    c, s = np.cos(w * t), np.sin(w * t)
    return np.array([x[0] * c + x[1] / w * s, -x[0] * w * s + x[1] * c, x[2]])


def oscillator_analytic_metric(lam: float) -> MetricField:
    """Closed-form metric solving the lambda-damped Lie-derivative relation.

    Valid for x3 > 0; raises DomainError elsewhere.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")

    def eval_p(x):
        x1, x2, x3 = x
        if x3 <= 0:
            raise DomainError(f"x3 must be positive, got {x3}")
        den = lam**2 + 4.0 * x3
        p11 = (lam**2 + 2.0 * x3) / (lam * den)
        p12 = -1.0 / den
        p22 = 2.0 / (lam * den)
        p13 = (-(lam**3) * x1 + (lam**2 - 4.0 * x3) * x2) / (lam**2 * den**2)
        p23 = ((3.0 * lam**2 + 4.0 * x3) * x1 - 4.0 * lam * x2) / (lam**2 * den**2)
        p33 = (
            (6.0 * lam**4 + 12.0 * lam**2 * x3 + 16.0 * x3**2) / (lam**3 * den**3) * x1**2
            - 4.0 * (5.0 * lam**2 + 4.0 * x3) / (lam**2 * den**3) * x1 * x2
            + 4.0 * (5.0 * lam**2 + 4.0 * x3) / (lam**3 * den**3) * x2**2
        )
        return np.array([[p11, p12, p13], [p12, p22, p23], [p13, p23, p33]])

    return MetricField(dim=3, eval=eval_p, kind="closed_form", name=f"oscillator_analytic(lam={lam:g})")


def oscillator_weak_metric(k: float, ell: float) -> MetricField:
    """Weak-detectability candidate metric with parameters k, ell."""
    if k <= 0 or ell <= 0:
        raise ValueError("k and ell must be positive")

    def eval_p(x):
        x1 = x[0]
        return np.array(
            [
                [1.0 + 2.0 * ell * k**2 + 4.0 * ell**2 * x1**2, -2.0 * ell * k, 2.0 * ell * x1],
                [-2.0 * ell * k, 2.0 * ell, 0.0],
                [2.0 * ell * x1, 0.0, 1.0],
            ]
        )

    def partials(x):
        x1 = x[0]
        dP = np.zeros((3, 3, 3))
        dP[0] = np.array(
            [
                [8.0 * ell**2 * x1, 0.0, 2.0 * ell],
                [0.0, 0.0, 0.0],
                [2.0 * ell, 0.0, 0.0],
            ]
        )
        return dP

    return MetricField(
        dim=3,
        eval=eval_p,
        kind="closed_form",
        analytic_partials=partials,
        name=f"oscillator_weak(k={k:g},ell={ell:g})",
    )


# ---------------------------------------------------------------------------
# Lagrangian toy with configuration metric exp(-2q)
# ---------------------------------------------------------------------------

def lagrangian_toy() -> SystemModel:
    """n=2 system qdot = v, vdot = v^2 with measured position."""

    def f(x):
        return np.array([x[1], x[1] ** 2])

    def df(x):
        return np.array([[0.0, 1.0], [0.0, 2.0 * x[1]]])

    def h(x):
        return np.array([x[0]])

    def dh(x):
        return np.array([[1.0, 0.0]])

    return SystemModel(
        state_dim=2,
        output_dim=1,
        f=f,
        h=h,
        df=df,
        dh=dh,
        name="lagrangian_toy",
    )


BUNDLED_MODELS = {
    "harmonic_oscillator": harmonic_oscillator,
    "lagrangian_toy": lagrangian_toy,
}


def get_model(name: str) -> SystemModel:
    try:
        return BUNDLED_MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {sorted(BUNDLED_MODELS)}")
