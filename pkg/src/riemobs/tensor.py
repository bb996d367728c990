"""Riemannian machinery: metric fields, Lie derivatives of covariant 2-tensors,
Christoffel symbols, gradients/Hessians, geodesic shooting and distance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ShootingDiverged, SingularJacobian, SingularMetric
from .integrate import FD_STEP, OdeSolution, fd_jacobian, solve_ode


@dataclass
class MetricField:
    """Symmetric covariant 2-tensor field x -> P(x).

    ``analytic_partials``, when given, maps x to an array of shape (n, n, n)
    whose [i] entry is dP/dx_i; otherwise partials fall back to central finite
    differences.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    kind: str = "closed_form"  # closed_form | grid_backed | immersion_induced | sasaki
    analytic_partials: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __call__(self, x) -> np.ndarray:
        P = np.asarray(self.eval(np.asarray(x, dtype=float)), dtype=float)
        return 0.5 * (P + P.T)

    def partials(self, x) -> np.ndarray:
        """dP/dx_i stacked along axis 0, each slice symmetrized."""
        x = np.asarray(x, dtype=float)
        if self.analytic_partials is not None:
            dP = np.asarray(self.analytic_partials(x), dtype=float)
            return 0.5 * (dP + np.transpose(dP, (0, 2, 1)))
        n = self.dim
        dP = np.empty((n, n, n))
        for i in range(n):
            step = FD_STEP * (1.0 + abs(x[i]))
            xp = x.copy()
            xm = x.copy()
            xp[i] += step
            xm[i] -= step
            dP[i] = (self(xp) - self(xm)) / (2.0 * step)
        return dP

    def is_positive_definite(self, x) -> bool:
        try:
            np.linalg.cholesky(self(x))
            return True
        except np.linalg.LinAlgError:
            return False

    def solve(self, x, b) -> np.ndarray:
        """P(x)^{-1} b via Cholesky; raises SingularMetric when not SPD."""
        P = self(x)
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise SingularMetric(f"metric not positive definite at {x}") from exc
        w = np.linalg.solve(L, np.asarray(b, dtype=float))
        return np.linalg.solve(L.T, w)


def constant_metric(P: np.ndarray, name: str = "") -> MetricField:
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    zeros = np.zeros((n, n, n))
    return MetricField(
        dim=n,
        eval=lambda x: P,
        kind="closed_form",
        analytic_partials=lambda x: zeros,
        name=name or "constant",
    )


@dataclass
class GeodesicResult:
    """Shot geodesic between two points."""

    path: OdeSolution  # phase-space (position, velocity) trajectory over s in [0,1]
    length: float
    converged: bool
    shooting_residual: float
    initial_velocity: np.ndarray = field(default=None)


def lie_derivative(metric: MetricField, x, f: Callable, df: Callable | None = None) -> np.ndarray:
    """L_f P(x) = sum_i dP/dx_i f_i + P df + df^T P, symmetric by construction."""
    x = np.asarray(x, dtype=float)
    fx = np.asarray(f(x), dtype=float)
    A = np.asarray(df(x), dtype=float) if df is not None else fd_jacobian(f, x)
    dP = metric.partials(x)
    P = metric(x)
    out = np.tensordot(fx, dP, axes=(0, 0)) + P @ A + A.T @ P
    return 0.5 * (out + out.T)


def lie_derivative_flow_check(
    metric: MetricField,
    x,
    v,
    f: Callable,
    df: Callable,
    flow: Callable[[np.ndarray, float], np.ndarray],
    t_step: float,
) -> float:
    """Finite-difference quotient of the transported quadratic form.

    Independent oracle for ``lie_derivative``: transports v by (I + t df) and
    evaluates P along the flow.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    A = np.asarray(df(x), dtype=float)
    vt = (np.eye(len(x)) + t_step * A) @ v
    xt = flow(x, t_step)
    return (vt @ metric(xt) @ vt - v @ metric(x) @ v) / t_step


def richardson_flow_limit(metric, x, v, f, df, flow, steps=(1e-2, 5e-3, 2.5e-3)) -> float:
    """Richardson-extrapolated limit of the flow quotient (first order in t)."""
    quotients = [lie_derivative_flow_check(metric, x, v, f, df, flow, t) for t in steps]
    # Richardson table for halving steps: pass k removes the O(t^k) term.
    q = list(quotients)
    for k in range(1, len(quotients)):
        fac = 2.0 ** k
        q = [(fac * q[i + 1] - q[i]) / (fac - 1.0) for i in range(len(q) - 1)]
    return q[0]


def christoffel(metric: MetricField, x) -> np.ndarray:
    """Gamma[l, i, j] = 1/2 sum_k (P^-1)_{kl} [dP_ik/dx_j + dP_jk/dx_i - dP_ij/dx_k]."""
    x = np.asarray(x, dtype=float)
    P = metric(x)
    dP = metric.partials(x)  # dP[k] = dP/dx_k
    try:
        Pinv = np.linalg.inv(P)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric(f"metric singular at {x}") from exc
    # bracket[k, i, j] = dP_ik/dx_j + dP_jk/dx_i - dP_ij/dx_k
    bracket = np.transpose(dP, (2, 0, 1)) + np.transpose(dP, (2, 1, 0)) - dP
    gamma = 0.5 * np.einsum("kl,kij->lij", Pinv, bracket)
    return 0.5 * (gamma + np.transpose(gamma, (0, 2, 1)))


def riemannian_gradient(metric: MetricField, dh_row, x) -> np.ndarray:
    """Solves P(x) g = dh_row^T."""
    return metric.solve(x, np.asarray(dh_row, dtype=float).reshape(-1))


def riemannian_hessian(
    metric: MetricField,
    x,
    grad_h: Callable[[np.ndarray], np.ndarray],
    hess_h: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """[Hess]_ij = d2h/dx_i dx_j - sum_l Gamma^l_ij dh/dx_l for a scalar h."""
    x = np.asarray(x, dtype=float)
    H = np.asarray(hess_h(x), dtype=float) if hess_h is not None else fd_jacobian(grad_h, x)
    H = 0.5 * (H + H.T)
    gamma = christoffel(metric, x)
    dh = np.asarray(grad_h(x), dtype=float)
    out = H - np.tensordot(dh, gamma, axes=(0, 0))
    return 0.5 * (out + out.T)


def _geodesic_rhs(metric: MetricField, n: int):
    def rhs(s, z):
        pos, vel = z[:n], z[n:]
        gamma = christoffel(metric, pos)
        acc = -np.einsum("lij,i,j->l", gamma, vel, vel)
        return np.concatenate([vel, acc])

    return rhs


def _integrate_geodesic(metric, x_a, v0, n_steps):
    n = len(x_a)
    z0 = np.concatenate([x_a, v0])
    return solve_ode(_geodesic_rhs(metric, n), (0.0, 1.0), z0, fixed_dt=1.0 / n_steps)


def path_length(metric: MetricField, sol: OdeSolution, n: int) -> float:
    """Composite-trapezoid integral of sqrt(v^T P(x) v) along a phase-space path."""
    speeds = np.empty(len(sol.times))
    for i, z in enumerate(sol.states):
        pos, vel = z[:n], z[n:]
        speeds[i] = np.sqrt(max(vel @ metric(pos) @ vel, 0.0))
    return float(np.trapezoid(speeds, sol.times))


def geodesic_shoot(
    metric: MetricField,
    x_a,
    x_b,
    tol: float = 1e-8,
    max_iter: int = 50,
    n_steps: int = 50,
    v0_guess: np.ndarray | None = None,
) -> GeodesicResult:
    """Single shooting with chord initialization and Newton iterations.

    Integrates the geodesic ODE over s in [0,1] with a fixed-step RK4 and
    Newton-corrects the initial velocity on the endpoint mismatch. Returns a
    best-effort result with converged=False when shooting stalls.
    """
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    n = len(x_a)
    scale = 1.0 + np.linalg.norm(x_b - x_a)
    v = np.array(v0_guess, dtype=float) if v0_guess is not None else (x_b - x_a)

    def endpoint(vel):
        return _integrate_geodesic(metric, x_a, vel, n_steps).states[-1][:n]

    best = None
    sol = _integrate_geodesic(metric, x_a, v, n_steps)
    res = np.linalg.norm(sol.states[-1][:n] - x_b)
    best = (v.copy(), sol, res)
    for _ in range(max_iter):
        if res <= tol * scale:
            break
        miss = sol.states[-1][:n] - x_b
        jac = fd_jacobian(endpoint, v, out_dim=n)
        try:
            dv = np.linalg.solve(jac, miss)
        except np.linalg.LinAlgError:
            break
        step = 1.0
        improved = False
        for _ in range(8):
            v_try = v - step * dv
            sol_try = _integrate_geodesic(metric, x_a, v_try, n_steps)
            res_try = np.linalg.norm(sol_try.states[-1][:n] - x_b)
            if res_try < res:
                v, sol, res = v_try, sol_try, res_try
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        if res < best[2]:
            best = (v.copy(), sol, res)
    v, sol, res = best if res > best[2] else (v, sol, res)
    converged = bool(res <= tol * scale)
    length = path_length(metric, sol, n)
    return GeodesicResult(
        path=sol,
        length=length,
        converged=converged,
        shooting_residual=float(res),
        initial_velocity=v,
    )


def geodesic_distance(metric, x_a, x_b, tol=1e-8, **kw) -> tuple[float, bool]:
    g = geodesic_shoot(metric, x_a, x_b, tol=tol, **kw)
    return g.length, g.converged


def pushforward_metric(
    metric: MetricField,
    phi: Callable,
    dphi: Callable,
    phi_inverse: Callable,
    name: str = "",
) -> MetricField:
    """Metric in phi-coordinates: P~(z) = J^{-T} P(x) J^{-1} with x = phi^{-1}(z)."""

    def eval_new(z):
        x = np.asarray(phi_inverse(z), dtype=float)
        J = np.asarray(dphi(x), dtype=float)
        try:
            Jinv = np.linalg.inv(J)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"coordinate-change Jacobian singular at {x}") from exc
        return Jinv.T @ metric(x) @ Jinv

    return MetricField(dim=metric.dim, eval=eval_new, kind=metric.kind, name=name or metric.name)
