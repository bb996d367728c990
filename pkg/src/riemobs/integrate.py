"""ODE integration helpers: adaptive RK45 and a deterministic fixed-step RK4.

The adaptive path wraps ``scipy.integrate.solve_ivp``; the fixed-step path is a
hand-rolled classic RK4 so that reruns with identical configuration are
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import StepFailure

# Central-difference step, cbrt(eps) scaled per component.
FD_STEP = float(np.cbrt(np.finfo(float).eps))


def fd_jacobian(func: Callable, x: np.ndarray, out_dim: int | None = None) -> np.ndarray:
    """Central finite-difference Jacobian of ``func`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(func(x), dtype=float))
    m = len(f0) if out_dim is None else out_dim
    jac = np.empty((m, len(x)))
    for i in range(len(x)):
        step = FD_STEP * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fp = np.atleast_1d(np.asarray(func(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(func(xm), dtype=float))
        jac[:, i] = (fp - fm) / (2.0 * step)
    return jac


@dataclass
class OdeSolution:
    """Dense record of one ODE solve."""

    times: np.ndarray
    states: np.ndarray  # shape (len(times), dim)
    metadata: dict = field(default_factory=dict)

    def at_end(self) -> np.ndarray:
        return self.states[-1]


def solve_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t_span: tuple[float, float],
    z0: np.ndarray,
    tol: float = 1e-8,
    fixed_dt: float | None = None,
    t_eval: np.ndarray | None = None,
    max_step: float = np.inf,
) -> OdeSolution:
    """Integrate ``rhs`` over ``t_span`` (backward spans allowed).

    ``fixed_dt`` switches to the deterministic fixed-step RK4; otherwise an
    adaptive RK45 with relative/absolute tolerance ``tol`` is used.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    z0 = np.asarray(z0, dtype=float)
    if t0 == t1:
        times = np.array([t0])
        return OdeSolution(times, z0[np.newaxis, :].copy(), {"method": "trivial"})

    if fixed_dt is not None:
        return _rk4_fixed(rhs, t0, t1, z0, fixed_dt, t_eval)

    sol = solve_ivp(
        rhs,
        (t0, t1),
        z0,
        method="RK45",
        rtol=tol,
        atol=tol,
        t_eval=t_eval,
        max_step=max_step,
        dense_output=False,
    )
    if not sol.success:
        raise StepFailure(f"adaptive integrator failed: {sol.message}")
    return OdeSolution(sol.t, sol.y.T, {"method": "rk45", "tol": tol, "nfev": sol.nfev})


def _rk4_fixed(rhs, t0, t1, z0, dt, t_eval):
    span = t1 - t0
    n_steps = max(1, int(np.ceil(abs(span) / dt)))
    h = span / n_steps
    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, len(z0)))
    times[0] = t0
    states[0] = z0
    z = z0.copy()
    t = t0
    for i in range(n_steps):
        k1 = np.asarray(rhs(t, z))
        k2 = np.asarray(rhs(t + 0.5 * h, z + 0.5 * h * k1))
        k3 = np.asarray(rhs(t + 0.5 * h, z + 0.5 * h * k2))
        k4 = np.asarray(rhs(t + h, z + h * k3))
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (i + 1) * span / n_steps
        times[i + 1] = t
        states[i + 1] = z
    meta = {"method": "rk4_fixed", "dt": abs(h), "n_steps": n_steps}
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        interp = np.empty((len(t_eval), len(z0)))
        for j in range(len(z0)):
            # np.interp needs increasing abscissae
            if span > 0:
                interp[:, j] = np.interp(t_eval, times, states[:, j])
            else:
                interp[:, j] = np.interp(t_eval[::-1], times[::-1], states[::-1, j])[::-1]
        return OdeSolution(t_eval, interp, meta)
    return OdeSolution(times, states, meta)
