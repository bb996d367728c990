"""Observer constructions and coupled plant-observer simulation: full-order
metric-based observer, reduced-order observer in split coordinates, and the
EKF and Kleinman baselines."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    IntegrationFailure,
    RankDeficient,
    SingularGrammian,
    SingularPi,
)
from .integrate import fd_jacobian, solve_ode
from .riccati import grammian, pack_lower, unpack_lower
from .systems import SystemModel
from .tensor import MetricField, constant_metric, geodesic_shoot, pushforward_metric


@dataclass
class ObserverSpec:
    """Which observer to run and its parameters.

    ``metric_source`` backs the full-order correction and the Riemannian error
    readout. ``delta`` is the output mismatch function delta(y_a, y_b); the
    default is the squared Euclidean mismatch. ``coordinate_change`` maps the
    plant state to split coordinates (y, xi) for the reduced-order observer.
    """

    kind: str  # full_order | reduced_order | ekf | kleinman
    metric_source: MetricField | None = None
    gain_k: float = 1.0
    delta: Callable[[np.ndarray, np.ndarray], float] | None = None
    q_tensor: Callable[[np.ndarray], np.ndarray] | None = None
    horizon_T: float = 1.0
    split_dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    coordinate_change: Callable[[np.ndarray], np.ndarray] | None = None
    xi_metric: MetricField | None = None
    rho_bar_estimate: float | None = None
    delta2_lower_estimate: float | None = None

    def validate(self):
        kinds = ("full_order", "reduced_order", "ekf", "kleinman")
        if self.kind not in kinds:
            raise ConfigError(f"unknown observer kind {self.kind!r}; expected one of {kinds}")
        if self.kind == "full_order" and self.metric_source is None:
            raise ConfigError("full_order observer needs a metric_source")
        if self.kind == "reduced_order" and self.split_dynamics is None:
            raise ConfigError("reduced_order observer needs split_dynamics")


def _delta_gradient(spec: ObserverSpec, ya: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d delta / d y_a at (ya, y); 2(ya - y) for the default quadratic delta."""
    if spec.delta is None:
        return 2.0 * (ya - y)
    return fd_jacobian(lambda z: np.atleast_1d(spec.delta(z, y)), ya, out_dim=1)[0]


def full_order_rhs(spec: ObserverSpec, system: SystemModel, xhat, y) -> np.ndarray:
    """f(xhat) - k P(xhat)^{-1} dh(xhat)^T grad_delta, the metric-based
    correction pulling h(xhat) toward the measured y."""
    xhat = np.asarray(xhat, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ya = np.atleast_1d(np.asarray(system.h(xhat), dtype=float))
    dh = np.atleast_2d(np.asarray(system.dh(xhat), dtype=float))
    grad_delta = _delta_gradient(spec, ya, y)
    correction = spec.metric_source.solve(xhat, dh.T @ grad_delta)
    return np.asarray(system.f(xhat), dtype=float) - spec.gain_k * correction


@dataclass
class EisenhartChart:
    """Coordinate change phi = (y, xi) that block-diagonalizes the metric."""

    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    y_ref: float

    def xi(self, x) -> np.ndarray:
        return self.phi(np.asarray(x, dtype=float))[1:]


def eisenhart_coordinates(system: SystemModel, metric: MetricField, x0,
                          ode_tol: float = 1e-10) -> EisenhartChart:
    """Builds split coordinates for a scalar output that is itself the first
    state coordinate.

    xi(x) is the value at the reference output y_ref = h(x0) of the solution
    of d xi / dy = -P_xixi^{-1} P_xiy started from (h(x), x_rest); the metric
    cross-block vanishes in the new coordinates.
    """
    if system.output_dim != 1:
        raise ConfigError("eisenhart_coordinates requires a scalar output")
    x0 = np.asarray(x0, dtype=float)
    dh0 = np.atleast_2d(np.asarray(system.dh(x0), dtype=float))
    if np.allclose(dh0, 0.0):
        raise RankDeficient(f"dh vanishes at {x0}")
    y_ref = float(np.atleast_1d(system.h(x0))[0])

    def phi(x):
        x = np.asarray(x, dtype=float)
        y0 = x[0]
        xi0 = x[1:]
        if y0 == y_ref:
            return x.copy()

        def rhs(yv, xi):
            P = metric(np.concatenate([[yv], xi]))
            return -np.linalg.solve(P[1:, 1:], P[1:, 0])

        try:
            sol = solve_ode(rhs, (y0, y_ref), xi0, tol=ode_tol)
        except Exception as exc:
            raise IntegrationFailure(f"splitting ODE failed from {x}") from exc
        return np.concatenate([[y0], sol.at_end()])

    def dphi(x):
        return fd_jacobian(phi, np.asarray(x, dtype=float))

    return EisenhartChart(phi=phi, dphi=dphi, y_ref=y_ref)


def split_metric(metric: MetricField, chart: EisenhartChart,
                 phi_inverse: Callable) -> MetricField:
    """Metric in the split coordinates (cross-block zero up to tolerance)."""
    return pushforward_metric(metric, chart.phi, chart.dphi, phi_inverse,
                              name="split")


def oscillator_split_dynamics(k: float, ell: float):
    """xi-dynamics of the oscillator in the split coordinates
    (x1, x2 - k x1, x3 + ell x1^2)."""

    def f_xi(y, xi):
        y = float(np.atleast_1d(y)[0])
        return np.array([
            -y * (xi[1] - ell * y**2) - k * (xi[0] + k * y),
            2.0 * ell * y * (xi[0] + k * y),
        ])

    return f_xi


def reduced_order_rhs(spec: ObserverSpec, y, xihat) -> np.ndarray:
    """xi-dynamics evaluated at the measured y; no correction term."""
    return np.asarray(spec.split_dynamics(y, np.asarray(xihat, dtype=float)),
                      dtype=float)


def ekf_rhs(system: SystemModel, q_tensor, xhat, Pi, y):
    """Returns (xhat_dot, Pi_dot) of the extended Kalman filter."""
    xhat = np.asarray(xhat, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    A = np.asarray(system.df(xhat), dtype=float)
    dh = np.atleast_2d(np.asarray(system.dh(xhat), dtype=float))
    innov = np.atleast_1d(np.asarray(system.h(xhat), dtype=float)) - y
    try:
        corr = np.linalg.solve(Pi, dh.T @ innov)
    except np.linalg.LinAlgError as exc:
        raise SingularPi(f"EKF Riccati state singular at {xhat}") from exc
    Q = np.asarray(q_tensor(xhat), dtype=float)
    xdot = np.asarray(system.f(xhat), dtype=float) - corr
    Pidot = -Pi @ A - A.T @ Pi + dh.T @ dh - Pi @ Q @ Pi
    return xdot, 0.5 * (Pidot + Pidot.T)


def kleinman_rhs(system: SystemModel, T: float, xhat, y,
                 ode_tol: float = 1e-8) -> np.ndarray:
    """f(xhat) - W(xhat)^{-1} dh^T (h(xhat) - y) with W the finite-horizon
    backward observability Grammian along the estimated trajectory."""
    xhat = np.asarray(xhat, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    W = grammian(system, xhat, T, lam=0.0, ode_tol=ode_tol)
    dh = np.atleast_2d(np.asarray(system.dh(xhat), dtype=float))
    innov = np.atleast_1d(np.asarray(system.h(xhat), dtype=float)) - y
    try:
        corr = np.linalg.solve(W, dh.T @ innov)
    except np.linalg.LinAlgError as exc:
        raise SingularGrammian(f"Grammian singular at {xhat} over T={T:g}") from exc
    return np.asarray(system.f(xhat), dtype=float) - corr


@dataclass
class SimulationTrace:
    """Time-indexed record of one coupled plant-observer run."""

    times: np.ndarray
    plant_states: np.ndarray
    observer_states: np.ndarray
    outputs: np.ndarray
    error_euclidean: np.ndarray
    error_riemannian: np.ndarray  # nan when not requested
    riemannian_converged: np.ndarray
    events: list = field(default_factory=list)

    def to_csv(self, path, header_comment: str | None = None):
        n = self.plant_states.shape[1]
        m = self.observer_states.shape[1]
        p = self.outputs.shape[1]
        cols = (["t"]
                + [f"x_{i + 1}" for i in range(n)]
                + [f"xhat_{i + 1}" for i in range(m)]
                + [f"y_{i + 1}" for i in range(p)]
                + ["err_euc", "err_riem", "riem_converged"])
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i, t in enumerate(self.times):
                row = ([repr(float(t))]
                       + [repr(float(v)) for v in self.plant_states[i]]
                       + [repr(float(v)) for v in self.observer_states[i]]
                       + [repr(float(v)) for v in self.outputs[i]]
                       + [repr(float(self.error_euclidean[i])),
                          repr(float(self.error_riemannian[i])),
                          str(int(self.riemannian_converged[i]))])
                writer.writerow(row)


def _observer_error_state(spec: ObserverSpec, x: np.ndarray) -> np.ndarray:
    """Plant state mapped into the observer's state space."""
    if spec.kind == "reduced_order":
        if spec.coordinate_change is not None:
            return np.asarray(spec.coordinate_change(x), dtype=float)[1:]
        raise ConfigError("reduced_order comparison needs coordinate_change")
    return x


def simulate(system: SystemModel, spec: ObserverSpec, x0, xhat0,
             t_end: float, sample_dt: float,
             with_riemannian_distance: bool = False,
             tol: float = 1e-8, fixed_dt: float | None = None) -> SimulationTrace:
    """Co-integrates plant and observer and samples every sample_dt.

    Numerical failures become trace events, not exceptions; partial traces
    are valid outputs. Riemannian error uses the full-order metric_source (or
    xi_metric for the reduced observer) via geodesic shooting with velocity
    warm starts.
    """
    spec.validate()
    x0 = np.asarray(x0, dtype=float)
    xhat0 = np.asarray(xhat0, dtype=float)
    system.require_domain(x0)
    events = []

    if spec.delta is not None:
        y0 = np.atleast_1d(np.asarray(system.h(x0), dtype=float))
        if abs(float(spec.delta(y0, y0))) > 1e-12:
            raise ConfigError("delta(y, y) must vanish at coincidence")

    if (spec.rho_bar_estimate is not None and spec.delta2_lower_estimate is not None
            and spec.gain_k < spec.rho_bar_estimate / (2.0 * spec.delta2_lower_estimate)):
        events.append({
            "time": 0.0,
            "kind": "GainTooSmall",
            "detail": f"gain_k={spec.gain_k:g} below estimate "
                      f"{spec.rho_bar_estimate / (2.0 * spec.delta2_lower_estimate):g}",
        })

    n = system.state_dim

    if spec.kind == "ekf":
        if spec.q_tensor is None:
            raise ConfigError("ekf needs q_tensor")
        if spec.metric_source is not None:
            Pi0 = spec.metric_source(xhat0)
        else:
            Pi0 = np.eye(n)
        z0 = np.concatenate([x0, xhat0, pack_lower(Pi0)])

        def rhs(t, z):
            x = z[:n]
            xh = z[n : 2 * n]
            Pi = unpack_lower(z[2 * n :], n)
            y = np.atleast_1d(np.asarray(system.h(x), dtype=float))
            xdot, Pidot = ekf_rhs(system, spec.q_tensor, xh, Pi, y)
            return np.concatenate([np.asarray(system.f(x), dtype=float),
                                   xdot, pack_lower(Pidot)])

        obs_slice = slice(n, 2 * n)
    elif spec.kind == "reduced_order":
        m = len(xhat0)
        z0 = np.concatenate([x0, xhat0])

        def rhs(t, z):
            x = z[:n]
            y = np.atleast_1d(np.asarray(system.h(x), dtype=float))
            return np.concatenate([
                np.asarray(system.f(x), dtype=float),
                reduced_order_rhs(spec, y, z[n : n + m]),
            ])

        obs_slice = slice(n, n + m)
    else:
        z0 = np.concatenate([x0, xhat0])

        def rhs(t, z):
            x = z[:n]
            xh = z[n : 2 * n]
            y = np.atleast_1d(np.asarray(system.h(x), dtype=float))
            if spec.kind == "full_order":
                xhdot = full_order_rhs(spec, system, xh, y)
            else:
                xhdot = kleinman_rhs(system, spec.horizon_T, xh, y)
            return np.concatenate([np.asarray(system.f(x), dtype=float), xhdot])

        obs_slice = slice(n, 2 * n)

    t_eval = np.arange(0.0, t_end + 0.5 * sample_dt, sample_dt)
    try:
        sol = solve_ode(rhs, (0.0, float(t_end)), z0, tol=tol,
                        fixed_dt=fixed_dt, t_eval=t_eval)
        times, states = sol.times, sol.states
    except Exception as exc:
        events.append({"time": None, "kind": type(exc).__name__, "detail": str(exc)})
        times = np.array([0.0])
        states = z0[np.newaxis, :]

    keep = len(times)
    for i, z in enumerate(states):
        if not system.domain_predicate(z[:n]):
            events.append({"time": float(times[i]), "kind": "DomainExit",
                           "detail": "plant state left the domain"})
            keep = i
            break
    times = times[:keep]
    states = states[:keep]

    plant = states[:, :n]
    obs = states[:, obs_slice]
    outputs = np.array([np.atleast_1d(np.asarray(system.h(x), dtype=float))
                        for x in plant])
    err_euc = np.array([
        float(np.linalg.norm(obs[i] - _observer_error_state(spec, plant[i])))
        for i in range(len(times))
    ])

    err_riem = np.full(len(times), np.nan)
    riem_ok = np.zeros(len(times), dtype=bool)
    if with_riemannian_distance:
        metric = spec.xi_metric if spec.kind == "reduced_order" else spec.metric_source
        if metric is None:
            raise ConfigError("riemannian error requested without a metric")
        v_guess = None
        for i in range(len(times)):
            a = _observer_error_state(spec, plant[i])
            b = obs[i]
            if np.allclose(a, b, atol=1e-14):
                err_riem[i] = 0.0
                riem_ok[i] = True
                v_guess = None
                continue
            try:
                geo = geodesic_shoot(metric, a, b, tol=1e-6, n_steps=40,
                                     max_iter=25, v0_guess=v_guess)
                err_riem[i] = geo.length
                riem_ok[i] = geo.converged
                v_guess = geo.initial_velocity if geo.converged else None
            except Exception as exc:
                events.append({"time": float(times[i]), "kind": type(exc).__name__,
                               "detail": str(exc)})
                v_guess = None

    return SimulationTrace(
        times=times,
        plant_states=plant,
        observer_states=obs,
        outputs=outputs,
        error_euclidean=err_euc,
        error_riemannian=err_riem,
        riemannian_converged=riem_ok,
        events=events,
    )
