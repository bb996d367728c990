"""Metric construction along backward trajectories: Riccati flow, lambda-linear
flow / weighted observability Grammian, the coupled linear (alpha, beta) pair,
and grid-backed storage with interpolation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import (
    BlowUp,
    GridOutOfRange,
    NotConverged,
    OriginSingularity,
    SingularBeta,
    SingularGrammian,
)
from .integrate import solve_ode
from .systems import SystemModel, integrate
from .tensor import MetricField

_NORM_GUARD = 1e12


@dataclass
class RiccatiConfig:
    """Parameters for the backward-trajectory metric computation.

    variant: riccati_Q | lambda_linear | radon | grammian_finite_T.
    horizon_T: a positive float, or "adaptive" for doubling until the result
    stabilizes to adaptive_tol (relative).
    """

    variant: str = "lambda_linear"
    lam: float = 8.0
    q_tensor: Callable[[np.ndarray], np.ndarray] | None = None
    horizon_T: float | str = "adaptive"
    adaptive_tol: float = 1e-6
    p_lower_init: float = 1e-3
    ode_tol: float = 1e-9
    fixed_dt: float | None = None
    t_cap: float | None = None

    def validate(self):
        known = ("riccati_Q", "lambda_linear", "radon", "grammian_finite_T")
        if self.variant not in known:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {known}")
        if self.variant in ("lambda_linear", "grammian_finite_T") and self.lam <= 0:
            raise ValueError("lambda must be positive for this variant")
        if self.variant in ("riccati_Q", "radon") and self.q_tensor is None:
            raise ValueError(f"variant {self.variant} needs q_tensor")

    def horizon_cap(self) -> float:
        if self.t_cap is not None:
            return self.t_cap
        if self.variant in ("lambda_linear", "grammian_finite_T"):
            return 200.0 / self.lam
        return 200.0


def _sym(M):
    return 0.5 * (M + M.T)


def _pi_rhs(system: SystemModel, config: RiccatiConfig, variant: str):
    n = system.state_dim

    def rhs(t, z):
        x = z[:n]
        pi = z[n:].reshape(n, n)
        if np.linalg.norm(pi) > _NORM_GUARD:
            raise BlowUp("Riccati flow exceeded norm guard")
        A = np.asarray(system.df(x), dtype=float)
        C = np.atleast_2d(np.asarray(system.dh(x), dtype=float))
        dpi = -pi @ A - A.T @ pi + C.T @ C
        if variant == "riccati_Q":
            Q = np.asarray(config.q_tensor(x), dtype=float)
            dpi = dpi - pi @ Q @ pi
        else:
            dpi = dpi - config.lam * pi
        dx = np.asarray(system.f(x), dtype=float)
        return np.concatenate([dx, _sym(dpi).ravel()])

    return rhs


def _run_fixed_horizon(system, config, x, T, variant):
    n = system.state_dim
    back = integrate(system, x, (0.0, -T), tol=config.ode_tol, fixed_dt=config.fixed_dt)
    x_back = back.state_at_end()
    pi0 = config.p_lower_init * np.eye(n)
    z0 = np.concatenate([x_back, pi0.ravel()])
    sol = solve_ode(_pi_rhs(system, config, variant), (-T, 0.0), z0,
                    tol=config.ode_tol, fixed_dt=config.fixed_dt)
    end = sol.at_end()
    return _sym(end[n:].reshape(n, n))


def compute_metric_at(system: SystemModel, config: RiccatiConfig, x) -> np.ndarray:
    """Backward trajectory + forward matrix flow; returns Pi(0) at x.

    Adaptive horizons double T until the result moves by less than
    adaptive_tol relatively, up to the configured cap.
    """
    config.validate()
    x = np.asarray(x, dtype=float)
    system.require_domain(x)
    variant = "riccati_Q" if config.variant in ("riccati_Q", "radon") else "lambda_linear"
    if config.variant == "radon":
        return compute_metric_radon(system, config, x)
    if isinstance(config.horizon_T, (int, float)):
        return _run_fixed_horizon(system, config, x, float(config.horizon_T), variant)

    cap = config.horizon_cap()
    T = min(1.0, cap)
    prev = _run_fixed_horizon(system, config, x, T, variant)
    while True:
        T2 = 2.0 * T
        if T2 > cap * (1 + 1e-12):
            raise NotConverged(f"adaptive horizon exceeded cap {cap:g} at x={x}")
        cur = _run_fixed_horizon(system, config, x, T2, variant)
        if np.linalg.norm(cur - prev) <= config.adaptive_tol * np.linalg.norm(cur):
            return cur
        prev, T = cur, T2


def compute_metric_radon(system: SystemModel, config: RiccatiConfig, x) -> np.ndarray:
    """Integrates the coupled linear (alpha, beta) pair along the backward
    trajectory and returns alpha(0) beta(0)^{-1}."""
    config.validate()
    x = np.asarray(x, dtype=float)
    system.require_domain(x)
    n = system.state_dim
    if not isinstance(config.horizon_T, (int, float)):
        raise ValueError("radon variant requires a numeric horizon_T")
    T = float(config.horizon_T)
    if T == 0.0:
        return config.p_lower_init * np.eye(n)

    back = integrate(system, x, (0.0, -T), tol=config.ode_tol, fixed_dt=config.fixed_dt)
    x_back = back.state_at_end()

    def rhs(t, z):
        xs = z[:n]
        alpha = z[n : n + n * n].reshape(n, n)
        beta = z[n + n * n :].reshape(n, n)
        A = np.asarray(system.df(xs), dtype=float)
        C = np.atleast_2d(np.asarray(system.dh(xs), dtype=float))
        Q = np.asarray(config.q_tensor(xs), dtype=float)
        dalpha = -A.T @ alpha + C.T @ C @ beta
        dbeta = Q @ alpha + A @ beta
        return np.concatenate([np.asarray(system.f(xs), dtype=float), dalpha.ravel(), dbeta.ravel()])

    z0 = np.concatenate(
        [x_back, (config.p_lower_init * np.eye(n)).ravel(), np.eye(n).ravel()]
    )
    sol = solve_ode(rhs, (-T, 0.0), z0, tol=config.ode_tol, fixed_dt=config.fixed_dt)
    end = sol.at_end()
    alpha = end[n : n + n * n].reshape(n, n)
    beta = end[n + n * n :].reshape(n, n)
    if abs(np.linalg.det(beta)) < 1e-12 * max(1.0, np.linalg.norm(beta) ** n):
        raise SingularBeta(f"beta(0) not invertible at x={x}, T={T}")
    return _sym(alpha @ np.linalg.inv(beta))


def grammian(system: SystemModel, x, T: float, lam: float = 0.0,
             ode_tol: float = 1e-9, fixed_dt: float | None = None) -> np.ndarray:
    """Exponentially weighted backward observability Grammian.

    W = int_{-T}^0 e^{lam t} Phi(t,0)^T C(t)^T C(t) Phi(t,0) dt, computed by
    augmenting the transition-matrix ODE with the quadrature state and
    integrating from 0 down to -T.
    """
    x = np.asarray(x, dtype=float)
    system.require_domain(x)
    n = system.state_dim

    def rhs(t, z):
        xs = z[:n]
        M = z[n : n + n * n].reshape(n, n)
        A = np.asarray(system.df(xs), dtype=float)
        C = np.atleast_2d(np.asarray(system.dh(xs), dtype=float))
        dM = A @ M
        CM = C @ M
        dW = np.exp(lam * t) * (CM.T @ CM)
        return np.concatenate([np.asarray(system.f(xs), dtype=float), dM.ravel(), dW.ravel()])

    # Domain check along the backward trajectory.
    integrate(system, x, (0.0, -T), tol=ode_tol, fixed_dt=fixed_dt)
    z0 = np.concatenate([x, np.eye(n).ravel(), np.zeros(n * n)])
    sol = solve_ode(rhs, (0.0, -T), z0, tol=ode_tol, fixed_dt=fixed_dt)
    W = -sol.at_end()[n + n * n :].reshape(n, n)  # integral sign flips with direction
    return _sym(W)


def reconstructibility_margin(system: SystemModel, sample_points, tau: float,
                              ode_tol: float = 1e-9) -> float:
    """Smallest Grammian eigenvalue over the samples; positive means the
    linearized family is empirically reconstructible over [-tau, 0]."""
    margin = np.inf
    for x in sample_points:
        W = grammian(system, x, tau, lam=0.0, ode_tol=ode_tol)
        margin = min(margin, float(np.linalg.eigvalsh(W)[0]))
    return max(margin, 0.0) if margin != np.inf else 0.0


# ---------------------------------------------------------------------------
# Grid storage
# ---------------------------------------------------------------------------

def _tril_indices(n):
    return np.tril_indices(n)


def pack_lower(P: np.ndarray) -> np.ndarray:
    return P[np.tril_indices(P.shape[0])]

def unpack_lower(vals: np.ndarray, n: int) -> np.ndarray:
    P = np.zeros((n, n))
    P[np.tril_indices(n)] = vals
    return P + np.tril(P, -1).T


@dataclass
class MetricGrid:
    """Sampled metric over a rectangular grid.

    ``values`` has shape (count_0, ..., count_{k-1}, n*(n+1)//2), the last axis
    holding lower-triangular entries row-major.
    """

    axes: list  # list of (name, lo, hi, count)
    values: np.ndarray
    dim: int
    interpolation: str = "multilinear"  # or "nearest"
    provenance: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def axis_points(self):
        return [np.linspace(lo, hi, count) for (_, lo, hi, count) in self.axes]

    def interpolator(self):
        method = "linear" if self.interpolation == "multilinear" else "nearest"
        return RegularGridInterpolator(
            self.axis_points(), self.values, method=method, bounds_error=True
        )

    def lookup(self, coords) -> np.ndarray:
        try:
            vals = self.interpolator()(np.asarray(coords, dtype=float))[0]
        except ValueError as exc:
            raise GridOutOfRange(f"grid lookup {coords} outside axes") from exc
        return unpack_lower(vals, self.dim)

    # -- persistence: JSON header + flat decimal array; round-trip is
    #    byte-identical because json round-trips floats exactly via repr.
    def to_json(self) -> str:
        doc = {
            "header": {
                "axes": [list(a) for a in self.axes],
                "dim": self.dim,
                "interpolation": self.interpolation,
                "provenance": self.provenance,
                "failures": self.failures,
            },
            "values": [float(v) for v in self.values.ravel()],
        }
        return json.dumps(doc, indent=None, separators=(",", ":"))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_json(cls, text: str) -> "MetricGrid":
        doc = json.loads(text)
        hdr = doc["header"]
        axes = [(a[0], float(a[1]), float(a[2]), int(a[3])) for a in hdr["axes"]]
        counts = [a[3] for a in axes]
        dim = int(hdr["dim"])
        values = np.array(doc["values"], dtype=float).reshape(
            *counts, dim * (dim + 1) // 2
        )
        return cls(
            axes=axes,
            values=values,
            dim=dim,
            interpolation=hdr["interpolation"],
            provenance=hdr.get("provenance", {}),
            failures=hdr.get("failures", []),
        )

    @classmethod
    def load(cls, path) -> "MetricGrid":
        with open(path) as fh:
            return cls.from_json(fh.read())


def build_grid(
    system: SystemModel,
    config: RiccatiConfig,
    grid_spec: list,
    node_to_state: Callable[[tuple], np.ndarray] | None = None,
    node_lambda: Callable[[tuple], float] | None = None,
    interpolation: str = "multilinear",
    max_failure_fraction: float = 0.01,
) -> MetricGrid:
    """Evaluates compute_metric_at at every grid node.

    ``grid_spec`` is a list of (name, lo, hi, count). ``node_to_state`` maps a
    node coordinate tuple to a plant state (identity reshaping by default);
    ``node_lambda`` optionally overrides config.lam per node (used by the
    normalized oscillator grid where one axis is the scaled lambda).
    """
    axes = [(str(nm), float(lo), float(hi), int(ct)) for (nm, lo, hi, ct) in grid_spec]
    for _, lo, hi, ct in axes:
        if ct >= 2 and hi <= lo:
            raise ValueError("axis bounds must be increasing")
    points = [np.linspace(lo, hi, ct) for (_, lo, hi, ct) in axes]
    counts = [len(p) for p in points]
    n = system.state_dim
    tri = n * (n + 1) // 2
    values = np.zeros((*counts, tri))
    failures = []
    for idx in product(*(range(c) for c in counts)):
        node = tuple(points[k][idx[k]] for k in range(len(points)))
        state = np.asarray(node_to_state(node) if node_to_state else node, dtype=float)
        cfg = config
        if node_lambda is not None:
            cfg = replace(config, lam=float(node_lambda(node)))
        try:
            P = compute_metric_at(system, cfg, state)
            np.linalg.cholesky(P)
            values[idx] = pack_lower(P)
        except Exception as exc:  # noqa: BLE001 - per-node failures are data
            failures.append({"node": list(node), "reason": f"{type(exc).__name__}: {exc}"})
    if len(failures) > max_failure_fraction * int(np.prod(counts)):
        raise NotConverged(
            f"grid build failed at {len(failures)}/{int(np.prod(counts))} nodes"
        )
    prov = {
        "system": system.name,
        "variant": config.variant,
        "lambda": config.lam if config.variant in ("lambda_linear", "grammian_finite_T") else None,
        "horizon_T": config.horizon_T if isinstance(config.horizon_T, (int, float)) else "adaptive",
        "adaptive_tol": config.adaptive_tol,
        "p_lower_init": config.p_lower_init,
        "fixed_dt": config.fixed_dt,
    }
    return MetricGrid(
        axes=axes,
        values=values,
        dim=n,
        interpolation=interpolation,
        provenance=prov,
        failures=failures,
    )


# ---------------------------------------------------------------------------
# Oscillator (theta, omega) normalized grid
# ---------------------------------------------------------------------------

def oscillator_node_to_state(node):
    theta = node[0]
    return np.array([np.cos(theta), np.sin(theta), 1.0])


def oscillator_node_lambda(node):
    return float(node[1])


def build_oscillator_grid(system: SystemModel, config: RiccatiConfig,
                          m_theta: int, m_omega: int,
                          omega_range=(4.0, 7.0),
                          theta_range=(-np.pi, np.pi),
                          interpolation: str = "multilinear") -> MetricGrid:
    """Grid of the normalized metric over (theta, omega); theta spans a full
    circle, omega is lambda scaled by sqrt(x3)."""
    spec = [
        ("theta", theta_range[0], theta_range[1], m_theta),
        ("omega", omega_range[0], omega_range[1], m_omega),
    ]
    return build_grid(
        system,
        config,
        spec,
        node_to_state=oscillator_node_to_state,
        node_lambda=oscillator_node_lambda,
        interpolation=interpolation,
    )


def oscillator_scaling(x) -> np.ndarray:
    x1, x2, x3 = x
    r = np.sqrt(x3 * x1**2 + x2**2)
    if r == 0.0:
        raise OriginSingularity("scaled lookup undefined on the x1=x2=0 axis")
    q = x3**0.25
    return np.diag([q, np.sqrt(x3) * q, x3 * np.sqrt(x3) * q / r])


def oscillator_scaled_lookup(grid: MetricGrid, x, lam: float) -> np.ndarray:
    """Evaluates the oscillator metric anywhere from the normalized grid.

    Uses theta = atan2(x2, sqrt(x3) x1), omega = lam / sqrt(x3) and the
    scaling matrix sandwich M^{-1} P_normalized M^{-1}.
    """
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x
    if x3 <= 0:
        raise GridOutOfRange("x3 must be positive")
    M = oscillator_scaling(x)  # raises OriginSingularity at r=0
    theta = np.arctan2(x2, np.sqrt(x3) * x1)
    omega = lam / np.sqrt(x3)
    Pn = grid.lookup([theta, omega])
    Minv = np.diag(1.0 / np.diag(M))
    return _sym(Minv @ Pn @ Minv)


def grid_metric_field(grid: MetricGrid, lam: float) -> MetricField:
    """MetricField backed by the normalized oscillator grid."""
    return MetricField(
        dim=grid.dim,
        eval=lambda x: oscillator_scaled_lookup(grid, x, lam),
        kind="grid_backed",
        name=f"oscillator_grid(lam={lam:g})",
    )
