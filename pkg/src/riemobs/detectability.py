"""Numerical verification of differential-detectability certificates: kernel
sampling of the tangential quadratic form, (rho, q) rate estimation, and the
split-coordinate condition for reduced-order observers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyKernel, Infeasible
from .integrate import fd_jacobian
from .systems import SystemModel
from .tensor import MetricField, lie_derivative


@dataclass
class DetectabilityReport:
    """Outcome of sampling the tangential form v^T L_f P v on ker dh."""

    classification: str  # strong | weak | fails
    worst_tangential_value: float
    worst_ratio: float  # max of v^T L_f P v / v^T P v over kernel samples
    estimated_rho: float | None
    estimated_q: float | None
    sample_count: int
    bound_estimates: tuple[float, float]
    failures: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "classification": self.classification,
            "worst_tangential_value": self.worst_tangential_value,
            "worst_ratio": self.worst_ratio,
            "estimated_rho": self.estimated_rho,
            "estimated_q": self.estimated_q,
            "sample_count": self.sample_count,
            "bound_estimates": list(self.bound_estimates),
            "failures": self.failures,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def box_sampler(bounds):
    """Uniform sampler over a box given as a list of (lo, hi) pairs."""
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]

    def sample(rng, count):
        cols = [rng.uniform(lo, hi, count) for lo, hi in bounds]
        return np.column_stack(cols)

    return sample


def kernel_basis(dh_row: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ker dh(x) as columns, via full QR of dh^T."""
    dh = np.atleast_2d(np.asarray(dh_row, dtype=float))
    p, n = dh.shape
    if p >= n:
        raise EmptyKernel(f"output dimension {p} leaves no tangent kernel in R^{n}")
    q_mat, _ = np.linalg.qr(dh.T, mode="complete")
    return q_mat[:, p:]


def _tangent_directions(basis: np.ndarray, rng, n_random: int = 8):
    cols = [basis[:, j] for j in range(basis.shape[1])]
    dirs = cols + [-c for c in cols]
    for _ in range(n_random):
        w = rng.standard_normal(basis.shape[1])
        v = basis @ w
        dirs.append(v / np.linalg.norm(v))
    return dirs


def check_detectability(system: SystemModel, metric: MetricField,
                        region_sampler, n_samples: int,
                        seed: int = 0, margin: float = 1e-8) -> DetectabilityReport:
    """Samples x over the region and unit v over ker dh(x) and classifies the
    sign of v^T L_f P(x) v.

    strong: ratio to v^T P v below -margin everywhere; weak: value at most
    +margin everywhere; fails otherwise, with witnesses recorded. The check is
    falsification-complete only (sampling, not certification).
    """
    rng = np.random.default_rng(seed)
    points = np.atleast_2d(np.asarray(region_sampler(rng, n_samples), dtype=float))
    worst_value = -np.inf
    worst_ratio = -np.inf
    p_lo, p_hi = np.inf, 0.0
    failures = []
    count = 0
    for x in points:
        system.require_domain(x)
        P = metric(x)
        eig = np.linalg.eigvalsh(P)
        p_lo = min(p_lo, float(eig[0]))
        p_hi = max(p_hi, float(eig[-1]))
        L = lie_derivative(metric, x, system.f, system.df)
        basis = kernel_basis(system.dh(x))
        for v in _tangent_directions(basis, rng):
            val = float(v @ L @ v)
            ratio = val / float(v @ P @ v)
            count += 1
            if val > worst_value:
                worst_value = val
            if ratio > worst_ratio:
                worst_ratio = ratio
            if val > margin and len(failures) < 10:
                failures.append({"x": x.tolist(), "v": v.tolist(), "value": val})
    if worst_ratio < -margin:
        classification = "strong"
    elif worst_value <= margin:
        classification = "weak"
    else:
        classification = "fails"
    return DetectabilityReport(
        classification=classification,
        worst_tangential_value=worst_value,
        worst_ratio=worst_ratio,
        estimated_rho=None,
        estimated_q=None,
        sample_count=count,
        bound_estimates=(p_lo, p_hi),
        failures=failures,
    )


def _rate_feasible(L, P, dhTdh, q, rho_cap, tol=1e-9):
    M = L + q * P - rho_cap * dhTdh
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1]) <= tol


def _min_rho(L, P, dhTdh, q, rho_cap, tol=1e-9, iters=60):
    lo, hi = 0.0, rho_cap
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _rate_feasible(L, P, dhTdh, q, mid, tol):
            hi = mid
        else:
            lo = mid
    return hi


def estimate_rate_pair(system: SystemModel, metric: MetricField,
                       region_sampler, n_samples: int, seed: int = 0,
                       rho_cap: float = 1e6, q_cap: float = 1e3) -> tuple[float, float]:
    """Estimates (rho_bar, q_lower) with L_f P(x) <= rho dh^T dh - q P(x) in
    the matrix order at every sample.

    Per sample, the largest feasible q is found by bisection with a
    positive-semidefiniteness oracle; q_lower is the minimum over samples and
    rho_bar the largest per-sample minimal rho at that shared q.
    """
    rng = np.random.default_rng(seed)
    points = np.atleast_2d(np.asarray(region_sampler(rng, n_samples), dtype=float))
    records = []
    q_lower = np.inf
    for x in points:
        system.require_domain(x)
        P = metric(x)
        L = lie_derivative(metric, x, system.f, system.df)
        dh = np.atleast_2d(np.asarray(system.dh(x), dtype=float))
        dhTdh = dh.T @ dh
        if not _rate_feasible(L, P, dhTdh, 0.0, rho_cap):
            raise Infeasible(f"no (rho, q >= 0) satisfies the rate inequality at {x}")
        lo, hi = 0.0, q_cap
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _rate_feasible(L, P, dhTdh, mid, rho_cap):
                lo = mid
            else:
                hi = mid
        q_lower = min(q_lower, lo)
        records.append((x, L, P, dhTdh))
    if not np.isfinite(q_lower) or q_lower <= 0:
        raise Infeasible("no strictly positive uniform rate q over the samples")
    q_use = q_lower * (1.0 - 1e-9)
    rho_bar = 0.0
    for x, L, P, dhTdh in records:
        rho_bar = max(rho_bar, _min_rho(L, P, dhTdh, q_use, rho_cap))
    return rho_bar, q_lower


def check_split_condition(split_dynamics, p_xixi, region_sampler,
                          n_samples: int, seed: int = 0,
                          y_dynamics=None, q_cap: float = 1e3) -> dict:
    """Evaluates the split-coordinate decay inequality on samples (y, xi).

    ``split_dynamics(y, xi)`` gives the xi vector field, ``p_xixi(y, xi)`` the
    metric block; the y-partial term enters only when ``y_dynamics`` is given.
    Reports the largest q with LHS <= -q P on every sample (q = 0 means weak).
    """
    rng = np.random.default_rng(seed)
    points = np.atleast_2d(np.asarray(region_sampler(rng, n_samples), dtype=float))
    q_best = np.inf
    worst_eig = -np.inf
    for z in points:
        y, xi = np.atleast_1d(z[0]), np.asarray(z[1:], dtype=float)
        P = np.asarray(p_xixi(y, xi), dtype=float)
        J = fd_jacobian(lambda w: np.asarray(split_dynamics(y, w), dtype=float), xi)
        f_xi = np.asarray(split_dynamics(y, xi), dtype=float)
        dP_xi = fd_jacobian(lambda w: np.asarray(p_xixi(y, w), dtype=float).ravel(), xi)
        n = len(xi)
        lhs = P @ J + J.T @ P
        lhs = lhs + (dP_xi @ f_xi).reshape(n, n)
        if y_dynamics is not None:
            ydot = np.atleast_1d(np.asarray(y_dynamics(y, xi), dtype=float))
            dP_y = fd_jacobian(lambda w: np.asarray(p_xixi(w, xi), dtype=float).ravel(),
                               np.atleast_1d(y))
            lhs = lhs + (dP_y @ ydot).reshape(n, n)
        lhs = 0.5 * (lhs + lhs.T)
        worst_eig = max(worst_eig, float(np.linalg.eigvalsh(lhs)[-1]))
        lo, hi = 0.0, q_cap
        if float(np.linalg.eigvalsh(lhs)[-1]) > 1e-9:
            q_best = 0.0
            continue
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            M = lhs + mid * P
            if float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1]) <= 1e-9:
                lo = mid
            else:
                hi = mid
        q_best = min(q_best, lo)
    return {
        "largest_feasible_q": float(q_best),
        "worst_lhs_eigenvalue": float(worst_eig),
        "classification": "strong" if q_best > 1e-8 else (
            "weak" if worst_eig <= 1e-8 else "fails"),
        "sample_count": int(len(points)),
    }
