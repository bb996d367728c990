"""Immersion-induced metric for strongly differentially observable systems:
stacked Lie-derivative map, a feasibility solver for the damped Lyapunov
matrix inequality, and the induced metric dH^T P dH."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import ImmersionDegenerate, Infeasible, LieOutputsMissing, NuMismatch
from .systems import SystemModel
from .tensor import MetricField


@dataclass
class ImmersionData:
    """Stacked map H = (h, L_f h, ..., L_f^{no-1} h) with sampled bounds."""

    order_no: int
    m: int
    H: Callable[[np.ndarray], np.ndarray]
    dH: Callable[[np.ndarray], np.ndarray]
    lf_no_h: Callable[[np.ndarray], np.ndarray]
    d_lf_no_h: Callable[[np.ndarray], np.ndarray]
    h_lower: float
    h_upper: float
    nu_estimate: float
    samples: np.ndarray = field(default=None)


def companion_matrices(n_o: int, m: int):
    """Block shift structure (A, B, C) of the stacked output-derivative chain."""
    N = m * n_o
    A = np.zeros((N, N))
    for k in range(n_o - 1):
        A[k * m : (k + 1) * m, (k + 1) * m : (k + 2) * m] = np.eye(m)
    B = np.zeros((N, m))
    B[(n_o - 1) * m :, :] = np.eye(m)
    C = np.zeros((m, N))
    C[:, :m] = np.eye(m)
    return A, B, C


def build_immersion(system: SystemModel, n_o: int, samples) -> ImmersionData:
    """Assembles H and its Jacobian from the model's Lie outputs and estimates
    the Gram bounds and the Lipschitz-like ratio over the samples.

    The nu estimate is min over samples of |dH| / |d L_f^{no} h|, halved as a
    safety factor.
    """
    if len(system.lie_outputs) < n_o + 1:
        raise LieOutputsMissing(
            f"model provides Lie outputs up to order {len(system.lie_outputs) - 1}, "
            f"need {n_o}"
        )
    m = system.output_dim
    funcs = system.lie_outputs[:n_o]
    top_f, top_df = system.lie_outputs[n_o]

    def H(x):
        return np.concatenate([np.atleast_1d(fn(x)) for fn, _ in funcs])

    def dH(x):
        return np.vstack([np.atleast_2d(jac(x)) for _, jac in funcs])

    def lf_no_h(x):
        return np.atleast_1d(top_f(x))

    def d_lf_no_h(x):
        return np.atleast_2d(top_df(x))

    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    h_lo, h_hi = np.inf, 0.0
    nu = np.inf
    for x in samples:
        J = dH(x)
        eig = np.linalg.eigvalsh(J.T @ J)
        h_lo = min(h_lo, float(eig[0]))
        h_hi = max(h_hi, float(eig[-1]))
        top = np.linalg.norm(d_lf_no_h(x), 2)
        if top > 0:
            nu = min(nu, np.linalg.norm(J, 2) / top)
    if h_lo <= 0:
        raise ImmersionDegenerate(f"sampled lower Gram bound {h_lo:g} is not positive")
    nu_est = nu / 2.0 if np.isfinite(nu) else np.inf
    return ImmersionData(
        order_no=n_o,
        m=m,
        H=H,
        dH=dH,
        lf_no_h=lf_no_h,
        d_lf_no_h=d_lf_no_h,
        h_lower=h_lo,
        h_upper=h_hi,
        nu_estimate=nu_est,
        samples=samples,
    )


def structural_residual(imm: ImmersionData, system: SystemModel, x) -> float:
    """|L_f H - A H - B L_f^{no} h| at x; zero by construction of the chain."""
    A, B, _ = companion_matrices(imm.order_no, imm.m)
    x = np.asarray(x, dtype=float)
    lhs = imm.dH(x) @ np.asarray(system.f(x), dtype=float)
    rhs = A @ imm.H(x) + B @ imm.lf_no_h(x)
    return float(np.linalg.norm(lhs - rhs))


@dataclass
class LmiCertificate:
    """Feasible (P_nu, K_nu, q) for the damped observer-form inequality."""

    P_nu: np.ndarray
    K_nu: np.ndarray
    q_margin: float
    nu: float
    gain: float
    residual_max_eig: float

    def inequality_matrix(self, n_o: int, m: int) -> np.ndarray:
        A, B, C = companion_matrices(n_o, m)
        Acl = A - self.K_nu @ C
        M = (
            self.P_nu @ Acl
            + Acl.T @ self.P_nu
            + 2.0 * self.q_margin * np.eye(m * n_o)
            + (1.0 / (self.q_margin * self.nu**2)) * self.P_nu @ B @ B.T @ self.P_nu
        )
        return 0.5 * (M + M.T)


def _pole_placement_gain(n_o: int, m: int, g: float) -> np.ndarray:
    """Observer gain stacking binomial coefficients of (s+g)^{n_o} per block."""
    K = np.zeros((m * n_o, m))
    for k in range(n_o):
        K[k * m : (k + 1) * m, :] = comb(n_o, k + 1) * g ** (k + 1) * np.eye(m)
    return K


def _stabilizing_are_solution(Acl: np.ndarray, R: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Stabilizing solution of X Acl + Acl^T X + X R X + Q = 0 via the stable
    invariant subspace of the Hamiltonian."""
    n = Acl.shape[0]
    H = np.block([[Acl, R], [-Q, -Acl.T]])
    w, V = np.linalg.eig(H)
    idx = np.argsort(w.real)[:n]
    sub = V[:, idx]
    X = sub[n:] @ np.linalg.inv(sub[:n])
    X = X.real
    return 0.5 * (X + X.T)


def solve_lmi(n_o: int, m: int, nu: float,
              g_max: float = 1e6, residual_target: float = -1e-9) -> LmiCertificate:
    """Searches a high-gain pole-placement family for a feasible certificate.

    For each candidate gain g the damped inequality is tightened to an
    algebraic Riccati equation (bounded-real form) and q is line-searched to
    maximize the decay margin q / lmax(P); g doubles until feasible.
    ``nu = inf`` drops the quadratic term and reduces to a Lyapunov solve.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    A, B, C = companion_matrices(n_o, m)
    N = m * n_o
    slack = max(-2.0 * residual_target, 1e-9)
    g = 1.0
    while g <= g_max:
        K = _pole_placement_gain(n_o, m, g)
        Acl = A - K @ C
        best = None
        for q in np.logspace(-6, 2, 33):
            Qm = (2.0 * q + slack) * np.eye(N)
            try:
                if np.isfinite(nu):
                    R = B @ B.T / (q * nu**2)
                    X = _stabilizing_are_solution(Acl, R, Qm)
                else:
                    X = solve_continuous_lyapunov(Acl.T, -Qm)
                    X = 0.5 * (X + X.T)
            except np.linalg.LinAlgError:
                continue
            eig = np.linalg.eigvalsh(X)
            if eig[0] <= 0:
                continue
            cert = LmiCertificate(P_nu=X, K_nu=K, q_margin=float(q), nu=float(nu),
                                  gain=float(g), residual_max_eig=0.0)
            M = cert.inequality_matrix(n_o, m) if np.isfinite(nu) else (
                X @ Acl + Acl.T @ X + 2.0 * q * np.eye(N)
            )
            r = float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
            cert.residual_max_eig = r
            if r <= residual_target:
                margin = q / float(eig[-1])
                if best is None or margin > best[1]:
                    best = (cert, margin)
        if best is not None:
            return best[0]
        g *= 2.0
    raise Infeasible(
        f"no feasible certificate for n_o={n_o}, m={m}, nu={nu:g} with gain up to {g_max:g}"
    )


def immersion_metric(imm: ImmersionData, cert: LmiCertificate) -> MetricField:
    """P(x) = dH(x)^T P_nu dH(x), positive definite wherever the sampled lower
    Gram bound holds."""
    if cert.nu > imm.nu_estimate:
        raise NuMismatch(
            f"certificate nu {cert.nu:g} exceeds sampled estimate {imm.nu_estimate:g}"
        )

    def eval_p(x):
        J = imm.dH(np.asarray(x, dtype=float))
        return J.T @ cert.P_nu @ J

    n = imm.dH(imm.samples[0]).shape[1] if imm.samples is not None else None
    return MetricField(
        dim=n,
        eval=eval_p,
        kind="immersion_induced",
        name=f"immersion(no={imm.order_no})",
    )


def tangential_decay_margin(imm: ImmersionData, cert: LmiCertificate) -> float:
    """Guaranteed decay rate q h_lower / (lmax(P_nu) h_upper) from the
    feasibility argument."""
    lmax = float(np.linalg.eigvalsh(cert.P_nu)[-1])
    return cert.q_margin * imm.h_lower / (lmax * imm.h_upper)
