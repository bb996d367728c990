"""Acceptance suite: one test per criterion, each ending with a single
pass line and checked against its runtime budget."""

import time

import numpy as np
import pytest

from riemobs.cli import main as cli_main
from riemobs.detectability import check_detectability
from riemobs.highgain import (
    build_immersion,
    immersion_metric,
    solve_lmi,
    tangential_decay_margin,
)
from riemobs.lagrangian import (
    exp_metric_toy,
    sasaki_metric,
    verify_tangential_identity,
)
from riemobs.observers import (
    ObserverSpec,
    eisenhart_coordinates,
    oscillator_split_dynamics,
    simulate,
)
from riemobs.riccati import (
    RiccatiConfig,
    build_oscillator_grid,
    compute_metric_at,
    compute_metric_radon,
    grammian,
    grid_metric_field,
)
from riemobs.systems import (
    harmonic_oscillator,
    oscillator_analytic_metric,
    oscillator_closed_flow,
    oscillator_weak_metric,
)
from riemobs.tensor import (
    constant_metric,
    geodesic_distance,
    geodesic_shoot,
    lie_derivative,
    pushforward_metric,
    richardson_flow_limit,
    riemannian_hessian,
    MetricField,
)


def sample_annulus(count, seed=0):
    """Deterministic points with x3 in [1,10] and radius^2 in [0.1,10]."""
    rng = np.random.default_rng(seed)
    th = rng.uniform(-np.pi, np.pi, count)
    r = np.sqrt(rng.uniform(0.1, 10.0, count))
    x3 = rng.uniform(1.0, 10.0, count)
    return np.column_stack([r * np.cos(th), r * np.sin(th), x3])


def finish(number, start, budget, message):
    elapsed = time.monotonic() - start
    assert elapsed < budget, f"criterion {number} exceeded budget: {elapsed:.1f}s"
    print(f"[ACCEPTANCE {number}] PASS - {message} ({elapsed:.1f}s)")


def test_acceptance_1_closed_form_residual():
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    lam = 8.0
    P = oscillator_analytic_metric(lam)
    worst = 0.0
    for x in sample_annulus(100):
        L = lie_derivative(P, x, sys_.f, sys_.df)
        dh = np.array([[1.0, 0.0, 0.0]])
        resid = L - dh.T @ dh + lam * P(x)
        worst = max(worst, np.linalg.norm(resid) / np.linalg.norm(P(x)))
    assert worst < 1e-6
    finish(1, start, 10.0,
           f"closed-form metric residual {worst:.2e} < 1e-6 at 100 points")


def test_acceptance_2_algorithm_vs_closed_form():
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    lam = 8.0
    cfg = RiccatiConfig(variant="lambda_linear", lam=lam, horizon_T="adaptive",
                        adaptive_tol=1e-6)
    Pa = oscillator_analytic_metric(lam)
    worst = 0.0
    for x in sample_annulus(20, seed=1):
        P = compute_metric_at(sys_, cfg, x)
        ref = Pa(x)
        worst = max(worst, np.max(np.abs(P - ref)) / np.max(np.abs(ref)))
    assert worst < 1e-3
    finish(2, start, 60.0,
           f"backward-trajectory algorithm matches closed form, rel dev {worst:.2e}")


def test_acceptance_3_cross_oracles():
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    lam = 8.0
    T = 5.0
    worst_g = 0.0
    for x in sample_annulus(10, seed=2):
        cfg = RiccatiConfig(variant="lambda_linear", lam=lam, horizon_T=T,
                            ode_tol=1e-11)
        P = compute_metric_at(sys_, cfg, x)
        W = grammian(sys_, x, T, lam=lam, ode_tol=1e-11)
        worst_g = max(worst_g, float(np.max(np.abs(P - W))))
    assert worst_g < 1e-6
    worst_r = 0.0
    for x in sample_annulus(10, seed=3):
        q_cfg = dict(q_tensor=lambda z: 0.1 * np.eye(3), horizon_T=4.0,
                     ode_tol=1e-11)
        P1 = compute_metric_at(sys_, RiccatiConfig(variant="riccati_Q", **q_cfg), x)
        P2 = compute_metric_radon(sys_, RiccatiConfig(variant="radon", **q_cfg), x)
        worst_r = max(worst_r, float(np.max(np.abs(P1 - P2))))
    assert worst_r < 1e-6
    finish(3, start, 60.0,
           f"lambda/Grammian dev {worst_g:.2e}, Riccati/Radon dev {worst_r:.2e}")


def test_acceptance_4_weak_witness():
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    P = oscillator_weak_metric(1.0, 1.0)

    def sampler(rng, n):
        return sample_annulus(n, seed=4)

    report = check_detectability(sys_, P, sampler, 30)
    assert report.classification == "weak"
    worst = 0.0
    rng = np.random.default_rng(5)
    for x in sample_annulus(20, seed=6):
        L = lie_derivative(P, x, sys_.f, sys_.df)
        for _ in range(5):
            v = np.array([0.0, rng.normal(), rng.normal()])
            worst = max(worst, abs(v @ L @ v - (-4.0 * v[1] ** 2)))
    assert worst < 1e-10
    finish(4, start, 5.0,
           f"weak classification with tangential form -4 v2^2, dev {worst:.2e}")


def test_acceptance_5_sasaki_identity():
    start = time.monotonic()
    lag = exp_metric_toy(1.0, 1.0, 0.5)
    rng = np.random.default_rng(7)
    samples = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-2, 2, 50)])
    report = verify_tangential_identity(lag, samples)
    assert report["max_deviation"] < 1e-8
    P = sasaki_metric(lag)
    q, v = 0.3, -1.1
    e = np.exp(-2.0 * q)
    expect = e * np.array([[1.0 + 2 * 0.5 * v + v ** 2, -0.5 - v],
                           [-0.5 - v, 1.0]])
    # entrywise agreement at rounding level (operation order differs by ulps)
    assert np.max(np.abs(P(np.array([q, v])) - expect)) <= 4 * np.finfo(float).eps
    finish(5, start, 5.0,
           f"tangential block equals -2c g, dev {report['max_deviation']:.2e}; "
           "closed-form P reproduced exactly")


def test_acceptance_6_highgain_certificate():
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    rng = np.random.default_rng(8)
    pts = sample_annulus(80, seed=8)
    imm = build_immersion(sys_, 4, pts)
    cert = solve_lmi(4, 1, imm.nu_estimate)
    assert cert.residual_max_eig <= 0.0
    M = cert.inequality_matrix(4, 1)
    assert float(np.linalg.eigvalsh(M)[-1]) <= 0.0
    P = immersion_metric(imm, cert)
    margin = tangential_decay_margin(imm, cert)
    assert margin > 0
    for x in pts[:20]:
        L = lie_derivative(P, x, sys_.f, sys_.df)
        Pm = P(x)
        for _ in range(5):
            v = np.array([0.0, rng.normal(), rng.normal()])
            v /= np.linalg.norm(v)
            val = float(v @ L @ v)
            assert val < 0.0
            assert val <= -margin * float(v @ Pm @ v) + 1e-12
    finish(6, start, 30.0,
           f"certificate residual {cert.residual_max_eig:.1e} <= 0, induced "
           f"metric strong with margin {margin:.1e}")


def _riemannian_errors(metric, plant, obs, stride):
    values = []
    v_guess = None
    for i in range(0, len(plant), stride):
        if np.allclose(plant[i], obs[i], atol=1e-13):
            values.append(0.0)
            v_guess = None
            continue
        geo = geodesic_shoot(metric, plant[i], obs[i], tol=1e-6, n_steps=40,
                             max_iter=25, v0_guess=v_guess)
        values.append(geo.length if geo.converged else np.nan)
        v_guess = geo.initial_velocity if geo.converged else None
    return np.array(values)


def test_acceptance_7_observer_convergence():
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    lam = 8.0
    cfg = RiccatiConfig(variant="lambda_linear", horizon_T=6.0, fixed_dt=0.01)
    grid = build_oscillator_grid(sys_, cfg, 36, 10, omega_range=(3.0, 6.0))
    assert not grid.failures
    P_grid = grid_metric_field(grid, lam)
    P_analytic = oscillator_analytic_metric(lam)
    x0 = np.array([1.0, 0.0, 4.0])
    xhat0 = x0 + np.array([0.05, -0.05, 0.06])
    assert np.linalg.norm(xhat0 - x0) < 0.1
    traces = {}
    for name, metric in (("grid", P_grid), ("analytic", P_analytic)):
        spec = ObserverSpec(kind="full_order", metric_source=metric, gain_k=1.0)
        traces[name] = simulate(sys_, spec, x0, xhat0, t_end=20.0,
                                sample_dt=0.1, tol=1e-9)
    for name, tr in traces.items():
        assert tr.error_euclidean[-1] < 1e-3, name
    sup_dev = np.max(np.abs(traces["grid"].observer_states
                            - traces["analytic"].observer_states))
    assert sup_dev < 5e-2
    tr = traces["analytic"]
    riem = _riemannian_errors(P_analytic, tr.plant_states, tr.observer_states,
                              stride=5)
    riem_t = tr.times[::5]
    ok = np.isfinite(riem)
    riem, riem_t = riem[ok], riem_t[ok]
    after = riem_t >= 2.0
    vals = riem[after]
    assert np.all(np.diff(vals) <= 1e-9 + 1e-6 * vals[:-1])
    finish(7, start, 120.0,
           f"observer reaches err {traces['grid'].error_euclidean[-1]:.1e} by "
           f"t=20; grid/analytic traces agree within {sup_dev:.1e}; Riemannian "
           "error monotone after transient")


def test_acceptance_8_reduced_order():
    start = time.monotonic()
    k = ell = 1.0
    sys_ = harmonic_oscillator()
    chart = eisenhart_coordinates(sys_, oscillator_weak_metric(k, ell),
                                  np.array([0.0, 0.0, 1.0]))
    rng = np.random.default_rng(10)
    worst_phi = 0.0
    for _ in range(10):
        x = rng.uniform(-1.5, 1.5, 3)
        x[2] = rng.uniform(1.0, 4.0)
        expect = np.array([x[0], x[1] - k * x[0], x[2] + ell * x[0] ** 2])
        worst_phi = max(worst_phi, float(np.max(np.abs(chart.phi(x) - expect))))
    assert worst_phi < 1e-6
    phi_inv = lambda z: np.array([z[0], z[1] + k * z[0], z[2] - ell * z[0] ** 2])
    Q = pushforward_metric(oscillator_weak_metric(k, ell), chart.phi, chart.dphi,
                           phi_inv)
    worst_push = 0.0
    for _ in range(5):
        z = rng.uniform(0.5, 1.5, 3)
        worst_push = max(worst_push, float(np.max(np.abs(
            Q(z) - np.diag([1.0, 2.0 * ell, 1.0])))))
    assert worst_push < 1e-6
    chart_map = lambda x: np.array([x[0], x[1] - k * x[0], x[2] + ell * x[0] ** 2])
    spec = ObserverSpec(kind="reduced_order",
                        split_dynamics=oscillator_split_dynamics(k, ell),
                        coordinate_change=chart_map)
    x0 = np.array([1.0, 0.0, 4.0])
    xi0 = chart_map(x0)[1:] + np.array([0.4, -0.3])
    trace = simulate(sys_, spec, x0, xi0, t_end=50.0, sample_dt=0.25, tol=1e-10)
    xi_true = np.array([chart_map(x)[1:] for x in trace.plant_states])
    diff = trace.observer_states - xi_true
    d_xi = np.sqrt(2.0 * ell * diff[:, 0] ** 2 + diff[:, 1] ** 2)
    assert np.all(np.diff(d_xi) <= 1e-9)
    assert abs(diff[-1, 1]) < 1e-2
    finish(8, start, 60.0,
           f"split map dev {worst_phi:.1e}, pushforward dev {worst_push:.1e}, "
           f"d_xi non-increasing, xi2 error {abs(diff[-1, 1]):.1e} at t=50")


def test_acceptance_9_tensor_suite():
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    rng = np.random.default_rng(11)
    # Hessian identity per bundled metric
    for P in (oscillator_weak_metric(1.0, 1.0), oscillator_analytic_metric(4.0)):
        worst = 0.0
        for _ in range(50):
            x = rng.uniform(0.5, 2.0, 3)
            gfield = lambda z: P.solve(z, np.array([1.0, 0.0, 0.0]))
            L = lie_derivative(P, x, gfield, None)
            H = riemannian_hessian(P, x, lambda z: np.array([1.0, 0.0, 0.0]),
                                   lambda z: np.zeros((3, 3)))
            worst = max(worst, float(np.max(np.abs(L - 2.0 * H))))
        assert worst < 1e-6
    # Lie-derivative analytic vs flow oracle
    P = oscillator_weak_metric(1.0, 1.0)
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(0.5, 2.0, 3)
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        L = lie_derivative(P, x, sys_.f, sys_.df)
        lim = richardson_flow_limit(P, x, v, sys_.f, sys_.df,
                                    oscillator_closed_flow,
                                    steps=(5e-3, 2.5e-3, 1.25e-3))
        exact = float(v @ L @ v)
        worst = max(worst, abs(lim - exact) / (1.0 + abs(exact)))
    assert worst < 1e-5
    # constant-metric geodesics
    d, ok = geodesic_distance(constant_metric(np.eye(2)), np.zeros(2),
                              np.array([3.0, 4.0]))
    assert ok and abs(d - 5.0) < 1e-8
    d, ok = geodesic_distance(constant_metric(np.diag([1.0, 2.0, 1.0])),
                              np.zeros(3), np.array([1.0, 1.0, 1.0]))
    assert ok and abs(d - 2.0) < 1e-8
    # 1-D exp(-2q) distance
    exp_metric = MetricField(
        dim=1, eval=lambda q: np.array([[np.exp(-2.0 * q[0])]]),
        analytic_partials=lambda q: np.array([[[-2.0 * np.exp(-2.0 * q[0])]]]))
    d, ok = geodesic_distance(exp_metric, np.array([0.0]), np.array([1.0]))
    assert ok and abs(d - (1.0 - 1.0 / np.e)) < 1e-6
    finish(9, start, 30.0,
           "Hessian identity, flow oracle, and geodesic distances all in tolerance")


def test_acceptance_10_determinism(tmp_path):
    start = time.monotonic()
    sys_ = harmonic_oscillator()
    cfg = RiccatiConfig(variant="lambda_linear", horizon_T=4.0, fixed_dt=0.02)
    g1 = build_oscillator_grid(sys_, cfg, 6, 3, omega_range=(4.0, 7.0))
    g2 = build_oscillator_grid(sys_, cfg, 6, 3, omega_range=(4.0, 7.0))
    p1, p2 = tmp_path / "g1.json", tmp_path / "g2.json"
    g1.save(p1)
    g2.save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    sim_args = ["simulate", "--observer", "full_order", "--metric", "analytic",
                "--lambda", "8", "--x0", "1,0,4", "--xhat0", "1.05,0.05,4.05",
                "--t-end", "5", "--dt", "0.25", "--fixed-dt", "0.01"]
    a = tmp_path / "a.csv"
    assert cli_main(sim_args + ["--out", str(a)]) == 0
    first = a.read_bytes()
    assert cli_main(sim_args + ["--out", str(a)]) == 0
    assert a.read_bytes() == first
    chk_args = ["check", "--metric", "analytic", "--lambda", "8",
                "--box=-2:2,-2:2,1:10", "--samples", "20", "--seed", "3"]
    c = tmp_path / "c.json"
    assert cli_main(chk_args + ["--out", str(c)]) == 0
    first = c.read_bytes()
    assert cli_main(chk_args + ["--out", str(c)]) == 0
    assert c.read_bytes() == first
    finish(10, start, 120.0,
           "grid, trace, and report outputs byte-identical across reruns")
