import numpy as np
import pytest

from riemobs.errors import ConfigError
from riemobs.observers import (
    ObserverSpec,
    eisenhart_coordinates,
    ekf_rhs,
    full_order_rhs,
    kleinman_rhs,
    oscillator_split_dynamics,
    reduced_order_rhs,
    simulate,
)
from riemobs.systems import (
    SystemModel,
    harmonic_oscillator,
    oscillator_analytic_metric,
    oscillator_weak_metric,
)
from riemobs.tensor import constant_metric


def scalar_static():
    return SystemModel(state_dim=1, output_dim=1,
                       f=lambda x: np.zeros(1), h=lambda x: np.array([x[0]]),
                       df=lambda x: np.zeros((1, 1)), dh=lambda x: np.ones((1, 1)))


def test_full_order_no_innovation():
    sys_ = harmonic_oscillator()
    spec = ObserverSpec(kind="full_order",
                        metric_source=oscillator_analytic_metric(8.0))
    xh = np.array([1.0, 0.2, 4.0])
    assert np.allclose(full_order_rhs(spec, sys_, xh, sys_.h(xh)), sys_.f(xh))


def test_full_order_identity_metric():
    sys_ = SystemModel(state_dim=2, output_dim=1,
                       f=lambda x: np.array([x[1], 0.0]),
                       h=lambda x: np.array([x[0]]),
                       dh=lambda x: np.array([[1.0, 0.0]]))
    spec = ObserverSpec(kind="full_order", metric_source=constant_metric(np.eye(2)),
                        gain_k=1.0)
    xh = np.array([1.0, 0.5])
    rhs = full_order_rhs(spec, sys_, xh, np.array([0.8]))
    assert np.allclose(rhs, sys_.f(xh) - 2.0 * (1.0 - 0.8) * np.array([1.0, 0.0]))


def test_full_order_correction_direction():
    sys_ = harmonic_oscillator()
    P = oscillator_analytic_metric(8.0)
    spec = ObserverSpec(kind="full_order", metric_source=P, gain_k=1.0)
    xh = np.array([1.0, 0.0, 4.0])
    corr = full_order_rhs(spec, sys_, xh, np.array([1.1])) - sys_.f(xh)
    scaled = corr / (-2.0 * (1.0 - 1.1))
    assert np.max(np.abs(P(xh) @ scaled - np.array([1.0, 0, 0]))) < 1e-10


def test_eisenhart_recovers_split_map():
    k, ell = 1.0, 1.0
    sys_ = harmonic_oscillator()
    chart = eisenhart_coordinates(sys_, oscillator_weak_metric(k, ell),
                                  np.array([0.0, 0.0, 1.0]))
    rng = np.random.default_rng(9)
    for _ in range(5):
        x = rng.uniform(-1.5, 1.5, 3)
        x[2] = rng.uniform(1.0, 4.0)
        expect = np.array([x[0], x[1] - k * x[0], x[2] + ell * x[0] ** 2])
        assert np.max(np.abs(chart.phi(x) - expect)) < 1e-6


def test_eisenhart_identity_for_block_diagonal():
    sys_ = harmonic_oscillator()
    chart = eisenhart_coordinates(sys_, constant_metric(np.diag([1.0, 2.0, 1.0])),
                                  np.array([0.0, 0.0, 1.0]))
    x = np.array([0.7, -0.2, 2.0])
    assert np.max(np.abs(chart.phi(x) - x)) < 1e-9


def test_reduced_rhs_values():
    k, ell = 1.0, 1.0
    spec = ObserverSpec(kind="reduced_order",
                        split_dynamics=oscillator_split_dynamics(k, ell))
    out = reduced_order_rhs(spec, np.array([0.0]), np.array([2.0, 3.0]))
    assert np.allclose(out, [-k * 2.0, 0.0])


def test_ekf_scalar_stationary():
    sys_ = scalar_static()
    xdot, Pidot = ekf_rhs(sys_, lambda x: np.eye(1), np.array([0.5]),
                          np.eye(1), np.array([0.2]))
    assert abs(Pidot[0, 0]) < 1e-14
    assert abs(xdot[0] - (-(0.5 - 0.2))) < 1e-14


def test_kleinman_scalar():
    sys_ = scalar_static()
    rhs = kleinman_rhs(sys_, 1.0, np.array([0.5]), np.array([0.2]))
    assert abs(rhs[0] - (-(0.5 - 0.2))) < 1e-8
    rhs0 = kleinman_rhs(sys_, 1.0, np.array([0.5]), np.array([0.5]))
    assert abs(rhs0[0]) < 1e-12


def test_diagonal_invariance():
    sys_ = harmonic_oscillator()
    x0 = np.array([1.0, 0.0, 4.0])
    metric = oscillator_analytic_metric(8.0)
    specs = [
        ObserverSpec(kind="full_order", metric_source=metric, gain_k=1.0),
        ObserverSpec(kind="ekf", q_tensor=lambda x: np.eye(3), metric_source=metric),
    ]
    for spec in specs:
        trace = simulate(sys_, spec, x0, x0, t_end=10.0, sample_dt=0.5)
        assert np.max(trace.error_euclidean) <= 1e-6
    k = ell = 1.0
    chart_map = lambda x: np.array([x[0], x[1] - k * x[0], x[2] + ell * x[0] ** 2])
    spec_r = ObserverSpec(kind="reduced_order",
                          split_dynamics=oscillator_split_dynamics(k, ell),
                          coordinate_change=chart_map)
    trace = simulate(sys_, spec_r, x0, chart_map(x0)[1:], t_end=10.0, sample_dt=0.5)
    assert np.max(trace.error_euclidean) <= 1e-6
    spec_k = ObserverSpec(kind="kleinman", horizon_T=2.0)
    trace = simulate(sys_, spec_k, x0, x0, t_end=2.0, sample_dt=0.5, tol=1e-6)
    assert np.max(trace.error_euclidean) <= 1e-6


def test_ekf_converges_on_oscillator():
    sys_ = harmonic_oscillator()
    spec = ObserverSpec(kind="ekf", q_tensor=lambda x: np.eye(3),
                        metric_source=oscillator_analytic_metric(8.0))
    trace = simulate(sys_, spec, np.array([1.0, 0.0, 4.0]),
                     np.array([1.05, 0.05, 4.05]), t_end=10.0, sample_dt=0.2)
    assert trace.error_euclidean[-1] < 1e-2
    assert trace.error_euclidean[-1] < trace.error_euclidean[0]


def test_gain_event_bookkeeping():
    sys_ = harmonic_oscillator()
    spec = ObserverSpec(kind="full_order",
                        metric_source=oscillator_analytic_metric(8.0),
                        gain_k=0.01, rho_bar_estimate=1.0,
                        delta2_lower_estimate=1.0)
    trace = simulate(sys_, spec, np.array([1.0, 0.0, 4.0]),
                     np.array([1.0, 0.0, 4.0]), t_end=1.0, sample_dt=0.5)
    assert any(ev["kind"] == "GainTooSmall" for ev in trace.events)


def test_custom_delta_validated():
    sys_ = harmonic_oscillator()
    spec = ObserverSpec(kind="full_order",
                        metric_source=oscillator_analytic_metric(8.0),
                        delta=lambda ya, yb: 1.0 + float(np.sum((ya - yb) ** 2)))
    with pytest.raises(ConfigError):
        simulate(sys_, spec, np.array([1.0, 0.0, 4.0]), np.array([1.0, 0.0, 4.0]),
                 t_end=1.0, sample_dt=0.5)


def test_trace_csv_columns(tmp_path):
    sys_ = harmonic_oscillator()
    spec = ObserverSpec(kind="full_order",
                        metric_source=oscillator_analytic_metric(8.0))
    trace = simulate(sys_, spec, np.array([1.0, 0.0, 4.0]),
                     np.array([1.05, 0.0, 4.0]), t_end=1.0, sample_dt=0.5,
                     fixed_dt=0.01)
    path = tmp_path / "trace.csv"
    trace.to_csv(path, header_comment="config: {}")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config:")
    assert lines[1] == ("t,x_1,x_2,x_3,xhat_1,xhat_2,xhat_3,y_1,"
                       "err_euc,err_riem,riem_converged")
    assert len(lines) == 2 + len(trace.times)


def test_spec_validation():
    with pytest.raises(ConfigError):
        ObserverSpec(kind="bogus").validate()
    with pytest.raises(ConfigError):
        ObserverSpec(kind="full_order").validate()
