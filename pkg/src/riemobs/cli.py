"""Command-line interface: metric builders, detectability checks, observer
simulations, and geodesic distances, with reproducible config handling.

Exit codes: 0 success (or strong classification), 1 weak, 4 fails,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from .detectability import box_sampler, check_detectability
from .errors import ConfigError, RiemobsError
from .highgain import build_immersion, solve_lmi, immersion_metric, tangential_decay_margin
from .lagrangian import BUNDLED_LAGRANGIANS, sasaki_metric, verify_tangential_identity
from .observers import (
    ObserverSpec,
    eisenhart_coordinates,
    oscillator_split_dynamics,
    simulate,
)
from .riccati import (
    MetricGrid,
    RiccatiConfig,
    build_oscillator_grid,
    compute_metric_at,
    compute_metric_radon,
    grammian,
    grid_metric_field,
)
from .systems import (
    BUNDLED_MODELS,
    get_model,
    oscillator_analytic_metric,
    oscillator_weak_metric,
)
from .tensor import constant_metric, geodesic_shoot


@dataclass
class RunConfig:
    """Fully resolved parameters of one CLI invocation, embedded in outputs."""

    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    def to_json(self) -> str:
        return json.dumps(
            {"command": self.command, "params": self.params,
             "seed": self.seed, "out": self.out},
            sort_keys=True,
        )


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def load_config_file(path: str) -> dict:
    """Flat key=value file; blank lines and # comments ignored."""
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, val = line.partition("=")
                values[key.strip().replace("-", "_")] = _parse_scalar(val.strip())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _box(text: str):
    """Per-dimension lo:hi pairs separated by commas, e.g. -2:2,-2:2,1:10."""
    bounds = []
    for part in text.split(","):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(f"expected lo:hi, got {part!r}")
        bounds.append((float(pieces[0]), float(pieces[1])))
    return bounds


def _resolve_metric(args, run: RunConfig):
    kind = args.metric
    if kind == "analytic":
        run.params["lambda"] = args.lam
        return oscillator_analytic_metric(args.lam)
    if kind == "weak":
        run.params.update({"k": args.k, "ell": args.ell})
        return oscillator_weak_metric(args.k, args.ell)
    if kind == "grid":
        if not args.grid_file:
            raise ConfigError("--metric grid needs --grid-file")
        run.params.update({"grid_file": args.grid_file, "lambda": args.lam})
        try:
            grid = MetricGrid.load(args.grid_file)
        except OSError as exc:
            raise ConfigError(f"cannot read grid file {args.grid_file}: {exc}") from exc
        return grid_metric_field(grid, args.lam)
    if kind == "identity":
        if not args.dim:
            raise ConfigError("--metric identity needs --dim")
        return constant_metric(np.eye(args.dim))
    raise ConfigError(f"unknown metric source {kind!r}")


def _emit_json(path, payload, run: RunConfig):
    payload = dict(payload)
    payload["run_config"] = json.loads(run.to_json())
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_metric(args) -> int:
    run = RunConfig(command=f"metric {args.builder}", seed=args.seed, out=args.out)
    if args.builder == "riccati":
        if args.model not in BUNDLED_MODELS:
            raise ConfigError(f"unknown model {args.model!r}")
        system = get_model(args.model)
        variant = {"lambda": "lambda_linear", "riccati": "riccati_Q",
                   "radon": "radon"}.get(args.variant, args.variant)
        config = RiccatiConfig(
            variant=variant,
            lam=args.lam,
            horizon_T="adaptive" if args.horizon is None else args.horizon,
            adaptive_tol=args.adaptive_tol,
            fixed_dt=args.fixed_dt,
        )
        if variant in ("riccati_Q", "radon"):
            q_scale = args.q_scale
            config.q_tensor = lambda x: q_scale * np.eye(system.state_dim)
        run.params.update({"model": args.model, "variant": variant,
                           "lambda": args.lam, "adaptive_tol": args.adaptive_tol,
                           "fixed_dt": args.fixed_dt})
        if args.grid:
            if args.model != "harmonic_oscillator":
                raise ConfigError("theta/omega grids are oscillator-specific")
            spec = dict(kv.split("=") for kv in args.grid.split())
            lo_t, hi_t, m_t = spec["theta"].split(":")
            lo_w, hi_w, m_w = spec["omega"].split(":")
            run.params["grid"] = args.grid
            grid = build_oscillator_grid(
                system, config, int(m_t), int(m_w),
                omega_range=(float(lo_w), float(hi_w)),
                theta_range=(float(lo_t), float(hi_t)),
            )
            grid.provenance["run_config"] = json.loads(run.to_json())
            if args.out:
                grid.save(args.out)
            mats = grid.values.reshape(-1, grid.values.shape[-1])
            print(f"grid nodes: {mats.shape[0]}, failures: {len(grid.failures)}")
            print(f"written: {args.out}" if args.out else "no --out given, grid discarded")
            return 0
        x = _vector(args.x)
        run.params["x"] = [float(v) for v in x]
        if variant == "radon":
            P = compute_metric_radon(system, config, x)
        else:
            P = compute_metric_at(system, config, x)
        eig = np.linalg.eigvalsh(P)
        _emit_json(args.out, {"metric": P.tolist(),
                              "eigenvalues": eig.tolist()}, run)
        return 0
    if args.builder == "grammian":
        system = get_model(args.model)
        x = _vector(args.x)
        run.params.update({"model": args.model, "x": [float(v) for v in x],
                           "T": args.horizon, "lambda": args.lam})
        if args.horizon is None:
            raise ConfigError("grammian needs --horizon")
        W = grammian(system, x, args.horizon, lam=args.lam)
        _emit_json(args.out, {"grammian": W.tolist(),
                              "eigenvalues": np.linalg.eigvalsh(W).tolist()}, run)
        return 0
    if args.builder == "highgain":
        system = get_model(args.model)
        rng = np.random.default_rng(args.seed)
        bounds = _box(args.box) if args.box else [(-2, 2), (-2, 2), (1, 10)]
        sampler = box_sampler(bounds)
        samples = sampler(rng, args.samples)
        samples = samples[np.abs(samples[:, 0]) + np.abs(samples[:, 1]) > 0.3]
        run.params.update({"model": args.model, "order": args.order,
                           "samples": args.samples, "box": args.box})
        imm = build_immersion(system, args.order, samples)
        cert = solve_lmi(args.order, system.output_dim, imm.nu_estimate)
        margin = tangential_decay_margin(imm, cert)
        immersion_metric(imm, cert)  # raises on inconsistency
        _emit_json(args.out, {
            "order": args.order,
            "nu": cert.nu,
            "gain": cert.gain,
            "q_margin": cert.q_margin,
            "residual_max_eig": cert.residual_max_eig,
            "h_lower": imm.h_lower,
            "h_upper": imm.h_upper,
            "tangential_decay_margin": margin,
            "P_nu": cert.P_nu.tolist(),
            "K_nu": cert.K_nu.tolist(),
        }, run)
        return 0
    if args.builder == "sasaki":
        if args.model not in BUNDLED_LAGRANGIANS:
            raise ConfigError(f"unknown Lagrangian model {args.model!r}")
        lag = BUNDLED_LAGRANGIANS[args.model](args.a, args.b, args.c)
        rng = np.random.default_rng(args.seed)
        samples = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-2, 2, 50)])
        report = verify_tangential_identity(lag, samples)
        P = sasaki_metric(lag)
        pd_ok = all(P.is_positive_definite(s) for s in samples)
        run.params.update({"model": args.model, "a": args.a, "b": args.b, "c": args.c})
        _emit_json(args.out, {
            "weights": [args.a, args.b, args.c],
            "tangential_identity": report,
            "positive_definite_on_samples": pd_ok,
        }, run)
        return 0
    raise ConfigError(f"unknown metric builder {args.builder!r}")


def cmd_check(args) -> int:
    run = RunConfig(command="check", seed=args.seed, out=args.out)
    system = get_model(args.model)
    metric = _resolve_metric(args, run)
    bounds = _box(args.box) if args.box else [(-2, 2), (-2, 2), (1, 10)]
    run.params.update({"model": args.model, "metric": args.metric,
                       "box": args.box, "n_samples": args.samples})
    if metric.dim is not None and metric.dim != system.state_dim:
        raise ConfigError(
            f"metric dimension {metric.dim} does not match state dimension "
            f"{system.state_dim}"
        )
    if len(bounds) != system.state_dim:
        raise ConfigError(
            f"box has {len(bounds)} dimensions, state has {system.state_dim}"
        )
    report = check_detectability(system, metric, box_sampler(bounds),
                                 args.samples, seed=args.seed)
    payload = json.loads(report.to_json())
    _emit_json(args.out, payload, run)
    return {"strong": 0, "weak": 1, "fails": 4}[report.classification]


def cmd_simulate(args) -> int:
    run = RunConfig(command="simulate", seed=args.seed, out=args.out)
    system = get_model(args.model)
    x0 = _vector(args.x0)
    run.params.update({
        "model": args.model, "observer": args.observer, "x0": [float(v) for v in x0],
        "t_end": args.t_end, "dt": args.dt, "fixed_dt": args.fixed_dt,
        "riemannian": bool(args.riemannian),
    })
    if args.observer == "full_order":
        metric = _resolve_metric(args, run)
        spec = ObserverSpec(kind="full_order", metric_source=metric, gain_k=args.gain)
        run.params["gain"] = args.gain
    elif args.observer == "ekf":
        metric = _resolve_metric(args, run) if args.metric else None
        q_scale = args.q_scale
        spec = ObserverSpec(kind="ekf", metric_source=metric,
                            q_tensor=lambda x: q_scale * np.eye(system.state_dim))
    elif args.observer == "kleinman":
        if args.horizon is None:
            raise ConfigError("kleinman needs --horizon")
        spec = ObserverSpec(kind="kleinman", horizon_T=args.horizon)
        run.params["horizon"] = args.horizon
    elif args.observer == "reduced_order":
        if args.model != "harmonic_oscillator":
            raise ConfigError("reduced_order is bundled for the oscillator only")
        k, ell = args.k, args.ell
        chart = eisenhart_coordinates(system, oscillator_weak_metric(k, ell),
                                      np.array([0.0, 0.0, 1.0]))
        spec = ObserverSpec(
            kind="reduced_order",
            split_dynamics=oscillator_split_dynamics(k, ell),
            coordinate_change=lambda x: np.array(
                [x[0], x[1] - k * x[0], x[2] + ell * x[0] ** 2]
            ),
            xi_metric=constant_metric(np.diag([2.0 * ell, 1.0])),
        )
        run.params.update({"k": k, "ell": ell})
    else:
        raise ConfigError(f"unknown observer {args.observer!r}")
    if args.xhat0:
        xhat0 = _vector(args.xhat0)
    elif args.observer == "reduced_order":
        xhat0 = spec.coordinate_change(x0)[1:] + 0.3
    else:
        xhat0 = x0 + 0.05
    run.params["xhat0"] = [float(v) for v in xhat0]

    trace = simulate(system, spec, x0, xhat0, args.t_end, args.dt,
                     with_riemannian_distance=bool(args.riemannian),
                     fixed_dt=args.fixed_dt)
    if not args.out:
        raise ConfigError("simulate needs --out for the trace CSV")
    trace.to_csv(args.out, header_comment="config: " + run.to_json())
    print(f"trace written: {args.out} ({len(trace.times)} samples, "
          f"final err {trace.error_euclidean[-1]:.3e})")
    for ev in trace.events:
        print(f"event: {ev}")
    if args.plot:
        png = args.out.rsplit(".", 1)[0] + ".png"
        _plot_trace(trace, png)
        print(f"plot written: {png}")
    return 0


def _plot_trace(trace, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(trace.times, np.maximum(trace.error_euclidean, 1e-16),
                label="Euclidean error")
    if np.any(np.isfinite(trace.error_riemannian)):
        ax.semilogy(trace.times, np.maximum(trace.error_riemannian, 1e-16),
                    label="Riemannian error")
    ax.set_xlabel("t")
    ax.set_ylabel("estimation error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_distance(args) -> int:
    run = RunConfig(command="distance", seed=args.seed, out=args.out)
    metric = _resolve_metric(args, run)
    a = _vector(args.a)
    b = _vector(args.b)
    run.params.update({"a": [float(v) for v in a], "b": [float(v) for v in b]})
    geo = geodesic_shoot(metric, a, b)
    _emit_json(args.out, {
        "distance": geo.length,
        "converged": bool(geo.converged),
        "shooting_residual": geo.shooting_residual,
    }, run)
    return 0 if geo.converged else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riemobs",
        description="Riemannian metrics and observers for nonlinear detectability",
    )
    parser.add_argument("--config", help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None)

    def metric_source(p):
        p.add_argument("--metric", default="analytic",
                       choices=["analytic", "weak", "grid", "identity"])
        p.add_argument("--lambda", dest="lam", type=float, default=8.0)
        p.add_argument("--k", type=float, default=1.0)
        p.add_argument("--ell", type=float, default=1.0)
        p.add_argument("--grid-file", default=None)
        p.add_argument("--dim", type=int, default=None)

    pm = sub.add_parser("metric", help="build and persist a metric")
    pm.add_argument("builder", choices=["riccati", "grammian", "highgain", "sasaki"])
    pm.add_argument("--model", default="harmonic_oscillator")
    pm.add_argument("--variant", default="lambda",
                    choices=["lambda", "riccati", "radon"])
    pm.add_argument("--lambda", dest="lam", type=float, default=8.0)
    pm.add_argument("--x", default="1,0,4")
    pm.add_argument("--grid", default=None,
                    help='e.g. "theta=-3.14159:3.14159:36 omega=4:7:10"')
    pm.add_argument("--horizon", type=float, default=None)
    pm.add_argument("--adaptive-tol", type=float, default=1e-6)
    pm.add_argument("--fixed-dt", type=float, default=None)
    pm.add_argument("--q-scale", type=float, default=1.0)
    pm.add_argument("--order", type=int, default=4)
    pm.add_argument("--samples", type=int, default=50)
    pm.add_argument("--box", default=None)
    pm.add_argument("--a", type=float, default=1.0)
    pm.add_argument("--b", type=float, default=1.0)
    pm.add_argument("--c", type=float, default=0.5)
    common(pm)
    pm.set_defaults(func=cmd_metric)

    pc = sub.add_parser("check", help="classify differential detectability")
    pc.add_argument("--model", default="harmonic_oscillator")
    pc.add_argument("--box", default=None)
    pc.add_argument("--samples", type=int, default=50)
    metric_source(pc)
    common(pc)
    pc.set_defaults(func=cmd_check)

    ps = sub.add_parser("simulate", help="run a plant-observer simulation")
    ps.add_argument("--model", default="harmonic_oscillator")
    ps.add_argument("--observer", default="full_order",
                    choices=["full_order", "reduced_order", "ekf", "kleinman"])
    ps.add_argument("--x0", default="1,0,4")
    ps.add_argument("--xhat0", default=None)
    ps.add_argument("--t-end", type=float, default=20.0)
    ps.add_argument("--dt", type=float, default=0.1)
    ps.add_argument("--fixed-dt", type=float, default=None)
    ps.add_argument("--gain", type=float, default=1.0)
    ps.add_argument("--horizon", type=float, default=None)
    ps.add_argument("--q-scale", type=float, default=1.0)
    ps.add_argument("--riemannian", action="store_true")
    ps.add_argument("--plot", action="store_true",
                    help="write a PNG error plot beside the CSV")
    metric_source(ps)
    common(ps)
    ps.set_defaults(func=cmd_simulate)

    pd = sub.add_parser("distance", help="geodesic distance between two points")
    pd.add_argument("--a", required=True)
    pd.add_argument("--b", required=True)
    metric_source(pd)
    common(pd)
    pd.set_defaults(func=cmd_distance)
    parser._riemobs_subparsers = {"metric": pm, "check": pc,
                                  "simulate": ps, "distance": pd}
    return parser


def _config_path_from_argv(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    config_path = _config_path_from_argv(argv)
    if config_path:
        try:
            overrides = load_config_file(config_path)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        # config values become defaults; explicit flags still win
        for sp in parser._riemobs_subparsers.values():
            dests = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in overrides.items() if k in dests})
    args, remaining = parser.parse_known_args(argv)
    if remaining:
        print(f"error: unrecognized arguments: {' '.join(remaining)}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RiemobsError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
