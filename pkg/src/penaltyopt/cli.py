"""Command-line entry point: ``penaltyopt {solve,bench,verify,gamma,gen}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 theory-bound failure (``verify`` only).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_THEORY = 4


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _cmd_bench(args) -> int:
    from .harness import ExperimentConfig, emit_plotdata, run_experiment

    cfg = ExperimentConfig.load(args.config)
    if args.output:
        cfg.output_dir = args.output
    methods = args.methods.split(",") if args.methods else None
    manifest = run_experiment(cfg, methods, jobs=args.jobs)
    out = Path(cfg.output_dir)
    for o in manifest.outcomes:
        line = f"{o.name:<20} {o.status:<7} grads={o.counters.get('grads', '-')} projs={o.counters.get('projs', '-')}"
        print(line + (f"  {o.message}" if o.message else ""))
    if args.plot:
        files = {o.name: out / o.csv for o in manifest.outcomes if o.csv}
        emit_plotdata(files, out / "plotdata", x_axis=args.plot)
    print(f"manifest: {out / 'manifest.json'}")
    return EXIT_SOLVER if manifest.failed else EXIT_OK


def _cmd_solve(args) -> int:
    from .harness import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.load(args.config)
    if args.output:
        cfg.output_dir = args.output
    names = [m.name for m in cfg.methods]
    method = args.method or (names[0] if len(names) == 1 else None)
    if method is None:
        print(f"choose one of: {', '.join(names)}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = run_experiment(cfg, [method])
    o = manifest.outcomes[0]
    if o.status != "ok":
        print(f"{o.name} failed: {o.message}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{o.name}: grads={o.counters['grads']} projs={o.counters['projs']} -> {Path(cfg.output_dir) / o.csv}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .harness import ExperimentConfig, build_instance
    from .theory import ReferenceSolutions, check_exact_bounds

    cfg = ExperimentConfig.load(args.config)
    objective, ensemble = build_instance(cfg)
    refs = ReferenceSolutions(objective, ensemble, tol=cfg.reference_tol)
    L, gamma = objective.L, ensemble.gamma
    lams = args.lams or [2 * L / gamma, 10 * L, 100 * L, 1000 * L]
    report = check_exact_bounds(refs, lams)
    print(f"L={L:.6g} mu={objective.mu:.6g} gamma={gamma:.6g} ({ensemble.regularity.source})")
    print(f"f*={refs.f_star:.10g} f0*={refs.f0_star:.10g} |grad f(x*)|={refs.grad_norm_at_xstar:.6g}")
    print(report.summary())
    if args.csv:
        report.to_csv(args.csv)
    return EXIT_OK if report.passed else EXIT_THEORY


def _cmd_gamma(args) -> int:
    from .sets import gamma_estimate, read_sets, regularity

    sets = read_sets(args.sets)
    if args.empirical:
        info = gamma_estimate(sets, n_samples=args.samples, seed=args.seed, radius=args.radius)
    else:
        info = regularity(sets, n_samples=args.samples, seed=args.seed, radius=args.radius)
    print(f"gamma={info.gamma:.10g} source={info.source} samples={info.samples_used}")
    return EXIT_OK


def _cmd_gen(args) -> int:
    from .harness import gen_constraints
    from .sets import write_sets

    anchor = np.array(args.anchor, dtype=np.float64) if args.anchor else np.zeros(args.d)
    if anchor.shape != (args.d,):
        print(f"anchor needs {args.d} entries", file=sys.stderr)
        return EXIT_CONFIG
    sets = gen_constraints(args.seed, args.m, args.d, anchor, args.slack_scale, args.eq_fraction)
    write_sets(sets, args.output)
    print(f"wrote {len(sets)} sets to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="penaltyopt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run every method of an experiment config")
    b.add_argument("config")
    b.add_argument("--methods", help="comma-separated subset of method names")
    b.add_argument("--output", help="override the output directory")
    b.add_argument("--jobs", type=int, default=1, help="worker processes (capped by PENALTY_OPT_THREADS)")
    b.add_argument("--plot", choices=["iterations", "grads", "projections", "time"], help="also write plot data")
    b.set_defaults(func=_cmd_bench)

    s = sub.add_parser("solve", help="run one method of an experiment config")
    s.add_argument("config")
    s.add_argument("--method")
    s.add_argument("--output")
    s.set_defaults(func=_cmd_solve)

    v = sub.add_parser("verify", help="check the exact-solution bounds on a config's instance")
    v.add_argument("config")
    v.add_argument("--lams", type=_floats, help="comma-separated penalty weights")
    v.add_argument("--csv", help="write the report as CSV")
    v.set_defaults(func=_cmd_verify)

    g = sub.add_parser("gamma", help="linear-regularity constant of a constraint file")
    g.add_argument("sets")
    g.add_argument("--samples", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--empirical", action="store_true", help="force the sampled estimate")
    g.set_defaults(func=_cmd_gamma)

    n = sub.add_parser("gen", help="write a random constraint family containing an anchor")
    n.add_argument("--m", type=int, required=True)
    n.add_argument("--d", type=int, required=True)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--slack-scale", type=float, default=1.0)
    n.add_argument("--eq-fraction", type=float, default=0.5)
    n.add_argument("--anchor", type=_floats)
    n.add_argument("-o", "--output", required=True)
    n.set_defaults(func=_cmd_gen)
    return p


def main(argv=None) -> int:
    from .harness import ConfigError
    from .sets import SetError
    from .solvers import SolverError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, SetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
