"""Experiment runner: instance generation, method comparison, CSV traces,
run manifests and plot data."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import __version__, _backend
from .meta import MetaConfig, PenaltySchedule, accelerated_increasing_penalty, increasing_penalty
from .objectives import (
    FiniteSumObjective,
    LogisticObjective,
    load_libsvm,
    max_abs_scale,
    nonconvex_2d,
    one_d_counterexample,
    random_quadratic,
    synthetic_binary_dataset,
)
from .penalty import PenaltyEnsemble, PenaltyProblem
from .sets import ConstraintSet, Halfspace, Hyperplane, RegularityInfo, dist_sq, read_sets
from .solvers import (
    Evaluator,
    InnerMethodSpec,
    SolverConfig,
    SolverError,
    agd,
    gd,
    projected_sgd,
    projected_svrg,
    saga_penalty,
    sgd_penalty,
    svrg_penalty,
)
from .theory import ReferenceSolutions


class ConfigError(ValueError):
    pass


class PlotDataError(KeyError):
    pass


# ---------------------------------------------------------------------------
# Constraint generation


def gen_constraints(
    seed: int,
    m: int,
    d: int,
    anchor,
    slack_scale: float = 1.0,
    eq_fraction: float = 0.5,
) -> list[ConstraintSet]:
    """Random halfspaces and hyperplanes that all contain ``anchor``.

    ``floor(m * eq_fraction)`` hyperplanes follow the halfspaces.  Normals
    are normalized Gaussians; halfspace offsets get a slack ``|s|`` with
    ``s ~ N(0, slack_scale**2)``.
    """
    if m < 1:
        raise ConfigError("m must be >= 1")
    if not 0.0 <= eq_fraction <= 1.0:
        raise ConfigError("eq_fraction must lie in [0, 1]")
    anchor = np.asarray(anchor, dtype=np.float64)
    if anchor.shape != (d,) or not np.all(np.isfinite(anchor)):
        raise ConfigError("anchor must be a finite vector of length d")
    rng = np.random.default_rng(seed)
    n_eq = int(math.floor(m * eq_fraction))
    n_in = m - n_eq
    out: list[ConstraintSet] = []
    for j in range(m):
        a = rng.standard_normal(d)
        a /= np.linalg.norm(a)
        b = float(a @ anchor)
        if j < n_in:
            out.append(Halfspace(a, b + abs(slack_scale * rng.standard_normal())))
        else:
            out.append(Hyperplane(a, b))
    for s in out:
        if dist_sq(s, anchor) > 1e-20 * max(1.0, float(anchor @ anchor)):
            raise AssertionError("generated constraint excludes the anchor")  # pragma: no cover
    return out


def quadratic_hyperplane_instance(d: int = 10, m: int = 2, seed: int = 0, mu: float = 1.0, L: float = 10.0):
    """Random strongly convex quadratic with ``m`` hyperplanes through a
    perturbed copy of its unconstrained minimizer (analytic gamma)."""
    obj = random_quadratic(d, mu, L, seed)
    rng = np.random.default_rng(seed + 1)
    anchor = obj.x0_star + rng.standard_normal(d)
    sets = gen_constraints(seed, m, d, anchor, eq_fraction=1.0)
    return obj, PenaltyEnsemble(sets)


# ---------------------------------------------------------------------------
# Configuration


METHOD_KINDS = (
    "gd",
    "agd",
    "sgd",
    "svrg",
    "saga",
    "projected_sgd",
    "projected_svrg",
    "meta",
    "meta_accelerated",
)


@dataclass
class MethodSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    """Parsed experiment description; see the README for the file schema."""

    name: str
    seed: int
    problem: dict
    constraints: dict
    lam: dict
    methods: list[MethodSpec]
    output_dir: str = "results"
    cadence: int = 0
    timing: bool = False
    reference_tol: float = 1e-12

    @classmethod
    def from_dict(cls, raw: dict, base: Path | None = None) -> "ExperimentConfig":
        try:
            methods = []
            for m in raw.get("methods", []):
                m = dict(m)
                kind = m.pop("kind")
                name = m.pop("name", kind)
                if kind not in METHOD_KINDS:
                    raise ConfigError(f"method {name!r}: unknown kind {kind!r}")
                methods.append(MethodSpec(name, kind, m))
            names = [m.name for m in methods]
            if len(set(names)) != len(names):
                raise ConfigError("method names must be unique")
            out = str(raw.get("output_dir", "results"))
            if base is not None and not Path(out).is_absolute():
                out = str(base / out)
            cfg = cls(
                name=str(raw.get("name", "experiment")),
                seed=int(raw.get("seed", 0)),
                problem=dict(raw["problem"]),
                constraints=dict(raw.get("constraints", {})),
                lam=dict(raw.get("lambda", {"policy": "fixed", "multiple_of_L": 100.0})),
                methods=methods,
                output_dir=out,
                cadence=int(raw.get("cadence", 0)),
                timing=bool(raw.get("timing", False)),
                reference_tol=float(raw.get("reference_tol", 1e-12)),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw, base=path.parent)

    def validate(self) -> None:
        m = self.constraints.get("m", 1)
        if self.constraints.get("file") is None and int(m) < 1:
            raise ConfigError("constraints.m must be >= 1")
        policy = self.lam.get("policy", "fixed")
        if policy == "fixed":
            v = self.lam.get("value", self.lam.get("multiple_of_L"))
            if v is None or not float(v) > 0:
                raise ConfigError("fixed lambda must be positive")
        elif policy != "schedule":
            raise ConfigError(f"unknown lambda policy {policy!r}")


# ---------------------------------------------------------------------------
# Instances


def build_objective(problem: dict, seed: int) -> tuple[FiniteSumObjective, list | None]:
    """Objective plus, for the built-in instances, their constraint sets."""
    kind = problem.get("kind", "quadratic")
    if kind == "quadratic":
        obj = random_quadratic(
            int(problem.get("d", 10)),
            float(problem.get("mu", 1.0)),
            float(problem.get("L", 10.0)),
            int(problem.get("seed", seed)),
        )
        return obj, None
    if kind in ("logistic", "libsvm"):
        if kind == "libsvm":
            ds = load_libsvm(problem["path"], problem.get("n_features"))
        else:
            ds = synthetic_binary_dataset(
                int(problem.get("n", 1605)),
                int(problem.get("d", 123)),
                float(problem.get("density", 0.11)),
                int(problem.get("seed", seed)),
            )
        if problem.get("subsample"):
            ds = ds.subsample(int(problem["subsample"]), int(problem.get("seed", seed)))
        if problem.get("scale", False):
            ds = type(ds)(max_abs_scale(ds.features), ds.labels, dict(ds.meta, scaled=True))
        reg = float(problem.get("reg", 1.0 / ds.n))
        return LogisticObjective(ds, reg), None
    if kind == "counterexample_1d":
        inst = one_d_counterexample(float(problem.get("L", 1.0)))
        return inst.objective, inst.sets
    if kind == "nonconvex_2d":
        inst = nonconvex_2d()
        return inst.objective, inst.sets
    raise ConfigError(f"unknown problem kind {kind!r}")


def build_instance(cfg: ExperimentConfig):
    obj, sets = build_objective(cfg.problem, cfg.seed)
    c = cfg.constraints
    if sets is None:
        if c.get("file"):
            sets = read_sets(c["file"])
        else:
            rng = np.random.default_rng(cfg.seed + 1)
            x0 = obj.x0_star if obj.x0_star is not None else np.zeros(obj.dim)
            anchor = np.asarray(x0) + float(c.get("anchor_scale", 1.0)) * rng.standard_normal(obj.dim)
            sets = gen_constraints(
                int(c.get("seed", cfg.seed)),
                int(c.get("m", 20)),
                obj.dim,
                anchor,
                float(c.get("slack_scale", 1.0)),
                float(c.get("eq_fraction", 0.5)),
            )
    gamma = c.get("gamma", "auto")
    if gamma == "auto":
        ens = PenaltyEnsemble(sets, n_samples=int(c.get("gamma_samples", 1000)), seed=cfg.seed)
    else:
        ens = PenaltyEnsemble(sets, RegularityInfo(float(gamma), "declared"))
    return obj, ens


def resolve_lambda(lam_cfg: dict, L: float) -> float:
    if "value" in lam_cfg:
        return float(lam_cfg["value"])
    return float(lam_cfg.get("multiple_of_L", 100.0)) * L


# ---------------------------------------------------------------------------
# Running


@dataclass
class MethodOutcome:
    name: str
    kind: str
    status: str
    message: str
    csv: str | None
    counters: dict
    seconds: float


@dataclass
class RunManifest:
    name: str
    constants: dict
    seeds: dict
    versions: dict
    outcomes: list[MethodOutcome]
    files: dict
    wall_clock_s: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default) + "\n"

    @property
    def failed(self) -> list[str]:
        return [o.name for o in self.outcomes if o.status != "ok"]


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v).__name__)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _solver_config(params: dict, seed: int, cadence: int, timing: bool) -> SolverConfig:
    keys = {"iterations", "alpha", "step", "batch_sets", "epoch_length", "tol", "use_kernel", "dykstra_tol"}
    unknown = set(params) - keys - {"seed", "snapshot_every", "x0"}
    if unknown:
        raise ConfigError(f"unknown solver options {sorted(unknown)}")
    kw = {k: params[k] for k in keys if k in params}
    return SolverConfig(
        seed=int(params.get("seed", seed)),
        snapshot_every=int(params.get("snapshot_every", cadence)),
        timing=timing,
        **kw,
    )


def _meta_config(params: dict, L: float, gamma: float, seed: int, accelerated: bool) -> MetaConfig:
    p = dict(params)
    kind = p.pop("schedule", "quadratic" if accelerated else "linear")
    inner_kind = p.pop("inner", "agd" if accelerated else "gd")
    if "beta" in p or "nu" in p:
        beta = float(p.pop("beta", L))
        nu = float(p.pop("nu", PenaltySchedule.min_nu(kind, beta, gamma)))
        sched = PenaltySchedule(kind, beta, nu, gamma)
    elif kind == "linear":
        sched = PenaltySchedule.linear_corollary(L, gamma)
    else:
        sched = PenaltySchedule.accelerated_corollary(L, gamma)
    inner = InnerMethodSpec.for_kind(inner_kind, seed=int(p.pop("inner_seed", seed)))
    theta = p.pop("theta", L)
    mc = MetaConfig(
        sched,
        inner,
        outer_iterations=int(p.pop("outer_iterations", 10)),
        inner_iterations=p.pop("inner_iterations", None),
        option=str(p.pop("option", "I")),
        theta=float(theta) if theta is not None else None,
        omega_rule=p.pop("omega_rule", None),
        budget_mode=str(p.pop("budget_mode", "theorem")),
        allow_empirical_gamma=bool(p.pop("allow_empirical_gamma", True)),
    )
    if p:
        raise ConfigError(f"unknown meta options {sorted(p)}")
    return mc


def run_method(spec: MethodSpec, objective, ensemble, lam, refs, cfg: ExperimentConfig):
    """Run one method; returns an object with ``to_csv`` and the counters."""
    p = dict(spec.params)
    x_lam = refs.penalty(lam).x if refs is not None and spec.kind in ("gd", "agd", "sgd", "svrg", "saga") else None
    ev = Evaluator(
        objective,
        ensemble,
        lam if spec.kind in ("gd", "agd", "sgd", "svrg", "saga") else 0.0,
        x_star=refs.x_star if refs is not None else None,
        f_star=refs.f_star if refs is not None else None,
        x_lam=x_lam,
        timing=cfg.timing,
    )
    x0 = np.asarray(p.pop("x0"), dtype=np.float64) if "x0" in p else None
    if spec.kind in ("meta", "meta_accelerated"):
        mc = _meta_config(p, objective.L, ensemble.gamma, cfg.seed, spec.kind == "meta_accelerated")
        fn = accelerated_increasing_penalty if spec.kind == "meta_accelerated" else increasing_penalty
        res = fn(objective, ensemble, mc, x0=x0, refs=refs, evaluator=ev)
        return res.trace, res.counters
    problem = PenaltyProblem(objective, ensemble, lam)
    if spec.kind in ("gd", "agd"):
        iters = int(p.pop("iterations", 1000))
        tol = float(p.pop("tol", 0.0))
        every = int(p.pop("snapshot_every", cfg.cadence))
        start = x0 if x0 is not None else np.zeros(objective.dim)
        if spec.kind == "gd":
            res = gd(problem, start, problem.L_F, iters, tol, ev, every, cfg.timing)
        else:
            res = agd(problem, start, problem.L_F, problem.mu, iters, tol, ev, every, cfg.timing)
        return res.trace, res.counters
    sc = _solver_config(p, cfg.seed, cfg.cadence, cfg.timing)
    if spec.kind == "projected_sgd":
        res = projected_sgd(objective, ensemble.sets, sc, x0=x0, evaluator=ev)
    elif spec.kind == "projected_svrg":
        res = projected_svrg(objective, ensemble.sets, sc, x0=x0, evaluator=ev)
    else:
        fn = {"sgd": sgd_penalty, "svrg": svrg_penalty, "saga": saga_penalty}[spec.kind]
        res = fn(problem, sc, x0=x0, evaluator=ev)
    return res.trace, res.counters


def _run_and_write(spec, objective, ensemble, lam, refs, cfg, out: Path) -> MethodOutcome:
    t = time.perf_counter()
    try:
        trace, counters = run_method(spec, objective, ensemble, lam, refs, cfg)
    except (SolverError, ValueError, ArithmeticError) as exc:
        return MethodOutcome(spec.name, spec.kind, "failed", str(exc), None, {}, time.perf_counter() - t)
    path = out / f"{spec.name}.csv"
    trace.to_csv(path)
    counts = {"grads": counters.grads, "projs": counters.projs, "full_projs": counters.full_projs}
    return MethodOutcome(spec.name, spec.kind, "ok", "", path.name, counts, time.perf_counter() - t)


def max_workers(requested: int | None = None) -> int:
    """Worker count, capped by the ``PENALTY_OPT_THREADS`` environment variable."""
    cap = os.environ.get("PENALTY_OPT_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"PENALTY_OPT_THREADS must be an integer, got {cap!r}") from exc
    return max(1, n)


def run_experiment(cfg: ExperimentConfig, methods: list[str] | None = None, jobs: int = 1) -> RunManifest:
    """Compute references once, run every method, write CSVs and ``manifest.json``.

    A failing method is recorded in the manifest and the rest still run.
    ``jobs > 1`` runs methods in worker processes (wall-clock columns are
    then not comparable across methods).
    """
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    objective, ensemble = build_instance(cfg)
    lam = resolve_lambda(cfg.lam, objective.L)
    refs = ReferenceSolutions(objective, ensemble, tol=cfg.reference_tol) if ensemble.convex else None
    constants = {
        "L": objective.L,
        "L_max": objective.L_max,
        "mu": objective.mu,
        "gamma": ensemble.gamma,
        "gamma_source": ensemble.regularity.source,
        "lambda": lam,
        "n": objective.n,
        "d": objective.dim,
        "m": ensemble.m,
    }
    if refs is not None:
        constants.update(
            f_star=refs.f_star, f0_star=refs.f0_star, grad_norm_at_xstar=refs.grad_norm_at_xstar
        )
    selected = [m for m in cfg.methods if methods is None or m.name in methods]
    if methods is not None:
        missing = set(methods) - {m.name for m in cfg.methods}
        if missing:
            raise ConfigError(f"unknown methods {sorted(missing)}")
    if refs is not None:
        refs.penalty(lam)  # shared by every fixed-lambda method
    workers = min(max_workers(jobs), max(1, len(selected)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(_run_and_write, s, objective, ensemble, lam, refs, cfg, out) for s in selected]
            outcomes = [f.result() for f in futs]
    else:
        outcomes = [_run_and_write(s, objective, ensemble, lam, refs, cfg, out) for s in selected]
    files = {o.csv: sha256_file(out / o.csv) for o in outcomes if o.csv}
    manifest = RunManifest(
        cfg.name,
        constants,
        {"experiment": cfg.seed, **{m.name: int(m.params.get("seed", cfg.seed)) for m in selected}},
        {
            "penaltyopt": __version__,
            "backend": _backend.name,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
        outcomes,
        files,
        time.perf_counter() - t0,
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def verify_manifest(path) -> list[str]:
    """Recompute every listed hash; returns the names that do not match."""
    path = Path(path)
    data = json.loads(path.read_text())
    bad = []
    for name, digest in sorted(data.get("files", {}).items()):
        f = path.parent / name
        if not f.exists() or sha256_file(f) != digest:
            bad.append(name)
    return bad


# ---------------------------------------------------------------------------
# Plot data


FIGURES = {
    "distance": "dist_xstar",
    "proj_gap": "f_proj_gap",
    "infeasibility": "infeas",
    "objective": "f",
}
X_AXES = {
    "iterations": "k",
    "grads": "grads",
    "projections": "projs",
    "time": "time_s",
}


def emit_plotdata(csv_files: dict, out_dir, figures=tuple(FIGURES), x_axis: str = "iterations") -> list[Path]:
    """Write one ``x y`` series per (figure, method).

    ``csv_files`` maps method names to trace CSVs.  Outer-loop traces use
    their cumulative inner iterations on the iteration axis.
    """
    if x_axis not in X_AXES:
        raise PlotDataError(f"unknown x axis {x_axis!r}")
    out_dir = Path(out_dir)
    written = []
    for method, path in csv_files.items():
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            cols = reader.fieldnames or []
        xcol = X_AXES[x_axis]
        if x_axis == "iterations" and "cum_inner" in cols:
            xcol = "cum_inner"
        for fig in figures:
            if fig not in FIGURES:
                raise PlotDataError(f"unknown figure {fig!r}")
            ycol = FIGURES[fig]
            for c in (xcol, ycol):
                if c not in cols:
                    raise PlotDataError(f"{path}: missing column {c!r}")
            out_dir.mkdir(parents=True, exist_ok=True)
            target = out_dir / f"{fig}_{method}.dat"
            with open(target, "w") as fh:
                fh.write(f"# {x_axis} {fig}\n")
                for r in rows:
                    fh.write(f"{r[xcol]} {r[ycol]}\n")
            written.append(target)
    return written
