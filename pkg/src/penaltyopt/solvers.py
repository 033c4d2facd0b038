"""Iterative solvers for the penalized problem and projected baselines.

All solvers emit an :class:`IterateTrace`.  Metrics at cadence points are
computed by an :class:`Evaluator`, which never touches the solver's counters.

Variance-reduced methods pair a component gradient ``grad f_i`` with a set
gradient ``grad h_j`` under independent uniform ``(i, j)``.  SVRG corrects with
the same pair at the anchor; SAGA keeps one table per block.  Both estimators
are unbiased for ``grad F``.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import _backend
from .objectives import FiniteSumObjective
from .penalty import Counters, PenaltyEnsemble, PenaltyProblem
from .sets import DykstraError, dykstra, intersection_oracle, pack_sets

DIVERGENCE_NORM = 1e12

TRACE_COLUMNS = (
    "k",
    "f",
    "h",
    "F",
    "infeas",
    "dist_xstar",
    "dist_xlam",
    "f_proj_gap",
    "grads",
    "projs",
    "full_projs",
    "time_s",
)


class SolverError(RuntimeError):
    pass


class SolverDivergence(SolverError):
    """Iterate norm exceeded the guard; carries the trace so far."""

    def __init__(self, message, x, trace):
        super().__init__(message)
        self.x = x
        self.trace = trace


# ---------------------------------------------------------------------------
# Traces


@dataclass
class TraceRecord:
    k: int
    f: float = math.nan
    h: float = math.nan
    F: float = math.nan
    infeas: float = math.nan
    dist_xstar: float = math.nan
    dist_xlam: float = math.nan
    f_proj_gap: float = math.nan
    grads: int = 0
    projs: int = 0
    full_projs: int = 0
    time_s: float = math.nan


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


class IterateTrace:
    """Per-iteration records sorted by ``k`` with nondecreasing counters."""

    columns = TRACE_COLUMNS

    def __init__(self, records=None):
        self.records: list[TraceRecord] = []
        for r in records or ():
            self.append(r)

    def append(self, rec: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if rec.k < last.k:
                raise ValueError("trace records must be sorted by k")
            if rec.grads < last.grads or rec.projs < last.projs or rec.full_projs < last.full_projs:
                raise ValueError("trace counters must be nondecreasing")
            if rec.k == last.k:
                self.records[-1] = rec
                return
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    @property
    def last(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"unknown trace column {name!r}")
        return np.array([getattr(r, name) for r in self.records])

    def rows(self):
        for r in self.records:
            yield [format_value(getattr(r, c)) for c in self.columns]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "IterateTrace":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(TRACE_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing trace columns {sorted(missing)}")
            recs = []
            for row in reader:
                kw = {}
                for f in fields(TraceRecord):
                    kw[f.name] = int(row[f.name]) if f.type in ("int", int) else float(row[f.name])
                recs.append(TraceRecord(**kw))
        return cls(recs)


class Evaluator:
    """Measures an iterate without charging the solver.

    ``x_star``/``f_star`` enable the distance and projected-gap columns,
    ``x_lam`` the distance to the penalized solution.  The full projection
    is warm-started from the previous cadence point.
    """

    def __init__(
        self,
        objective: FiniteSumObjective,
        ensemble: PenaltyEnsemble,
        lam: float = 0.0,
        x_star=None,
        f_star=None,
        x_lam=None,
        timing: bool = False,
        dykstra_tol: float = 1e-10,
    ):
        self.objective = objective
        self.ensemble = ensemble
        self.lam = float(lam)
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=np.float64)
        self.f_star = f_star
        self.x_lam = None if x_lam is None else np.asarray(x_lam, dtype=np.float64)
        self.timing = timing
        self.dykstra_tol = dykstra_tol
        self._affine = None
        self._packed = None
        self._q = None
        if ensemble.convex:
            if all(type(s).__name__ == "Hyperplane" for s in ensemble.sets):
                self._affine = intersection_oracle(ensemble.sets)
            else:
                self._packed = pack_sets(ensemble.sets)

    def with_lam(self, lam: float, x_lam=None) -> "Evaluator":
        ev = Evaluator.__new__(Evaluator)
        ev.__dict__.update(self.__dict__)
        ev.lam = float(lam)
        ev.x_lam = None if x_lam is None else np.asarray(x_lam, dtype=np.float64)
        return ev

    def project_X(self, x) -> np.ndarray | None:
        if self._affine is not None:
            return self._affine(x)
        if self._packed is None:
            return None
        try:
            res = dykstra(self._packed, x, tol=self.dykstra_tol, corrections=self._q, audit=False)
        except DykstraError as exc:
            # a stale warm start can stall; retry cold once
            if self._q is None:
                return exc.best
            self._q = None
            return self.project_X(x)
        self._q = res.corrections
        return res.x

    def __call__(self, k: int, x, counters: Counters, elapsed: float = math.nan) -> TraceRecord:
        x = np.asarray(x, dtype=np.float64)
        f = self.objective.value(x)
        h = self.ensemble.h_value(x, audit=False)
        rec = TraceRecord(k, f, h, f + self.lam * h)
        p = self.project_X(x)
        if p is not None:
            r = x - p
            rec.infeas = float(r @ r)
            if self.f_star is not None:
                rec.f_proj_gap = self.objective.value(p) - self.f_star
        if self.x_star is not None:
            d = x - self.x_star
            rec.dist_xstar = float(d @ d)
        if self.x_lam is not None:
            d = x - self.x_lam
            rec.dist_xlam = float(d @ d)
        rec.grads, rec.projs, rec.full_projs = counters.snapshot()
        rec.time_s = elapsed if self.timing else math.nan
        return rec


class _Recorder:
    """Cadence bookkeeping shared by all solvers."""

    def __init__(self, evaluator, counters, every, K, timing):
        self.evaluator = evaluator
        self.counters = counters
        self.every = max(1, int(every)) if every else max(1, K // 100)
        self.K = K
        self.trace = IterateTrace()
        self.t0 = time.perf_counter()
        self.timing = timing

    def due(self, k: int) -> bool:
        return k % self.every == 0 or k == self.K

    def next_point(self, k: int) -> int:
        return min(self.K, (k // self.every + 1) * self.every)

    def record(self, k, x, F=math.nan):
        elapsed = time.perf_counter() - self.t0 if self.timing else math.nan
        if self.evaluator is not None:
            rec = self.evaluator(k, x, self.counters, elapsed)
        else:
            rec = TraceRecord(k, F=F, time_s=elapsed)
            rec.grads, rec.projs, rec.full_projs = self.counters.snapshot()
        self.trace.append(rec)
        return rec


def _guard(x, rec: _Recorder, k: int, method: str):
    if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > DIVERGENCE_NORM:
        rec.record(k, np.where(np.isfinite(x), x, 0.0))
        raise SolverDivergence(f"{method} diverged at iteration {k}", x, rec.trace)


# ---------------------------------------------------------------------------
# Configuration and results


@dataclass
class SolverConfig:
    """Settings shared by the solvers.

    ``alpha`` is the SGD schedule constant (default ``2/mu``), ``step`` a
    fixed stepsize override, ``snapshot_every`` the trace cadence (default
    ``K/100``), ``batch_sets`` the number of sets averaged per step.
    """

    iterations: int = 1000
    seed: int = 0
    alpha: float | None = None
    step: float | None = None
    snapshot_every: int = 0
    batch_sets: int = 1
    epoch_length: int | None = None
    tol: float = 0.0
    timing: bool = False
    use_kernel: bool = True
    dykstra_tol: float = 1e-10

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_sets < 1:
            raise ValueError("batch_sets must be >= 1")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        self.iterations = int(self.iterations)


@dataclass
class SolveResult:
    x: np.ndarray
    trace: IterateTrace
    converged: bool = True
    message: str = ""
    counters: Counters = field(default_factory=Counters)

    def __iter__(self):
        yield self.x
        yield self.trace


def sgd_stepsize(alpha: float, L: float, lam: float, k: int) -> float:
    """``alpha / (2 alpha (L + lam) + k)`` with ``k`` counted from 0."""
    return alpha / (2.0 * alpha * (L + lam) + k)


def _kernel_args(problem_or_objective):
    obj = getattr(problem_or_objective, "objective", problem_or_objective)
    spec = obj.kernel_spec()
    if spec is None:
        return None
    kind, M, v, reg = spec
    return int(kind), np.ascontiguousarray(M, dtype=np.float64), np.ascontiguousarray(v, dtype=np.float64), float(reg)


def _indices(rng, n, m, size, batch=1):
    i_idx = rng.integers(n, size=size).astype(np.intp)
    if batch == 1:
        j_idx = rng.integers(m, size=size).astype(np.intp)
    else:
        j_idx = rng.integers(m, size=(size, batch)).astype(np.intp)
    return i_idx, j_idx


# ---------------------------------------------------------------------------
# Stochastic methods on F_lam


def sgd_penalty(problem: PenaltyProblem, config: SolverConfig, x0=None, evaluator=None) -> SolveResult:
    """SGD with the decreasing schedule ``alpha/(2 alpha (L + lam) + k)``.

    ``L`` is the largest component smoothness, which for ``n = 1`` is the
    smoothness of ``f``.
    """
    mu = problem.mu
    if not mu > 0:
        raise SolverError("sgd_penalty needs a strongly convex objective")
    alpha = config.alpha if config.alpha is not None else 2.0 / mu
    if not alpha * mu > 1.0:
        raise SolverError(f"alpha must exceed 1/mu = {1.0 / mu:.6g}")
    L = problem.objective.L_max
    lam = problem.lam
    K = config.iterations
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    rec = _Recorder(evaluator, problem.counters, config.snapshot_every, K, config.timing)
    kargs = _kernel_args(problem) if config.use_kernel and config.batch_sets == 1 else None
    pk = problem.penalty.packed
    rec.record(0, x, problem.value(x) if evaluator is None else math.nan)
    k = 0
    while k < K:
        stop = rec.next_point(k)
        i_idx, j_idx = _indices(rng, problem.n, problem.m, stop - k, config.batch_sets)
        if kargs is not None:
            done = _backend.core.sgd_chunk(
                *kargs, pk.kinds, pk.P, pk.Q, pk.s, x, lam, alpha, L, k, i_idx, j_idx
            )
            problem.counters.grads += done
            if lam != 0.0:
                problem.counters.projs += done
            k += done
            if done < len(i_idx):
                _guard(x, rec, k, "sgd_penalty")
        else:
            for t in range(len(i_idx)):
                g = problem.stochastic_grad(int(i_idx[t]), j_idx[t], x)
                x -= sgd_stepsize(alpha, L, lam, k) * g
                k += 1
                if not math.isfinite(x @ x) or x @ x > DIVERGENCE_NORM**2:
                    _guard(x, rec, k, "sgd_penalty")
        rec.record(k, x, problem.value(x) if evaluator is None else math.nan)
    return SolveResult(x, rec.trace, True, "", problem.counters)


def svrg_penalty(problem: PenaltyProblem, config: SolverConfig, x0=None, evaluator=None) -> SolveResult:
    """SVRG on ``F_lam`` with epoch length ``n + m`` and step ``1/(6 L_F)``."""
    if not problem.mu > 0:
        raise SolverError("svrg_penalty needs a strongly convex objective")
    step = config.step if config.step is not None else 1.0 / (6.0 * problem.L_F_max)
    epoch = config.epoch_length or (problem.n + problem.m)
    K = config.iterations
    lam = problem.lam
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    rec = _Recorder(evaluator, problem.counters, config.snapshot_every, K, config.timing)
    kargs = _kernel_args(problem) if config.use_kernel and config.batch_sets == 1 else None
    pk = problem.penalty.packed
    rec.record(0, x, problem.value(x) if evaluator is None else math.nan)
    k = 0
    while k < K:
        w = x.copy()
        _, mu_w = problem.value_grad(w)
        epoch_end = min(K, k + epoch)
        while k < epoch_end:
            stop = min(rec.next_point(k), epoch_end)
            i_idx, j_idx = _indices(rng, problem.n, problem.m, stop - k, config.batch_sets)
            if kargs is not None:
                done = _backend.core.svrg_chunk(
                    *kargs, pk.kinds, pk.P, pk.Q, pk.s, x, w, mu_w, lam, step, i_idx, j_idx
                )
                problem.counters.grads += 2 * done
                if lam != 0.0:
                    problem.counters.projs += 2 * done
                k += done
                if done < len(i_idx):
                    _guard(x, rec, k, "svrg_penalty")
            else:
                for t in range(len(i_idx)):
                    g = problem.stochastic_grad(int(i_idx[t]), j_idx[t], x)
                    g -= problem.stochastic_grad(int(i_idx[t]), j_idx[t], w)
                    x -= step * (g + mu_w)
                    k += 1
                    if not math.isfinite(x @ x) or x @ x > DIVERGENCE_NORM**2:
                        _guard(x, rec, k, "svrg_penalty")
            if rec.due(k):
                rec.record(k, x, problem.value(x) if evaluator is None else math.nan)
    return SolveResult(x, rec.trace, True, "", problem.counters)


def saga_penalty(problem: PenaltyProblem, config: SolverConfig, x0=None, evaluator=None) -> SolveResult:
    """SAGA with one gradient table for ``f_i`` and one for ``h_j``."""
    if not problem.mu > 0:
        raise SolverError("saga_penalty needs a strongly convex objective")
    step = config.step if config.step is not None else 1.0 / (6.0 * problem.L_F_max)
    K = config.iterations
    lam = problem.lam
    obj, ens = problem.objective, problem.penalty
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    rec = _Recorder(evaluator, problem.counters, config.snapshot_every, K, config.timing)
    kargs = _kernel_args(problem) if config.use_kernel else None
    pk = ens.packed
    Tf = np.ascontiguousarray([obj.component_grad(i, x) for i in range(problem.n)])
    problem.counters.grads += problem.n
    Th = np.ascontiguousarray(ens.residuals(x)) if lam != 0.0 else np.zeros((problem.m, problem.dim))
    if lam != 0.0:
        problem.counters.projs += problem.m
    avg_f, avg_h = Tf.mean(axis=0), Th.mean(axis=0)
    rec.record(0, x, problem.value(x) if evaluator is None else math.nan)
    k = 0
    while k < K:
        stop = rec.next_point(k)
        i_idx, j_idx = _indices(rng, problem.n, problem.m, stop - k)
        if kargs is not None:
            done = _backend.core.saga_chunk(
                *kargs, pk.kinds, pk.P, pk.Q, pk.s, x, Tf, Th, avg_f, avg_h, lam, step, i_idx, j_idx
            )
            problem.counters.grads += done
            if lam != 0.0:
                problem.counters.projs += done
            k += done
            if done < len(i_idx):
                _guard(x, rec, k, "saga_penalty")
        else:
            for t in range(len(i_idx)):
                i, j = int(i_idx[t]), int(j_idx[t])
                gf = obj.component_grad(i, x)
                problem.counters.grads += 1
                g = gf - Tf[i] + avg_f
                avg_f += (gf - Tf[i]) / problem.n
                Tf[i] = gf
                if lam != 0.0:
                    gh = ens.h_grad_component(j, x)
                    problem.counters.projs += 1
                    g += lam * (gh - Th[j] + avg_h)
                    avg_h += (gh - Th[j]) / problem.m
                    Th[j] = gh
                x -= step * g
                k += 1
                if not math.isfinite(x @ x) or x @ x > DIVERGENCE_NORM**2:
                    _guard(x, rec, k, "saga_penalty")
        rec.record(k, x, problem.value(x) if evaluator is None else math.nan)
    return SolveResult(x, rec.trace, True, "", problem.counters)


# ---------------------------------------------------------------------------
# Deterministic methods


def _value_grad_of(F):
    if isinstance(F, PenaltyProblem):
        return F.value_grad, F.counters
    if isinstance(F, FiniteSumObjective):
        return F.value_grad, Counters()
    return F, Counters()


def gd(F, x0, L_F: float, max_iter: int = 1000, tol: float = 0.0, evaluator=None,
       snapshot_every: int = 0, timing: bool = False) -> SolveResult:
    """Gradient descent with step ``1/L_F``.

    ``F`` is a :class:`PenaltyProblem` (counted), an objective, or a callable
    returning ``(value, gradient)``.  Stops when ``||grad|| <= tol`` or after
    ``max_iter`` steps; ``converged`` reports which.
    """
    if not (L_F > 0 and math.isfinite(L_F)):
        raise SolverError("L_F must be positive and finite")
    vg, counters = _value_grad_of(F)
    x = np.array(x0, dtype=np.float64)
    rec = _Recorder(evaluator, counters, snapshot_every, max_iter, timing)
    val, g = vg(x)
    rec.record(0, x, val)
    k = 0
    converged = float(np.linalg.norm(g)) <= tol
    while not converged and k < max_iter:
        x = x - g / L_F
        k += 1
        val, g = vg(x)
        _guard(x, rec, k, "gd")
        converged = float(np.linalg.norm(g)) <= tol
        if converged or rec.due(k):
            rec.record(k, x, val)
    msg = "" if converged else f"gradient tolerance {tol:g} not reached in {max_iter} iterations"
    return SolveResult(x, rec.trace, converged, msg, counters)


def agd(F, x0, L_F: float, mu: float, max_iter: int = 1000, tol: float = 0.0, evaluator=None,
        snapshot_every: int = 0, timing: bool = False) -> SolveResult:
    """Nesterov's method with constant momentum ``(sqrt L - sqrt mu)/(sqrt L + sqrt mu)``.

    Each iteration costs one gradient at the extrapolated point ``y``; the
    stopping test uses that gradient.  On convergence the returned point is
    that ``y``; when the budget runs out it is the last gradient-step
    iterate ``x_N``, the point the linear-rate guarantee refers to.
    """
    if not mu > 0:
        raise SolverError("agd needs mu > 0")
    if not (L_F >= mu and math.isfinite(L_F)):
        raise SolverError("L_F must be finite and >= mu")
    vg, counters = _value_grad_of(F)
    beta = (math.sqrt(L_F) - math.sqrt(mu)) / (math.sqrt(L_F) + math.sqrt(mu))
    x_prev = np.array(x0, dtype=np.float64)
    y = x_prev.copy()
    rec = _Recorder(evaluator, counters, snapshot_every, max_iter, timing)
    val, g = vg(y)
    x = x_prev
    rec.record(0, y, val)
    k = 0
    converged = float(np.linalg.norm(g)) <= tol
    while not converged and k < max_iter:
        x = y - g / L_F
        y = x + beta * (x - x_prev)
        x_prev = x
        k += 1
        val, g = vg(y)
        _guard(y, rec, k, "agd")
        converged = float(np.linalg.norm(g)) <= tol
        if converged or rec.due(k):
            rec.record(k, y, val)
    out = y if converged else x
    msg = "" if converged else f"gradient tolerance {tol:g} not reached in {max_iter} iterations"
    return SolveResult(out, rec.trace, converged, msg, counters)


agd_strongly_convex = agd


# ---------------------------------------------------------------------------
# Inner-method contract for the increasing-penalty outer loop


INNER_KINDS = ("gd", "agd", "svrg", "saga", "sgd")


@dataclass(frozen=True)
class InnerMethodSpec:
    """An inner solver with its complexity contract.

    Reaching ``F(y) - F* <= rho (F(x) - F*)`` takes at most
    ``C_M * (L_F/mu)**exponent * (log(1/rho) + log_offset)`` iterations.
    The offset absorbs constant factors in the guarantee (AGD loses a
    factor 2, hence ``log 2``).
    """

    kind: str = "gd"
    C_M: float = 1.0
    exponent: float = 1.0
    log_offset: float = 0.0
    seed: int = 0
    use_kernel: bool = True

    def __post_init__(self):
        if self.kind not in INNER_KINDS:
            raise ValueError(f"unknown inner method {self.kind!r}; expected one of {INNER_KINDS}")
        if self.exponent not in (0.5, 1.0):
            raise ValueError("exponent must be 1 or 1/2")
        if not self.C_M > 0:
            raise ValueError("C_M must be positive")
        if not self.log_offset >= 0:
            raise ValueError("log_offset must be nonnegative")

    @classmethod
    def for_kind(cls, kind: str, **kw) -> "InnerMethodSpec":
        defaults = {
            "gd": (1.0, 1.0, 0.0),
            "agd": (1.0, 0.5, math.log(2.0)),
            "svrg": (6.0, 1.0, 0.0),
            "saga": (6.0, 1.0, 0.0),
            "sgd": (1.0, 1.0, 0.0),
        }
        if kind not in defaults:
            raise ValueError(f"unknown inner method {kind!r}; expected one of {INNER_KINDS}")
        C_M, exponent, offset = defaults[kind]
        return cls(kind, kw.pop("C_M", C_M), kw.pop("exponent", exponent), kw.pop("log_offset", offset), **kw)

    def budget(self, L_F: float, mu: float, rho: float) -> int:
        if not rho > 0:
            raise ValueError("rho must be positive")
        work = math.log(1.0 / rho) + self.log_offset
        if work <= 0:
            return 1
        return max(1, math.ceil(self.C_M * (L_F / mu) ** self.exponent * work))

    def run(self, problem: PenaltyProblem, x0, N: int, step_index: int = 0) -> np.ndarray:
        """Run exactly ``N`` iterations from ``x0`` and return the output point."""
        N = max(1, int(N))
        if self.kind == "gd":
            return gd(problem, x0, problem.L_F, max_iter=N, snapshot_every=N).x
        if self.kind == "agd":
            return agd(problem, x0, problem.L_F, problem.mu, max_iter=N, snapshot_every=N).x
        cfg = SolverConfig(N, seed=self.seed + step_index, snapshot_every=N, use_kernel=self.use_kernel)
        method = {"svrg": svrg_penalty, "saga": saga_penalty, "sgd": sgd_penalty}[self.kind]
        return method(problem, cfg, x0=x0).x


# ---------------------------------------------------------------------------
# Exact-projection baselines


class _ProjectionStep:
    """``Pi_X`` by warm-started Dykstra, charging the counters."""

    def __init__(self, sets, counters: Counters, tol: float):
        self.packed = pack_sets(list(sets))
        self.counters = counters
        self.tol = tol
        self.q = None

    def __call__(self, x):
        try:
            res = dykstra(self.packed, x, tol=self.tol, corrections=self.q)
        except DykstraError as exc:
            raise SolverError(f"projection failed: {exc}") from exc
        self.q = res.corrections
        self.counters.projs += res.projections
        self.counters.full_projs += 1
        return res.x


def _component_grad_fn(objective, use_kernel):
    kargs = _kernel_args(objective) if use_kernel else None
    if kargs is None:
        return objective.component_grad
    core = _backend.core
    return lambda i, x: core.component_grad(*kargs, i, x)


def projected_sgd(objective: FiniteSumObjective, sets, config: SolverConfig, x0=None,
                  evaluator=None) -> SolveResult:
    """``x <- Pi_X(x - w_k grad f_i(x))`` with the SGD schedule at ``lam = 0``."""
    mu = objective.mu
    if not mu > 0:
        raise SolverError("projected_sgd needs a strongly convex objective")
    if not all(s.convex for s in sets):
        raise SolverError("projected baselines require convex sets")
    alpha = config.alpha if config.alpha is not None else 2.0 / mu
    if not alpha * mu > 1.0:
        raise SolverError(f"alpha must exceed 1/mu = {1.0 / mu:.6g}")
    counters = Counters()
    proj = _ProjectionStep(sets, counters, config.dykstra_tol)
    cgrad = _component_grad_fn(objective, config.use_kernel)
    K = config.iterations
    L = objective.L_max
    x = np.zeros(objective.dim) if x0 is None else np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    rec = _Recorder(evaluator, counters, config.snapshot_every, K, config.timing)
    rec.record(0, x, objective.value(x) if evaluator is None else math.nan)
    k = 0
    while k < K:
        stop = rec.next_point(k)
        i_idx = rng.integers(objective.n, size=stop - k)
        for i in i_idx:
            g = cgrad(int(i), x)
            counters.grads += 1
            x = proj(x - sgd_stepsize(alpha, L, 0.0, k) * g)
            k += 1
        _guard(x, rec, k, "projected_sgd")
        rec.record(k, x, objective.value(x) if evaluator is None else math.nan)
    return SolveResult(x, rec.trace, True, "", counters)


def projected_svrg(objective: FiniteSumObjective, sets, config: SolverConfig, x0=None,
                   evaluator=None) -> SolveResult:
    """Projected SVRG with epoch length ``n`` and step ``1/(6 L_max)``."""
    if not objective.mu > 0:
        raise SolverError("projected_svrg needs a strongly convex objective")
    if not all(s.convex for s in sets):
        raise SolverError("projected baselines require convex sets")
    step = config.step if config.step is not None else 1.0 / (6.0 * objective.L_max)
    epoch = config.epoch_length or objective.n
    counters = Counters()
    proj = _ProjectionStep(sets, counters, config.dykstra_tol)
    cgrad = _component_grad_fn(objective, config.use_kernel)
    K = config.iterations
    x = np.zeros(objective.dim) if x0 is None else np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    rec = _Recorder(evaluator, counters, config.snapshot_every, K, config.timing)
    rec.record(0, x, objective.value(x) if evaluator is None else math.nan)
    k = 0
    while k < K:
        w = x.copy()
        mu_w = objective.grad(w)
        counters.grads += objective.n
        epoch_end = min(K, k + epoch)
        while k < epoch_end:
            stop = min(rec.next_point(k), epoch_end)
            i_idx = rng.integers(objective.n, size=stop - k)
            for i in i_idx:
                g = cgrad(int(i), x) - cgrad(int(i), w) + mu_w
                counters.grads += 2
                x = proj(x - step * g)
                k += 1
            _guard(x, rec, k, "projected_svrg")
            if rec.due(k):
                rec.record(k, x, objective.value(x) if evaluator is None else math.nan)
    return SolveResult(x, rec.trace, True, "", counters)
