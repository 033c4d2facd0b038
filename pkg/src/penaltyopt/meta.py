"""Increasing-penalty outer loop: grow ``lam_k``, solve inexactly, then take
an averaged-projection step toward the next penalty level.

Outer steps are numbered ``k = 1..K`` and the schedule is evaluated as
``lam_k = beta*(k-1) + nu`` (linear) or ``beta*(k-1)**2 + nu`` (quadratic),
so ``lam_1 = nu``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import FiniteSumObjective
from .penalty import Counters, PenaltyEnsemble, PenaltyProblem
from .solvers import TRACE_COLUMNS, Evaluator, InnerMethodSpec, TraceRecord, format_value
from .sets import intersection_oracle

SCHEDULE_KINDS = ("linear", "quadratic")
OPTIONS = ("I", "II")
OMEGA_RULES = ("option", "stated")
BUDGET_MODES = ("theorem", "certified")
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class MetaError(ValueError):
    pass


@dataclass(frozen=True)
class PenaltySchedule:
    """Penalty weights ``lam_k`` with the legality check on ``nu``."""

    kind: str
    beta: float
    nu: float
    gamma: float

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise MetaError(f"unknown schedule kind {self.kind!r}")
        if not self.beta > 0:
            raise MetaError("beta must be positive")
        if not 0 < self.gamma <= 1:
            raise MetaError("gamma must lie in (0, 1]")
        need = self.min_nu(self.kind, self.beta, self.gamma)
        if self.nu < need * (1 - 1e-12) - 1e-300 or self.nu < 0:
            raise MetaError(f"{self.kind} schedule needs nu >= {need:.6g}, got {self.nu:.6g}")

    @staticmethod
    def min_nu(kind: str, beta: float, gamma: float) -> float:
        if kind == "linear":
            return beta * (1 - gamma) / gamma
        return beta / gamma * (1 / gamma - 1)

    @classmethod
    def linear_corollary(cls, L: float, gamma: float) -> "PenaltySchedule":
        """``beta = L``, ``nu = L(1-gamma)/gamma`` (pair with ``theta = L``)."""
        return cls("linear", L, L * (1 - gamma) / gamma, gamma)

    @classmethod
    def accelerated_corollary(cls, L: float, gamma: float) -> "PenaltySchedule":
        """``beta = 3L`` with the smallest legal ``nu`` (pair with ``theta = L``).

        The smallest legal ``nu`` is ``3L(1-gamma)/gamma**2``; the smaller
        ``L(1-gamma)/gamma**2`` sometimes quoted for this schedule violates the
        legality condition whenever ``gamma < 1``.
        """
        beta = 3.0 * L
        return cls("quadratic", beta, cls.min_nu("quadratic", beta, gamma), gamma)

    def lam(self, k: int) -> float:
        if k < 1:
            raise MetaError("outer steps are numbered from 1")
        j = k - 1
        return self.beta * (j if self.kind == "linear" else j * j) + self.nu

    def omega_option1(self, k: int) -> float:
        """Step from ``y^k`` to ``x^{k+1}``: ``(lam_{k+1}-lam_k)/(gamma lam_{k+1})``."""
        return omega_option1(self.lam(k), self.lam(k + 1), self.gamma)

    def omega_stated(self, k: int) -> float:
        """Closed-form step ``beta/(gamma*(beta*(k+1)**p + nu))``, ``p`` the schedule degree."""
        p = 1 if self.kind == "linear" else 2
        return self.beta / (self.gamma * (self.beta * (k + 1) ** p + self.nu))

    def target(self, k: int, theta: float) -> float:
        """Inner accuracy ``eps_k`` the theory maintains: ``theta/k`` or ``theta/k**2`` at most."""
        if self.kind == "linear":
            return theta * (self.lam(k + 1) - self.lam(k)) / self.lam(k + 1)
        return self.beta * theta / self.lam(k + 1)


def omega_option1(lam: float, lam_next: float, gamma: float) -> float:
    if lam_next <= 0:
        return 0.0
    return (lam_next - lam) / (gamma * lam_next)


def step_coefficient(L: float, lam: float, lam_next: float, gamma: float, omega: float) -> float:
    """Growth factor ``c`` of the penalized gap across one averaged-projection step.

    After ``x' = y - omega*grad h(y)``,
    ``F_next(x') <= F(y) + c*(f(x') - f0*)`` with
    ``c = L*omega**2 / (gamma*lam_next*omega*(2-omega) - (lam_next-lam))``;
    ``inf`` when the denominator is not positive.
    """
    if omega <= 0:
        return 0.0 if lam_next == lam else math.inf
    den = gamma * lam_next * omega * (2.0 - omega) - (lam_next - lam)
    if den <= 0:
        return math.inf
    return L * omega * omega / den


# ---------------------------------------------------------------------------
# Option II


@dataclass(frozen=True)
class LineSearchResult:
    omega: float
    phi: float
    evaluations: int
    ok: bool


def _phi_factory(objective, ensemble, lam_next, y, direction, counters):
    def phi(w):
        x = y - w * direction
        if counters is not None:
            counters.grads += objective.n
            counters.projs += ensemble.m
        return objective.value(x) + lam_next * ensemble.h_value(x, audit=counters is not None)

    return phi


def line_search(
    objective: FiniteSumObjective,
    ensemble: PenaltyEnsemble,
    lam_next: float,
    y,
    direction=None,
    counters: Counters | None = None,
    omega_ref: float | None = None,
    grid: int = 33,
    tol: float = 1e-7,
) -> LineSearchResult:
    """Minimize ``phi(w) = F_next(y - w*direction)`` over ``w`` in ``[0, 2]``.

    A ``grid``-point scan picks the best bracket, golden-section search
    refines it.  ``omega_ref`` is also evaluated and wins ties, so the
    result is never worse than it.  Each ``phi`` evaluation is charged
    ``n`` gradients and ``m`` projections when ``counters`` is given.
    """
    y = np.asarray(y, dtype=np.float64)
    if direction is None:
        direction = ensemble.h_grad(y, audit=False)
    direction = np.asarray(direction, dtype=np.float64)
    if not np.any(direction):
        return LineSearchResult(0.0, math.nan, 0, True)
    phi = _phi_factory(objective, ensemble, lam_next, y, direction, counters)
    ws = np.linspace(0.0, 2.0, grid)
    vals = np.array([phi(w) for w in ws])
    evals = grid
    if not np.any(np.isfinite(vals)):
        return LineSearchResult(math.nan, math.nan, evals, False)
    vals = np.where(np.isfinite(vals), vals, math.inf)
    b = int(np.argmin(vals))
    lo, hi = ws[max(b - 1, 0)], ws[min(b + 1, grid - 1)]
    best_w, best_v = float(ws[b]), float(vals[b])
    a, c = hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo)
    fa, fc = phi(a), phi(c)
    evals += 2
    while hi - lo > tol:
        if fa <= fc:
            hi, c, fc = c, a, fa
            a = hi - GOLDEN * (hi - lo)
            fa = phi(a)
        else:
            lo, a, fa = a, c, fc
            c = lo + GOLDEN * (hi - lo)
            fc = phi(c)
        evals += 1
    for w, v in ((a, fa), (c, fc)):
        if math.isfinite(v) and v < best_v:
            best_w, best_v = float(w), float(v)
    if omega_ref is not None and 0.0 <= omega_ref <= 2.0:
        v = phi(omega_ref)
        evals += 1
        if math.isfinite(v) and v <= best_v:
            best_w, best_v = float(omega_ref), float(v)
    return LineSearchResult(best_w, best_v, evals, math.isfinite(best_v))


def line_search_omega(objective, ensemble, lam_next, y, direction=None, counters=None, omega_ref=None) -> float:
    """Option II stepsize in ``[0, 2]``."""
    return line_search(objective, ensemble, lam_next, y, direction, counters, omega_ref).omega


# ---------------------------------------------------------------------------
# Configuration and trace


@dataclass
class MetaConfig:
    """Outer-loop settings.

    ``inner_iterations`` fixes the inner budgets (an int or one entry per
    outer step); when ``None`` they are derived from the target accuracy
    ``theta``.  ``omega_rule`` is ``"option"`` (Option I or II) or
    ``"stated"`` (the schedule's closed form); ``None`` means ``"option"``
    for the plain loop and ``"stated"`` for the accelerated one.  ``budget_mode`` picks the
    a priori recurrence (``"theorem"``) or a gradient-norm certificate
    measured at each ``x^k`` (``"certified"``); the theorem mode falls back
    to the certificate whenever its step lemma does not apply.
    """

    schedule: PenaltySchedule
    inner: InnerMethodSpec = field(default_factory=InnerMethodSpec)
    outer_iterations: int = 10
    inner_iterations: int | list[int] | None = None
    option: str = "I"
    theta: float | None = None
    omega_rule: str | None = None
    budget_mode: str = "theorem"
    f_gap_bound: float | None = None
    f0_star: float | None = None
    allow_empirical_gamma: bool = False

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise MetaError("outer_iterations must be >= 1")
        if self.option not in OPTIONS:
            raise MetaError(f"option must be one of {OPTIONS}")
        if self.omega_rule is not None and self.omega_rule not in OMEGA_RULES:
            raise MetaError(f"omega_rule must be one of {OMEGA_RULES}")
        if self.budget_mode not in BUDGET_MODES:
            raise MetaError(f"budget_mode must be one of {BUDGET_MODES}")
        if isinstance(self.inner_iterations, (list, tuple)):
            if len(self.inner_iterations) < self.outer_iterations:
                raise MetaError("need one inner budget per outer step")
            if min(self.inner_iterations) < 1:
                raise MetaError("inner budgets must be >= 1")
        elif self.inner_iterations is not None and self.inner_iterations < 1:
            raise MetaError("inner budgets must be >= 1")
        if self.theta is not None and not self.theta > 0:
            raise MetaError("theta must be positive")

    def fixed_budget(self, k: int) -> int | None:
        if self.inner_iterations is None:
            return None
        if isinstance(self.inner_iterations, (list, tuple)):
            return int(self.inner_iterations[k - 1])
        return int(self.inner_iterations)


OUTER_COLUMNS = (
    "k",
    "lambda_k",
    "omega_k",
    "option_used",
    "eps_k",
    "target_k",
    "budget_mode",
    "inner_iters",
    "cum_inner",
) + tuple(c for c in TRACE_COLUMNS if c != "k")


@dataclass
class OuterRecord:
    k: int
    lambda_k: float
    omega_k: float
    option_used: str
    eps_k: float
    target_k: float
    budget_mode: str
    inner_iters: int
    cum_inner: int
    metrics: TraceRecord

    def values(self):
        head = {
            "k": self.k,
            "lambda_k": self.lambda_k,
            "omega_k": self.omega_k,
            "option_used": self.option_used,
            "eps_k": self.eps_k,
            "target_k": self.target_k,
            "budget_mode": self.budget_mode,
            "inner_iters": self.inner_iters,
            "cum_inner": self.cum_inner,
        }
        for c in OUTER_COLUMNS:
            yield head[c] if c in head else getattr(self.metrics, c)


class OuterTrace:
    """One row per outer step, describing ``y^k`` and the step that made ``x^k``."""

    columns = OUTER_COLUMNS

    def __init__(self):
        self.records: list[OuterRecord] = []

    def append(self, rec: OuterRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"unknown outer column {name!r}")
        i = self.columns.index(name)
        return np.array([list(r.values())[i] for r in self.records])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.records:
            w.writerow([v if isinstance(v, str) else format_value(v) for v in r.values()])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass
class MetaResult:
    y: np.ndarray
    trace: OuterTrace
    counters: Counters
    iterates: list = field(default_factory=list)

    def __iter__(self):
        yield self.y
        yield self.trace


# ---------------------------------------------------------------------------
# Outer loop


def _resolve_f0(objective, config, refs):
    if config.f0_star is not None:
        return config.f0_star
    if refs is not None:
        return refs.f0_star
    if objective.x0_star is not None:
        return objective.value(objective.x0_star)
    return None


def _resolve_gap(objective, ensemble, config, refs, f0, x0):
    if config.f_gap_bound is not None:
        return config.f_gap_bound
    if refs is not None:
        return refs.f_gap
    if f0 is None or not ensemble.convex:
        return None
    # any feasible point bounds f* from above
    start = objective.x0_star if objective.x0_star is not None else x0
    return objective.value(intersection_oracle(ensemble.sets)(start)) - f0


def increasing_penalty(
    objective: FiniteSumObjective,
    ensemble: PenaltyEnsemble,
    config: MetaConfig,
    x0=None,
    refs=None,
    evaluator: Evaluator | None = None,
    _default_rule: str = "option",
) -> MetaResult:
    """Run the increasing-penalty method.

    At outer step ``k`` the inner method runs on ``f + lam_k h`` from
    ``x^k`` to give ``y^k``; then ``x^{k+1} = y^k - omega_{k+1} grad h(y^k)``.
    ``refs`` (a :class:`~penaltyopt.theory.ReferenceSolutions`) enables the
    ``eps_k`` column and the distance-to-``x*_lam`` metric.
    """
    sched = config.schedule
    reg = ensemble.regularity
    if reg.source == "empirical" and not config.allow_empirical_gamma:
        raise MetaError("the outer loop needs an analytic or declared gamma")
    if sched.gamma > reg.gamma * (1 + 1e-9):
        raise MetaError(f"schedule gamma {sched.gamma:g} exceeds the ensemble's {reg.gamma:g}")
    mu = objective.mu
    if config.inner_iterations is None:
        if not mu > 0:
            raise MetaError("derived inner budgets need mu > 0")
        if config.theta is None:
            raise MetaError("derived inner budgets need theta")
    gamma = sched.gamma
    L = objective.L
    d = objective.dim
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=np.float64)
    base = PenaltyProblem(objective, ensemble, sched.lam(1))
    counters = base.counters
    f0 = _resolve_f0(objective, config, refs)
    gapf = _resolve_gap(objective, ensemble, config, refs, f0, x) if config.inner_iterations is None else None
    if evaluator is None and refs is not None:
        evaluator = Evaluator(objective, ensemble, x_star=refs.x_star, f_star=refs.f_star)
    stochastic = config.inner.kind in ("svrg", "saga", "sgd")

    trace = OuterTrace()
    iterates = []
    cum = 0
    omega_in, option_in, c_in = math.nan, "", math.inf
    y = x
    for k in range(1, config.outer_iterations + 1):
        lam = sched.lam(k)
        prob = base.with_lam(lam)
        target = sched.target(k, config.theta) if config.theta is not None else math.nan
        N = config.fixed_budget(k)
        mode = "fixed"
        if N is None:
            L_F = prob.L_F_max if stochastic else prob.L_F
            rho = None
            mode = config.budget_mode
            if mode == "theorem":
                if k == 1 and f0 is not None:
                    val, _ = prob.value_grad(x)
                    rho = target / max(val - f0, 1e-300)
                elif k > 1 and gapf is not None and c_in < 1.0:
                    prev = sched.target(k - 1, config.theta)
                    rho = target * (1.0 - c_in) / (prev + c_in * gapf)
                else:
                    mode = "certified"
            if rho is None:
                _, g = prob.value_grad(x)
                gap = float(g @ g) / (2.0 * mu)
                rho = target / gap if gap > 0 else 1.0
            N = config.inner.budget(L_F, mu, min(rho, 1.0)) if rho < 1.0 else 1
        y = config.inner.run(prob, x, N, step_index=k)
        cum += N
        eps = refs.eps(lam, y) if refs is not None else math.nan
        if evaluator is not None:
            ev = evaluator.with_lam(lam, refs.penalty(lam).x if refs is not None else None)
            metrics = ev(k, y, counters)
        else:
            metrics = TraceRecord(k, F=prob.value(y))
            metrics.grads, metrics.projs, metrics.full_projs = counters.snapshot()
        trace.append(OuterRecord(k, lam, omega_in, option_in, eps, target, mode, N, cum, metrics))
        iterates.append(y.copy())
        if k == config.outer_iterations:
            break

        lam_next = sched.lam(k + 1)
        direction = ensemble.h_grad(y)
        counters.projs += ensemble.m
        w1 = omega_option1(lam, lam_next, gamma)
        if (config.omega_rule or _default_rule) == "stated":
            omega, option_in = sched.omega_stated(k), "stated"
            c_in = step_coefficient(L, lam, lam_next, gamma, omega)
        elif config.option == "I":
            omega, option_in = w1, "I"
            c_in = step_coefficient(L, lam, lam_next, gamma, w1)
        else:
            ls = line_search(objective, ensemble, lam_next, y, direction, counters, omega_ref=w1)
            if ls.ok:
                omega, option_in = ls.omega, "II"
            else:
                omega, option_in = w1, "II->I"
            # Option II never does worse than Option I on the next objective
            c_in = step_coefficient(L, lam, lam_next, gamma, w1)
        omega_in = omega
        x = y - omega * direction
    return MetaResult(y, trace, counters, iterates)


def accelerated_increasing_penalty(
    objective: FiniteSumObjective,
    ensemble: PenaltyEnsemble,
    config: MetaConfig,
    x0=None,
    refs=None,
    evaluator: Evaluator | None = None,
) -> MetaResult:
    """Quadratic schedule with an accelerated (exponent 1/2) inner method."""
    if config.schedule.kind != "quadratic":
        raise MetaError("the accelerated variant needs a quadratic schedule")
    if config.inner.exponent != 0.5:
        raise MetaError("the accelerated variant needs an inner method with exponent 1/2")
    if not objective.mu > 0:
        raise MetaError("the accelerated variant needs mu > 0")
    return increasing_penalty(objective, ensemble, config, x0, refs, evaluator, _default_rule="stated")
