"""Simple constraint sets with closed-form projections.

Every set is an immutable value.  Normal vectors of the linear variants are
normalized once at construction, so the projection itself never divides by
``||a||``.  The original coefficients are kept for serialization.

Intersections are handled by :func:`dykstra_project`, which is the exact
projection oracle used by the projected baselines and by every metric that
needs ``Pi_X``.
"""
from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _backend

KIND_HYPERPLANE = 0
KIND_HALFSPACE = 1
KIND_BALL = 2
KIND_BOX = 3
KIND_LATTICE = 4


class SetError(ValueError):
    """Invalid set definition or incompatible argument."""


class DimensionError(SetError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"dimension mismatch: set has d={expected}, point has d={got}")
        self.expected = expected
        self.got = got


class DykstraError(RuntimeError):
    """Dykstra's algorithm did not reach the requested feasibility."""

    def __init__(self, message: str, best: np.ndarray, residual: float, sweeps: int):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.sweeps = sweeps


# Audit hook: counts every single-set projection issued through ``project``.
_audit: contextvars.ContextVar[list[int] | None] = contextvars.ContextVar(
    "penaltyopt_projection_audit", default=None
)


class count_projections:
    """Context manager counting calls to :func:`project` in this context.

    >>> with count_projections() as audit:
    ...     _ = project(Ball(np.zeros(2), 1.0), np.ones(2))
    >>> audit.count
    1
    """

    def __init__(self):
        self._cell = [0]
        self._token = None

    @property
    def count(self) -> int:
        return self._cell[0]

    def __enter__(self):
        self._token = _audit.set(self._cell)
        return self

    def __exit__(self, *exc):
        _audit.reset(self._token)
        return False


def _vec(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=np.float64, ndmin=1)
    if arr.ndim != 1:
        raise SetError(f"{name} must be a vector")
    if not np.all(np.isfinite(arr)):
        raise SetError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _unit(a: np.ndarray) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        raise SetError("normal vector must be nonzero")
    unit = a / norm
    unit.setflags(write=False)
    return unit, norm


class ConstraintSet:
    """Base class; concrete variants below."""

    tag: str = "?"
    kind: int = -1
    convex: bool = True

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def _project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol: float = 1e-12) -> bool:
        return dist_sq(self, x) <= tol * tol

    def scale(self) -> float:
        """Characteristic length used to size sampling radii."""
        return 1.0


@dataclass(frozen=True, eq=False)
class Hyperplane(ConstraintSet):
    """``{x : a.x = b}``."""

    a: np.ndarray
    b: float
    normal: np.ndarray = field(init=False, repr=False)
    offset: float = field(init=False, repr=False)

    tag = "E"
    kind = KIND_HYPERPLANE

    def __post_init__(self):
        a = _vec(self.a, "a")
        unit, norm = _unit(a)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "normal", unit)
        object.__setattr__(self, "offset", float(self.b) / norm)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def _project(self, x):
        return x - (self.normal @ x - self.offset) * self.normal

    def scale(self):
        return abs(self.offset)


@dataclass(frozen=True, eq=False)
class Halfspace(ConstraintSet):
    """``{x : a.x <= b}``."""

    a: np.ndarray
    b: float
    normal: np.ndarray = field(init=False, repr=False)
    offset: float = field(init=False, repr=False)

    tag = "I"
    kind = KIND_HALFSPACE

    def __post_init__(self):
        a = _vec(self.a, "a")
        unit, norm = _unit(a)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "normal", unit)
        object.__setattr__(self, "offset", float(self.b) / norm)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def _project(self, x):
        viol = self.normal @ x - self.offset
        if viol <= 0.0:
            return x.copy()
        return x - viol * self.normal

    def scale(self):
        return abs(self.offset)


@dataclass(frozen=True, eq=False)
class Ball(ConstraintSet):
    """Closed Euclidean ball."""

    center: np.ndarray
    radius: float

    tag = "B"
    kind = KIND_BALL

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        r = float(self.radius)
        if not r > 0.0 or not math.isfinite(r):
            raise SetError("radius must be positive and finite")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def _project(self, x):
        diff = x - self.center
        norm = float(np.linalg.norm(diff))
        if norm <= self.radius:
            return x.copy()
        return self.center + (self.radius / norm) * diff

    def scale(self):
        return self.radius


@dataclass(frozen=True, eq=False)
class Box(ConstraintSet):
    """Axis-aligned box ``lo <= x <= hi``."""

    lo: np.ndarray
    hi: np.ndarray

    tag = "X"
    kind = KIND_BOX

    def __post_init__(self):
        lo, hi = _vec(self.lo, "lo"), _vec(self.hi, "hi")
        if lo.shape != hi.shape:
            raise SetError("lo and hi must have the same length")
        if np.any(lo > hi):
            raise SetError("lo must not exceed hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def _project(self, x):
        return np.minimum(np.maximum(x, self.lo), self.hi)

    def scale(self):
        return float(np.mean(self.hi - self.lo))


@dataclass(frozen=True, eq=False)
class LatticeHyperplane(ConstraintSet):
    """``{x : a.x is an integer}``; a countable union of parallel hyperplanes.

    Ties ``a.x = z + 1/2`` are broken by rounding half away from zero.
    """

    a: np.ndarray
    norm_sq: float = field(init=False, repr=False)

    tag = "L"
    kind = KIND_LATTICE
    convex = False

    def __post_init__(self):
        a = _vec(self.a, "a")
        _, norm = _unit(a)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "norm_sq", float(a @ a))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def _project(self, x):
        t = float(self.a @ x)
        z = round_half_away(t)
        return x - ((t - z) / self.norm_sq) * self.a

    def scale(self):
        return 1.0 / math.sqrt(self.norm_sq)


def round_half_away(t: float) -> float:
    return math.copysign(math.floor(abs(t) + 0.5), t)


# ---------------------------------------------------------------------------
# Projection API


def _check_point(s: ConstraintSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != s.dim:
        raise DimensionError(s.dim, x.shape[0] if x.ndim == 1 else -1)
    return x


def project(s: ConstraintSet, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``s`` (a new array)."""
    x = _check_point(s, x)
    cell = _audit.get()
    if cell is not None:
        cell[0] += 1
    return s._project(x)


def dist_sq(s: ConstraintSet, x) -> float:
    """Squared distance ``||x - project(s, x)||^2``.

    A measurement: not counted by :class:`count_projections`.
    """
    x = _check_point(s, x)
    r = x - s._project(x)
    return float(r @ r)


def all_convex(sets: Iterable[ConstraintSet]) -> bool:
    return all(s.convex for s in sets)


def common_dim(sets: Sequence[ConstraintSet]) -> int:
    if len(sets) == 0:
        raise SetError("at least one set is required")
    d = sets[0].dim
    for s in sets[1:]:
        if s.dim != d:
            raise SetError("all sets must share one dimension")
    return d


# ---------------------------------------------------------------------------
# Packed representation consumed by the compiled core


@dataclass(frozen=True)
class PackedSets:
    """Array form of a set family.

    Row ``j`` of ``P``/``Q`` and entry ``j`` of ``s`` hold, per kind:
    hyperplane/halfspace (unit normal, -, offset), ball (center, -, radius),
    box (lo, hi, -), lattice (a, -, ||a||^2).
    """

    kinds: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    s: np.ndarray

    @property
    def m(self) -> int:
        return self.kinds.shape[0]


def pack_sets(sets: Sequence[ConstraintSet]) -> PackedSets:
    d = common_dim(sets)
    m = len(sets)
    kinds = np.empty(m, dtype=np.intp)
    P = np.zeros((m, d))
    Q = np.zeros((m, d))
    s = np.zeros(m)
    for j, c in enumerate(sets):
        kinds[j] = c.kind
        if isinstance(c, (Hyperplane, Halfspace)):
            P[j] = c.normal
            s[j] = c.offset
        elif isinstance(c, Ball):
            P[j] = c.center
            s[j] = c.radius
        elif isinstance(c, Box):
            P[j] = c.lo
            Q[j] = c.hi
        elif isinstance(c, LatticeHyperplane):
            P[j] = c.a
            s[j] = c.norm_sq
        else:
            raise SetError(f"cannot pack {type(c).__name__}")
    return PackedSets(kinds, P, Q, s)


def project_each(packed: PackedSets, x, audit: bool = True) -> np.ndarray:
    """All ``m`` single-set projections of ``x`` as rows of an ``(m, d)`` array.

    Counts ``m`` projections in an active audit unless ``audit`` is false
    (measurement code uses that to stay out of the books).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != packed.P.shape[1]:
        raise DimensionError(packed.P.shape[1], x.shape[0] if x.ndim == 1 else -1)
    if audit:
        cell = _audit.get()
        if cell is not None:
            cell[0] += packed.m
    k, P, Q, s = packed.kinds, packed.P, packed.Q, packed.s
    out = np.empty_like(P)
    lin = (k == KIND_HYPERPLANE) | (k == KIND_HALFSPACE)
    if lin.any():
        viol = P[lin] @ x - s[lin]
        viol = np.where(k[lin] == KIND_HALFSPACE, np.maximum(viol, 0.0), viol)
        out[lin] = x - viol[:, None] * P[lin]
    ball = k == KIND_BALL
    if ball.any():
        diff = x - P[ball]
        norm = np.linalg.norm(diff, axis=1)
        scale = np.where(norm > s[ball], s[ball] / np.where(norm > 0, norm, 1.0), 1.0)
        out[ball] = P[ball] + scale[:, None] * diff
    box = k == KIND_BOX
    if box.any():
        out[box] = np.minimum(np.maximum(x, P[box]), Q[box])
    lat = k == KIND_LATTICE
    if lat.any():
        t = P[lat] @ x
        z = np.copysign(np.floor(np.abs(t) + 0.5), t)
        out[lat] = x - ((t - z) / s[lat])[:, None] * P[lat]
    return out


# ---------------------------------------------------------------------------
# Intersections


@dataclass
class DykstraResult:
    x: np.ndarray
    sweeps: int
    residual: float
    projections: int
    corrections: np.ndarray


def dykstra(
    sets: Sequence[ConstraintSet] | PackedSets,
    x,
    tol: float = 1e-10,
    max_sweeps: int = 100_000,
    corrections: np.ndarray | None = None,
    audit: bool = True,
) -> DykstraResult:
    """Dykstra's cyclic projection with full bookkeeping.

    ``corrections`` warm-starts the dual variables (one row per set).  Any
    warm start whose rows came from a previous Dykstra run on the same
    family converges to the same projection, because the iterate is
    initialized consistently as ``x - sum(corrections)``.

    The stopping test is feasibility: ``max_j dist(set_j, p) <= tol``.
    """
    packed = sets if isinstance(sets, PackedSets) else _packed_convex(sets)
    x = np.array(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != packed.P.shape[1]:
        raise DimensionError(packed.P.shape[1], x.shape[0] if x.ndim == 1 else -1)
    if corrections is None:
        q = np.zeros_like(packed.P)
    else:
        q = np.array(corrections, dtype=np.float64)
    p, sweeps, resid, nproj, ok = _backend.core.dykstra_packed(
        packed.kinds, packed.P, packed.Q, packed.s, x, q, float(tol), int(max_sweeps)
    )
    if not ok:
        if audit and _audit.get() is not None:
            _audit.get()[0] += nproj
        raise DykstraError(
            f"Dykstra did not converge in {max_sweeps} sweeps (residual {resid:.3e})",
            p,
            resid,
            sweeps,
        )
    if audit:
        cell = _audit.get()
        if cell is not None:
            cell[0] += nproj
    return DykstraResult(p, sweeps, resid, nproj, q)


def _packed_convex(sets: Sequence[ConstraintSet]) -> PackedSets:
    if not all_convex(sets):
        raise SetError("Dykstra projection requires convex sets")
    return pack_sets(sets)


def dykstra_project(
    sets: Sequence[ConstraintSet], x, tol: float = 1e-10, max_sweeps: int = 100_000
) -> np.ndarray:
    """Projection onto the intersection of convex ``sets``."""
    return dykstra(sets, x, tol=tol, max_sweeps=max_sweeps).x


def affine_project(hyperplanes: Sequence[Hyperplane], x) -> np.ndarray:
    """Exact projection onto an intersection of hyperplanes (least squares)."""
    N = np.array([h.normal for h in hyperplanes])
    beta = np.array([h.offset for h in hyperplanes])
    x = np.asarray(x, dtype=np.float64)
    # minimum-norm correction solves N corr = N x - beta
    corr, *_ = np.linalg.lstsq(N, N @ x - beta, rcond=None)
    return x - corr


def intersection_oracle(sets: Sequence[ConstraintSet], tol: float = 1e-12) -> Callable:
    """Best available exact projection onto the intersection of ``sets``.

    Intended for measurement: its projections are not audited.
    """
    sets = list(sets)
    if all(isinstance(s, Hyperplane) for s in sets):
        return lambda x: affine_project(sets, x)
    packed = _packed_convex(sets)
    return lambda x: dykstra(packed, x, tol=tol, audit=False).x


def dist_sq_intersection(sets: Sequence[ConstraintSet], x, oracle: Callable | None = None) -> float:
    oracle = oracle or intersection_oracle(sets)
    x = np.asarray(x, dtype=np.float64)
    r = x - oracle(x)
    return float(r @ r)


# ---------------------------------------------------------------------------
# Linear regularity


@dataclass(frozen=True)
class RegularityInfo:
    gamma: float
    source: str  # "analytic" | "empirical" | "declared"
    samples_used: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 + 1e-12):
            raise SetError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.source not in ("analytic", "empirical", "declared"):
            raise SetError(f"unknown gamma source {self.source!r}")


def gamma_linear(equalities: Sequence[Hyperplane]) -> RegularityInfo:
    """Smallest positive eigenvalue of the averaged normal projector."""
    if len(equalities) == 0:
        raise SetError("at least one hyperplane is required")
    if not all(isinstance(h, Hyperplane) for h in equalities):
        raise SetError("gamma_linear accepts hyperplanes only")
    N = np.array([h.normal for h in equalities])
    M = N.T @ N / len(equalities)
    try:
        w = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SetError(f"eigen-solve failed: {exc}") from exc
    positive = w[w > 1e-10 * max(w[-1], 1.0)]
    gamma = float(min(positive[0], 1.0))
    return RegularityInfo(gamma, "analytic", 0)


def gamma_estimate(
    sets: Sequence[ConstraintSet],
    intersection: Callable | None = None,
    n_samples: int = 1000,
    seed: int | None = 0,
    anchor=None,
    radius: float = 1.0,
) -> RegularityInfo:
    """Empirical linear-regularity constant (an upper bound on the true one).

    Points are drawn from a Gaussian of standard deviation
    ``radius * mean set scale`` around a feasible ``anchor``.
    """
    if n_samples < 1:
        raise SetError("n_samples must be >= 1")
    sets = list(sets)
    d = common_dim(sets)
    oracle = intersection or intersection_oracle(sets)
    if anchor is None:
        anchor = oracle(np.zeros(d))
    anchor = np.asarray(anchor, dtype=np.float64)
    scale = float(np.mean([s.scale() for s in sets]))
    sigma = radius * (scale if scale > 0 else 1.0)
    rng = np.random.default_rng(seed)
    best = math.inf
    used = 0
    for _ in range(n_samples):
        x = anchor + sigma * rng.standard_normal(d)
        den = dist_sq_intersection(sets, x, oracle)
        if den <= 1e-20:
            continue
        num = sum(dist_sq(s, x) for s in sets) / len(sets)
        best = min(best, num / den)
        used += 1
    if used == 0:
        raise SetError("all samples were feasible; increase the sampling radius")
    return RegularityInfo(min(best, 1.0), "empirical", used)


def regularity(sets: Sequence[ConstraintSet], **kwargs) -> RegularityInfo:
    """Analytic gamma when available, otherwise the empirical estimate."""
    sets = list(sets)
    if len(sets) == 1:
        return RegularityInfo(1.0, "analytic", 0)
    if all(isinstance(s, Hyperplane) for s in sets):
        return gamma_linear(sets)
    return gamma_estimate(sets, **kwargs)


# ---------------------------------------------------------------------------
# Text serialization: one record per line


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_set(s: ConstraintSet) -> str:
    if isinstance(s, (Hyperplane, Halfspace)):
        vals = [*s.a, s.b]
    elif isinstance(s, Ball):
        vals = [*s.center, s.radius]
    elif isinstance(s, Box):
        vals = [*s.lo, *s.hi]
    elif isinstance(s, LatticeHyperplane):
        vals = list(s.a)
    else:
        raise SetError(f"cannot serialize {type(s).__name__}")
    return " ".join([s.tag, *(_fmt(v) for v in vals)])


def parse_set(line: str) -> ConstraintSet:
    parts = line.split()
    if not parts:
        raise SetError("empty record")
    tag, vals = parts[0], [float(t) for t in parts[1:]]
    if tag in ("E", "I", "B"):
        if len(vals) < 2:
            raise SetError(f"record {tag} needs at least 2 numbers")
        cls = {"E": Hyperplane, "I": Halfspace, "B": Ball}[tag]
        return cls(np.array(vals[:-1]), vals[-1])
    if tag == "X":
        if len(vals) < 2 or len(vals) % 2:
            raise SetError("record X needs an even number of values")
        h = len(vals) // 2
        return Box(np.array(vals[:h]), np.array(vals[h:]))
    if tag == "L":
        return LatticeHyperplane(np.array(vals))
    raise SetError(f"unknown record tag {tag!r}")


def write_sets(sets: Iterable[ConstraintSet], path) -> None:
    with open(path, "w") as fh:
        for s in sets:
            fh.write(format_set(s) + "\n")


def read_sets(path) -> list[ConstraintSet]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(parse_set(line))
            except ValueError as exc:
                raise SetError(f"{path}:{lineno}: {exc}") from exc
    return out
