"""The projection penalty ``h`` and the penalized problem ``F = f + lam*h``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .objectives import FiniteSumObjective
from .sets import (
    KIND_BALL,
    KIND_BOX,
    KIND_HALFSPACE,
    KIND_HYPERPLANE,
    KIND_LATTICE,
    ConstraintSet,
    DimensionError,
    RegularityInfo,
    common_dim,
    pack_sets,
    project,
    project_each,
    regularity,
)


@dataclass
class Counters:
    """Oracle-call bookkeeping owned by one solver.

    ``grads`` counts component gradients, ``projs`` single-set projections,
    ``full_projs`` projections onto the whole intersection.
    """

    grads: int = 0
    projs: int = 0
    full_projs: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return self.grads, self.projs, self.full_projs


class PenaltyEnsemble:
    """``h(x) = (1/(2m)) sum_j ||x - Pi_j(x)||^2`` over ``m`` simple sets.

    Set indices are 0-based.  Evaluation is pure and never caches.
    """

    def __init__(self, sets, regularity_info: RegularityInfo | None = None, **gamma_kwargs):
        self.sets: list[ConstraintSet] = list(sets)
        self.dim = common_dim(self.sets)
        self.m = len(self.sets)
        self.packed = pack_sets(self.sets)
        self.regularity = regularity_info or regularity(self.sets, **gamma_kwargs)

    @property
    def gamma(self) -> float:
        return self.regularity.gamma

    @property
    def convex(self) -> bool:
        return all(s.convex for s in self.sets)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.dim:
            raise DimensionError(self.dim, x.shape[0] if x.ndim == 1 else -1)
        return x

    def residuals(self, x, audit: bool = True) -> np.ndarray:
        """Rows ``x - Pi_j(x)``."""
        x = self._check(x)
        return x - project_each(self.packed, x, audit=audit)

    def h_value(self, x, audit: bool = True) -> float:
        r = self.residuals(x, audit)
        return float(np.einsum("ij,ij->", r, r)) / (2.0 * self.m)

    def h_grad(self, x, audit: bool = True) -> np.ndarray:
        return self.residuals(x, audit).mean(axis=0)

    def h_value_grad(self, x, audit: bool = True):
        r = self.residuals(x, audit)
        return float(np.einsum("ij,ij->", r, r)) / (2.0 * self.m), r.mean(axis=0)

    def h_hess(self, x) -> np.ndarray:
        """A generalized Hessian of ``h`` (exact wherever ``h`` is twice
        differentiable)."""
        x = self._check(x)
        k, P, Q, s = self.packed.kinds, self.packed.P, self.packed.Q, self.packed.s
        H = np.zeros((self.dim, self.dim))
        for j in range(self.m):
            if k[j] == KIND_HYPERPLANE or (k[j] == KIND_HALFSPACE and P[j] @ x > s[j]):
                H += np.outer(P[j], P[j])
            elif k[j] == KIND_BALL:
                diff = x - P[j]
                rho = float(np.linalg.norm(diff))
                if rho > s[j]:
                    u = diff / rho
                    H += np.eye(self.dim) - (s[j] / rho) * (np.eye(self.dim) - np.outer(u, u))
            elif k[j] == KIND_BOX:
                H[np.diag_indices(self.dim)] += ((x < P[j]) | (x > Q[j])).astype(float)
            elif k[j] == KIND_LATTICE:
                H += np.outer(P[j], P[j]) / s[j]
        return H / self.m

    def h_grad_component(self, j: int, x) -> np.ndarray:
        if not 0 <= j < self.m:
            raise IndexError(f"set index {j} out of range for m={self.m}")
        x = self._check(x)
        return x - project(self.sets[j], x)


def h_value(ensemble: PenaltyEnsemble, x) -> float:
    return ensemble.h_value(x)


def h_grad(ensemble: PenaltyEnsemble, x) -> np.ndarray:
    return ensemble.h_grad(x)


def h_grad_component(ensemble: PenaltyEnsemble, j: int, x) -> np.ndarray:
    return ensemble.h_grad_component(j, x)


@dataclass
class PenaltyProblem:
    """``F_lam = f + lam*h`` with counted oracle access."""

    objective: FiniteSumObjective
    penalty: PenaltyEnsemble
    lam: float
    counters: Counters = field(default_factory=Counters)

    def __post_init__(self):
        if not self.lam >= 0.0:
            raise ValueError("lam must be nonnegative")
        if self.objective.dim != self.penalty.dim:
            raise DimensionError(self.penalty.dim, self.objective.dim)
        self.lam = float(self.lam)

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def m(self) -> int:
        return self.penalty.m

    @property
    def dim(self) -> int:
        return self.objective.dim

    @property
    def L_F(self) -> float:
        return self.objective.L + self.lam

    @property
    def L_F_max(self) -> float:
        """Smoothness of the worst single pair ``f_i + lam*h_j``."""
        return self.objective.L_max + self.lam

    @property
    def mu(self) -> float:
        return self.objective.mu

    def fresh(self) -> "PenaltyProblem":
        """Same problem with zeroed counters."""
        return PenaltyProblem(self.objective, self.penalty, self.lam)

    def with_lam(self, lam: float) -> "PenaltyProblem":
        """Same problem, new weight, shared counters."""
        return PenaltyProblem(self.objective, self.penalty, lam, self.counters)

    # uncounted evaluation, for measurement only
    def value(self, x) -> float:
        return self.objective.value(x) + self.lam * self.penalty.h_value(x, audit=False)

    def grad(self, x) -> np.ndarray:
        return self.objective.grad(x) + self.lam * self.penalty.h_grad(x, audit=False)

    def value_grad(self, x):
        """Counted full evaluation: ``n`` gradients and ``m`` projections."""
        fv, fg = self.objective.value_grad(x)
        self.counters.grads += self.n
        if self.lam == 0.0:
            return fv, fg
        hv, hg = self.penalty.h_value_grad(x)
        self.counters.projs += self.m
        return fv + self.lam * hv, fg + self.lam * hg

    def stochastic_grad(self, i: int, j, x) -> np.ndarray:
        """``grad f_i(x) + lam * mean_b grad h_{j_b}(x)``.

        ``j`` may be an index or a sequence of indices (a minibatch over sets).
        """
        g = self.objective.component_grad(i, x)
        self.counters.grads += 1
        if self.lam == 0.0:
            return g
        js = np.atleast_1d(j)
        gh = sum(self.penalty.h_grad_component(int(jj), x) for jj in js) / len(js)
        self.counters.projs += len(js)
        return g + self.lam * gh


def penalized_value_grad(problem: PenaltyProblem, x):
    return problem.value_grad(x)


def stochastic_grad(problem: PenaltyProblem, i: int, j, x) -> np.ndarray:
    return problem.stochastic_grad(i, j, x)
