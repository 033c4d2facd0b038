import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_set
from penaltyopt.objectives import Dataset, logreg, quadratic, random_quadratic
from penaltyopt.penalty import (
    PenaltyEnsemble,
    PenaltyProblem,
    h_grad,
    h_grad_component,
    h_value,
    penalized_value_grad,
    stochastic_grad,
)
from penaltyopt.sets import (
    RegularityInfo,
    Ball,
    Box,
    DimensionError,
    Halfspace,
    Hyperplane,
    dist_sq,
    dist_sq_intersection,
)


def _fd_grad(fun, x, step=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def _mixed(rng, d=3, m=6):
    kinds = ["hyperplane", "halfspace", "ball", "box"]
    # random families may have an empty intersection, so gamma is declared
    return PenaltyEnsemble([random_set(rng, kinds[j % 4], d) for j in range(m)], RegularityInfo(1.0, "declared"))


def test_h_value_examples():
    assert h_value(PenaltyEnsemble([Box([0, 0], [1, 1])]), [0.5, 0.5]) == 0.0
    assert h_value(PenaltyEnsemble([Halfspace([1, 0], 0)]), [2, 3]) == pytest.approx(2.0)
    two = PenaltyEnsemble([Hyperplane([1, 0], 0), Hyperplane([0, 1], 0)])
    x = np.array([2.0, 4.0])
    oracle = sum(dist_sq(s, x) for s in two.sets) / (2 * 2)
    assert h_value(two, x) == pytest.approx(5.0)
    assert h_value(two, x) == pytest.approx(oracle)


def test_h_grad_examples():
    e = PenaltyEnsemble([Halfspace([1, 0], 0)])
    np.testing.assert_allclose(h_grad(e, [2, 3]), [2, 0])
    np.testing.assert_array_equal(h_grad_component(e, 0, [-1, 3]), [0, 0])
    with pytest.raises(IndexError):
        h_grad_component(e, 1, [0, 0])
    with pytest.raises(DimensionError):
        h_value(e, [1, 2, 3])


def test_h_grad_matches_finite_differences(rng):
    for _ in range(10):
        e = _mixed(rng)
        x = rng.uniform(-3, 3, 3)
        fd = _fd_grad(lambda z: e.h_value(z), x)
        np.testing.assert_allclose(e.h_grad(x), fd, rtol=1e-6, atol=1e-7)


def test_full_gradient_is_mean_of_components(rng):
    e = _mixed(rng)
    x = rng.standard_normal(3) * 3
    comps = np.mean([e.h_grad_component(j, x) for j in range(e.m)], axis=0)
    np.testing.assert_allclose(e.h_grad(x), comps, atol=1e-14)


def test_penalized_value_grad_examples():
    f = quadratic([[1.0]], [0.0])
    p = PenaltyProblem(f, PenaltyEnsemble([Box([1.0], [2.0])]), 1.0)
    v, g = penalized_value_grad(p, [0.0])
    assert v == pytest.approx(0.5)
    np.testing.assert_allclose(g, [-1.0])
    fd = _fd_grad(lambda z: p.value(z), np.array([0.0]))
    np.testing.assert_allclose(g, fd, atol=1e-8)
    assert p.counters.grads == 1 and p.counters.projs == 1


def test_lambda_zero_and_feasible_points(rng):
    f = random_quadratic(3, seed=1)
    e = PenaltyEnsemble([Ball(np.zeros(3), 1.0), Halfspace([1, 0, 0], 0.5)])
    x = rng.standard_normal(3)
    v, g = PenaltyProblem(f, e, 0.0).value_grad(x)
    assert v == f.value(x)
    np.testing.assert_array_equal(g, f.grad(x))
    inside = np.array([0.1, 0.2, -0.3])
    v, g = PenaltyProblem(f, e, 37.0).value_grad(inside)
    assert v == pytest.approx(f.value(inside))
    np.testing.assert_allclose(g, f.grad(inside))


def _small_logreg(rng, n=4, d=3):
    X = rng.standard_normal((n, d))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return logreg(Dataset(X, y), 0.1)


def test_stochastic_grad_exhaustive_mean(rng):
    f = _small_logreg(rng, n=5)
    e = _mixed(rng, m=7)
    p = PenaltyProblem(f, e, 3.0)
    x = rng.standard_normal(3)
    pairs = list(itertools.product(range(f.n), range(e.m)))
    mean = np.mean([stochastic_grad(p, i, j, x) for i, j in pairs], axis=0)
    np.testing.assert_allclose(mean, p.grad(x), atol=1e-12)
    assert p.counters.grads == len(pairs) and p.counters.projs == len(pairs)


def test_stochastic_grad_special_cases(rng):
    f = random_quadratic(3, seed=2)
    p = PenaltyProblem(f, PenaltyEnsemble([Ball(np.ones(3), 0.5)]), 5.0)
    x = rng.standard_normal(3)
    np.testing.assert_allclose(p.stochastic_grad(0, 0, x), p.grad(x), atol=1e-13)
    g = _small_logreg(rng)
    p0 = PenaltyProblem(g, _mixed(rng), 0.0)
    for j in range(p0.m):
        np.testing.assert_array_equal(p0.stochastic_grad(2, j, x), g.component_grad(2, x))


def test_minibatch_over_sets_is_unbiased(rng):
    f = random_quadratic(3, seed=3)
    e = _mixed(rng, m=4)
    p = PenaltyProblem(f, e, 2.0)
    x = rng.standard_normal(3)
    batches = list(itertools.product(range(4), repeat=2))
    mean = np.mean([p.stochastic_grad(0, list(b), x) for b in batches], axis=0)
    np.testing.assert_allclose(mean, p.grad(x), atol=1e-12)
    assert p.counters.projs == 2 * len(batches)


def test_smoothness_constants():
    f = random_quadratic(4, 0.5, 7.0, seed=0)
    p = PenaltyProblem(f, PenaltyEnsemble([Ball(np.zeros(4), 1.0)]), 10.0)
    assert p.L_F == pytest.approx(17.0)
    assert p.mu == pytest.approx(0.5)
    with pytest.raises(ValueError):
        PenaltyProblem(f, p.penalty, -1.0)


@st.composite
def ensembles(draw):
    seed = draw(st.integers(0, 2**31))
    r = np.random.default_rng(seed)
    m = draw(st.integers(1, 5))
    kinds = draw(st.lists(st.sampled_from(["hyperplane", "halfspace", "ball", "box"]), min_size=m, max_size=m))
    return PenaltyEnsemble([random_set(r, k, 3) for k in kinds], RegularityInfo(1.0, "declared")), r


@settings(max_examples=100, deadline=None)
@given(ensembles())
def test_h_is_one_smooth(args):
    e, r = args
    x, y = r.uniform(-5, 5, (2, 3))
    lhs = np.linalg.norm(e.h_grad(x) - e.h_grad(y))
    assert lhs <= np.linalg.norm(x - y) + 1e-10


@st.composite
def equality_systems(draw):
    seed = draw(st.integers(0, 2**31))
    r = np.random.default_rng(seed)
    m = draw(st.integers(1, 5))
    d = draw(st.integers(2, 5))
    anchor = r.standard_normal(d)
    hs = []
    for _ in range(m):
        a = r.standard_normal(d)
        hs.append(Hyperplane(a, float(a @ anchor)))
    return PenaltyEnsemble(hs), r


@settings(max_examples=100, deadline=None)
@given(equality_systems())
def test_linear_regularity_and_pl_inequality(args):
    e, r = args
    assert e.regularity.source == "analytic"
    for _ in range(5):
        x = r.standard_normal(e.dim) * 3
        avg = sum(dist_sq(s, x) for s in e.sets) / e.m
        assert avg >= e.gamma * dist_sq_intersection(e.sets, x) - 1e-8
        g = e.h_grad(x)
        assert 2 * e.gamma * e.h_value(x) <= g @ g + 1e-10
