import math

import numpy as np
import pytest
from scipy import sparse

from penaltyopt.objectives import (
    Dataset,
    LibsvmError,
    ObjectiveError,
    load_libsvm,
    logreg,
    nonconvex_2d,
    one_d_counterexample,
    quadratic,
    random_quadratic,
    synthetic_binary_dataset,
    write_libsvm,
    write_metadata,
)
from penaltyopt.penalty import PenaltyEnsemble
from penaltyopt.sets import dykstra_project
from penaltyopt.solvers import gd
from penaltyopt.theory import reference_penalty_solution


def _fd(fun, x, step=1e-6):
    return np.array(
        [(fun(x + step * e) - fun(x - step * e)) / (2 * step) for e in np.eye(x.size)]
    )


def test_logreg_examples():
    X = np.array([[1.0, 2.0], [0.5, -1.0]])
    f = logreg(Dataset(X, [1, -1]), 0.0)
    assert f.value(np.zeros(2)) == pytest.approx(math.log(2))
    g = logreg(Dataset(np.array([[1.0]]), [1]), 0.0)
    np.testing.assert_allclose(g.grad(np.zeros(1)), [-0.5])


def test_logreg_gradient_and_components(rng):
    data = synthetic_binary_dataset(n=60, d=8, density=0.4, seed=3)
    f = logreg(data, 1.0 / data.n)
    x = rng.standard_normal(8)
    np.testing.assert_allclose(f.grad(x), _fd(f.value, x), rtol=1e-6, atol=1e-9)
    mean = np.mean([f.component_grad(i, x) for i in range(f.n)], axis=0)
    np.testing.assert_allclose(f.grad(x), mean, atol=1e-12)
    assert f.mu == pytest.approx(1 / 60)
    A = data.features.toarray()
    assert f.L == pytest.approx(np.linalg.eigvalsh(A.T @ A).max() / (4 * 60) + 1 / 60, rel=1e-5)
    assert f.L >= f.mu


def test_logreg_rejects_bad_labels():
    with pytest.raises(ObjectiveError):
        Dataset(np.eye(2), [0.0, 1.0])


def test_quadratic_examples():
    f = quadratic(np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(f.x0_star, np.zeros(3))
    assert f.value(f.x0_star) == 0.0
    g = quadratic(np.diag([1.0, 4.0]), [1.0, 4.0])
    np.testing.assert_allclose(g.x0_star, [1.0, 1.0])
    assert (g.L, g.mu) == pytest.approx((4.0, 1.0))
    with pytest.raises(ObjectiveError):
        quadratic([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])


def test_quadratic_gd_matches_linear_solve(rng):
    M = rng.standard_normal((5, 5))
    Q = M @ M.T + np.eye(5)
    c = rng.standard_normal(5)
    f = quadratic(Q, c)
    res = gd(f, np.zeros(5), f.L, max_iter=100000, tol=1e-11)
    np.testing.assert_allclose(res.x, np.linalg.solve(Q, c), atol=1e-8)
    np.testing.assert_allclose(f.grad(res.x), _fd(f.value, res.x), atol=1e-6)


def test_random_quadratic_spectrum():
    f = random_quadratic(6, 0.5, 8.0, seed=4)
    w = np.linalg.eigvalsh(f.Q)
    assert (w[0], w[-1]) == pytest.approx((0.5, 8.0))


def test_one_d_counterexample():
    inst = one_d_counterexample()
    f = inst.objective
    assert f.value([1.0]) == pytest.approx(0.5)
    assert inst.meta["f_star"] == 0.5
    np.testing.assert_array_equal(inst.meta["x_star"], [1.0])
    e = PenaltyEnsemble(inst.sets)
    for lam in (1.0, 10.0, 100.0):
        ref = reference_penalty_solution(f, e, lam)
        np.testing.assert_allclose(dykstra_project(inst.sets, ref.x), [1.0], atol=1e-12)


def test_nonconvex_2d():
    inst = nonconvex_2d()
    f = inst.objective
    assert f.value([0.0, 5.0]) == 0.0
    assert f.value([1.0, 1.0]) == 1.0
    x = np.array([0.7, -1.3])
    np.testing.assert_allclose(f.grad(x), _fd(f.value, x), rtol=1e-7)
    assert not f.convex and f.n == 1


def test_nonconvex_2d_constrained_minimizer_by_grid():
    inst = nonconvex_2d()
    # coarse grid over the ball, then a 1e-5 refinement around the best point
    c, r = np.array([1.5, 1.0]), math.sqrt(1 / 3)

    def best_on(xs, ys):
        gx, gy = np.meshgrid(xs, ys)
        ok = ((gx - c[0]) ** 2 + (gy - c[1]) ** 2 <= r * r) & (gx + 4 * gy <= 7)
        v = np.where(ok, (gx * gy) ** 2, np.inf)
        k = np.unravel_index(np.argmin(v), v.shape)
        return np.array([gx[k], gy[k]]), v[k]

    p, _ = best_on(np.arange(c[0] - r, c[0] + r, 1e-3), np.arange(c[1] - r, c[1] + r, 1e-3))
    q, v = best_on(np.arange(p[0] - 2e-3, p[0] + 2e-3, 1e-5), np.arange(p[1] - 2e-3, p[1] + 2e-3, 1e-5))
    from penaltyopt.theory import reference_constrained_solution

    ref = reference_constrained_solution(inst.objective, inst.sets)
    assert ref.f == pytest.approx(v, abs=1e-4)
    np.testing.assert_allclose(ref.x, q, atol=5e-3)


LIBSVM = """+1 1:0.5 3:1
-1 2:2 1:-1
+1 3:4
"""


def test_load_libsvm(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text(LIBSVM)
    data = load_libsvm(path)
    np.testing.assert_array_equal(data.labels, [1, -1, 1])
    np.testing.assert_array_equal(data.features.toarray(), [[0.5, 0, 1], [-1, 2, 0], [0, 0, 4]])
    scaled = load_libsvm(path, scale=True)
    np.testing.assert_allclose(np.abs(scaled.features.toarray()).max(axis=0), 1.0)


def test_load_libsvm_zero_one_labels(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text("0 1:1\n1 2:1\n")
    np.testing.assert_array_equal(load_libsvm(path).labels, [-1, 1])


@pytest.mark.parametrize(
    "text, where",
    [("+1 1:0.5\nfoo 1:1\n", ":2:"), ("+1 1:x\n", ":1:"), ("+1 0:1\n", ":1:"), ("+1 1:1\n-1\n", ":2:")],
)
def test_load_libsvm_errors(tmp_path, text, where):
    path = tmp_path / "d.txt"
    path.write_text(text)
    with pytest.raises(LibsvmError, match=where):
        load_libsvm(path)


def test_libsvm_round_trip(tmp_path):
    data = synthetic_binary_dataset(n=40, d=7, seed=1)
    path = tmp_path / "r.txt"
    write_libsvm(data, path)
    back = load_libsvm(path, n_features=7)
    assert (back.features != data.features).nnz == 0
    np.testing.assert_array_equal(back.labels, data.labels)
    meta = write_metadata(back, path)
    assert '"d": 7' in meta.read_text()


def test_synthetic_dataset_has_no_empty_rows():
    data = synthetic_binary_dataset(n=300, d=20, density=0.01, seed=0)
    assert np.all(np.diff(sparse.csr_matrix(data.features).indptr) > 0)
    sub = data.subsample(50, seed=2)
    assert sub.n == 50 and sub.meta["subsample"] == 50
