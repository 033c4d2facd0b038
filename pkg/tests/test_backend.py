import subprocess
import sys

import numpy as np
import pytest

import penaltyopt
from penaltyopt import _backend, _core_py
from penaltyopt.harness import gen_constraints
from penaltyopt.objectives import logreg, random_quadratic, synthetic_binary_dataset
from penaltyopt.penalty import PenaltyEnsemble, PenaltyProblem
from penaltyopt.sets import Ball, Box, LatticeHyperplane, pack_sets
from penaltyopt.solvers import SolverConfig, saga_penalty, sgd_penalty, svrg_penalty

compiled = pytest.importorskip("penaltyopt._core")


@pytest.fixture
def family():
    rng = np.random.default_rng(0)
    sets = gen_constraints(0, 8, 4, rng.standard_normal(4))
    sets += [Ball(np.zeros(4), 2.0), Box(-np.ones(4), np.ones(4)), LatticeHyperplane([1.0, 0.5, 0.0, 2.0])]
    return pack_sets(sets)


def test_project_row_agrees(family):
    rng = np.random.default_rng(1)
    pk = family
    for _ in range(50):
        x = rng.standard_normal(4) * 3
        for j in range(pk.m):
            a = _core_py.project_row(pk.kinds, pk.P, pk.Q, pk.s, j, x)
            b = np.asarray(compiled.project_row(pk.kinds, pk.P, pk.Q, pk.s, j, x))
            np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


def test_dykstra_agrees():
    rng = np.random.default_rng(2)
    pk = pack_sets(gen_constraints(2, 10, 5, rng.standard_normal(5)) + [Ball(np.zeros(5), 4.0)])
    x = rng.standard_normal(5) * 4
    out = []
    for core in (_core_py, compiled):
        q = np.zeros_like(pk.P)
        p, sweeps, resid, nproj, ok = core.dykstra_packed(pk.kinds, pk.P, pk.Q, pk.s, x, q, 1e-10, 100000)
        out.append((np.asarray(p), sweeps, nproj, ok))
    np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-12)
    assert out[0][1:] == out[1][1:]


@pytest.mark.parametrize("method", [sgd_penalty, svrg_penalty, saga_penalty])
@pytest.mark.parametrize("objective", ["quadratic", "logistic"])
def test_solver_trajectories_agree_across_backends(method, objective):
    if objective == "quadratic":
        f = random_quadratic(4, seed=3)
    else:
        data = synthetic_binary_dataset(n=30, d=4, density=0.5, seed=3)
        f = logreg(data, 1.0 / 30)
    rng = np.random.default_rng(3)
    e = PenaltyEnsemble(gen_constraints(3, 6, 4, rng.standard_normal(4)), n_samples=20)
    p = PenaltyProblem(f, e, 10.0)
    xs = {}
    try:
        for name in ("python", "compiled"):
            _backend.use(name)
            xs[name] = method(p.fresh(), SolverConfig(2000, seed=5, snapshot_every=500)).x
    finally:
        _backend.use("compiled")
    np.testing.assert_allclose(xs["python"], xs["compiled"], rtol=1e-9, atol=1e-12)


def test_backend_switch():
    try:
        _backend.use("python")
        assert penaltyopt.backend() == "python"
    finally:
        _backend.use("compiled")
    assert penaltyopt.backend() == "compiled"
    with pytest.raises(ValueError):
        _backend.use("fortran")


def _probe(env_backend, block_compiled=False):
    code = "import penaltyopt; print(penaltyopt.backend())"
    if block_compiled:
        code = (
            "import sys, importlib.abc\n"
            "class Block(importlib.abc.MetaPathFinder):\n"
            "    def find_spec(self, name, path, target=None):\n"
            "        if name == 'penaltyopt._core':\n"
            "            raise ImportError('blocked')\n"
            "sys.meta_path.insert(0, Block())\n" + code
        )
    env = {"PENALTYOPT_BACKEND": env_backend, "PATH": ""}
    out = subprocess.run([sys.executable, "-W", "ignore", "-c", code], capture_output=True, text=True, env=env)
    return out.stdout.strip(), out.returncode


def test_environment_selects_backend():
    assert _probe("python") == ("python", 0)
    assert _probe("auto") == ("compiled", 0)


def test_falls_back_when_compiled_core_missing():
    assert _probe("auto", block_compiled=True) == ("python", 0)
    _, code = _probe("compiled", block_compiled=True)
    assert code != 0
