import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penaltyopt.harness import (
    ConfigError,
    ExperimentConfig,
    PlotDataError,
    emit_plotdata,
    gen_constraints,
    max_workers,
    quadratic_hyperplane_instance,
    resolve_lambda,
    run_experiment,
    verify_manifest,
)
from penaltyopt.sets import Halfspace, Hyperplane


# --- constraint generation ---------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    m=st.integers(1, 12),
    d=st.integers(1, 6),
    frac=st.sampled_from([0.0, 0.25, 0.5, 1.0]),
)
def test_gen_constraints_contain_anchor(seed, m, d, frac):
    anchor = np.random.default_rng(seed).standard_normal(d)
    sets = gen_constraints(seed, m, d, anchor, eq_fraction=frac)
    assert len(sets) == m
    n_eq = int(np.floor(m * frac))
    assert sum(isinstance(s, Hyperplane) for s in sets) == n_eq
    for s in sets:
        assert np.isclose(np.linalg.norm(s.a), 1.0)
        r = float(s.a @ anchor - s.b)
        if isinstance(s, Halfspace):
            assert r <= 1e-12  # slack is non-negative
        else:
            assert abs(r) <= 1e-12


def test_gen_constraints_golden():
    sets = gen_constraints(0, 2, 2, np.array([0.5, -1.0]))
    assert isinstance(sets[0], Halfspace) and isinstance(sets[1], Hyperplane)
    np.testing.assert_allclose(sets[0].a, [0.6894137976242852, -0.7243677350940343], rtol=1e-14)
    np.testing.assert_allclose(sets[0].b, 1.709497284349459, rtol=1e-14)
    np.testing.assert_allclose(sets[1].a, [0.192179652399663, -0.9813597613533707], rtol=1e-14)
    np.testing.assert_allclose(sets[1].b, 1.0774495875532022, rtol=1e-14)


@pytest.mark.parametrize(
    "kwargs",
    [dict(m=0), dict(eq_fraction=1.5), dict(anchor=[np.nan, 0.0])],
)
def test_gen_constraints_rejects(kwargs):
    args = dict(seed=0, m=2, d=2, anchor=[0.0, 0.0])
    args.update(kwargs)
    with pytest.raises(ConfigError):
        gen_constraints(**args)


def test_quadratic_hyperplane_instance_feasible():
    obj, ens = quadratic_hyperplane_instance(d=10, m=2, seed=0)
    assert ens.m == 2 and obj.dim == 10
    assert 0.0 < ens.gamma <= 1.0


# --- configuration -----------------------------------------------------------


def _raw(tmp_path, **over):
    raw = {
        "name": "t",
        "seed": 0,
        "problem": {"kind": "quadratic", "d": 5, "mu": 1.0, "L": 10.0},
        "constraints": {"m": 3, "eq_fraction": 1.0},
        "lambda": {"policy": "fixed", "multiple_of_L": 100.0},
        "methods": [{"kind": "gd", "iterations": 200}],
        "output_dir": str(tmp_path / "out"),
    }
    raw.update(over)
    return raw


def test_config_from_dict(tmp_path):
    cfg = ExperimentConfig.from_dict(_raw(tmp_path))
    assert cfg.methods[0].name == "gd" and cfg.methods[0].params == {"iterations": 200}


@pytest.mark.parametrize(
    "over",
    [
        {"methods": [{"kind": "nope"}]},
        {"methods": [{"kind": "gd"}, {"kind": "gd"}]},
        {"methods": [{"name": "x"}]},
        {"lambda": {"policy": "fixed", "value": -1.0}},
        {"lambda": {"policy": "magic"}},
        {"constraints": {"m": 0}},
        {"seed": "abc"},
    ],
)
def test_config_errors(tmp_path, over):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(_raw(tmp_path, **over))


def test_config_missing_problem(tmp_path):
    raw = _raw(tmp_path)
    del raw["problem"]
    with pytest.raises(ConfigError, match="problem"):
        ExperimentConfig.from_dict(raw)


def test_config_load_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('name = "x"\noutput_dir = "res"\n[problem]\nkind = "quadratic"\nd = 3\n'
                 '[[methods]]\nkind = "gd"\n')
    cfg = ExperimentConfig.load(p)
    assert cfg.output_dir == str(tmp_path / "res")
    bad = tmp_path / "bad.toml"
    bad.write_text("name = \n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_resolve_lambda():
    assert resolve_lambda({"value": 3.0}, 10.0) == 3.0
    assert resolve_lambda({"multiple_of_L": 5.0}, 10.0) == 50.0
    assert resolve_lambda({}, 2.0) == 200.0


# --- running -----------------------------------------------------------------


def test_gd_unconstrained_like_quadratic(tmp_path):
    # the constraints contain x0*, so x*_lambda = x* = x0* exactly
    raw = _raw(tmp_path, constraints={"m": 3, "eq_fraction": 1.0, "anchor_scale": 0.0},
               methods=[{"kind": "gd", "iterations": 2000, "snapshot_every": 100}])
    m = run_experiment(ExperimentConfig.from_dict(raw))
    assert m.failed == []
    with open(tmp_path / "out" / "gd.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["dist_xstar"]) <= 1e-8


def test_meta_uses_fewer_projections_than_projected(tmp_path):
    # d > number of equalities so that X is not a single point
    raw = _raw(
        tmp_path,
        problem={"kind": "quadratic", "d": 40, "mu": 1.0, "L": 10.0},
        constraints={"m": 20, "eq_fraction": 0.5},
        methods=[
            {"name": "meta", "kind": "meta", "inner": "svrg", "outer_iterations": 15},
            {"name": "proj", "kind": "projected_svrg", "iterations": 300},
        ],
    )
    man = run_experiment(ExperimentConfig.from_dict(raw))
    assert man.failed == []
    target = 1e-3
    out = tmp_path / "out"

    def first_proj(name):
        with open(out / f"{name}.csv") as fh:
            for r in csv.DictReader(fh):
                if float(r["f_proj_gap"]) <= target:
                    return int(r["projs"])
        return None

    pm, pp = first_proj("meta"), first_proj("proj")
    assert pm is not None
    assert pp is None or pm < pp


def test_failed_method_is_recorded(tmp_path):
    raw = _raw(tmp_path, methods=[
        {"name": "bad", "kind": "sgd", "iterations": 50, "alpha": 0.5},
        {"name": "good", "kind": "gd", "iterations": 10},
    ])
    man = run_experiment(ExperimentConfig.from_dict(raw))
    assert man.failed == ["bad"]
    assert (tmp_path / "out" / "good.csv").exists()


def test_unknown_method_selection(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig.from_dict(_raw(tmp_path)), ["zzz"])


def test_determinism_and_manifest(tmp_path):
    raws = [_raw(tmp_path / str(i), methods=[{"kind": "sgd", "iterations": 500, "snapshot_every": 50}])
            for i in range(2)]
    mans = [run_experiment(ExperimentConfig.from_dict(r)) for r in raws]
    assert mans[0].files == mans[1].files
    path = tmp_path / "0" / "out" / "manifest.json"
    data = json.loads(path.read_text())
    assert set(data["constants"]) >= {"L", "mu", "gamma", "lambda", "f_star"}
    assert verify_manifest(path) == []
    with open(tmp_path / "0" / "out" / "sgd.csv", "a") as fh:
        fh.write("tamper\n")
    assert verify_manifest(path) == ["sgd.csv"]


def test_parallel_matches_serial(tmp_path, monkeypatch):
    monkeypatch.delenv("PENALTY_OPT_THREADS", raising=False)
    methods = [{"kind": "sgd", "iterations": 300}, {"kind": "gd", "iterations": 50}]
    a = run_experiment(ExperimentConfig.from_dict(_raw(tmp_path / "a", methods=methods)), jobs=1)
    b = run_experiment(ExperimentConfig.from_dict(_raw(tmp_path / "b", methods=methods)), jobs=2)
    assert a.files == b.files


def test_max_workers(monkeypatch):
    monkeypatch.setenv("PENALTY_OPT_THREADS", "2")
    assert max_workers(8) == 2
    assert max_workers(1) == 1
    monkeypatch.setenv("PENALTY_OPT_THREADS", "0")
    assert max_workers(4) == 1
    monkeypatch.setenv("PENALTY_OPT_THREADS", "x")
    with pytest.raises(ConfigError):
        max_workers(4)
    monkeypatch.delenv("PENALTY_OPT_THREADS")
    assert max_workers(3) == 3


# --- plot data ---------------------------------------------------------------


def _write_csv(path, cols, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(rows)


def test_plotdata_empty(tmp_path):
    assert emit_plotdata({}, tmp_path / "p") == []
    assert not (tmp_path / "p").exists()


def test_plotdata_golden(tmp_path):
    cols = ["k", "grads", "projs", "time_s", "f", "dist_xstar", "f_proj_gap", "infeas"]
    _write_csv(tmp_path / "a.csv", cols, [[0, 0, 0, 0, 5, 2, 1, 0.5], [10, 10, 30, 0, 1, 0.5, 0.1, 0.01]])
    files = emit_plotdata({"a": tmp_path / "a.csv"}, tmp_path / "p", figures=("distance",), x_axis="projections")
    assert [f.name for f in files] == ["distance_a.dat"]
    assert files[0].read_text() == "# projections distance\n0 2\n30 0.5\n"


def test_plotdata_projection_axis_monotone(tmp_path):
    raw = _raw(tmp_path, methods=[{"kind": "sgd", "iterations": 400, "snapshot_every": 40}])
    run_experiment(ExperimentConfig.from_dict(raw))
    files = emit_plotdata({"sgd": tmp_path / "out" / "sgd.csv"}, tmp_path / "p", x_axis="projections")
    assert len(files) == 4
    for f in files:
        xs = [float(line.split()[0]) for line in f.read_text().splitlines()[1:]]
        assert xs == sorted(xs) and len(xs) > 1


def test_plotdata_errors(tmp_path):
    _write_csv(tmp_path / "a.csv", ["k", "f"], [[0, 1.0]])
    with pytest.raises(PlotDataError):
        emit_plotdata({"a": tmp_path / "a.csv"}, tmp_path / "p", figures=("distance",))
    with pytest.raises(PlotDataError):
        emit_plotdata({"a": tmp_path / "a.csv"}, tmp_path / "p", x_axis="bogus")
    with pytest.raises(PlotDataError):
        emit_plotdata({"a": tmp_path / "a.csv"}, tmp_path / "p", figures=("bogus",))
