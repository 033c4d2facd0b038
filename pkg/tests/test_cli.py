import subprocess
import sys

import pytest

from penaltyopt.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, EXIT_THEORY, main
from penaltyopt.sets import read_sets

CONFIG = """
name = "cli"
output_dir = "out"
[problem]
kind = "quadratic"
d = 4
[constraints]
m = 3
eq_fraction = 1.0
gamma = {gamma}
[[methods]]
kind = "gd"
iterations = 100
[[methods]]
name = "sgd_bad"
kind = "sgd"
iterations = 10
alpha = {alpha}
"""


def _config(tmp_path, gamma='"auto"', alpha=2.0):
    p = tmp_path / "c.toml"
    p.write_text(CONFIG.format(gamma=gamma, alpha=alpha))
    return p


def test_gen_and_gamma(tmp_path, capsys):
    out = tmp_path / "sets.txt"
    assert main(["gen", "--m", "4", "--d", "3", "--anchor", "1,2,3", "-o", str(out)]) == EXIT_OK
    assert len(read_sets(out)) == 4
    assert main(["gamma", str(out)]) == EXIT_OK
    assert "gamma=" in capsys.readouterr().out
    assert main(["gamma", str(out), "--empirical", "--samples", "50"]) == EXIT_OK


def test_gen_anchor_length(tmp_path):
    assert main(["gen", "--m", "2", "--d", "3", "--anchor", "1,2", "-o", str(tmp_path / "s")]) == EXIT_CONFIG


def test_bad_arguments():
    assert main(["nope"]) == EXIT_CONFIG
    assert main(["gen", "--m", "x", "--d", "2", "-o", "f"]) == EXIT_CONFIG


def test_missing_files(tmp_path):
    assert main(["gamma", str(tmp_path / "missing.txt")]) == EXIT_CONFIG
    assert main(["bench", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_solve(tmp_path):
    cfg = _config(tmp_path)
    assert main(["solve", str(cfg), "--method", "gd"]) == EXIT_OK
    assert (tmp_path / "out" / "gd.csv").exists()
    assert main(["solve", str(cfg)]) == EXIT_CONFIG  # ambiguous
    assert main(["solve", str(cfg), "--method", "zzz"]) == EXIT_CONFIG


def test_solve_failure(tmp_path):
    cfg = _config(tmp_path, alpha=0.1)
    assert main(["solve", str(cfg), "--method", "sgd_bad"]) == EXIT_SOLVER


def test_bench(tmp_path):
    cfg = _config(tmp_path)
    out = tmp_path / "res"
    assert main(["bench", str(cfg), "--output", str(out), "--plot", "projections"]) == EXIT_OK
    assert (out / "manifest.json").exists()
    assert (out / "plotdata" / "distance_gd.dat").exists()
    assert main(["bench", str(_config(tmp_path, alpha=0.1))]) == EXIT_SOLVER


def test_verify(tmp_path):
    assert main(["verify", str(_config(tmp_path)), "--csv", str(tmp_path / "r.csv")]) == EXIT_OK
    assert (tmp_path / "r.csv").exists()
    # a declared constant above the true one breaks the bounds
    assert main(["verify", str(_config(tmp_path, gamma=1.0))]) == EXIT_THEORY


def test_bad_lams(tmp_path):
    assert main(["verify", str(_config(tmp_path)), "--lams", "1,x"]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "penaltyopt.cli", "gen", "--m", "2", "--d", "2", "-o", str(tmp_path / "s")],
        capture_output=True,
        text=True,
    )
    assert r.returncode == 0, r.stderr


@pytest.mark.parametrize("cmd", ["bench", "solve", "verify", "gamma", "gen"])
def test_help(cmd):
    assert main([cmd, "--help"]) == EXIT_OK
