import csv
import json
import time
from pathlib import Path

import pytest

from cornerfem import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SUBCOMMAND = {
    "solve-square": "solve",
    "coercivity-schroedinger": "coercivity",
    "coercivity-neumann": "coercivity",
    "norms-lshape": "norms",
    "converge-lshape": "converge",
    "converge-lshape-graded": "converge",
    "perturb-square": "perturb",
    "verify-bound-square": "verify-bound",
}
EXPECTED_EXIT = {"coercivity-neumann": 2}


def run(tmp_path, sub, config, *extra):
    return cli.main([sub, "--config", str(config), "--out", str(tmp_path), *extra])


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("name", sorted(SUBCOMMAND))
def test_bundled_configs(tmp_path, name):
    t0 = time.perf_counter()
    code = run(tmp_path, SUBCOMMAND[name], CONFIGS / f"{name}.json", "--plot")
    assert code == EXPECTED_EXIT.get(name, 0)
    assert time.perf_counter() - t0 < 60


def test_every_subcommand_covered():
    assert set(SUBCOMMAND.values()) == set(cli.SUBCOMMANDS)
    assert {p.stem for p in CONFIGS.glob("*.json")} == set(SUBCOMMAND)


def test_converge_lshape(tmp_path):
    assert run(tmp_path, "converge", CONFIGS / "converge-lshape.json", "--plot") == 0
    table = rows(tmp_path / "convergence.csv")
    assert table[0] == ["level", "h", "ndof", "errL2", "errH1", "errK11"]
    assert len(table) - 2 >= 3
    assert table[-1][0] == "slope"
    assert (tmp_path / "convergence.svg").read_text().startswith("<svg")


def test_not_coercive(tmp_path, capsys):
    assert run(tmp_path, "coercivity", CONFIGS / "coercivity-neumann.json") == 2
    assert 'error kind=numerical reason="not coercive"' in capsys.readouterr().err


def test_verify_bound_nm(tmp_path):
    assert run(tmp_path, "verify-bound", CONFIGS / "verify-bound-square.json") == 0
    table = rows(tmp_path / "bound.csv")
    nm = table[0].index("Nm")
    assert all(r[nm] == "2" for r in table[1:])


def test_solve_outputs(tmp_path):
    assert run(tmp_path, "solve", CONFIGS / "solve-square.json") == 0
    assert (tmp_path / "solution.txt").read_text().startswith("solution 1\n")
    assert (tmp_path / "mesh.txt").read_text().startswith("polymesh 1\n")
    table = rows(tmp_path / "solve.csv")
    assert "errH1" in table[0]


def test_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(out, "norms", CONFIGS / "norms-lshape.json") == 0
    assert (a / "norms.csv").read_bytes() == (b / "norms.csv").read_bytes()


@pytest.mark.parametrize("data, reason", [
    ({}, "missing 'domain'"),
    ({"domain": "square", "degree": 3}, "degree must be 1 or 2"),
    ({"domain": "square", "norm": {"m": 4}}, "norm order"),
    ({"domain": "nowhere.json"}, "not found"),
    ({"domain": "square", "coefficients": "poisson"}, "invalid coefficients"),
    ({"domain": "square", "mesh": {"refine": "adaptive"}}, "mesh.refine"),
])
def test_validation_errors(tmp_path, capsys, data, reason):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(data))
    assert run(tmp_path, "solve", cfg) == 1
    err = capsys.readouterr().err
    assert err.startswith("error kind=validation") and reason in err


def test_unknown_subcommand_and_bad_json(tmp_path, capsys):
    assert run(tmp_path, "explode", CONFIGS / "solve-square.json") == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(tmp_path, "solve", bad) == 1
    assert run(tmp_path, "solve", tmp_path / "missing.json") == 1
    assert capsys.readouterr().err.count("kind=validation") == 3


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert run(tmp_path, "coercivity", CONFIGS / "coercivity-schroedinger.json") == 0
