import json
import subprocess
import sys

import numpy as np
import pytest

from torusqs.cli import EXIT_INPUT, EXIT_OK, EXIT_TOLERANCE, RunConfig, dumps, main
from torusqs.torus_field import generate_field, write_raster


def run_json(capsys, *argv):
    code = main(list(argv))
    return code, json.loads(capsys.readouterr().out)


def test_sin_example(capsys):
    code, data = run_json(capsys, "--n", "128", "--expr", "sin(2*pi*q)", "--mode", "both")
    assert code == EXIT_OK
    assert abs(data["zeta_reeb"]) <= 5 / 128 and abs(data["zeta_aarnes"]) <= 5 / 128
    assert data["discrepancy"] <= 5e-3


def test_constant_example(capsys):
    code, data = run_json(capsys, "--n", "64", "--expr", "0.7", "--mode", "reeb")
    assert code == EXIT_OK and data["zeta_reeb"] == 0.7 and data["zeta_aarnes"] is None


def test_battery_example(capsys):
    code, data = run_json(capsys, "--n", "64", "--battery", "tau-axioms", "--seed", "7", "--count", "3")
    assert code == EXIT_OK
    assert data["battery"] == "tau_axioms"
    assert data["failures"] == [] and data["cases"] > 0


def test_tolerance_flag_exit_code(capsys):
    # an absurdly tight tolerance turns the discretization gap into a flag
    code, data = run_json(capsys, "--n", "64", "--gen-seed", "3", "--tol", "1e-300")
    assert code == EXIT_TOLERANCE and data["discrepancy"] > 1e-300


@pytest.mark.parametrize(
    "argv",
    [
        ["--n", "4", "--expr", "p"],
        ["--n", "32"],
        ["--n", "32", "--expr", "p", "--gen-seed", "1"],
        ["--n", "32", "--expr", "exp(p)"],
        ["--n", "32", "--expr", "p", "--t-refine", "0"],
        ["--n", "32", "--expr", "p", "--tol", "-1"],
        ["--n", "32", "--raster", "/nonexistent/file.tqs"],
        ["--n", "32", "--battery", "annulus", "--format", "csv"],
        ["--bogus"],
        ["--mode", "nope", "--expr", "p"],
    ],
)
def test_input_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        sys.exit(main(argv))
    assert exc.value.code == EXIT_INPUT


def test_raster_input(tmp_path, capsys):
    f = generate_field(2, 1, 32)
    path = tmp_path / "f.tqs"
    write_raster(f, path)
    code, data = run_json(capsys, "--n", "32", "--raster", str(path), "--mode", "reeb")
    assert code == EXIT_OK and data["n"] == 32
    assert main(["--n", "64", "--raster", str(path)]) == EXIT_INPUT


def test_csv_output(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["--n", "32", "--gen-seed", "1", "--format", "csv", "--out", str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()
    assert rows[0] == "t,b"
    vals = np.array([[float(x) for x in r.split(",")] for r in rows[1:]])
    assert np.all(np.diff(vals[:, 0]) > 0) and np.all(np.diff(vals[:, 1]) >= -1e-12)


def test_output_is_bit_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["--n", "48", "--gen-seed", "5", "--out", str(p)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    for p in (a, b):
        main(["--n", "32", "--battery", "monotone", "--count", "2", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_seed_is_reported(capsys):
    _, data = run_json(capsys, "--n", "32", "--gen-seed", "9", "--mode", "reeb")
    assert data["seed"] == 9


def test_dumps_full_precision():
    x = 0.1 + 0.2
    assert float(json.loads(dumps({"x": x}))["x"]) == x
    assert dumps([1, None, True, float("nan")]) == "[\n  1,\n  null,\n  true,\n  null\n]"


def test_config_validation_defaults():
    RunConfig(expr="p").validate()
    assert RunConfig().n == 128


def test_module_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "torusqs", "--n", "32", "--expr", "0.25", "--mode", "reeb"],
        capture_output=True, text=True, check=False,
    )
    assert res.returncode == 0 and json.loads(res.stdout)["zeta_reeb"] == 0.25


def test_generator_seed_seven(capsys):
    code, data = run_json(capsys, "--n", "128", "--gen-seed", "7", "--gen-degree", "2")
    assert code == EXIT_OK and data["discrepancy"] <= 5e-3


def test_thread_cap_env(monkeypatch, capsys):
    monkeypatch.setenv("TQS_THREADS", "2")
    code, data = run_json(capsys, "--n", "32", "--expr", "0.5", "--mode", "reeb")
    assert code == EXIT_OK and data["zeta_reeb"] == 0.5
    monkeypatch.setenv("TQS_THREADS", "zero")
    assert main(["--n", "32", "--expr", "0.5"]) == EXIT_INPUT
