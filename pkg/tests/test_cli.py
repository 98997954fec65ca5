import csv
import json
import subprocess
import sys

import pytest

from aflab.cli import EXIT_ASSERT, EXIT_INVALID, EXIT_OK, main


def scenario(tmp_path, data, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run(tmp_path, command, data=None, *extra):
    argv = [command, "--out", str(tmp_path / "out"), *extra]
    if data is not None:
        argv += ["--scenario", scenario(tmp_path, data)]
    return main(argv)


def read_json(tmp_path, name):
    return json.loads((tmp_path / "out" / name).read_text())


def test_fixed_points(tmp_path):
    assert run(tmp_path, "fixed-points", {"bundle": "SYM2"}) == EXIT_OK
    doc = read_json(tmp_path, "fixed_points.json")
    assert doc["truncated"] is False


def test_fixed_points_cap_warning(tmp_path, capsys):
    big = {"m": 12, "r": 1, "n": [1] * 12, "p": [2] * 12, "Q": [[1] * 12]}
    assert run(tmp_path, "fixed-points", {"bundle": big, "max_subsets": 8}) == EXIT_OK
    assert "SubsetCapExceeded" in capsys.readouterr().err


def test_spectrum(tmp_path):
    assert run(tmp_path, "spectrum", {"bundle": "SYM2", "theta": [[1]]}) == EXIT_OK
    doc = read_json(tmp_path, "spectrum.json")
    assert doc["xi_spectrum"]["eigenvalues"] == pytest.approx([-16 / 3, 16 / 9])


def test_flow_writes_csv_and_schema(tmp_path):
    data = {"bundle": "SYM2", "initial": {"Y": [0.5, 0.7]}, "clock": "u", "u_span": [0, 5]}
    assert run(tmp_path, "flow", data) == EXIT_OK
    rows = list(csv.reader((tmp_path / "out" / "trajectory.csv").open()))
    assert rows[0][:3] == ["u", "tau", "a"]
    assert (tmp_path / "out" / "schema.json").exists()
    assert read_json(tmp_path, "flow.json")["termination"] == "ReachedSpan"


def test_torus_flow(tmp_path):
    data = {"bundle": "TOR", "initial": {"H": [[0.001, 0], [0, 0.001]], "b": [1, 1, 1]},
            "tau_span": [0, 50]}
    assert run(tmp_path, "torus-flow", data) == EXIT_OK
    assert read_json(tmp_path, "torus_flow.json")["admissible"] is True


def test_shoot_is_reproducible(tmp_path):
    data = {"bundle": "SYM2", "shoot": {"branch": "gamma", "k": 1}}
    assert run(tmp_path, "shoot", data) == EXIT_OK
    first = (tmp_path / "out" / "shoot.json").read_bytes()
    assert run(tmp_path, "shoot", data) == EXIT_OK
    assert (tmp_path / "out" / "shoot.json").read_bytes() == first
    assert json.loads(first)["T_singular"] == pytest.approx(0.270312611012754, rel=1e-10)


def test_diagnose(tmp_path):
    data = {"bundle": "SYM2", "initial": {"a": 0.1, "b": [1, 1]}, "tau_span": [0, 20]}
    assert run(tmp_path, "diagnose", data) == EXIT_OK
    assert (tmp_path / "out" / "diagnose.json").exists()


def test_portrait(tmp_path):
    data = {"bundle": "SYM2", "portrait": {"ymax": 3, "shape": 21}}
    assert run(tmp_path, "portrait", data) == EXIT_OK
    rows = list(csv.reader((tmp_path / "out" / "portrait.csv").open()))
    assert len(rows) == 21 * 21 + 1


def test_verify_subset(tmp_path, capsys):
    assert run(tmp_path, "verify", {"verify": {"criteria": ["1", "2"]}}) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 2
    doc = read_json(tmp_path, "verify.json")
    assert doc["all_passed"] and "elapsed" not in doc["criteria"][0]


def test_verify_negative_control_fails(tmp_path):
    data = {"verify": {"criteria": ["c0"], "c0_scale": 0.5}}
    assert run(tmp_path, "verify", data) == EXIT_ASSERT


@pytest.mark.parametrize("data", [
    {"bundle": "SYM2", "unknown": 1},
    {"bundle": {"m": 2, "r": 2, "n": [1, 1], "p": [2, 2], "Q": [[1, 0], [2, 0]]}},
    {"bundle": "TOR", "initial": {"H": [[1, 2], [2, 1]], "b": [1, 1, 1]}},
])
def test_invalid_input_exit_code(tmp_path, data):
    command = "torus-flow" if "initial" in data else "fixed-points"
    assert run(tmp_path, command, data) == EXIT_INVALID


def test_missing_scenario(tmp_path):
    assert run(tmp_path, "flow") == EXIT_INVALID


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "aflab.cli", "spectrum", "--out", str(tmp_path),
                           "--scenario", scenario(tmp_path, {"bundle": "ASYM"})],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
