import csv
import json
import math
from pathlib import Path

import pytest

from ltvcert.cli import main, parse_grid, parse_number, report_body, resolve_jobs, UsageError

SYSTEMS = Path(__file__).resolve().parent.parent / "systems"


def sysfile(name):
    return str(SYSTEMS / f"{name}.json")


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, (json.loads(out.out) if out.out.strip() else None), out.err


def test_parse_number_forms():
    assert parse_number("e3") == pytest.approx(math.e ** 3)
    assert parse_number("0.25") == 0.25
    assert parse_number("1/3") == pytest.approx(1 / 3)
    with pytest.raises(UsageError):
        parse_number("t+1")
    with pytest.raises(UsageError):
        parse_number("2*")


def test_parse_grid_forms():
    assert list(parse_grid("0:1:3")) == [0.0, 0.5, 1.0]
    assert list(parse_grid("1,2,4")) == [1.0, 2.0, 4.0]
    assert list(parse_grid({"min": -1, "max": 1, "points": 3})) == [-1.0, 0.0, 1.0]
    with pytest.raises(UsageError):
        parse_grid("1:2")


def test_jobs_from_env(monkeypatch):
    monkeypatch.setenv("LTV_CERTIFY_JOBS", "3")
    assert resolve_jobs(None) == 3
    assert resolve_jobs(2) == 2


def test_gramian_closed_form(capsys):
    code, rep, _ = run(capsys, "gramian", sysfile("example2"), "--kind", "M", "--t", "1",
                       "--sigma", "1")
    assert code == 0
    assert rep["tool"] == "ltv-certify" and rep["schema"] == 1
    assert rep["input_digest"].startswith("sha256:")
    assert rep["results"]["matrix"][0][0] == pytest.approx(0.5, rel=1e-8)
    assert "timing" in rep


def test_gramian_window_form(capsys):
    code, rep, _ = run(capsys, "gramian", sysfile("example2"), "--kind", "N", "--t0", "2",
                       "--tf", "3", "--no-timing")
    assert code == 0 and "timing" not in rep
    assert rep["results"]["matrix"][0][0] == pytest.approx(1.5, rel=1e-8)


def test_missing_input_matrix_is_config_error(capsys):
    code, rep, err = run(capsys, "gramian", sysfile("example2"), "--kind", "W", "--t", "1",
                         "--sigma", "1")
    assert code == 2 and rep is None
    assert "configuration error" in err


def test_missing_file_is_config_error(capsys, tmp_path):
    code, _, _ = run(capsys, "gramian", str(tmp_path / "none.json"), "--kind", "M", "--t", "1",
                     "--sigma", "1")
    assert code == 2


def test_bad_expression_is_config_error(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"A": [["-t*"]], "C": [["1"]]}))
    code, _, err = run(capsys, "gramian", str(p), "--kind", "M", "--t", "0", "--sigma", "1")
    assert code == 2


def test_divergence_is_numeric_failure(capsys):
    code, rep, err = run(capsys, "gramian", sysfile("counterexample"), "--kind", "M", "--t", "20",
                         "--sigma", "3")
    assert code == 3 and rep is None
    assert "numeric failure" in err


def test_certify_certified_and_refuted(capsys):
    code, rep, _ = run(capsys, "certify", sysfile("example4"), "--property", "nuco", "--no-timing")
    assert code == 0
    code, rep, _ = run(capsys, "certify", sysfile("example4"), "--property", "uco", "--no-timing")
    assert code == 1
    assert "REFUTED" in json.dumps(rep["results"])


def test_certify_inconclusive(capsys):
    code, rep, _ = run(capsys, "certify", sysfile("example2"), "--property", "uco",
                       "--grid-t", "1:3:3", "--no-timing")
    assert code == 4
    assert "INCONCLUSIVE" in json.dumps(rep["results"])


def test_certify_nues_target(capsys):
    code, rep, _ = run(capsys, "certify", sysfile("counterexample-closedloop"), "--property",
                       "nues-forward", "--target-M", "e3", "--target-beta", "1/3",
                       "--target-delta", "1/3", "--no-timing")
    assert code == 0


def test_duality(capsys):
    code, rep, _ = run(capsys, "duality", sysfile("example4"), "--t", "0.5", "--sigma", "1",
                       "--no-timing")
    assert code == 0


def test_synthesize_and_simulate(capsys, tmp_path):
    gain = tmp_path / "gain.json"
    code, rep, _ = run(capsys, "synthesize", sysfile("example2"), "--window", "1", "30",
                       "--gain", str(gain), "--no-timing")
    assert code == 0 and gain.exists()
    traj = tmp_path / "traj.csv"
    code, rep, _ = run(capsys, "simulate", sysfile("example2"), "--gain", str(gain), "--x0", "1",
                       "--xhat0", "0", "--horizon", "1", "30", "--csv", str(traj), "--no-timing")
    assert code == 0
    with open(traj, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "t"
    assert len(rows) > 10
    code, rep, _ = run(capsys, "simulate", sysfile("example2"), "--gain", str(gain), "--x0", "1",
                       "--xhat0", "1", "--horizon", "1", "30", "--no-timing")
    assert code == 0
    text = json.dumps(rep["results"])
    errs = [float(v) for v in _find(rep["results"], "error_norm_final")]
    assert errs and max(errs) <= 1e-12, text[:300]


def _find(obj, key):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k == key:
                yield v
            else:
                yield from _find(v, key)
    elif isinstance(obj, list):
        for v in obj:
            yield from _find(v, key)


def test_scenario_list_and_config(capsys):
    code, rep, _ = run(capsys, "scenario", "list", "--no-timing")
    assert code == 0
    assert "example2-uco" in json.dumps(rep["results"])
    code, rep, _ = run(capsys, "scenario", "config", "example2-uco", "--no-timing")
    assert code == 0
    assert rep["results"]["config"]["A"] == [["-1/t"]]


def test_scenario_unknown(capsys):
    code, _, _ = run(capsys, "scenario", "run", "not-a-scenario")
    assert code == 2


def test_out_file_and_determinism(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    argv = ["scenario", "run", "example2-uco", "example2-dual-nuco"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b), "--jobs", "2"]) == 0
    assert capsys.readouterr().out == ""
    assert report_body(a.read_text()) == report_body(b.read_text())
    assert json.loads(b.read_text())["timing"]["jobs"] == 2
    c = tmp_path / "c.json"
    assert main(argv + ["--out", str(c), "--no-timing"]) == 0
    assert c.read_text() == main_text(argv, tmp_path)


def main_text(argv, tmp_path):
    d = tmp_path / "d.json"
    main(argv + ["--out", str(d), "--no-timing"])
    return d.read_text()
