import json
import math

import numpy as np
import pytest

from cmcforge.cli import (SCHEMA_VERSION, RecordError, dumps, main, record_to_run, run_to_record,
                          write_json)

TINY = {"schema_version": 1, "surface": {"preset": "lawson", "genus": 2},
        "search": {"N_ladder": [0, 2], "K": 4, "max_evals": 40, "rung_evals": 20, "seed": 5}}


def without_timestamps(path):
    d = json.loads(path.read_text())
    d.pop("timestamps", None)
    return d


def test_dumps_precision_and_complex():
    text = dumps({"x": 0.1, "z": 1 / 3 + 2j, "n": 3, "f": 2.0, "bad": math.nan})
    d = json.loads(text)
    assert d["x"] == 0.1 and d["n"] == 3 and d["f"] == 2.0
    assert d["z"] == [1 / 3, 2.0]
    assert "0.33333333333333331" in text
    assert d["bad"] == "nan"


def test_record_round_trip(lawson_run):
    rec = json.loads(dumps(run_to_record(lawson_run)))
    run = record_to_run(rec)
    assert np.array_equal(run.series.a, lawson_run.series.a)
    assert np.array_equal(run.series.c, lawson_run.series.c)
    assert run.final_F == lawson_run.final_F
    assert rec["schema_version"] == SCHEMA_VERSION
    assert rec["stability"]["unstable_count"] == 0


def test_newer_schema_refused(lawson_run, tmp_path):
    rec = run_to_record(lawson_run)
    rec["schema_version"] = SCHEMA_VERSION + 1
    with pytest.raises(RecordError):
        record_to_run(rec)
    path = tmp_path / "new.json"
    write_json(path, rec)
    assert main(["analyze", str(path)]) == 1
    cfg = dict(TINY, schema_version=SCHEMA_VERSION + 1)
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["solve", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o.json")]) == 1


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", "x"]) == 1
    assert main(["frobnicate"]) == 1
    data = "tests/data/lawson_xi21_run.json"
    assert main(["surface", data, "--grid", "48by48", "--out", str(tmp_path / "m.obj")]) == 1
    assert main(["surface", data, "--grid", "4x4", "--out", str(tmp_path / "m.obj")]) == 1
    assert main(["surface", data, "--format", "stl", "--out", str(tmp_path / "m.stl")]) == 1
    assert "error" in capsys.readouterr().err


def test_threads_environment(monkeypatch):
    monkeypatch.setenv("CMCFORGE_THREADS", "zero")
    assert main(["analyze", "tests/data/lawson_xi21_run.json"]) == 1
    monkeypatch.setenv("CMCFORGE_THREADS", "1")
    assert main(["analyze", "tests/data/lawson_xi21_run.json"]) == 0


def test_analyze_prints_report(capsys):
    assert main(["--threads", "1", "analyze", "tests/data/familyII_start_run.json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["unstable_count"] == 1


def test_familyII_needs_unstable_start(tmp_path, capsys):
    code = main(["--threads", "1", "continue", "--start", "tests/data/lawson_xi21_run.json",
                 "--family", "II", "--driver", "sym", "--step", "-0.02", "--count", "1",
                 "--out", str(tmp_path / "fam")])
    assert code == 1
    assert "unstable_count" in capsys.readouterr().err


def test_unconverged_solve_is_exit_2_and_deterministic(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(TINY))
    outs = [tmp_path / "a.json", tmp_path / "b.json"]
    for out in outs:
        assert main(["--threads", "1", "solve", "--config", str(tmp_path / "c.json"), "--out", str(out)]) == 2
    a, b = (without_timestamps(p) for p in outs)
    assert a == b
    assert dumps(a) == dumps(b)
    assert a["converged"] is False and a["eval_count"] <= 40


def test_surface_command(tmp_path, capsys):
    out = tmp_path / "m.ply"
    code = main(["--threads", "1", "surface", "tests/data/lawson_xi21_run.json", "--grid", "16x16",
                 "--samples", "32", "--format", "ply", "--out", str(out)])
    assert code == 0
    lines = dict(ln.split("=", 1) for ln in capsys.readouterr().out.splitlines())
    assert float(lines["area"]) == pytest.approx(21.91, rel=0.02)
    assert int(lines["copies"]) == 6
    assert out.read_text().startswith("ply")
