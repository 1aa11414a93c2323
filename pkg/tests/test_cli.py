import json
import subprocess
import sys

import pytest

from lielab.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_doubling_example(capsys, tmp_path):
    code, out, _ = run(["doubling", "--group", "so3", "--set", "tube:so2_z:0.05", "--cells", "200000",
                        "--seed", "7", "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["verdict"] == "verified" and doc["seed"] == 7
    assert doc["net_hash"] and "lielab" in doc["versions"]
    assert (tmp_path / "doubling.json").read_text() == out
    assert "runtime_s" in json.loads((tmp_path / "doubling.meta.json").read_text())


def test_bm_example_on_the_circle(capsys):
    code, out, _ = run(["bm", "--group", "t1", "--setA", "ball:0:0.1", "--setB", "ball:0:0.2",
                        "--k", "1"], capsys)
    assert code == 0
    alpha = json.loads(out)["result"]["check"]["fitted_constants"]["alpha_empirical"]
    assert alpha == pytest.approx(0.0, abs=1e-3)


def test_malformed_expression(capsys):
    code, out, err = run(["doubling", "--set", "tube:so2_z"], capsys)
    assert code == 1 and out == ""
    assert "line 1, column 11" in err and "grammar:" in err


def test_usage_errors(capsys):
    assert run(["doubling"], capsys)[0] == 1
    assert run(["frobnicate"], capsys)[0] == 1
    assert run(["doubling", "--group", "e8", "--set", "ball:e:0.1"], capsys)[0] == 1
    assert run(["doubling", "--set", "tube:u1:0.05"], capsys)[0] == 1
    assert run(["local-bm", "--sweep", ",", "--cells", "1000"], capsys)[0] == 1


def test_violated_and_inconclusive_exit_codes(capsys):
    # curvature: balls in SO3 miss the flat bound at eps = 0
    code, out, _ = run(["local-bm", "--setA", "ball:e:0.1", "--setB", "ball:e:0.1", "--rho", "0.2",
                        "--net", "class", "--cells", "200000"], capsys)
    assert code == 2 and json.loads(out)["verdict"] == "violated"
    # equality on the circle cannot be decided from a bracket
    code, out, _ = run(["kemperman", "--group", "t1", "--setA", "ball:0:0.2", "--setB", "ball:0:0.3",
                        "--cells", "20000"], capsys)
    assert code == 3 and json.loads(out)["verdict"] == "inconclusive"


def test_repeat_runs_are_byte_identical(capsys, tmp_path):
    argv = ["balls", "--rhos", "0.05,0.1", "--samples", "20000", "--seed", "3"]
    run(argv + ["--out", str(tmp_path / "a")], capsys)
    run(argv + ["--out", str(tmp_path / "b")], capsys)
    for f in ("balls.json", "balls.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = (tmp_path / "a" / "balls.csv").read_bytes()
    assert b"\r" not in rows and rows.splitlines()[0].startswith(b"rho")


def test_output_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("LIELAB_OUT", str(tmp_path))
    code, _, _ = run(["amgm", "--trials", "500", "--name", "env"], capsys)
    assert code == 0 and (tmp_path / "env.json").exists()


def test_report_merge(capsys, tmp_path):
    run(["amgm", "--trials", "500", "--out", str(tmp_path), "--name", "a"], capsys)
    run(["kemperman", "--group", "t1", "--setA", "ball:0:0.2", "--setB", "ball:0:0.3", "--cells",
         "20000", "--out", str(tmp_path), "--name", "b"], capsys)
    code, out, _ = run(["report-merge", str(tmp_path / "a.json"), str(tmp_path / "b.json")], capsys)
    doc = json.loads(out)
    assert len(doc["result"]["reports"]) == 2
    assert doc["result"]["counts"]["inconclusive"] == 1
    assert code == 3


def test_groups_and_ot_demo(capsys):
    code, out, _ = run(["groups"], capsys)
    assert code == 0 and "so2_z" in out
    code, out, _ = run(["ot-verify", "--demo", "cube", "--n", "300", "--dim", "2", "--threads", "1"],
                       capsys)
    assert code == 0
    assert json.loads(out)["result"]["monotonicity"]["passed"]


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "lielab.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("lielab ")
