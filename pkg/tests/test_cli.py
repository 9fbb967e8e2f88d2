import json
import subprocess
import sys

import pytest

from tubeharq.cli import main


def run(*args):
    return subprocess.run([sys.executable, "-m", "tubeharq", *args], capture_output=True, text=True)


def test_gen_build_validate(tmp_path):
    assert main(["gen-clips", "--seed", "2", "--count", "3", "--out", str(tmp_path / "clips")]) == 0
    clips = sorted((tmp_path / "clips").glob("*.json"))
    assert len(clips) == 3
    cat = tmp_path / "cat.json"
    assert main(["catalog", "build", str(clips[0]), "--out", str(cat)]) == 0
    assert main(["catalog", "validate", str(cat)]) == 0


def test_validate_corrupted_catalog(tmp_path, capsys):
    main(["gen-clips", "--seed", "2", "--count", "1", "--out", str(tmp_path)])
    cat = tmp_path / "cat.json"
    main(["catalog", "build", str(tmp_path / "clip_0000.json"), "--out", str(cat)])
    d = json.loads(cat.read_text())
    d["packages"][1]["members"].append(d["packages"][0]["members"][0])
    d["packages"][2]["members"].pop()
    cat.write_text(json.dumps(d))
    capsys.readouterr()
    assert main(["catalog", "validate", str(cat)]) == 1
    out = capsys.readouterr().out
    assert "overlap" in out and "uncovered" in out


def test_simulate_twice_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert main(["simulate", "--seed", "5", "--per", "0.25", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["simulate", "--seed", "5", "--format", "csv", "--out", str(a)]) == 0
    assert a.read_text().startswith("round,")


def test_simulate_to_stdout():
    r = run("simulate", "--seed", "1", "--policy", "GreedyBlock")
    assert r.returncode == 0
    first = json.loads(r.stdout.splitlines()[0])
    assert first["kind"] == "header" and first["policy"] == "GreedyBlock"


def test_usage_errors():
    assert run("simulate").returncode == 2  # --seed missing
    assert run("simulate", "--seed", "1", "--nope").returncode == 2
    assert run("frobnicate").returncode == 2
    assert run("gen-clips", "--out", "x").returncode == 2
    r = run("sweep", "--num-clips", "1")
    assert r.returncode == 2 and "--seed" in r.stderr


def test_bad_config_exit(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"per_grid": [2.0]}))
    r = run("sweep", "--config", str(p), "--seed", "1", "--output-dir", str(tmp_path / "o"))
    assert r.returncode == 2 and "per_grid[0]" in r.stderr


def test_sweep_then_metrics(tmp_path):
    out = tmp_path / "run"
    args = ["sweep", "--seed", "3", "--num-clips", "3", "--session-seeds", "2", "--per-grid", "0.1,0.3",
            "--request-budgets", "8", "--compute-budgets", "2", "--output-dir", str(out)]
    assert main(args) == 0
    assert main(["metrics", str(out), "--out", str(tmp_path / "re")]) == 0
    for name in ("metrics.csv", "aggregates.csv", "gaps.csv", "audit.csv", "summary.json"):
        assert (out / name).read_bytes() == (tmp_path / "re" / name).read_bytes()
    # replay from the manifest, in parallel
    assert main(["sweep", "--from-manifest", str(out / "manifest.json"), "--output-dir", str(tmp_path / "r2"),
                 "--workers", "2"]) == 0
    for name in ("metrics.csv", "aggregates.csv", "gaps.csv", "audit.csv"):
        assert (out / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


@pytest.mark.parametrize("cmd", [["--help"], ["catalog", "--help"], ["sweep", "--help"]])
def test_help(cmd):
    assert run(*cmd).returncode == 0
