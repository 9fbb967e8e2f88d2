import json
import os

import pytest

from tubeharq.harness import (
    ConfigError,
    SweepConfig,
    build_corpus,
    read_traces,
    recompute_metrics,
    run_sweep,
)

SMALL = dict(
    num_clips=4,
    session_seeds=2,
    per_grid=[0.0, 0.2],
    request_budgets=[8],
    compute_budgets=[2],
    audit_request_budgets=[4],
    policies=["TubePackage", "GreedyBlock", "TubeWeightedBlock"],
    clip_frames=8,
    bootstrap_resamples=200,
)


def small_cfg(**kw):
    return SweepConfig(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    return run_sweep(small_cfg(seed=1), output_dir=out, keep_traces=True)


def test_config_errors_name_the_field():
    with pytest.raises(ConfigError, match=r"^per_grid\[1\]"):
        SweepConfig(per_grid=[0.1, 1.2])
    with pytest.raises(ConfigError, match="^bogus"):
        SweepConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match=r"^policies\[0\]"):
        SweepConfig(policies=["Nope"])
    with pytest.raises(ConfigError, match="^session"):
        SweepConfig(f_init=2.0)


def test_config_file_and_env(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 4, "num_clips": 3}))
    cfg = SweepConfig.from_file(p)
    assert cfg.seed == 4 and cfg.num_clips == 3 and cfg.per_grid[0] == 0.05
    env = cfg.with_env({"TUBEHARQ_OUTPUT_DIR": "/tmp/x", "TUBEHARQ_WORKERS": "3"})
    assert (env.output_dir, env.workers) == ("/tmp/x", 3)
    assert env.hash() == cfg.hash()
    p.write_text("[1]")
    with pytest.raises(ConfigError):
        SweepConfig.from_file(p)


def test_defaults():
    cfg = SweepConfig()
    assert cfg.per_grid == [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4]
    assert (cfg.request_budgets, cfg.compute_budgets, cfg.burst_length, cfg.horizon) == ([8, 16], [2, 3], 4.0, 6)
    assert cfg.num_clips == 60 and cfg.session_seeds == 20


def test_corpus_strata():
    clips = build_corpus(small_cfg(num_clips=10))
    assert [c.motion_label for c in clips] == ["low"] * 5 + ["high"] * 5
    assert sorted(c.stratum for c in clips).count("high") <= 5


def test_cells_unique():
    cells = SweepConfig().cells()
    assert len(cells) == len(set(cells))
    assert ("TubePackage", 4, 2, 0.05) in cells


def test_outputs_present(sweep):
    out = sweep.output_dir
    for name in ("manifest.json", "clips.csv", "metrics.csv", "aggregates.csv", "gaps.csv", "audit.csv", "summary.json"):
        assert (out / name).exists()
    assert list((out / "traces").glob("*.jsonl"))
    head = (out / "gaps.csv").read_text().splitlines()[0]
    assert head == "baseline,K,b_c,per,stratum,metric,n,mean,ci_lo,ci_hi"
    m = json.loads((out / "manifest.json").read_text())
    assert m["config_hash"] == small_cfg(seed=1).hash()


def test_one_session_per_tuple(sweep):
    keys = [(k, c, s) for k, c, s, _, _ in sweep.sessions]
    assert len(keys) == len(set(keys))
    cfg = small_cfg(seed=1)
    assert len(keys) == len(cfg.cells()) * cfg.num_clips * cfg.session_seeds


def test_pairing_checksums_shared(sweep):
    by = {}
    for ((_, K, b_c, per), clip, seed), tr in sweep.trace_objects.items():
        by.setdefault((K, b_c, per, clip, seed), set()).add(tr.header["erasure_checksum"])
    assert all(len(v) == 1 for v in by.values())


def test_lossless_cell_delivers_everything(sweep):
    for (key, clip, seed), tr in sweep.trace_objects.items():
        if key[3] == 0.0:
            assert all(all(r.delivered) for r in tr.rounds)


def test_single_policy_sweep_has_no_gaps(tmp_path):
    res = run_sweep(small_cfg(policies=["GreedyBlock"], num_clips=2), output_dir=tmp_path)
    assert not (tmp_path / "gaps.csv").exists() and res.gaps == []
    assert (tmp_path / "aggregates.csv").read_text().count("\n") > 1


def test_rerun_and_workers_identical(sweep, tmp_path):
    again = run_sweep(small_cfg(seed=1), output_dir=tmp_path / "a")
    para = run_sweep(small_cfg(seed=1), output_dir=tmp_path / "b", workers=2)
    for name in ("metrics.csv", "aggregates.csv", "gaps.csv", "audit.csv", "summary.json", "clips.csv", "manifest.json"):
        ref = (sweep.output_dir / name).read_bytes()
        assert (again.output_dir / name).read_bytes() == ref
        assert (para.output_dir / name).read_bytes() == ref
    for p in (sweep.output_dir / "traces").iterdir():
        assert (tmp_path / "b" / "traces" / p.name).read_bytes() == p.read_bytes()


def test_recompute_identity(sweep, tmp_path):
    digests = recompute_metrics(sweep.output_dir, tmp_path)
    m = json.loads((sweep.output_dir / "manifest.json").read_text())
    assert digests == m["outputs"]
    assert len(read_traces(sweep.output_dir / "traces")) == len(sweep.sessions)


@pytest.mark.skipif(os.geteuid() == 0, reason="root can write anywhere")
def test_unwritable_output(tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    with pytest.raises(OSError):
        run_sweep(small_cfg(num_clips=1), output_dir=d / "x")


def test_output_is_a_file(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    with pytest.raises(OSError):
        run_sweep(small_cfg(num_clips=1), output_dir=f)


def test_mask_file_corpus(tmp_path):
    from tubeharq.catalog import generate_synthetic_clip, save_masks

    paths = []
    for i in range(2):
        p = tmp_path / f"m{i}.json"
        save_masks(generate_synthetic_clip(i, 6, 5, 5, 2), p)
        paths.append(str(p))
    res = run_sweep(small_cfg(mask_files=paths, per_grid=[0.1]), output_dir=tmp_path / "o")
    assert {c for _, c, _, _, _ in res.sessions} == {0, 1}
