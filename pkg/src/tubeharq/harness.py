"""Config-driven PER sweeps with paired gaps, audits and motion strata.

Output directory layout::

    manifest.json    resolved config, its hash, code version, output digests
    clips.csv        clip id, seed, generator motion label, motion score, stratum
    catalogs/        one catalog JSON per clip (needed to recompute audits)
    traces/          one JSON-lines file per (policy, cell); sessions concatenated
    metrics.csv      tidy per-session metrics
    aggregates.csv   per (policy, cell, stratum, metric): n, mean, bootstrap CI
    gaps.csv         TubePackage minus each baseline, paired per session
    audit.csv        package-transport ratio and average package span
    summary.json     aggregates keyed policy/PER/K/b_c/stratum
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import ClipMasks, build_catalog, generate_synthetic_clip, load_catalog, load_masks
from .distortion import make_distortion_model
from .metrics import (
    CARRY,
    EVERY_ROUND,
    aois_auc,
    audit_stats,
    bootstrap_ci,
    check_pairing,
    motion_score,
    recovery_delay,
)
from .policies import PolicyKind
from .protocol import SessionConfig, SessionTrace
from .simulate import PolicyParams, run_session

ENV_OUTPUT = "TUBEHARQ_OUTPUT_DIR"
ENV_WORKERS = "TUBEHARQ_WORKERS"

OURS = PolicyKind.TUBE_PACKAGE.value
GAP_METRICS = ("J_aois", "t_alpha", "t_alpha_rounds")
AUDIT_METRICS = ("package_transport_ratio", "average_package_span")


class ConfigError(ValueError):
    pass


def _per_default():
    return [round(0.05 * i, 2) for i in range(1, 9)]


@dataclass(frozen=True)
class SweepConfig:
    seed: int = 0
    per_grid: list = field(default_factory=_per_default)
    request_budgets: list = field(default_factory=lambda: [8, 16])
    compute_budgets: list = field(default_factory=lambda: [2, 3])
    # extra K values for the package-transport audit, TubePackage only
    audit_request_budgets: list = field(default_factory=lambda: [4])
    audit_compute_budget: int = 2
    burst_length: float = 4.0
    horizon: int = 6
    tau_trig: float = 0.35
    c_init: float = 0.5
    c_rtt: float = 0.01
    c_pkt: float = 1.024e-4
    c_inp: float = 3.0
    f_init: float = 0.5
    u_init: int = 1
    channel_draw: str = "package"
    num_clips: int = 60
    clip_frames: int = 16
    grid_h: int = 8
    grid_w: int = 8
    min_objects: int = 2
    max_objects: int = 4
    mask_files: list = field(default_factory=list)
    session_seeds: int = 20
    policies: list = field(default_factory=lambda: [k.value for k in PolicyKind])
    score_weights: list = field(default_factory=lambda: [1.0, 0.5, 0.25])
    greedy_ranking: str = "area"
    tau_hi: float = 0.45
    tau_lo: float = 0.25
    object_weight: float = 3.0
    background_weight: float = 1.0
    weight_jitter: float = 0.2
    beta: float = 0.5
    gamma: float = 1.0
    alpha: float = 0.5
    distortion_mode: str = CARRY
    bootstrap_resamples: int = 1000
    bootstrap_seed: int = 0
    write_traces: bool = True
    workers: int = 1
    output_dir: str = "sweep-out"

    def __post_init__(self):
        self._check()

    def _check(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        for name in ("per_grid", "request_budgets", "compute_budgets", "policies"):
            if not isinstance(getattr(self, name), list) or not getattr(self, name):
                bad(name, "must be a nonempty list")
        for i, p in enumerate(self.per_grid):
            if not isinstance(p, (int, float)) or not 0 <= p < 1:
                bad(f"per_grid[{i}]", f"PER must lie in [0, 1), got {p!r}")
        for name in ("request_budgets", "audit_request_budgets"):
            for i, k in enumerate(getattr(self, name)):
                if not isinstance(k, int) or k < 1:
                    bad(f"{name}[{i}]", f"must be a positive integer, got {k!r}")
        for i, b in enumerate(self.compute_budgets):
            if not isinstance(b, int) or b < self.u_init:
                bad(f"compute_budgets[{i}]", f"must be an integer >= u_init, got {b!r}")
        for i, p in enumerate(self.policies):
            try:
                PolicyKind(p)
            except ValueError:
                bad(f"policies[{i}]", f"unknown policy {p!r}")
        if self.distortion_mode not in (CARRY, EVERY_ROUND):
            bad("distortion_mode", f"unknown mode {self.distortion_mode!r}")
        if self.session_seeds < 1:
            bad("session_seeds", "need at least one seed")
        if not self.mask_files and self.num_clips < 1:
            bad("num_clips", "need at least one clip")
        if not 0 <= self.min_objects <= self.max_objects:
            bad("max_objects", "need 0 <= min_objects <= max_objects")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        if len(self.score_weights) != 3:
            bad("score_weights", "need exactly three weights")
        try:
            self.session_config(self.request_budgets[0], self.compute_budgets[0])
        except ValueError as exc:
            bad("session", str(exc))

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config field")
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides) -> "SweepConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError("<root>: config must be a JSON object")
        d.update(overrides)
        return cls.from_dict(d)

    def with_env(self, environ=None) -> "SweepConfig":
        env = os.environ if environ is None else environ
        d = asdict(self)
        if env.get(ENV_OUTPUT):
            d["output_dir"] = env[ENV_OUTPUT]
        if env.get(ENV_WORKERS):
            d["workers"] = int(env[ENV_WORKERS])
        return SweepConfig(**d)

    def session_config(self, K: int, b_c: int) -> SessionConfig:
        return SessionConfig(
            horizon=self.horizon,
            request_budget=K,
            compute_budget=b_c,
            tau_trig=self.tau_trig,
            c_init=self.c_init,
            c_rtt=self.c_rtt,
            c_pkt=self.c_pkt,
            c_inp=self.c_inp,
            f_init=self.f_init,
            u_init=self.u_init,
            channel_draw=self.channel_draw,
        )

    def policy_params(self) -> PolicyParams:
        return PolicyParams(tuple(self.score_weights), self.greedy_ranking, self.tau_hi, self.tau_lo)

    def portable_dict(self) -> dict:
        """Config as stored in the manifest: no output path or worker count."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("workers")
        return d

    def hash(self) -> str:
        """Digest of everything that determines results (not paths or workers)."""
        d = self.portable_dict()
        d.pop("write_traces")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def cells(self):
        """``(policy, K, b_c, per)`` for every session group, deterministic order."""
        out = []
        for K in self.request_budgets:
            for b_c in self.compute_budgets:
                for per in self.per_grid:
                    for pol in self.policies:
                        out.append((pol, K, b_c, per))
        if OURS in self.policies:
            for K in self.audit_request_budgets:
                if K in self.request_budgets and self.audit_compute_budget in self.compute_budgets:
                    continue
                for per in self.per_grid:
                    out.append((OURS, K, self.audit_compute_budget, per))
        return out

    def clip_seed(self, i: int) -> int:
        return self.seed * 10_000 + i

    def session_seed(self, j: int) -> int:
        return self.seed * 10_000 + j


@dataclass(frozen=True)
class Clip:
    clip_id: int
    seed: int
    masks: ClipMasks
    motion_label: str
    motion: float
    stratum: str = ""


def build_corpus(cfg: SweepConfig) -> list:
    clips = []
    if cfg.mask_files:
        for i, path in enumerate(cfg.mask_files):
            m = load_masks(path)
            clips.append(Clip(i, cfg.clip_seed(i), m, "file", motion_score(m)))
    else:
        n_obj = cfg.max_objects - cfg.min_objects + 1
        for i in range(cfg.num_clips):
            label = "low" if i < (cfg.num_clips + 1) // 2 else "high"
            s = cfg.clip_seed(i)
            m = generate_synthetic_clip(
                s, cfg.clip_frames, cfg.grid_h, cfg.grid_w, cfg.min_objects + i % n_obj, label
            )
            clips.append(Clip(i, s, m, label, motion_score(m)))
    med = float(np.median([c.motion for c in clips]))
    return [
        Clip(c.clip_id, c.seed, c.masks, c.motion_label, c.motion, "high" if c.motion > med else "low")
        for c in clips
    ]


def session_metrics(trace: SessionTrace, catalog, alpha: float, mode: str) -> dict:
    rd = recovery_delay(trace, alpha, mode)
    out = {
        "J_aois": aois_auc(trace, mode).value,
        "t_alpha": rd.time,
        "t_alpha_rounds": float(rd.round),
        "t_R": trace.rounds[-1].t,
        "final_distortion": trace.rounds[-1].distortion if mode == CARRY else trace.rounds[-1].distortion_now,
    }
    if trace.header["policy"] == OURS:
        a = audit_stats(trace, catalog)
        out["package_transport_ratio"] = a.package_transport_ratio
        out["average_package_span"] = a.average_package_span
    return out


def _clip_job(args):
    cfg, clip = args
    catalog = build_catalog(clip.masks)
    model = make_distortion_model(
        catalog, clip.seed, cfg.object_weight, cfg.background_weight, cfg.weight_jitter, cfg.beta, cfg.gamma
    )
    params = cfg.policy_params()
    rows, traces = [], {}
    for pol, K, b_c, per in cfg.cells():
        scfg = cfg.session_config(K, b_c)
        for j in range(cfg.session_seeds):
            seed = cfg.session_seed(j)
            tr = run_session(
                catalog, scfg, model, pol, per, seed, clip.clip_id, cfg.burst_length, params,
                extra_header={"motion_stratum": clip.stratum, "motion_score": clip.motion, "K": K, "b_c": b_c},
            )
            key = (pol, K, b_c, per)
            rows.append((key, clip.clip_id, seed, clip.stratum, session_metrics(tr, catalog, cfg.alpha, cfg.distortion_mode), tr))
            if cfg.write_traces:
                traces.setdefault(key, []).append(tr.to_jsonl())
    # traces are returned as text; the objects themselves stay for pairing
    return clip.clip_id, catalog.to_dict(), rows, traces


def trace_name(pol, K, b_c, per) -> str:
    return f"{pol}_K{K}_bc{b_c}_per{per:.2f}.jsonl"


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


@dataclass
class SweepResult:
    output_dir: Path
    sessions: list  # (key, clip, seed, stratum, metrics dict)
    aggregates: list
    gaps: list
    audit: list
    manifest: dict
    trace_objects: dict = field(default_factory=dict, repr=False)


def _summaries(values, cfg):
    mean, lo, hi = bootstrap_ci(values, cfg.bootstrap_resamples, cfg.bootstrap_seed)
    return len(values), mean, lo, hi


def aggregate(sessions, pairs, cfg: SweepConfig):
    """Reduce per-session metrics; ``pairs`` maps (key, clip, seed) -> trace
    for pairing checks (may be empty when recomputing from files)."""
    by_group = {}
    for key, clip, seed, stratum, m in sessions:
        for stratum_key in ("all", stratum):
            by_group.setdefault((key, stratum_key), []).append((clip, seed, m))

    aggregates, audit = [], []
    for (key, stratum), items in sorted(by_group.items(), key=lambda kv: _group_sort(kv[0])):
        pol, K, b_c, per = key
        metric_names = sorted({name for _, _, m in items for name in m})
        for name in metric_names:
            vals = [m[name] for _, _, m in items if m.get(name) is not None]
            if not vals:
                continue
            n, mean, lo, hi = _summaries(vals, cfg)
            row = (pol, K, b_c, per, stratum, name, n, mean, lo, hi)
            if name in AUDIT_METRICS:
                audit.append((K, b_c, per, stratum, name, n, mean, lo, hi))
            else:
                aggregates.append(row)

    gaps = []
    by_key = {}
    for key, clip, seed, stratum, m in sessions:
        by_key.setdefault(key, {})[(clip, seed)] = (stratum, m)
    baselines = [p for p in cfg.policies if p != OURS]
    if OURS in cfg.policies:
        for K in cfg.request_budgets:
            for b_c in cfg.compute_budgets:
                for per in cfg.per_grid:
                    ours_key = (OURS, K, b_c, per)
                    ours = by_key.get(ours_key, {})
                    for base in baselines:
                        base_key = (base, K, b_c, per)
                        theirs = by_key.get(base_key, {})
                        diffs = {}
                        for cs in sorted(set(ours) & set(theirs)):
                            if pairs:
                                check_pairing(pairs[(ours_key, *cs)], pairs[(base_key, *cs)])
                            st, m = ours[cs]
                            mb = theirs[cs][1]
                            for target in ("all", st):
                                bucket = diffs.setdefault(target, {g: [] for g in GAP_METRICS})
                                for g in GAP_METRICS:
                                    bucket[g].append(m[g] - mb[g])
                        for stratum in sorted(diffs, key=_stratum_order):
                            for g in GAP_METRICS:
                                n, mean, lo, hi = _summaries(diffs[stratum][g], cfg)
                                gaps.append((base, K, b_c, per, stratum, g, n, mean, lo, hi))
    return aggregates, gaps, audit


def _stratum_order(s):
    return {"all": 0, "low": 1, "high": 2}.get(s, 3), s


def _group_sort(g):
    (pol, K, b_c, per), stratum = g
    return pol, K, b_c, per, _stratum_order(stratum)


AGG_HEADER = ["policy", "K", "b_c", "per", "stratum", "metric", "n", "mean", "ci_lo", "ci_hi"]
GAP_HEADER = ["baseline", "K", "b_c", "per", "stratum", "metric", "n", "mean", "ci_lo", "ci_hi"]
AUDIT_HEADER = ["K", "b_c", "per", "stratum", "metric", "n", "mean", "ci_lo", "ci_hi"]
METRICS_HEADER = ["policy", "K", "b_c", "per", "clip", "seed", "stratum", "metric", "value"]


def _tidy_rows(sessions):
    rows = []
    for (pol, K, b_c, per), clip, seed, stratum, m in sorted(sessions, key=lambda s: (s[0], s[1], s[2])):
        for name in sorted(m):
            rows.append((pol, K, b_c, per, clip, seed, stratum, name, m[name]))
    return rows


def _summary_json(aggregates, audit):
    out = {}
    for pol, K, b_c, per, stratum, name, n, mean, lo, hi in aggregates:
        key = f"{pol}|per={per:.2f}|K={K}|b_c={b_c}|{stratum}"
        out.setdefault(key, {})[name] = {"n": n, "mean": mean, "ci": [lo, hi]}
    for K, b_c, per, stratum, name, n, mean, lo, hi in audit:
        key = f"{OURS}|per={per:.2f}|K={K}|b_c={b_c}|{stratum}"
        out.setdefault(key, {})[name] = {"n": n, "mean": mean, "ci": [lo, hi]}
    return json.dumps(out, sort_keys=True, indent=1) + "\n"


def write_tables(out: Path, sessions, aggregates, gaps, audit) -> dict:
    files = {
        "metrics.csv": _csv_text(METRICS_HEADER, _tidy_rows(sessions)),
        "aggregates.csv": _csv_text(AGG_HEADER, aggregates),
        "audit.csv": _csv_text(AUDIT_HEADER, audit),
        "summary.json": _summary_json(aggregates, audit),
    }
    if gaps:
        files["gaps.csv"] = _csv_text(GAP_HEADER, gaps)
    for name, text in files.items():
        (out / name).write_text(text)
    return {name: hashlib.sha256(text.encode()).hexdigest() for name, text in files.items()}


def run_sweep(cfg: SweepConfig, output_dir=None, workers: int | None = None, keep_traces: bool = False) -> SweepResult:
    out = Path(output_dir or cfg.output_dir)
    workers = workers or cfg.workers
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    clips = build_corpus(cfg)
    jobs = [(cfg, c) for c in clips]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_clip_job, jobs))
    else:
        results = [_clip_job(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    (out / "catalogs").mkdir(exist_ok=True)
    sessions, pairs, trace_text = [], {}, {}
    for clip_id, cat_dict, rows, traces in results:
        (out / "catalogs" / f"clip_{clip_id:04d}.json").write_text(json.dumps(cat_dict))
        for key, clip, seed, stratum, m, tr in rows:
            sessions.append((key, clip, seed, stratum, m))
            pairs[(key, clip, seed)] = tr
        for key, texts in traces.items():
            trace_text.setdefault(key, []).extend(texts)
    if cfg.write_traces:
        (out / "traces").mkdir(exist_ok=True)
        for key in sorted(trace_text):
            (out / "traces" / trace_name(*key)).write_text("".join(trace_text[key]))

    (out / "clips.csv").write_text(
        _csv_text(
            ["clip", "seed", "motion_label", "motion_score", "stratum"],
            [(c.clip_id, c.seed, c.motion_label, c.motion, c.stratum) for c in clips],
        )
    )
    aggregates, gaps, audit = aggregate(sessions, pairs, cfg)
    digests = write_tables(out, sessions, aggregates, gaps, audit)
    manifest = {
        "config": cfg.portable_dict(),
        "config_hash": cfg.hash(),
        "code_version": __version__,
        "pairing": "channel streams keyed by (session seed, clip) are shared by all policies "
        "of a cell; every gap pair is checked for equal erasure checksums",
        "outputs": digests,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return SweepResult(out, sessions, aggregates, gaps, audit, manifest, pairs if keep_traces else {})


def read_traces(traces_dir) -> list:
    """All sessions from a traces directory, in file then record order."""
    out = []
    for path in sorted(Path(traces_dir).glob("*.jsonl")):
        chunk = []
        for line in path.read_text().splitlines():
            if line.startswith('{"') and '"kind": "header"' in line and chunk:
                out.append(SessionTrace.from_jsonl("\n".join(chunk)))
                chunk = []
            chunk.append(line)
        if chunk:
            out.append(SessionTrace.from_jsonl("\n".join(chunk)))
    return out


def recompute_metrics(run_dir, output_dir) -> dict:
    """Recompute every table of a finished sweep from its traces and catalogs."""
    run = Path(run_dir)
    manifest = json.loads((run / "manifest.json").read_text())
    cfg = SweepConfig.from_dict(manifest["config"])
    catalogs = {}
    sessions, pairs = [], {}
    for tr in read_traces(run / "traces"):
        h = tr.header
        clip = h["clip"]
        if clip not in catalogs:
            catalogs[clip] = load_catalog(run / "catalogs" / f"clip_{clip:04d}.json")
        key = (h["policy"], h["K"], h["b_c"], h["per"])
        m = session_metrics(tr, catalogs[clip], cfg.alpha, cfg.distortion_mode)
        sessions.append((key, clip, h["seed"], h["motion_stratum"], m))
        pairs[(key, clip, h["seed"])] = tr
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    aggregates, gaps, audit = aggregate(sessions, pairs, cfg)
    return write_tables(out, sessions, aggregates, gaps, audit)
