"""Command line entry point: ``tubeharq <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .catalog import (
    CatalogError,
    build_catalog,
    generate_synthetic_clip,
    load_catalog,
    load_masks,
    save_catalog,
    save_masks,
)
from .distortion import make_distortion_model
from .harness import ConfigError, SweepConfig, recompute_metrics, run_sweep
from .metrics import aois_auc, recovery_delay
from .policies import PolicyKind
from .protocol import SessionConfig
from .simulate import run_session


def _cmd_catalog_build(args):
    masks = load_masks(args.masks)
    cat = build_catalog(masks, max_span=args.max_span, min_size=args.min_size, max_size=args.max_size)
    save_catalog(cat, args.out)
    print(f"{len(cat)} packages, {len(cat.tubes)} tubes -> {args.out}")
    return 0


def _cmd_catalog_validate(args):
    from .catalog import validate_catalog

    try:
        cat = load_catalog(args.catalog)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        print(f"unreadable catalog: {exc}", file=sys.stderr)
        return 2
    rep = validate_catalog(cat)
    if rep.ok:
        print("valid")
        return 0
    for line in rep.lines():
        print(line)
    return 1


def _cmd_simulate(args):
    if args.catalog:
        cat = load_catalog(args.catalog)
    else:
        masks = load_masks(args.masks) if args.masks else generate_synthetic_clip(
            args.seed, args.frames, args.grid_h, args.grid_w, args.objects, args.motion
        )
        cat = build_catalog(masks)
    cfg = SessionConfig(
        horizon=args.horizon,
        request_budget=args.K,
        compute_budget=args.b_c,
        tau_trig=args.tau_trig,
        c_init=args.c_init,
        f_init=args.f_init,
        u_init=args.u_init,
        channel_draw=args.channel_draw,
    )
    model = make_distortion_model(cat, args.seed)
    trace = run_session(cat, cfg, model, args.policy, args.per, args.seed, args.clip, args.burst_length)
    text = trace.to_csv() if args.format == "csv" else trace.to_jsonl()
    if args.out:
        Path(args.out).write_text(text)
        res = aois_auc(trace)
        print(f"J_aois={res.value!r} t_alpha={recovery_delay(trace, args.alpha).time!r} -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_sweep(args):
    overrides = {}
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text())
        cfg = SweepConfig.from_dict(manifest["config"])
    elif args.config:
        cfg = SweepConfig.from_file(args.config)
    else:
        cfg = SweepConfig()
    if args.seed is not None:
        overrides["seed"] = args.seed
    elif not args.from_manifest:
        print("sweep: --seed is required (or use --from-manifest)", file=sys.stderr)
        return 2
    for name in ("per_grid", "request_budgets", "compute_budgets", "policies"):
        val = getattr(args, name)
        if val is not None:
            overrides[name] = val
    for name in ("session_seeds", "num_clips", "burst_length", "horizon", "output_dir", "workers"):
        val = getattr(args, name)
        if val is not None:
            overrides[name] = val
    if args.no_traces:
        overrides["write_traces"] = False
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    d.update(overrides)
    cfg = SweepConfig.from_dict(d).with_env()
    res = run_sweep(cfg)
    print(f"{len(res.sessions)} sessions -> {res.output_dir}")
    return 0


def _cmd_metrics(args):
    digests = recompute_metrics(args.run, args.out)
    for name in sorted(digests):
        print(f"{name} {digests[name]}")
    return 0


def _cmd_gen_clips(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        level = args.motion or ("low" if i < (args.count + 1) // 2 else "high")
        n_obj = args.min_objects + i % (args.max_objects - args.min_objects + 1)
        masks = generate_synthetic_clip(args.seed * 10_000 + i, args.frames, args.grid_h, args.grid_w, n_obj, level)
        save_masks(masks, out / f"clip_{i:04d}.json")
    print(f"{args.count} clips -> {out}")
    return 0


def _floats(s):
    return [float(x) for x in s.split(",")]


def _ints(s):
    return [int(x) for x in s.split(",")]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tubeharq", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    cat = sub.add_parser("catalog", help="build or validate package catalogs")
    csub = cat.add_subparsers(dest="catalog_command", required=True)
    b = csub.add_parser("build", help="masks JSON -> catalog JSON")
    b.add_argument("masks")
    b.add_argument("--out", required=True)
    b.add_argument("--max-span", type=int, default=3)
    b.add_argument("--min-size", type=int, default=4)
    b.add_argument("--max-size", type=int, default=24)
    b.set_defaults(func=_cmd_catalog_build)
    v = csub.add_parser("validate", help="check partition, span and size invariants")
    v.add_argument("catalog")
    v.set_defaults(func=_cmd_catalog_validate)

    s = sub.add_parser("simulate", help="run one session and emit its trace")
    s.add_argument("--seed", type=int, required=True)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--catalog")
    src.add_argument("--masks")
    s.add_argument("--policy", default=PolicyKind.TUBE_PACKAGE.value, choices=[k.value for k in PolicyKind])
    s.add_argument("--per", type=float, default=0.2)
    s.add_argument("--burst-length", type=float, default=4.0)
    s.add_argument("--K", type=int, default=16)
    s.add_argument("--b-c", dest="b_c", type=int, default=2)
    s.add_argument("--horizon", type=int, default=6)
    s.add_argument("--tau-trig", type=float, default=0.35)
    s.add_argument("--c-init", type=float, default=0.5)
    s.add_argument("--f-init", type=float, default=0.5)
    s.add_argument("--u-init", type=int, default=1)
    s.add_argument("--channel-draw", choices=["package", "unit"], default="package")
    s.add_argument("--clip", type=int, default=0)
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--grid-h", type=int, default=8)
    s.add_argument("--grid-w", type=int, default=8)
    s.add_argument("--objects", type=int, default=3)
    s.add_argument("--motion", default="low")
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_simulate)

    w = sub.add_parser("sweep", help="run a config-driven PER sweep")
    w.add_argument("--config")
    w.add_argument("--from-manifest")
    w.add_argument("--seed", type=int)
    w.add_argument("--per-grid", type=_floats)
    w.add_argument("--request-budgets", type=_ints)
    w.add_argument("--compute-budgets", type=_ints)
    w.add_argument("--policies", type=lambda s: s.split(","))
    w.add_argument("--session-seeds", type=int)
    w.add_argument("--num-clips", type=int)
    w.add_argument("--burst-length", type=float)
    w.add_argument("--horizon", type=int)
    w.add_argument("--output-dir")
    w.add_argument("--workers", type=int)
    w.add_argument("--no-traces", action="store_true")
    w.set_defaults(func=_cmd_sweep)

    m = sub.add_parser("metrics", help="recompute sweep tables from saved traces")
    m.add_argument("run", help="sweep output directory")
    m.add_argument("--out", required=True)
    m.set_defaults(func=_cmd_metrics)

    g = sub.add_parser("gen-clips", help="write a synthetic mask corpus")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, default=60)
    g.add_argument("--out", required=True)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--grid-h", type=int, default=8)
    g.add_argument("--grid-w", type=int, default=8)
    g.add_argument("--min-objects", type=int, default=2)
    g.add_argument("--max-objects", type=int, default=4)
    g.add_argument("--motion")
    g.set_defaults(func=_cmd_gen_clips)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CatalogError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
