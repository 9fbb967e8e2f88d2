"""Evaluation metrics over session traces."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalog import ClipMasks, PackageCatalog
from .protocol import PACKAGE, SessionTrace

CARRY, EVERY_ROUND = "carry", "every_round"


class InvalidTrace(ValueError):
    pass


class PairingError(ValueError):
    pass


def trajectory(trace: SessionTrace, mode: str = CARRY):
    """``(t_0, D_init, [t_1..t_R], [D_1..D_R])`` of a trace.

    ``carry`` is the evaluated trajectory (frozen between reconstructions);
    ``every_round`` uses the true distortion of the missing state each round.
    """
    if mode == CARRY:
        ds = [r.distortion for r in trace.rounds]
    elif mode == EVERY_ROUND:
        ds = [r.distortion_now for r in trace.rounds]
    else:
        raise ValueError(f"unknown distortion mode {mode!r}")
    return trace.t_init, trace.d_init, [r.t for r in trace.rounds], ds


@dataclass(frozen=True)
class AoisResult:
    value: float
    segments: tuple
    horizon: float
    numeric: float


def aois_from_steps(t0: float, d_init: float, times, dists) -> AoisResult:
    ts = [float(t0)] + [float(t) for t in times]
    if len(times) != len(dists):
        raise InvalidTrace("need one distortion per round")
    if t0 < 0 or any(b < a for a, b in zip(ts, ts[1:])):
        raise InvalidTrace("elapsed times must be nonnegative and nondecreasing")
    segs = [0.5 * t0 * t0 * d_init]
    segs += [0.5 * (ts[r] ** 2 - ts[r - 1] ** 2) * dists[r - 1] for r in range(1, len(ts))]
    # trapezoid on the step function tau * D(tau): both one-sided values at every jump
    knots = [0.0]
    vals = [0.0]
    levels = [d_init] + list(dists)
    lo = 0.0
    for hi, d in zip(ts, levels):
        knots += [lo, hi]
        vals += [lo * d, hi * d]
        lo = hi
    numeric = float(np.trapezoid(vals, knots))
    return AoisResult(float(math.fsum(segs)), tuple(segs), ts[-1], numeric)


def aois_auc(trace: SessionTrace, mode: str = CARRY) -> AoisResult:
    return aois_from_steps(*trajectory(trace, mode))


@dataclass(frozen=True)
class RecoveryDelay:
    time: float
    round: int  # 0 when already recovered, R when never crossed
    crossed: bool
    degenerate: bool = False  # D_init == 0


def recovery_delay(trace: SessionTrace, alpha: float = 0.5, mode: str = CARRY) -> RecoveryDelay:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    t0, d_init, times, dists = trajectory(trace, mode)
    if d_init == 0.0:
        return RecoveryDelay(t0, 0, True, degenerate=True)
    for r, (t, d) in enumerate(zip(times, dists), start=1):
        if d <= alpha * d_init:
            return RecoveryDelay(t, r, True)
    return RecoveryDelay(times[-1] if times else t0, len(times), False)


def motion_score(frames) -> float:
    """Mean absolute change of foreground occupancy between consecutive frames."""
    if isinstance(frames, ClipMasks):
        frames = frames.frames
    x = np.asarray(frames)
    if x.ndim < 2 or x.shape[0] < 2:
        raise ValueError("motion score needs at least two frames")
    occ = (x.reshape(x.shape[0], -1) > 0).astype(np.float64)
    return float(np.abs(np.diff(occ, axis=0)).mean())


@dataclass(frozen=True)
class AuditStats:
    package_transport_ratio: float | None  # None: nothing delivered
    average_package_span: float | None
    blocks_committed: int
    packages_delivered: int


def audit_stats(trace: SessionTrace, catalog: PackageCatalog) -> AuditStats:
    if trace.header.get("config", {}).get("transport", PACKAGE) != PACKAGE:
        raise ValueError("audit statistics are defined for package-transport traces")
    committed = multi = 0
    spans = []
    for r in trace.rounds:
        new = set(r.committed)
        for pid, z in zip(r.request, r.delivered):
            if not z:
                continue
            i = catalog.package_index[pid]
            p = catalog.packages[i]
            spans.append(p.span)
            n_new = sum(1 for k in catalog.member_index[i].tolist() if k in new)
            committed += n_new
            if p.size > 1:
                multi += n_new
    ratio = multi / committed if committed else None
    span = float(np.mean(spans)) if spans else None
    return AuditStats(ratio, span, committed, len(spans))


PAIRING_KEYS = ("clip", "seed", "per", "burst_length", "erasure_checksum")


def check_pairing(a: SessionTrace, b: SessionTrace) -> None:
    for k in PAIRING_KEYS:
        if a.header.get(k) != b.header.get(k):
            raise PairingError(f"traces differ in {k}: {a.header.get(k)!r} vs {b.header.get(k)!r}")
    ca = dict(a.header["config"])
    cb = dict(b.header["config"])
    ca.pop("transport")
    cb.pop("transport")
    if ca != cb:
        diff = sorted(k for k in ca if ca[k] != cb.get(k))
        raise PairingError(f"paired configs differ beyond the transport primitive: {diff}")


def paired_gap(ours: SessionTrace, baseline: SessionTrace, metric) -> float:
    """``metric(ours) - metric(baseline)``; negative favours ours."""
    check_pairing(ours, baseline)
    return float(metric(ours) - metric(baseline))


def bootstrap_ci(values, n_resamples: int = 1000, seed: int = 0, level: float = 0.95):
    """Mean and percentile bootstrap interval of the mean."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan"), float("nan")
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.integers(0, x.size, size=(n_resamples, x.size))
    means = x[idx].mean(axis=1)
    a = (1 - level) / 2
    lo, hi = np.quantile(means, [a, 1 - a])
    return float(x.mean()), float(lo), float(hi)
