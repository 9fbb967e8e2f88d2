"""Run complete sessions for any policy kind on a clip."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .catalog import PackageCatalog
from .channel import erasure_checksum, make_channel, match_ge_params
from .distortion import DistortionModel, ProxyModel, summarize_missing
from .policies import (
    GreedyBlockPolicy,
    HysteresisPolicy,
    PolicyKind,
    ScheduledPolicy,
    TubePackagePolicy,
    TubeWeightedBlockPolicy,
    plan_offline,
    SCORE_WEIGHTS,
    TAU_HI,
    TAU_LO,
)
from .protocol import SessionConfig, SessionTrace, apply_round, availability_of, init_session
from .rng import stream


@dataclass(frozen=True)
class PolicyParams:
    score_weights: tuple = SCORE_WEIGHTS
    greedy_ranking: str = "area"  # or "random"
    tau_hi: float = TAU_HI
    tau_lo: float = TAU_LO


def config_for(kind: PolicyKind, config: SessionConfig) -> SessionConfig:
    """The shared config with only the transport primitive set by the policy."""
    return replace(config, transport=PolicyKind(kind).transport)


def _make_policy(kind, params, seed, clip_id, schedule=None):
    rng = stream(seed, "policy", clip_id) if params.greedy_ranking == "random" else None
    if kind is PolicyKind.TUBE_PACKAGE:
        return TubePackagePolicy(params.score_weights)
    if kind is PolicyKind.GREEDY_BLOCK:
        return GreedyBlockPolicy(params.greedy_ranking, rng)
    if kind is PolicyKind.TUBE_WEIGHTED_BLOCK:
        return TubeWeightedBlockPolicy(params.score_weights)
    if kind is PolicyKind.HYSTERESIS_TRIGGER:
        return HysteresisPolicy(params.tau_hi, params.tau_lo, params.greedy_ranking, rng)
    if kind is PolicyKind.OFFLINE_PLANNING:
        return ScheduledPolicy(schedule, params.greedy_ranking, rng)
    raise ValueError(f"unknown policy {kind!r}")


def _drive(catalog, config, model, policy, ge, seed, clip_id, header):
    session = init_session(catalog, config, model, ProxyModel(), header=header)
    channel = make_channel(ge, seed, clip_id)
    while not session.done:
        req = policy.request(session)
        apply_round(session, req, channel, policy.trigger(session))
    return session


def realization(catalog, config, model, ge, seed, clip_id, params=PolicyParams()):
    """Noncausal oracle: the availability path of greedy-block requests on
    this channel realization, plus the proxy at every round."""
    cfg = config_for(PolicyKind.GREEDY_BLOCK, config)
    policy = _make_policy(PolicyKind.GREEDY_BLOCK, params, seed, clip_id)
    session = init_session(catalog, cfg, model, ProxyModel())
    proxy = session.proxy
    channel = make_channel(ge, seed, clip_id)
    units, path = [], []
    while not session.done:
        req = policy.request(session)
        rec = apply_round(session, req, channel, 0)
        units.append(rec.units_sent)
        path.append(proxy.apply(proxy.raw(summarize_missing(catalog, session.missing_mask()))))
    return session.trace.t_init, session.trace.proxy_init, units, path


def run_session(
    catalog: PackageCatalog,
    config: SessionConfig,
    model: DistortionModel,
    kind,
    per: float,
    seed: int,
    clip_id=0,
    burst_length: float = 4.0,
    params: PolicyParams = PolicyParams(),
    extra_header: dict | None = None,
) -> SessionTrace:
    kind = PolicyKind(kind)
    ge = match_ge_params(per, burst_length)
    cfg = config_for(kind, config)
    header = {
        "policy": kind.value,
        "policy_params": asdict(params),
        "clip": clip_id,
        "seed": seed,
        "per": per,
        "burst_length": burst_length,
        "ge": {"p01": ge.p01, "p10": ge.p10, "clamped": ge.clamped},
        "erasure_checksum": erasure_checksum(ge, seed, clip_id, n=cfg.horizon * cfg.request_budget),
    }
    header.update(extra_header or {})
    schedule = None
    if kind is PolicyKind.OFFLINE_PLANNING:
        t0, p0, units, path = realization(catalog, config, model, ge, seed, clip_id, params)
        plan = plan_offline(t0, p0, units, path, cfg, cfg.compute_budget - cfg.u_init)
        schedule = plan.schedule
        header["offline_schedule"] = list(schedule)
        header["offline_surrogate"] = plan.surrogate
    policy = _make_policy(kind, params, seed, clip_id, schedule)
    return _drive(catalog, cfg, model, policy, ge, seed, clip_id, header).trace


def availability_after(trace: SessionTrace, catalog: PackageCatalog, rounds: int | None = None) -> np.ndarray:
    """Rebuild the availability mask from a trace."""
    avail = availability_of(catalog, trace.initial_packages)
    for r in trace.rounds[:rounds]:
        avail[r.committed] = True
    return avail
