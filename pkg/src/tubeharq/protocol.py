"""Round-based receiver-driven HARQ session.

A session holds the availability state over the latent universe, the
compute-budget ledger, the elapsed-time clock and the trace.  Requests are
either package ids (package transport, atomic commitment) or block ids
``(t, b)`` (block transport, per-block commitment).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .catalog import PackageCatalog
from .channel import ChannelState
from .distortion import (
    DistortionModel,
    ProxyModel,
    calibrate,
    summarize_missing,
)

PACKAGE, BLOCK = "package", "block"


class ProtocolViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    horizon: int = 6
    request_budget: int = 16
    compute_budget: int = 2
    tau_trig: float = 0.35
    c_init: float = 0.5
    c_rtt: float = 0.01
    c_pkt: float = 1.024e-4
    c_inp: float = 3.0
    transport: str = PACKAGE
    f_init: float = 0.5
    u_init: int = 1
    # "package": each requested package is one channel-visible unit;
    # "unit": a package of c_p blocks rides c_p consecutive channel units.
    # Block transport always uses one unit per block.
    channel_draw: str = "package"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.request_budget < 1:
            raise ValueError("request budget must be >= 1")
        if self.compute_budget < 0:
            raise ValueError("compute budget must be >= 0")
        for name in ("c_init", "c_rtt", "c_pkt", "c_inp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.f_init <= 1.0:
            raise ValueError(f"f_init must lie in [0, 1], got {self.f_init}")
        if self.u_init not in (0, 1):
            raise ValueError("u_init must be 0 or 1")
        if self.u_init > self.compute_budget:
            raise ValueError("initial reconstruction exceeds the compute budget")
        if self.transport not in (PACKAGE, BLOCK):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.channel_draw not in ("unit", "package"):
            raise ValueError(f"unknown channel_draw {self.channel_draw!r}")


@dataclass
class RoundRecord:
    round: int
    request: list  # package ids, or [t, b] pairs
    units_sent: int
    erasures: list  # per channel unit, chronological
    delivered: list  # Z per requested item
    committed: list  # flat indices of newly available blocks
    u: int
    delta: float
    t: float
    proxy: float  # D-hat the policy sees after this round
    proxy_raw: float
    distortion: float  # evaluation trajectory (carried forward when u = 0)
    distortion_now: float  # true distortion of the current missing state
    missing: int
    gain: float
    offset: float


@dataclass
class SessionTrace:
    header: dict
    t_init: float
    u_init: int
    d_init: float
    proxy_init: float
    initial_packages: list  # package ids forming the initial payload
    rounds: list = field(default_factory=list)

    @property
    def times(self) -> list:
        return [self.t_init] + [r.t for r in self.rounds]

    @property
    def distortions(self) -> list:
        return [r.distortion for r in self.rounds]

    def to_jsonl(self) -> str:
        head = {
            "kind": "header",
            **self.header,
            "t_init": self.t_init,
            "u_init": self.u_init,
            "d_init": self.d_init,
            "proxy_init": self.proxy_init,
            "initial_packages": self.initial_packages,
        }
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps({"kind": "round", **asdict(r)}, sort_keys=True) for r in self.rounds]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "SessionTrace":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = rows[0]
        if head.pop("kind") != "header":
            raise ValueError("trace must start with a header record")
        fixed = {k: head.pop(k) for k in ("t_init", "u_init", "d_init", "proxy_init", "initial_packages")}
        rounds = []
        for row in rows[1:]:
            row.pop("kind")
            rounds.append(RoundRecord(**row))
        return cls(header=head, rounds=rounds, **fixed)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        cols = ["round", "units_sent", "n_requested", "n_delivered", "n_committed", "u", "delta", "t",
                "proxy", "proxy_raw", "distortion", "distortion_now", "missing"]
        w.writerow(cols)
        w.writerow([0, 0, 0, 0, "", self.u_init, "", repr(self.t_init),
                    repr(self.proxy_init), "", repr(self.d_init), repr(self.d_init), ""])
        for r in self.rounds:
            w.writerow([r.round, r.units_sent, len(r.request), sum(r.delivered), len(r.committed), r.u,
                        repr(r.delta), repr(r.t), repr(r.proxy), repr(r.proxy_raw), repr(r.distortion),
                        repr(r.distortion_now), r.missing])
        return out.getvalue()


ROUND_FIELDS = [f.name for f in fields(RoundRecord)]


class Session:
    """Mutable single-threaded session state; build with ``init_session``."""

    def __init__(self, catalog, config, distortion_model, proxy, available, trace):
        self.catalog: PackageCatalog = catalog
        self.config: SessionConfig = config
        self.distortion_model: DistortionModel = distortion_model
        self.proxy: ProxyModel = proxy
        self.available: np.ndarray = available
        self.trace: SessionTrace = trace
        self.loss_estimate = 0.0

    @property
    def round(self) -> int:
        return len(self.trace.rounds)

    @property
    def t(self) -> float:
        return self.trace.rounds[-1].t if self.trace.rounds else self.trace.t_init

    @property
    def proxy_value(self) -> float:
        return self.trace.rounds[-1].proxy if self.trace.rounds else self.trace.proxy_init

    @property
    def distortion(self) -> float:
        return self.trace.rounds[-1].distortion if self.trace.rounds else self.trace.d_init

    @property
    def reconstructions_used(self) -> int:
        return self.trace.u_init + sum(r.u for r in self.trace.rounds)

    @property
    def compute_left(self) -> int:
        return self.config.compute_budget - self.reconstructions_used

    @property
    def done(self) -> bool:
        return self.round >= self.config.horizon

    def missing_mask(self) -> np.ndarray:
        return ~self.available


def initial_packages(catalog: PackageCatalog, f_init: float) -> list:
    """Whole packages in catalog order until the next one would overshoot
    ``f_init * |U|``."""
    target = f_init * catalog.universe.size
    chosen, total = [], 0
    for p in catalog.packages:
        if total + p.size > target + 1e-9:
            break
        chosen.append(p.package_id)
        total += p.size
    return chosen


def availability_of(catalog: PackageCatalog, package_ids) -> np.ndarray:
    avail = np.zeros(catalog.universe.size, dtype=bool)
    for pid in package_ids:
        avail[catalog.member_index[catalog.package_index[pid]]] = True
    return avail


def init_session(
    catalog: PackageCatalog,
    config: SessionConfig,
    distortion_model: DistortionModel,
    proxy: ProxyModel | None = None,
    header: dict | None = None,
) -> Session:
    if not 0.0 <= config.f_init <= 1.0:
        raise ValueError("f_init must lie in [0, 1]")
    proxy = proxy or ProxyModel()
    init_ids = initial_packages(catalog, config.f_init)
    avail = availability_of(catalog, init_ids)
    missing = ~avail
    raw = proxy.raw(summarize_missing(catalog, missing))
    if config.u_init:
        d_init = distortion_model(missing)
        proxy = calibrate(proxy, raw, d_init)
    else:
        # no initial reconstruction exists yet
        d_init = 1.0
    proxy_init = proxy.apply(raw)
    t_init = config.c_init + config.c_inp * config.u_init
    head = {"config": asdict(config)}
    head.update(header or {})
    trace = SessionTrace(
        header=head,
        t_init=t_init,
        u_init=config.u_init,
        d_init=d_init,
        proxy_init=proxy_init,
        initial_packages=init_ids,
    )
    return Session(catalog, config, distortion_model, proxy, avail, trace)


def decide_trigger(proxy_prev: float, compute_left: int, tau_trig: float) -> int:
    """Reconstruct iff the last proxy is at or above threshold and compute remains."""
    return int(proxy_prev >= tau_trig and compute_left > 0)


def session_trigger(session: Session) -> int:
    return decide_trigger(session.proxy_value, session.compute_left, session.config.tau_trig)


def missing_set(session: Session):
    """Missing blocks as a set of ``(t, b)`` plus the flat indicator mask."""
    mask = session.missing_mask()
    u = session.catalog.universe
    return {u.block(k) for k in np.flatnonzero(mask)}, mask


def request_units(session: Session, request) -> int:
    if session.config.transport == PACKAGE:
        cat = session.catalog
        return int(sum(cat.packages[cat.package_index[p]].size for p in request))
    return len(request)


def _resolve(session: Session, request):
    """Validate a request and return (budget units, list of flat index arrays)."""
    cat = session.catalog
    if len(set(map(_key, request))) != len(request):
        raise ValueError("request names an item twice")
    groups = []
    if session.config.transport == PACKAGE:
        for p in request:
            i = cat.package_index.get(p)
            if i is None:
                raise ValueError(f"unknown package id {p!r}")
            groups.append(cat.member_index[i])
    else:
        u = cat.universe
        for blk in request:
            t, b = blk
            if not u.contains(t, b):
                raise ValueError(f"unknown block {blk!r}")
            groups.append(np.array([u.flat(t, b)], dtype=np.int64))
    units = int(sum(g.size for g in groups))
    return units, groups


def _key(item):
    return tuple(item) if isinstance(item, (list, tuple)) else item


def apply_round(session: Session, request, channel: ChannelState, u: int | None = None) -> RoundRecord:
    """Run one HARQ round: transmit, commit, maybe reconstruct, account time.

    ``u`` overrides the reconstruction decision (hysteresis or planned
    schedules); by default the threshold trigger on the previous proxy is
    used.
    """
    cfg = session.config
    if session.done:
        raise ProtocolViolation(f"session already ran its {cfg.horizon} rounds")
    request = [_key(x) for x in request]
    units, groups = _resolve(session, request)
    if units > cfg.request_budget:
        raise ProtocolViolation(f"request of {units} units exceeds budget {cfg.request_budget}")
    r = session.round + 1

    if cfg.transport == PACKAGE and cfg.channel_draw == "package":
        erasures = channel.transmit(len(groups), r)
        delivered = [int(e == 0) for e in erasures]
    else:
        erasures = channel.transmit(units, r)
        delivered, pos = [], 0
        for g in groups:
            delivered.append(int(not erasures[pos : pos + g.size].any()))
            pos += g.size

    before = session.available.copy()
    for g, z in zip(groups, delivered):
        if z:
            session.available[g] = True
    committed = np.flatnonzero(session.available & ~before)
    session.loss_estimate = float(np.mean(erasures)) if erasures.size else 0.0

    if u is None:
        u = session_trigger(session)
    u = int(u)
    if u and session.compute_left <= 0:
        raise ProtocolViolation("reconstruction requested with no compute budget left")

    missing = session.missing_mask()
    d_now = session.distortion_model(missing)
    summary = summarize_missing(session.catalog, missing, session.loss_estimate)
    raw = session.proxy.raw(summary)
    if u:
        session.proxy = calibrate(session.proxy, raw, d_now)
        proxy_val = session.proxy.apply(raw)
        dist = d_now
    else:
        proxy_val = session.proxy_value
        dist = session.distortion

    delta = cfg.c_rtt + cfg.c_pkt * units + cfg.c_inp * u
    rec = RoundRecord(
        round=r,
        request=[list(x) if isinstance(x, tuple) else x for x in request],
        units_sent=units,
        erasures=erasures.astype(int).tolist(),
        delivered=delivered,
        committed=committed.tolist(),
        u=u,
        delta=delta,
        t=session.t + delta,
        proxy=proxy_val,
        proxy_raw=raw,
        distortion=dist,
        distortion_now=d_now,
        missing=int(missing.sum()),
        gain=session.proxy.gain,
        offset=session.proxy.offset,
    )
    session.trace.rounds.append(rec)
    return rec


def check_trace(trace: SessionTrace, catalog: PackageCatalog | None = None) -> list:
    """Audit a trace against the budget, atomicity and time identities.

    Returns a list of violation messages (empty when clean).
    """
    cfg = SessionConfig(**trace.header["config"])
    problems = []
    if trace.u_init + sum(r.u for r in trace.rounds) > cfg.compute_budget:
        problems.append("compute budget exceeded")
    t = trace.t_init
    if t != cfg.c_init + cfg.c_inp * trace.u_init:
        problems.append("initial time mismatch")
    used = trace.u_init
    for r in trace.rounds:
        if r.units_sent > cfg.request_budget:
            problems.append(f"round {r.round}: request budget exceeded")
        used += r.u
        if used > cfg.compute_budget:
            problems.append(f"round {r.round}: compute budget exceeded")
        if r.delta != cfg.c_rtt + cfg.c_pkt * r.units_sent + cfg.c_inp * r.u:
            problems.append(f"round {r.round}: time increment mismatch")
        t = t + r.delta
        if r.t != t:
            problems.append(f"round {r.round}: cumulative time mismatch")
    if catalog is not None and cfg.transport == PACKAGE:
        available = availability_of(catalog, trace.initial_packages)
        for r in trace.rounds:
            new = np.zeros_like(available)
            new[r.committed] = True
            for pid, z in zip(r.request, r.delivered):
                idx = catalog.member_index[catalog.package_index[pid]]
                got = new[idx].sum() + available[idx].sum()
                if z and got != idx.size:
                    problems.append(f"round {r.round}: package {pid} partially committed")
                if not z and new[idx].any():
                    problems.append(f"round {r.round}: lost package {pid} committed blocks")
            available |= new
    return problems
