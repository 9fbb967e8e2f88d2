"""Request and reconstruction-trigger policies.

All rankings break ties by ascending id (package id, or flat block index,
i.e. frame then block) so requests are reproducible bit for bit.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from .catalog import PackageCatalog
from .protocol import BLOCK, PACKAGE, decide_trigger

SCORE_WEIGHTS = (1.0, 0.5, 0.25)
TAU_HI, TAU_LO = 0.45, 0.25


class PolicyKind(str, enum.Enum):
    TUBE_PACKAGE = "TubePackage"
    GREEDY_BLOCK = "GreedyBlock"
    TUBE_WEIGHTED_BLOCK = "TubeWeightedBlock"
    HYSTERESIS_TRIGGER = "HysteresisTrigger"
    OFFLINE_PLANNING = "OfflinePlanning"

    @property
    def transport(self) -> str:
        return PACKAGE if self is PolicyKind.TUBE_PACKAGE else BLOCK


MAIN_POLICIES = (PolicyKind.TUBE_PACKAGE, PolicyKind.GREEDY_BLOCK, PolicyKind.TUBE_WEIGHTED_BLOCK)


@dataclass(frozen=True)
class PackageScore:
    package_id: int
    rho: float
    area: float
    span: int
    score: float
    size: int
    weights: tuple = SCORE_WEIGHTS


def _package_scores(catalog: PackageCatalog, missing: np.ndarray, weights):
    w1, w2, w3 = weights
    n_missing = np.bincount(catalog.block_owner[missing], minlength=len(catalog))
    rho = n_missing / catalog.sizes
    score = w1 * rho + w2 * catalog.package_area + w3 * catalog.spans
    return rho, score


def score_packages(catalog: PackageCatalog, available: np.ndarray, weights=SCORE_WEIGHTS) -> list:
    """Scores of the candidate packages (those not fully delivered), in catalog order."""
    rho, score = _package_scores(catalog, ~np.asarray(available, dtype=bool), weights)
    out = []
    for i in np.flatnonzero(rho > 0):
        p = catalog.packages[i]
        out.append(
            PackageScore(
                package_id=p.package_id,
                rho=float(rho[i]),
                area=float(catalog.package_area[i]),
                span=p.span,
                score=float(score[i]),
                size=p.size,
                weights=tuple(weights),
            )
        )
    return out


def select_request_tube_package(scores, budget: int) -> list:
    """Greedy knapsack scan by descending score; packages that do not fit are
    skipped and the scan continues with the rest."""
    ranked = sorted(scores, key=lambda s: (-s.score, s.package_id))
    chosen, used = [], 0
    for s in ranked:
        if used + s.size <= budget:
            chosen.append(s.package_id)
            used += s.size
            if used == budget:
                break
    return chosen


def _top_blocks(catalog, missing, key, budget):
    flat = np.flatnonzero(missing)
    if flat.size == 0:
        return []
    order = np.lexsort((flat, -key[flat]))[:budget]
    u = catalog.universe
    return [u.block(k) for k in flat[order]]


def select_request_greedy_block(
    catalog: PackageCatalog, missing: np.ndarray, budget: int, ranking: str = "area", rng=None
) -> list:
    """Top ``budget`` missing blocks.

    ``ranking="area"`` orders by the owner tube's mean support area (the only
    importance signal the receiver observes), then frame, then block.
    ``ranking="random"`` is a seeded uniform shuffle kept for sensitivity runs.
    """
    missing = np.asarray(missing, dtype=bool)
    if ranking == "area":
        return _top_blocks(catalog, missing, catalog.block_area, budget)
    if ranking == "random":
        if rng is None:
            raise ValueError("random ranking needs an rng")
        key = rng.random(missing.size)
        return _top_blocks(catalog, missing, key, budget)
    raise ValueError(f"unknown greedy-block ranking {ranking!r}")


def select_request_tube_weighted_block(
    catalog: PackageCatalog, missing: np.ndarray, budget: int, weights=SCORE_WEIGHTS
) -> list:
    """Missing blocks ranked by the current score of their containing package."""
    missing = np.asarray(missing, dtype=bool)
    _, score = _package_scores(catalog, missing, weights)
    return _top_blocks(catalog, missing, score[catalog.block_owner], budget)


@dataclass
class HysteresisTrigger:
    """Latch on at ``proxy >= tau_hi``, off again once ``proxy < tau_lo``."""

    tau_hi: float = TAU_HI
    tau_lo: float = TAU_LO
    latched: bool = False

    def __post_init__(self):
        if not self.tau_lo < self.tau_hi:
            raise ValueError("hysteresis needs tau_lo < tau_hi")

    def __call__(self, proxy_prev: float, compute_left: int) -> int:
        if proxy_prev >= self.tau_hi:
            self.latched = True
        elif proxy_prev < self.tau_lo:
            self.latched = False
        return int(self.latched and compute_left > 0)


def hysteresis_trigger(proxy_seq, tau_hi=TAU_HI, tau_lo=TAU_LO, budget: int = 0) -> list:
    """Trigger decisions for a sequence of previous-round proxies."""
    trig = HysteresisTrigger(tau_hi, tau_lo)
    out = []
    for d in proxy_seq:
        u = trig(d, budget)
        budget -= u
        out.append(u)
    return out


def surrogate_auc(schedule, t_init, proxy_init, units, proxy_path, config) -> float:
    """Age-weighted area of the proxy trajectory under a reconstruction schedule.

    ``proxy_path[r-1]`` is the proxy of the round-``r`` missing state; it only
    enters the trajectory in rounds that reconstruct.
    """
    t_prev, d = t_init, proxy_init
    total = 0.5 * t_init * t_init * proxy_init
    for u, n, pr in zip(schedule, units, proxy_path):
        t = t_prev + config.c_rtt + config.c_pkt * n + config.c_inp * u
        if u:
            d = pr
        total += 0.5 * (t * t - t_prev * t_prev) * d
        t_prev = t
    return total


@dataclass(frozen=True)
class OfflinePlan:
    schedule: tuple
    surrogate: float
    candidates: dict = field(repr=False)  # schedule -> surrogate value


def plan_offline(t_init, proxy_init, units, proxy_path, config, reconstructions: int) -> OfflinePlan:
    """Exhaustive search over every schedule using at most ``reconstructions``
    rounds; ties go to the fewest reconstructions, then the earliest."""
    R = len(units)
    k_max = max(0, min(reconstructions, R))
    candidates = {}
    for k in range(k_max + 1):
        for rounds in itertools.combinations(range(R), k):
            sched = tuple(int(r in rounds) for r in range(R))
            candidates[sched] = surrogate_auc(sched, t_init, proxy_init, units, proxy_path, config)
    best = min(candidates, key=lambda s: (candidates[s], sum(s), tuple(-x for x in s)))
    return OfflinePlan(best, candidates[best], candidates)


class Policy:
    """Per-session request + trigger pair."""

    kind: PolicyKind

    def request(self, session) -> list:
        raise NotImplementedError

    def trigger(self, session):
        """Return ``u_r`` or None to use the shared threshold trigger."""
        return None


class TubePackagePolicy(Policy):
    kind = PolicyKind.TUBE_PACKAGE

    def __init__(self, weights=SCORE_WEIGHTS):
        self.weights = tuple(weights)

    def request(self, session):
        scores = score_packages(session.catalog, session.available, self.weights)
        return select_request_tube_package(scores, session.config.request_budget)


class GreedyBlockPolicy(Policy):
    kind = PolicyKind.GREEDY_BLOCK

    def __init__(self, ranking="area", rng=None):
        self.ranking = ranking
        self.rng = rng

    def request(self, session):
        return select_request_greedy_block(
            session.catalog, session.missing_mask(), session.config.request_budget, self.ranking, self.rng
        )


class TubeWeightedBlockPolicy(Policy):
    kind = PolicyKind.TUBE_WEIGHTED_BLOCK

    def __init__(self, weights=SCORE_WEIGHTS):
        self.weights = tuple(weights)

    def request(self, session):
        return select_request_tube_weighted_block(
            session.catalog, session.missing_mask(), session.config.request_budget, self.weights
        )


class HysteresisPolicy(GreedyBlockPolicy):
    kind = PolicyKind.HYSTERESIS_TRIGGER

    def __init__(self, tau_hi=TAU_HI, tau_lo=TAU_LO, ranking="area", rng=None):
        super().__init__(ranking, rng)
        self.latch = HysteresisTrigger(tau_hi, tau_lo)

    def trigger(self, session):
        return self.latch(session.proxy_value, session.compute_left)


class ScheduledPolicy(GreedyBlockPolicy):
    """Greedy-block requests with a fixed reconstruction schedule."""

    kind = PolicyKind.OFFLINE_PLANNING

    def __init__(self, schedule, ranking="area", rng=None):
        super().__init__(ranking, rng)
        self.schedule = tuple(schedule)

    def trigger(self, session):
        return self.schedule[session.round]


def threshold_schedule(t_init, proxy_init, proxy_path, config, reconstructions: int) -> tuple:
    """Schedule the shared threshold trigger would produce if the proxy it saw
    were ``proxy_path`` (no recalibration)."""
    out, d, left = [], proxy_init, reconstructions
    for pr in proxy_path:
        u = decide_trigger(d, left, config.tau_trig)
        if u:
            d = pr
            left -= 1
        out.append(u)
    return tuple(out)
