"""Gilbert-Elliott burst-erasure channel.

The chain runs on the erasure indicator itself: state 1 (bad) erases,
state 0 (good) delivers.  One Markov step is taken per channel unit.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

GOOD, BAD = 0, 1


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class GEParams:
    p01: float  # good -> bad
    p10: float  # bad -> good
    target_per: float = float("nan")
    burst_length: float = float("nan")
    clamped: bool = False  # burst length grew to preserve the PER

    def __post_init__(self):
        if not 0.0 <= self.p01 <= 1.0:
            raise ChannelError(f"p01 must lie in [0, 1], got {self.p01}")
        if not 0.0 < self.p10 <= 1.0:
            raise ChannelError(f"p10 must lie in (0, 1], got {self.p10}")

    @property
    def mean_burst(self) -> float:
        return 1.0 / self.p10


def match_ge_params(target_per: float, burst_length: float = 4.0) -> GEParams:
    """Transition probabilities hitting ``target_per`` with mean burst ``burst_length``.

    If the nominal good->bad probability reaches 1 it is clamped there and
    ``p10`` is lowered instead, keeping the stationary erasure rate.
    """
    if not 0.0 <= target_per < 1.0:
        raise ChannelError(f"target PER must lie in [0, 1), got {target_per}")
    if burst_length < 1.0:
        raise ChannelError(f"burst length must be >= 1, got {burst_length}")
    p10 = 1.0 / burst_length
    p01 = target_per / (1.0 - target_per) * p10
    clamped = p01 >= 1.0
    if clamped:
        p01 = 1.0
        p10 = (1.0 - target_per) / target_per
    return GEParams(p01, p10, target_per, burst_length, clamped)


def stationary_per(params: GEParams) -> float:
    total = params.p01 + params.p10
    if total <= 0.0:
        raise ChannelError("stationary distribution undefined when p01 = p10 = 0")
    return params.p01 / total


def markov_states(first: int, uniforms: np.ndarray, p01: float, p10: float) -> np.ndarray:
    """States ``s_1..s_{n+1}`` of the chain started at ``first``.

    Step ``i`` moves good->bad iff ``u_i < p01`` and stays bad iff
    ``u_i >= p10``.  Vectorised: a step whose outcome is the same from both
    states resets the chain, the other steps either hold or flip it.
    """
    u = np.asarray(uniforms, dtype=np.float64)
    n = u.size
    from_good = u < p01
    from_bad = u >= p10
    reset = from_good == from_bad
    flip = from_good & ~from_bad
    out = np.empty(n + 1, dtype=np.int8)
    out[0] = first
    if n == 0:
        return out
    flips = np.cumsum(flip)
    idx = np.arange(n)
    last_reset = np.maximum.accumulate(np.where(reset, idx, -1))
    base = np.where(last_reset >= 0, from_good[np.maximum(last_reset, 0)], first).astype(np.int64)
    flips_before = np.where(last_reset >= 0, flips[np.maximum(last_reset, 0)], 0)
    out[1:] = (base + flips - flips_before) & 1
    return out


@dataclass
class ChannelState:
    """Mutable GE channel confined to one session.

    The initial state is drawn from the stationary distribution, then each
    transmitted unit consumes exactly one uniform from the stream, so one
    call of ``n`` units equals any split into consecutive calls.
    """

    params: GEParams
    rng: np.random.Generator
    state: int = field(init=False)
    units_transmitted: int = 0
    record: bool = False
    log: list = field(default_factory=list)  # (unit_index, round, state, erased)

    def __post_init__(self):
        pi_bad = stationary_per(self.params)
        self.state = BAD if self.rng.random() < pi_bad else GOOD

    def transmit(self, n: int, round_index: int = 0) -> np.ndarray:
        """Send ``n`` units; return their erasure indicators."""
        if n < 0:
            raise ChannelError("unit count must be >= 0")
        if n == 0:
            return np.zeros(0, dtype=np.int8)
        u = self.rng.random(n)
        chain = markov_states(self.state, u, self.params.p01, self.params.p10)
        states = chain[:-1]
        self.state = int(chain[-1])
        if self.record:
            start = self.units_transmitted
            self.log.extend(
                (start + i, round_index, int(s), int(s)) for i, s in enumerate(states.tolist())
            )
        self.units_transmitted += n
        return states.copy()


def make_channel(params: GEParams, seed: int, *labels, record: bool = False) -> ChannelState:
    return ChannelState(params, stream(seed, "channel", *labels), record=record)


def transmit_units(state: ChannelState, n: int, round_index: int = 0) -> np.ndarray:
    return state.transmit(n, round_index)


def erasure_checksum(params: GEParams, seed: int, *labels, n: int = 1024) -> str:
    """Digest of the first ``n`` units of a channel stream, for pairing audits."""
    ch = make_channel(params, seed, *labels)
    return hashlib.sha256(ch.transmit(n).tobytes()).hexdigest()[:16]


def burst_lengths(erasures: np.ndarray) -> np.ndarray:
    """Lengths of maximal runs of ones."""
    e = np.concatenate(([0], np.asarray(erasures, dtype=np.int8), [0]))
    d = np.diff(e)
    return np.flatnonzero(d == -1) - np.flatnonzero(d == 1)


def write_erasure_csv(state: ChannelState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_index", "round", "state", "erased"])
        w.writerows(state.log)
