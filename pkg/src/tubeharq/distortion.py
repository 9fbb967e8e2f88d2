"""Synthetic distortion evaluator and the receiver-side proxy.

``DistortionModel`` plays the role of the offline quality metric on the
generative receiver's output.  It sees hidden per-block importance weights.
``ProxyModel`` is what the receiver can compute online: a function of the
missing-state structure only, corrected by a running linear calibration
whenever a reconstruction reveals a distortion sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import PackageCatalog
from .rng import stream


def _as_mask(missing, size: int, num_frames: int, blocks_per_frame: int) -> np.ndarray:
    if isinstance(missing, np.ndarray) and missing.dtype == bool:
        if missing.size != size:
            raise ValueError(f"missing mask has {missing.size} entries, expected {size}")
        return missing.reshape(-1)
    mask = np.zeros(size, dtype=bool)
    for t, b in missing:
        mask[(t - 1) * blocks_per_frame + (b - 1)] = True
    return mask


def temporal_persistence(mask2d: np.ndarray) -> np.ndarray:
    """Per block, how many of its two temporal neighbours (same position,
    adjacent frames) are also missing."""
    m = mask2d.astype(np.int64)
    out = np.zeros_like(m)
    out[1:] += m[:-1]
    out[:-1] += m[1:]
    return out


@dataclass(frozen=True, eq=False)
class DistortionModel:
    weights: np.ndarray  # (T, N), strictly positive
    beta: float = 0.5
    gamma: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or (w <= 0).any():
            raise ValueError("weights must be a strictly positive (T, N) array")
        if self.beta < 0 or self.gamma <= 0:
            raise ValueError("need beta >= 0 and gamma > 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        full = np.ones_like(w, dtype=bool)
        object.__setattr__(self, "_norm", self._mass(full))

    def _mass(self, mask2d: np.ndarray) -> float:
        persist = temporal_persistence(mask2d)
        return float(np.sum(self.weights * mask2d * (1.0 + self.beta * persist)))

    def __call__(self, missing) -> float:
        T, N = self.weights.shape
        mask = _as_mask(missing, T * N, T, N).reshape(T, N)
        if not mask.any():
            return 0.0
        if mask.all():
            return 1.0
        d = (self._mass(mask) / self._norm) ** self.gamma
        return float(min(max(d, 0.0), 1.0))


def make_distortion_model(
    catalog: PackageCatalog,
    seed: int,
    object_weight: float = 3.0,
    background_weight: float = 1.0,
    jitter: float = 0.2,
    beta: float = 0.5,
    gamma: float = 1.0,
) -> DistortionModel:
    """Seeded weight field: object blocks weigh ``object_weight``, background
    ``background_weight``, each scaled by a uniform factor in ``1 +- jitter``."""
    if not 0 <= jitter < 1:
        raise ValueError("jitter must lie in [0, 1)")
    u = catalog.universe
    rng = stream(seed, "distortion-weights")
    base = np.where(catalog.block_is_object, object_weight, background_weight)
    w = base * rng.uniform(1 - jitter, 1 + jitter, size=u.size)
    return DistortionModel(w.reshape(u.num_frames, u.blocks_per_frame), beta, gamma)


def eval_distortion(model: DistortionModel, missing, catalog: PackageCatalog | None = None) -> float:
    return model(missing)


@dataclass(frozen=True)
class MissingSummary:
    weighted_fraction: float  # owner-tube-area weighted share of U still missing
    missing_count: int
    tube_uncovered: dict  # tube id -> uncovered fraction
    loss_estimate: float = 0.0  # erased share of units sent last round


def summarize_missing(catalog: PackageCatalog, missing, loss_estimate: float = 0.0) -> MissingSummary:
    """Receiver-observable summary of the missing state."""
    u = catalog.universe
    mask = _as_mask(missing, u.size, u.num_frames, u.blocks_per_frame)
    area = catalog.block_area
    total = float(area.sum())
    frac = float(area[mask].sum()) / total if total > 0 else 0.0
    tube_uncovered = {}
    owner_tube = catalog.block_tube
    for tb in catalog.tubes:
        sel = owner_tube == tb.tube_id
        n = int(sel.sum())
        tube_uncovered[tb.tube_id] = float(mask[sel].sum()) / n if n else 0.0
    return MissingSummary(frac, int(mask.sum()), tube_uncovered, float(loss_estimate))


@dataclass(frozen=True)
class ProxyModel:
    gain: float = 1.0
    offset: float = 0.0
    forgetting: float = 0.7
    history: tuple = field(default=())  # ((raw, revealed), ...)

    def raw(self, summary: MissingSummary) -> float:
        return summary.weighted_fraction

    def __call__(self, summary: MissingSummary) -> float:
        return self.apply(self.raw(summary))

    def apply(self, raw: float) -> float:
        if raw <= 0.0:
            return 0.0
        return float(min(max(self.gain * raw + self.offset, 0.0), 1.0))


def eval_proxy(proxy: ProxyModel, summary: MissingSummary) -> float:
    return proxy(summary)


def calibrate(proxy: ProxyModel, raw: float | None = None, revealed: float | None = None) -> ProxyModel:
    """Refit gain/offset by exponentially weighted least squares.

    The newest pair has weight 1 and older ones decay by ``forgetting`` per
    event.  With one pair, or with all raw values equal, only the offset
    moves (gain stays 1).  Without a new pair this is a no-op.
    """
    if raw is None or revealed is None:
        return proxy
    hist = proxy.history + ((float(raw), float(revealed)),)
    x = np.array([h[0] for h in hist])
    y = np.array([h[1] for h in hist])
    wts = proxy.forgetting ** np.arange(len(hist) - 1, -1, -1, dtype=np.float64)
    xm = np.dot(wts, x) / wts.sum()
    ym = np.dot(wts, y) / wts.sum()
    sxx = np.dot(wts, (x - xm) ** 2)
    if len(hist) == 1 or sxx <= 1e-12 * max(1.0, xm * xm):
        gain = 1.0
    else:
        gain = float(np.dot(wts, (x - xm) * (y - ym)) / sxx)
    offset = float(ym - gain * xm)
    return replace(proxy, gain=gain, offset=offset, history=hist)
