"""Latent universe, object tubes and the per-clip package catalog.

Blocks are addressed as ``(t, b)`` with ``1 <= t <= T`` and ``1 <= b <= N``;
``b`` enumerates the latent grid row-major starting at 1.  Internally the
flat index ``(t - 1) * N + (b - 1)`` is used for numpy bookkeeping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .rng import stream

MAX_SPAN = 3
MIN_SIZE = 4
MAX_SIZE = 24

MOTION_SPEEDS = {"low": 0.25, "high": 1.0}


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class LatentUniverse:
    num_frames: int
    grid_h: int
    grid_w: int

    @property
    def blocks_per_frame(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def size(self) -> int:
        return self.num_frames * self.blocks_per_frame

    def __len__(self) -> int:
        return self.size

    def flat(self, t: int, b: int) -> int:
        return (t - 1) * self.blocks_per_frame + (b - 1)

    def block(self, k: int) -> tuple[int, int]:
        t, b = divmod(int(k), self.blocks_per_frame)
        return t + 1, b + 1

    def contains(self, t: int, b: int) -> bool:
        return 1 <= t <= self.num_frames and 1 <= b <= self.blocks_per_frame

    def blocks(self):
        for t in range(1, self.num_frames + 1):
            for b in range(1, self.blocks_per_frame + 1):
                yield t, b


def build_universe(num_frames: int, grid_h: int, grid_w: int) -> LatentUniverse:
    for name, v in (("num_frames", num_frames), ("grid_h", grid_h), ("grid_w", grid_w)):
        if int(v) != v or v < 1:
            raise CatalogError(f"{name} must be a positive integer, got {v!r}")
    return LatentUniverse(int(num_frames), int(grid_h), int(grid_w))


@dataclass(frozen=True, eq=False)
class ClipMasks:
    """Hard object assignment on the latent grid; ``frames[t-1, b-1]`` is the
    object id of block ``(t, b)``, 0 meaning background."""

    frames: np.ndarray
    grid_h: int
    grid_w: int

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.int64)
        if arr.ndim != 2:
            raise CatalogError("mask frames must be a (T, grid_h*grid_w) array")
        if arr.shape[1] != self.grid_h * self.grid_w:
            raise CatalogError(
                f"each frame needs {self.grid_h * self.grid_w} blocks, got {arr.shape[1]}"
            )
        if (arr < 0).any():
            raise CatalogError("object ids must be nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def grids(self) -> np.ndarray:
        """Frames reshaped to ``(T, grid_h, grid_w)``."""
        return self.frames.reshape(self.num_frames, self.grid_h, self.grid_w)

    def __eq__(self, other):
        if not isinstance(other, ClipMasks):
            return NotImplemented
        return (self.grid_h, self.grid_w) == (other.grid_h, other.grid_w) and np.array_equal(
            self.frames, other.frames
        )

    def to_dict(self) -> dict:
        return {
            "T": self.num_frames,
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "frames": self.frames.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClipMasks":
        frames = np.asarray(d["frames"], dtype=np.int64).reshape(len(d["frames"]), -1)
        if frames.shape[0] != d["T"]:
            raise CatalogError(f"mask file declares T={d['T']} but has {frames.shape[0]} frames")
        return cls(frames, int(d["grid_h"]), int(d["grid_w"]))


@dataclass(frozen=True)
class Tube:
    tube_id: int
    object_id: int
    members: tuple  # sorted ((t, b), ...)
    mean_support_area: float

    @property
    def is_background(self) -> bool:
        return self.object_id == 0

    @property
    def frames(self) -> tuple:
        return tuple(sorted({t for t, _ in self.members}))


@dataclass(frozen=True)
class Package:
    package_id: int
    owner_tube: int
    object_id: int
    members: tuple  # sorted ((t, b), ...)
    span: int
    size: int
    remainder: bool = False

    @property
    def is_background(self) -> bool:
        return self.object_id == 0


@dataclass(frozen=True, eq=False)
class PackageCatalog:
    universe: LatentUniverse
    tubes: tuple
    packages: tuple
    max_span: int = MAX_SPAN
    min_size: int = MIN_SIZE
    max_size: int = MAX_SIZE

    def __len__(self) -> int:
        return len(self.packages)

    def __eq__(self, other):
        if not isinstance(other, PackageCatalog):
            return NotImplemented
        return (
            self.universe == other.universe
            and self.tubes == other.tubes
            and self.packages == other.packages
            and (self.max_span, self.min_size, self.max_size)
            == (other.max_span, other.min_size, other.max_size)
        )

    def tube(self, tube_id: int) -> Tube:
        return self._tube_by_id[tube_id]

    @cached_property
    def _tube_by_id(self) -> dict:
        return {tb.tube_id: tb for tb in self.tubes}

    @cached_property
    def package_index(self) -> dict:
        """package_id -> position in ``packages``."""
        return {p.package_id: i for i, p in enumerate(self.packages)}

    # Dense lookup arrays; only valid for a partitioning catalog.
    @cached_property
    def member_index(self) -> list:
        u = self.universe
        return [
            np.array([u.flat(t, b) for t, b in p.members], dtype=np.int64) for p in self.packages
        ]

    @cached_property
    def block_owner(self) -> np.ndarray:
        """Flat block index -> position of the owning package."""
        owner = np.full(self.universe.size, -1, dtype=np.int64)
        for i, idx in enumerate(self.member_index):
            if (owner[idx] != -1).any():
                raise CatalogError("catalog packages overlap; validate_catalog for details")
            owner[idx] = i
        if (owner == -1).any():
            raise CatalogError("catalog does not cover the universe; validate_catalog for details")
        owner.setflags(write=False)
        return owner

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([p.size for p in self.packages], dtype=np.int64)

    @cached_property
    def spans(self) -> np.ndarray:
        return np.array([p.span for p in self.packages], dtype=np.int64)

    @cached_property
    def package_ids(self) -> np.ndarray:
        return np.array([p.package_id for p in self.packages], dtype=np.int64)

    @cached_property
    def package_area(self) -> np.ndarray:
        """Mean support area of each package's owner tube."""
        return np.array(
            [self._tube_by_id[p.owner_tube].mean_support_area for p in self.packages],
            dtype=np.float64,
        )

    @cached_property
    def block_area(self) -> np.ndarray:
        """Per-block owner-tube mean support area (receiver-observable)."""
        return self.package_area[self.block_owner]

    @cached_property
    def block_tube(self) -> np.ndarray:
        tube = np.array([p.owner_tube for p in self.packages], dtype=np.int64)
        return tube[self.block_owner]

    @cached_property
    def block_is_object(self) -> np.ndarray:
        obj = np.array([not p.is_background for p in self.packages])
        return obj[self.block_owner]

    def to_dict(self) -> dict:
        u = self.universe
        return {
            "universe": {"T": u.num_frames, "grid_h": u.grid_h, "grid_w": u.grid_w},
            "constraints": {
                "max_span": self.max_span,
                "min_size": self.min_size,
                "max_size": self.max_size,
            },
            "packages": [
                {
                    "id": p.package_id,
                    "owner_tube": p.owner_tube,
                    "object_id": p.object_id,
                    "members": [list(m) for m in p.members],
                    "span": p.span,
                    "size": p.size,
                    "remainder": p.remainder,
                }
                for p in self.packages
            ],
            "tubes": [
                {
                    "id": tb.tube_id,
                    "object_id": tb.object_id,
                    "mean_support_area": tb.mean_support_area,
                    "members": [list(m) for m in tb.members],
                }
                for tb in self.tubes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PackageCatalog":
        u = d["universe"]
        universe = build_universe(u["T"], u["grid_h"], u["grid_w"])
        packages = tuple(
            Package(
                package_id=int(p["id"]),
                owner_tube=int(p["owner_tube"]),
                object_id=int(p["object_id"]),
                members=tuple(tuple(int(x) for x in m) for m in p["members"]),
                span=int(p["span"]),
                size=int(p["size"]),
                remainder=bool(p.get("remainder", False)),
            )
            for p in d["packages"]
        )
        tubes = []
        for tb in d["tubes"]:
            if "members" in tb:
                members = tuple(tuple(int(x) for x in m) for m in tb["members"])
            else:
                members = tuple(
                    sorted(m for p in packages if p.owner_tube == tb["id"] for m in p.members)
                )
            tubes.append(
                Tube(int(tb["id"]), int(tb["object_id"]), members, float(tb["mean_support_area"]))
            )
        c = d.get("constraints", {})
        return cls(
            universe,
            tuple(tubes),
            packages,
            max_span=int(c.get("max_span", MAX_SPAN)),
            min_size=int(c.get("min_size", MIN_SIZE)),
            max_size=int(c.get("max_size", MAX_SIZE)),
        )


def extract_tubes(masks: ClipMasks, universe: LatentUniverse) -> list:
    """One tube per object id present in the clip, background (id 0) first.

    The background tube is always emitted, even if empty frames never occur.
    """
    if masks.num_frames != universe.num_frames:
        raise CatalogError(
            f"masks have {masks.num_frames} frames, universe has {universe.num_frames}"
        )
    if (masks.grid_h, masks.grid_w) != (universe.grid_h, universe.grid_w):
        raise CatalogError("mask grid does not match the universe grid")
    frames = masks.frames
    tubes = []
    ids = sorted(set(np.unique(frames).tolist()) | {0})
    for tube_id, oid in enumerate(ids):
        ts, bs = np.nonzero(frames == oid)
        members = tuple(zip((ts + 1).tolist(), (bs + 1).tolist()))
        if not members:
            if oid == 0:
                continue
            raise CatalogError(f"object {oid} has no blocks")  # pragma: no cover
        n_frames = len(set(ts.tolist()))
        tubes.append(Tube(tube_id, int(oid), members, len(members) / n_frames))
    return tubes


def _temporal_windows(frames, max_span):
    windows, i = [], 0
    while i < len(frames):
        start = frames[i]
        j = i
        while j < len(frames) and frames[j] < start + max_span:
            j += 1
        windows.append(frames[i:j])
        i = j
    return windows


def split_into_packages(
    tubes,
    max_span: int = MAX_SPAN,
    min_size: int = MIN_SIZE,
    max_size: int = MAX_SIZE,
    universe: LatentUniverse | None = None,
) -> PackageCatalog:
    """Split each tube into temporally local packages.

    Each tube is cut into windows of at most ``max_span`` consecutive frames,
    then every window is chunked into the fewest near-equal pieces of at most
    ``max_size`` blocks, walking blocks position-major (block index, then
    frame).  Windows with fewer than ``min_size`` blocks become a single
    package flagged ``remainder``.
    """
    tubes = list(tubes)
    if not tubes:
        raise CatalogError("cannot build a catalog from an empty tube list")
    if max_span < 1:
        raise CatalogError("max_span must be >= 1")
    if not 1 <= min_size <= max_size:
        raise CatalogError("need 1 <= min_size <= max_size")
    if universe is None:
        all_members = [m for tb in tubes for m in tb.members]
        # infer a 1-row grid spanning the largest block index
        universe = build_universe(
            max(t for t, _ in all_members), 1, max(b for _, b in all_members)
        )

    packages = []
    for tb in tubes:
        by_frame = {}
        for t, b in tb.members:
            by_frame.setdefault(t, []).append(b)
        for window in _temporal_windows(sorted(by_frame), max_span):
            blocks = sorted((b, t) for t in window for b in by_frame[t])
            n_chunks = math.ceil(len(blocks) / max_size)
            for chunk in np.array_split(np.arange(len(blocks)), n_chunks):
                members = tuple(sorted((blocks[i][1], blocks[i][0]) for i in chunk))
                packages.append(
                    Package(
                        package_id=len(packages),
                        owner_tube=tb.tube_id,
                        object_id=tb.object_id,
                        members=members,
                        span=len({t for t, _ in members}),
                        size=len(members),
                        remainder=len(members) < min_size,
                    )
                )
    return PackageCatalog(universe, tuple(tubes), tuple(packages), max_span, min_size, max_size)


def build_catalog(masks: ClipMasks, **constraints) -> PackageCatalog:
    universe = build_universe(masks.num_frames, masks.grid_h, masks.grid_w)
    return split_into_packages(extract_tubes(masks, universe), universe=universe, **constraints)


@dataclass
class ValidationReport:
    overlaps: list = field(default_factory=list)  # ((t, b), package_a, package_b)
    uncovered: list = field(default_factory=list)
    out_of_universe: list = field(default_factory=list)  # ((t, b), package)
    span_violations: list = field(default_factory=list)  # package ids
    size_violations: list = field(default_factory=list)
    bookkeeping_errors: list = field(default_factory=list)  # (package id, message)
    tube_mismatches: list = field(default_factory=list)  # tube ids

    @property
    def ok(self) -> bool:
        return not any(
            (
                self.overlaps,
                self.uncovered,
                self.out_of_universe,
                self.span_violations,
                self.size_violations,
                self.bookkeeping_errors,
                self.tube_mismatches,
            )
        )

    def lines(self) -> list:
        out = []
        for blk, a, b in self.overlaps:
            out.append(f"overlap: block {blk} in packages {a} and {b}")
        for blk in self.uncovered:
            out.append(f"uncovered: block {blk}")
        for blk, p in self.out_of_universe:
            out.append(f"out of universe: block {blk} in package {p}")
        for p in self.span_violations:
            out.append(f"span: package {p} exceeds max span")
        for p in self.size_violations:
            out.append(f"size: package {p} outside size range")
        for p, msg in self.bookkeeping_errors:
            out.append(f"bookkeeping: package {p}: {msg}")
        for tb in self.tube_mismatches:
            out.append(f"tube: packages of tube {tb} do not reproduce its members")
        return out


def validate_catalog(catalog: PackageCatalog) -> ValidationReport:
    """Report every violated catalog invariant; never raises."""
    rep = ValidationReport()
    u = catalog.universe
    seen = {}
    by_tube = {}
    for p in catalog.packages:
        if not p.members:
            rep.bookkeeping_errors.append((p.package_id, "empty member set"))
        if len(set(p.members)) != len(p.members):
            rep.bookkeeping_errors.append((p.package_id, "duplicate members"))
        if p.size != len(set(p.members)):
            rep.bookkeeping_errors.append((p.package_id, f"size {p.size} != |members|"))
        span = len({t for t, _ in p.members})
        if p.span != span:
            rep.bookkeeping_errors.append((p.package_id, f"span {p.span} != {span} frames"))
        if span > catalog.max_span:
            rep.span_violations.append(p.package_id)
        n = len(set(p.members))
        if n > catalog.max_size or (n < catalog.min_size and not p.remainder):
            rep.size_violations.append(p.package_id)
        if p.remainder and n >= catalog.min_size:
            rep.bookkeeping_errors.append((p.package_id, "remainder flag on full-size package"))
        for m in dict.fromkeys(p.members):
            if not u.contains(*m):
                rep.out_of_universe.append((m, p.package_id))
                continue
            if m in seen:
                rep.overlaps.append((m, seen[m], p.package_id))
            else:
                seen[m] = p.package_id
        by_tube.setdefault(p.owner_tube, set()).update(p.members)
    rep.uncovered = [m for m in u.blocks() if m not in seen]
    tube_ids = {tb.tube_id for tb in catalog.tubes}
    for tb in catalog.tubes:
        if by_tube.get(tb.tube_id, set()) != set(tb.members):
            rep.tube_mismatches.append(tb.tube_id)
    for tid in by_tube:
        if tid not in tube_ids:
            rep.tube_mismatches.append(tid)
    return rep


def generate_synthetic_clip(
    seed: int,
    num_frames: int = 16,
    grid_h: int = 8,
    grid_w: int = 8,
    num_objects: int = 3,
    motion_level="low",
    object_size=(2, 3),
) -> ClipMasks:
    """Moving, wall-bouncing rectangles on the latent grid.

    ``motion_level`` is ``"low"``, ``"high"`` or a speed in cells per frame.
    Objects are painted in id order, so a later object occludes an earlier
    one where they overlap; ids never merge.
    """
    if num_objects < 0:
        raise CatalogError("num_objects must be >= 0")
    if isinstance(motion_level, str):
        try:
            speed = MOTION_SPEEDS[motion_level]
        except KeyError:
            raise CatalogError(f"unknown motion level {motion_level!r}") from None
    else:
        speed = float(motion_level)
        if speed < 0:
            raise CatalogError("motion speed must be >= 0")
    lo, hi = object_size
    if lo < 1 or hi < lo:
        raise CatalogError("object_size must satisfy 1 <= lo <= hi")
    if hi > min(grid_h, grid_w):
        raise CatalogError(f"objects up to {hi} cells do not fit a {grid_h}x{grid_w} grid")
    build_universe(num_frames, grid_h, grid_w)

    rng = stream(seed, "synthetic-clip")
    grids = np.zeros((num_frames, grid_h, grid_w), dtype=np.int64)
    for oid in range(1, num_objects + 1):
        h, w = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        pos = np.array([rng.uniform(0, grid_h - h), rng.uniform(0, grid_w - w)])
        angle = rng.uniform(0, 2 * np.pi)
        vel = speed * np.array([np.sin(angle), np.cos(angle)])
        bounds = np.array([grid_h - h, grid_w - w], dtype=float)
        for t in range(num_frames):
            r, c = np.rint(pos).astype(int)
            grids[t, r : r + h, c : c + w] = oid
            pos = pos + vel
            for k in range(2):
                # reflect off the walls
                while pos[k] < 0 or pos[k] > bounds[k]:
                    if bounds[k] == 0:
                        pos[k], vel[k] = 0.0, 0.0
                    elif pos[k] < 0:
                        pos[k], vel[k] = -pos[k], -vel[k]
                    else:
                        pos[k], vel[k] = 2 * bounds[k] - pos[k], -vel[k]
    return ClipMasks(grids.reshape(num_frames, grid_h * grid_w), grid_h, grid_w)


def save_catalog(catalog: PackageCatalog, path) -> None:
    Path(path).write_text(json.dumps(catalog.to_dict()))


def load_catalog(path) -> PackageCatalog:
    return PackageCatalog.from_dict(json.loads(Path(path).read_text()))


def save_masks(masks: ClipMasks, path) -> None:
    Path(path).write_text(json.dumps(masks.to_dict()))


def load_masks(path) -> ClipMasks:
    return ClipMasks.from_dict(json.loads(Path(path).read_text()))
