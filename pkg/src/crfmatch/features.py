"""Tied feature registry, raw feature evaluation and min-max scaling.

Every feature is one of a small set of base formulas, optionally gated by a
road class, a time-of-day period, the taxi service flag, or trajectory
boundary. The registry lists point features first and path features after,
so a weight vector splits as ``theta[:K]`` / ``theta[K:]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import Lattice, PointState
from .road_network import Path, segment_bearing
from .trajectory import GpsObservation

POINT_BASES = ("gps_distance", "angular_difference", "speed_ratio", "road_usage", "io")
PATH_BASES = (
    "length",
    "min_travel_time",
    "max_avg_speed",
    "length_ratio",
    "cosine",
    "length_difference",
    "time_difference",
    "class_changes",
)
COSINE_MODES = ("similarity", "distance")


@dataclass(frozen=True)
class FeatureDef:
    name: str
    kind: str  # "point" | "path"
    base: str
    class_filter: str | None = None
    period_filter: int | None = None
    service_filter: bool | None = None
    boundary_filter: bool = False


def period_of(timestamp: float, period_width: float) -> int:
    """Time-of-day slot; timestamps are read as local seconds since midnight mod 86400."""
    hour = (timestamp % 86400.0) / 3600.0
    return min(int(hour // period_width), int(round(24 / period_width)) - 1)


class FeatureRegistry:
    def __init__(
        self,
        class_vocabulary: Sequence[str],
        period_width: float = 4,
        cosine_mode: str = "similarity",
    ):
        if not class_vocabulary:
            raise ValueError("class vocabulary must not be empty")
        if period_width <= 0 or (24 / period_width) != int(24 / period_width):
            raise ValueError(f"24 h is not divisible by period width {period_width}")
        if cosine_mode not in COSINE_MODES:
            raise ValueError(f"cosine_mode must be one of {COSINE_MODES}")
        self.class_vocabulary = tuple(class_vocabulary)
        self.period_width = period_width
        self.n_periods = int(24 / period_width)
        self.cosine_mode = cosine_mode
        self.entries = self._expand()
        self.K = sum(e.kind == "point" for e in self.entries)
        self.S = len(self.entries) - self.K
        self.names = [e.name for e in self.entries]
        self._class_index = {c: i for i, c in enumerate(self.class_vocabulary)}

    @property
    def M(self) -> int:
        return len(self.entries)

    def _period_label(self, v: int) -> str:
        w = self.period_width
        return f"{v * w:02g}-{(v + 1) * w:02g}h"

    def _expand(self) -> list[FeatureDef]:
        P, C = self.n_periods, self.class_vocabulary
        e = [
            FeatureDef("gps_distance", "point", "gps_distance"),
            FeatureDef("angular_difference", "point", "angular_difference"),
            FeatureDef("speed_ratio", "point", "speed_ratio"),
        ]
        e += [
            FeatureDef(f"speed_ratio@{self._period_label(v)}", "point", "speed_ratio", period_filter=v)
            for v in range(P)
        ]
        e += [
            FeatureDef(f"road_usage[{c},ru-{int(s)}]", "point", "road_usage", class_filter=c, service_filter=s)
            for c in C
            for s in (False, True)
        ]
        e += [
            FeatureDef(f"io[{c}]", "point", "io", class_filter=c, boundary_filter=True) for c in C
        ]
        e += [FeatureDef(b, "path", b) for b in PATH_BASES]
        e += [
            FeatureDef(
                f"length_difference@{self._period_label(v)}", "path", "length_difference", period_filter=v
            )
            for v in range(P)
        ]
        e += [
            FeatureDef(f"class_changes[ru-{int(s)}]", "path", "class_changes", service_filter=s)
            for s in (False, True)
        ]
        return e

    def signature(self) -> tuple:
        return (self.class_vocabulary, self.period_width, self.cosine_mode)

    def to_dict(self) -> dict:
        return {
            "class_vocabulary": list(self.class_vocabulary),
            "period_width": self.period_width,
            "cosine_mode": self.cosine_mode,
            "names": self.names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRegistry":
        reg = cls(d["class_vocabulary"], d["period_width"], d.get("cosine_mode", "similarity"))
        if "names" in d and list(d["names"]) != reg.names:
            raise ValueError("serialized feature order does not match this registry version")
        return reg


def build_registry(class_vocabulary, period_width_hours: float = 4, cosine_mode: str = "similarity"):
    return FeatureRegistry(class_vocabulary, period_width_hours, cosine_mode)


# ------------------------------------------------------------ point features


def _angular_difference(heading: float, bearing: float) -> float:
    d = abs(heading - bearing) % 360.0
    return 360.0 - d if d > 180.0 else d


def point_feature_vector(
    reg: FeatureRegistry, state: PointState, obs: GpsObservation, t: int, n: int
) -> np.ndarray:
    """Raw (unscaled) point features of one candidate road, length ``reg.K``."""
    seg, proj = state.segment, state.projection
    limit = seg.speed_limit
    angle = 0.0
    if obs.heading is not None:
        angle = _angular_difference(obs.heading, segment_bearing(seg, proj.offset))
    ratio = 0.0 if obs.speed is None else (obs.speed - limit) / limit
    period = period_of(obs.timestamp, reg.period_width)
    service = bool(obs.in_service)
    boundary = t == 0 or t == n - 1

    x = np.zeros(reg.K)
    for m, f in enumerate(reg.entries[: reg.K]):
        if f.class_filter is not None and f.class_filter != seg.road_class:
            continue
        if f.period_filter is not None and f.period_filter != period:
            continue
        if f.service_filter is not None and f.service_filter != service:
            continue
        if f.boundary_filter and not boundary:
            continue
        if f.base == "gps_distance":
            x[m] = proj.distance
        elif f.base == "angular_difference":
            x[m] = angle
        elif f.base == "speed_ratio":
            x[m] = ratio
        else:  # road_usage / io indicators
            x[m] = 1.0
    return x


# ------------------------------------------------------------- path features


def path_bases(path: Path, obs_a: GpsObservation, obs_b: GpsObservation, cosine_mode: str) -> dict:
    length = path.length
    lims = np.asarray(path.speed_limits)
    seg_len = np.asarray(path.segment_lengths) if path.segment_lengths else None
    t_min = float(np.sum(seg_len / lims)) if seg_len is not None else float("nan")
    mean_lim = float(lims.mean())
    # cos(v, mean * 1) reduces to sum(v) / (|v| sqrt(n))
    cos = float(lims.sum() / (np.linalg.norm(lims) * math.sqrt(len(lims))))
    if cosine_mode == "distance":
        cos = 1.0 - cos
    gap = math.dist(obs_a.position, obs_b.position)
    changes = sum(a != b for a, b in zip(path.class_sequence, path.class_sequence[1:]))
    return {
        "length": length,
        "min_travel_time": t_min,
        "max_avg_speed": mean_lim,
        "length_ratio": gap / length,
        "cosine": cos,
        "length_difference": length - gap,
        "time_difference": t_min - (obs_b.timestamp - obs_a.timestamp),
        "class_changes": float(changes),
    }


def path_feature_vector(
    reg: FeatureRegistry, path: Path, obs_pair: tuple[GpsObservation, GpsObservation]
) -> np.ndarray:
    """Raw path features, length ``reg.S``."""
    a, b = obs_pair
    base = path_bases(path, a, b, reg.cosine_mode)
    period = period_of(a.timestamp, reg.period_width)
    service = bool(a.in_service)
    x = np.zeros(reg.S)
    for m, f in enumerate(reg.entries[reg.K :]):
        if f.period_filter is not None and f.period_filter != period:
            continue
        if f.service_filter is not None and f.service_filter != service:
            continue
        x[m] = base[f.base]
    return x


def lattice_features(lat: Lattice, reg: FeatureRegistry) -> list[np.ndarray]:
    """Raw feature matrices, one (n_states x K or S) array per lattice node."""
    key = ("raw", reg.signature())
    if key in lat._cache:
        return lat._cache[key]
    obs = lat.trajectory.observations
    n = lat.n_obs
    out = []
    for t in range(n):
        out.append(np.array([point_feature_vector(reg, s, obs[t], t, n) for s in lat.point_sets[t]]))
        if t < n - 1:
            out.append(
                np.array([path_feature_vector(reg, p, (obs[t], obs[t + 1])) for p in lat.path_sets[t]])
            )
    lat._cache[key] = out
    return out


# ------------------------------------------------------------------- scaling


@dataclass(frozen=True)
class Scaler:
    """Per-feature min/max over the training states (point block then path block)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise ValueError("scaler min exceeds max")

    def transform(self, x: np.ndarray, block: slice | None = None) -> np.ndarray:
        lo = self.lo if block is None else self.lo[block]
        hi = self.hi if block is None else self.hi[block]
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        z = np.where(span > 0, (x - lo) / safe, 0.0)
        return np.clip(z, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_scaler(point_rows: Sequence[np.ndarray], path_rows: Sequence[np.ndarray]) -> Scaler:
    """Min/max per dimension over stacked raw point and path feature rows."""
    P = np.vstack(point_rows)
    Q = np.vstack(path_rows)
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("need at least one training state of each kind")
    return Scaler(np.concatenate([P.min(0), Q.min(0)]), np.concatenate([P.max(0), Q.max(0)]))


def fit_scaler_on_lattices(lattices: Sequence[Lattice], reg: FeatureRegistry) -> Scaler:
    pts, pths = [], []
    for lat in lattices:
        feats = lattice_features(lat, reg)
        pts += feats[0::2]
        pths += feats[1::2]
    return fit_scaler(pts, pths)


def scaled_lattice_features(lat: Lattice, reg: FeatureRegistry, scaler: Scaler) -> list[np.ndarray]:
    key = ("scaled", reg.signature(), scaler.lo.tobytes(), scaler.hi.tobytes())
    if key in lat._cache:
        return lat._cache[key]
    raw = lattice_features(lat, reg)
    kb, sb = slice(0, reg.K), slice(reg.K, reg.M)
    out = [scaler.transform(x, kb if i % 2 == 0 else sb) for i, x in enumerate(raw)]
    lat._cache[key] = out
    return out
