"""GPS trajectories: CSV ingestion, sampling-rate degradation and dataset splits."""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path as FsPath
from typing import Sequence

from .road_network import LocalProjection

CSV_COLUMNS = (
    "traj_id",
    "lon",
    "lat",
    "timestamp",
    "speed_kmh",
    "heading_deg",
    "in_service",
    "truth_segment",
    "truth_path",
)


class TrajectoryError(ValueError):
    pass


class DegenerateTrajectoryError(TrajectoryError):
    pass


@dataclass(frozen=True)
class GpsObservation:
    position: tuple[float, float]
    timestamp: float
    speed: float | None = None  # m/s
    heading: float | None = None  # degrees clockwise from north
    in_service: bool | None = None
    lonlat: tuple[float, float] | None = None

    def __post_init__(self):
        if self.speed is not None and self.speed < 0:
            raise TrajectoryError(f"negative speed {self.speed}")
        if self.heading is not None and not 0 <= self.heading < 360:
            raise TrajectoryError(f"heading {self.heading} outside [0, 360)")


@dataclass(frozen=True)
class GroundTruth:
    point_labels: tuple[str, ...]
    path_labels: tuple[tuple[str, ...], ...]

    def validate(self, n: int | None = None) -> None:
        if n is not None and len(self.point_labels) != n:
            raise TrajectoryError(f"{len(self.point_labels)} point labels for {n} observations")
        if len(self.path_labels) != len(self.point_labels) - 1:
            raise TrajectoryError("need exactly one truth path per gap")
        for t, p in enumerate(self.path_labels):
            if not p or p[0] != self.point_labels[t] or p[-1] != self.point_labels[t + 1]:
                raise TrajectoryError(
                    f"truth path at gap {t} does not run from {self.point_labels[t]!r} "
                    f"to {self.point_labels[t + 1]!r}"
                )


@dataclass(frozen=True)
class Trajectory:
    id: str
    observations: tuple[GpsObservation, ...]
    truth: GroundTruth | None = None

    def __post_init__(self):
        if len(self.observations) < 2:
            raise DegenerateTrajectoryError(f"trajectory {self.id}: fewer than 2 observations")
        ts = [o.timestamp for o in self.observations]
        for a, b in zip(ts, ts[1:]):
            if not b > a:
                raise TrajectoryError(
                    f"trajectory {self.id}: timestamps not strictly increasing ({a} -> {b})"
                )
        if self.truth is not None:
            self.truth.validate(len(self.observations))

    def __len__(self):
        return len(self.observations)

    @property
    def timestamps(self) -> list[float]:
        return [o.timestamp for o in self.observations]


def _opt_float(v: str) -> float | None:
    v = v.strip()
    return float(v) if v else None


def _opt_bool(v: str) -> bool | None:
    v = v.strip().lower()
    if not v:
        return None
    if v in ("1", "true", "t", "yes"):
        return True
    if v in ("0", "false", "f", "no"):
        return False
    raise TrajectoryError(f"bad boolean {v!r}")


def load_trajectories(source, projection: LocalProjection) -> list[Trajectory]:
    """Parse the trajectory CSV, projecting lon/lat with ``projection``.

    Rows are grouped by ``traj_id`` in file order; rows within a trajectory
    must already be strictly increasing in time.
    """
    if isinstance(source, FsPath) or (isinstance(source, str) and "\n" not in source):
        text = FsPath(source).read_text()
    else:
        text = str(source)
    reader = csv.DictReader(io.StringIO(text))
    missing = {"traj_id", "lon", "lat", "timestamp"} - set(reader.fieldnames or ())
    if missing:
        raise TrajectoryError(f"missing columns: {sorted(missing)}")

    groups: dict[str, list[dict]] = {}
    for lineno, row in enumerate(reader, start=2):
        row["_line"] = lineno
        groups.setdefault(row["traj_id"], []).append(row)

    out = []
    for tid, rows in groups.items():
        obs = []
        seg_labels, path_labels = [], []
        for r in rows:
            try:
                lon, lat = float(r["lon"]), float(r["lat"])
                speed = _opt_float(r.get("speed_kmh") or "")
                obs.append(
                    GpsObservation(
                        position=projection.forward(lon, lat),
                        timestamp=float(r["timestamp"]),
                        speed=None if speed is None else speed / 3.6,
                        heading=_opt_float(r.get("heading_deg") or ""),
                        in_service=_opt_bool(r.get("in_service") or ""),
                        lonlat=(lon, lat),
                    )
                )
            except (ValueError, TypeError) as e:
                raise TrajectoryError(f"line {r['_line']} (trajectory {tid}): {e}") from e
            seg_labels.append((r.get("truth_segment") or "").strip())
            path_labels.append((r.get("truth_path") or "").strip())
        truth = None
        if any(seg_labels):
            if not all(seg_labels):
                raise TrajectoryError(f"trajectory {tid}: truth_segment missing on some rows")
            truth = GroundTruth(
                tuple(seg_labels), tuple(tuple(p.split("|")) for p in path_labels[:-1])
            )
        try:
            out.append(Trajectory(tid, tuple(obs), truth))
        except TrajectoryError as e:
            raise TrajectoryError(f"trajectory {tid}: {e}") from e
    return out


def trajectories_to_csv(trajs: Sequence[Trajectory], projection: LocalProjection) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for tr in trajs:
        n = len(tr)
        for t, o in enumerate(tr.observations):
            lon, lat = o.lonlat if o.lonlat is not None else projection.inverse(*o.position)
            seg = path = ""
            if tr.truth is not None:
                seg = tr.truth.point_labels[t]
                if t < n - 1:
                    path = "|".join(tr.truth.path_labels[t])
            w.writerow(
                [
                    tr.id,
                    repr(lon),
                    repr(lat),
                    repr(o.timestamp),
                    "" if o.speed is None else repr(o.speed * 3.6),
                    "" if o.heading is None else repr(o.heading),
                    "" if o.in_service is None else int(o.in_service),
                    seg,
                    path,
                ]
            )
    return buf.getvalue()


def save_trajectories(trajs: Sequence[Trajectory], dest, projection: LocalProjection) -> None:
    FsPath(dest).write_text(trajectories_to_csv(trajs, projection))


def concat_paths(paths: Sequence[Sequence[str]]) -> tuple[str, ...]:
    """Join consecutive gap paths, dropping the shared boundary segment."""
    out: list[str] = list(paths[0])
    for p in paths[1:]:
        if p[0] != out[-1]:
            raise TrajectoryError(f"paths do not chain: {out[-1]!r} vs {p[0]!r}")
        out.extend(p[1:])
    return tuple(out)


def degrade_sampling(t: Trajectory, interval: float) -> Trajectory:
    """Keep the first fix, then every next fix at least ``interval`` s after the last kept one."""
    if not interval > 0:
        raise ValueError("interval must be > 0")
    keep = [0]
    for i, o in enumerate(t.observations[1:], start=1):
        if o.timestamp >= t.observations[keep[-1]].timestamp + interval:
            keep.append(i)
    if len(keep) < 2:
        raise DegenerateTrajectoryError(
            f"trajectory {t.id}: fewer than 2 observations at interval {interval}"
        )
    truth = None
    if t.truth is not None:
        pl = t.truth.point_labels
        truth = GroundTruth(
            tuple(pl[i] for i in keep),
            tuple(concat_paths(t.truth.path_labels[a:b]) for a, b in zip(keep, keep[1:])),
        )
    return replace(t, observations=tuple(t.observations[i] for i in keep), truth=truth)


def split_dataset(ts: Sequence, train_fraction: float = 0.7, seed: int = 0):
    """Deterministic shuffled split; the first ceil(fraction * n) go to train."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(ts)
    if n < 2:
        raise ValueError("need at least 2 items to split")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    k = math.ceil(train_fraction * n - 1e-9)
    k = min(max(k, 1), n - 1)
    return [ts[i] for i in order[:k]], [ts[i] for i in order[k:]]
