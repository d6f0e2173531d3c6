"""Alternating point/path state chain built for one trajectory."""

from __future__ import annotations

import hashlib
import json
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .road_network import Path, Projection, RoadNetwork, RoadSegment, enumerate_paths, nearby_segments
from .trajectory import GroundTruth, Trajectory


class LatticeError(RuntimeError):
    """No candidate states at some observation or gap."""

    def __init__(self, msg: str, kind: str, index: int):
        super().__init__(msg)
        self.kind = kind
        self.index = index


class UnlabelableError(LookupError):
    """The true state is not among a node's candidates."""

    def __init__(self, msg: str, node: int):
        super().__init__(msg)
        self.node = node


@dataclass(frozen=True)
class LatticeConfig:
    radius: float = 50.0
    max_radius: float | None = None  # default 4 * radius
    max_point_states: int = 8
    max_paths: int = 10
    slack: float = 1.5

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if not self.slack >= 1:
            raise ValueError("slack must be >= 1")
        if self.max_point_states < 1 or self.max_paths < 1:
            raise ValueError("state caps must be >= 1")

    @property
    def radius_limit(self) -> float:
        return self.max_radius if self.max_radius is not None else 4 * self.radius

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PointState:
    segment: RoadSegment
    projection: Projection

    @property
    def segment_id(self) -> str:
        return self.segment.id


@dataclass
class Lattice:
    """Chain y_1..y_{2N-1}; even (0-based) nodes hold point states, odd nodes path states.

    ``path_start[t][j]`` / ``path_end[t][j]`` index the point states at
    observations t and t+1 that path j of gap t connects.
    """

    trajectory: Trajectory
    point_sets: list[list[PointState]]
    path_sets: list[list[Path]]
    path_start: list[np.ndarray]
    path_end: list[np.ndarray]
    escalated: list[int] = field(default_factory=list)
    config: LatticeConfig | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_obs(self) -> int:
        return len(self.point_sets)

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_obs - 1

    @property
    def nodes(self) -> list[list]:
        out: list[list] = []
        for t, ps in enumerate(self.point_sets):
            out.append(ps)
            if t < len(self.path_sets):
                out.append(self.path_sets[t])
        return out

    def state_counts(self) -> list[int]:
        return [len(n) for n in self.nodes]

    @property
    def masks(self) -> list[np.ndarray]:
        if "masks" not in self._cache:
            masks = []
            for t, paths in enumerate(self.path_sets):
                a = np.zeros((len(self.point_sets[t]), len(paths)), dtype=bool)
                a[self.path_start[t], np.arange(len(paths))] = True
                b = np.zeros((len(paths), len(self.point_sets[t + 1])), dtype=bool)
                b[np.arange(len(paths)), self.path_end[t]] = True
                masks += [a, b]
            self._cache["masks"] = masks
        return self._cache["masks"]

    def decode_states(self, indices) -> tuple[list[str], list[tuple[str, ...]]]:
        """Map per-node state indices to segment ids and path id sequences."""
        points = [self.point_sets[t][indices[2 * t]].segment_id for t in range(self.n_obs)]
        paths = [self.path_sets[t][indices[2 * t + 1]].segment_ids for t in range(self.n_obs - 1)]
        return points, paths


@dataclass
class TrainingExample:
    lattice: Lattice
    labels: list[int]


def _point_candidates(net: RoadNetwork, p, cfg: LatticeConfig) -> tuple[list[PointState], bool]:
    r = cfg.radius
    escalated = False
    while True:
        found = nearby_segments(net, p, r)
        if found or r >= cfg.radius_limit:
            break
        r = min(2 * r, cfg.radius_limit)
        escalated = True
    return [PointState(s, pr) for s, pr in found[: cfg.max_point_states]], escalated


def travel_allowance(a: PointState, b: PointState, budget: float) -> float:
    """Full-segment path length allowed when ``budget`` meters may be driven.

    Paths count their end segments in full, but the vehicle only drives from
    the projection on ``a`` to the projection on ``b``; the unused parts of
    the end segments are added back.
    """
    return budget + a.projection.offset + (b.segment.length - b.projection.offset)


def build_lattice(net: RoadNetwork, traj: Trajectory, cfg: LatticeConfig = LatticeConfig()) -> Lattice:
    obs = traj.observations
    point_sets: list[list[PointState]] = []
    escalated = []
    for t, o in enumerate(obs):
        states, esc = _point_candidates(net, o.position, cfg)
        if not states:
            raise LatticeError(
                f"trajectory {traj.id}: no road within {cfg.radius_limit} m of observation {t}",
                "observation",
                t,
            )
        if esc:
            escalated.append(t)
        point_sets.append(states)

    vmax = net.max_speed
    raw_paths: list[list[tuple[int, int, Path]]] = []
    for t in range(len(obs) - 1):
        dt = obs[t + 1].timestamp - obs[t].timestamp
        budget = dt * vmax * cfg.slack
        gap = []
        for i, a in enumerate(point_sets[t]):
            for k, b in enumerate(point_sets[t + 1]):
                max_len = travel_allowance(a, b, budget)
                for p in enumerate_paths(net, a.segment_id, b.segment_id, max_len, cfg.max_paths):
                    gap.append((i, k, p))
        raw_paths.append(gap)

    # prune to fixpoint: a point survives only with a surviving path on each
    # side, a path only if both of its endpoints survive
    alive_pts = [np.ones(len(ps), dtype=bool) for ps in point_sets]
    alive_paths = [np.ones(len(g), dtype=bool) for g in raw_paths]
    starts = [np.array([i for i, _, _ in g], dtype=int) for g in raw_paths]
    ends = [np.array([k for _, k, _ in g], dtype=int) for g in raw_paths]
    changed = True
    while changed:
        changed = False
        for t in range(len(raw_paths)):
            ok = alive_paths[t] & alive_pts[t][starts[t]] & alive_pts[t + 1][ends[t]]
            if not np.array_equal(ok, alive_paths[t]):
                alive_paths[t] = ok
                changed = True
        for t in range(len(point_sets)):
            ok = alive_pts[t].copy()
            if t > 0:
                has_in = np.zeros_like(ok)
                has_in[ends[t - 1][alive_paths[t - 1]]] = True
                ok &= has_in
            if t < len(raw_paths):
                has_out = np.zeros_like(ok)
                has_out[starts[t][alive_paths[t]]] = True
                ok &= has_out
            if not np.array_equal(ok, alive_pts[t]):
                alive_pts[t] = ok
                changed = True

    for t in range(len(raw_paths)):
        if not alive_paths[t].any():
            raise LatticeError(
                f"trajectory {traj.id}: no feasible path across gap {t}", "gap", t
            )

    new_index = []
    kept_points = []
    for t, ps in enumerate(point_sets):
        idx = np.cumsum(alive_pts[t]) - 1
        new_index.append(idx)
        kept_points.append([s for s, a in zip(ps, alive_pts[t]) if a])
    path_sets, path_start, path_end = [], [], []
    for t, g in enumerate(raw_paths):
        m = alive_paths[t]
        path_sets.append([p for (_, _, p), a in zip(g, m) if a])
        path_start.append(new_index[t][starts[t][m]])
        path_end.append(new_index[t + 1][ends[t][m]])
    return Lattice(traj, kept_points, path_sets, path_start, path_end, escalated, cfg)


def label_lattice(lat: Lattice, truth: GroundTruth | None = None) -> TrainingExample:
    truth = truth or lat.trajectory.truth
    if truth is None:
        raise ValueError(f"trajectory {lat.trajectory.id} has no ground truth")
    if len(truth.point_labels) != lat.n_obs:
        raise ValueError("ground truth does not cover the lattice")
    labels = []
    for t in range(lat.n_obs):
        ids = [s.segment_id for s in lat.point_sets[t]]
        try:
            labels.append(ids.index(truth.point_labels[t]))
        except ValueError:
            raise UnlabelableError(
                f"trajectory {lat.trajectory.id}: true segment {truth.point_labels[t]!r} "
                f"not a candidate at observation {t}",
                2 * t,
            ) from None
        if t < lat.n_obs - 1:
            want = tuple(truth.path_labels[t])
            seqs = [p.segment_ids for p in lat.path_sets[t]]
            try:
                labels.append(seqs.index(want))
            except ValueError:
                raise UnlabelableError(
                    f"trajectory {lat.trajectory.id}: true path not a candidate at gap {t}",
                    2 * t + 1,
                ) from None
    return TrainingExample(lat, labels)


def count_sequences(lat_or_masks) -> int:
    """Number of full mask-compatible state sequences (exact integer DP)."""
    masks = lat_or_masks.masks if isinstance(lat_or_masks, Lattice) else lat_or_masks
    if not masks:
        raise ValueError("need at least one mask")
    counts = [1] * masks[0].shape[0]
    for m in masks:
        counts = [sum(c for c, ok in zip(counts, m[:, j]) if ok) for j in range(m.shape[1])]
    return sum(counts)


class LatticeCache:
    """On-disk pickle cache keyed by (network, trajectory, config)."""

    def __init__(self, directory):
        self.dir = FsPath(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _key(self, net: RoadNetwork, traj: Trajectory, cfg: LatticeConfig) -> FsPath:
        h = hashlib.sha256(
            repr((net.fingerprint(), traj.id, traj.observations, cfg.digest())).encode()
        ).hexdigest()[:24]
        return self.dir / f"{h}.pkl"

    def build(self, net: RoadNetwork, traj: Trajectory, cfg: LatticeConfig) -> Lattice:
        path = self._key(net, traj, cfg)
        if path.exists():
            with path.open("rb") as fh:
                lat = pickle.load(fh)
            lat.trajectory = traj
            return lat
        lat = build_lattice(net, traj, cfg)
        with path.open("wb") as fh:
            pickle.dump(Lattice(None, lat.point_sets, lat.path_sets, lat.path_start,
                                lat.path_end, lat.escalated, lat.config), fh)
        return lat
