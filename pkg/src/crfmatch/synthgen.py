"""Synthetic grid cities, preference-driven trips and noisy GPS fixes."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .road_network import LocalProjection, RoadNetwork, RoadSegment, segment_bearing
from .trajectory import DegenerateTrajectoryError, GpsObservation, GroundTruth, Trajectory


class GenerationError(RuntimeError):
    pass


DEFAULT_SPEEDS = {"primary": 50 / 3.6, "secondary": 40 / 3.6, "residential": 30 / 3.6}


@dataclass(frozen=True)
class WorldSpec:
    rows: int = 10
    cols: int = 10
    spacing: float = 200.0
    primary_every: int = 3  # every k-th row/col (from 0) is primary
    secondary_every: int = 0  # 0 disables; applied to lines that are not primary
    speed_limits: dict = field(default_factory=lambda: dict(DEFAULT_SPEEDS))
    jitter: float = 0.0  # uniform node displacement, meters
    seed: int = 0
    origin: tuple[float, float] = (121.47, 31.23)  # lon, lat of the grid centre

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 rows and 2 cols")
        if not self.spacing > 0:
            raise ValueError("spacing must be > 0")
        if self.jitter < 0 or self.jitter >= self.spacing / 2:
            raise ValueError("jitter must be in [0, spacing/2)")

    def line_class(self, i: int) -> str:
        if self.primary_every and i % self.primary_every == 0:
            return "primary"
        if self.secondary_every and i % self.secondary_every == 0:
            return "secondary"
        return "residential"


@dataclass(frozen=True)
class NoiseSpec:
    gps_sigma: float = 15.0
    heading_sigma: float = 10.0
    speed_sigma: float = 1.0
    interval: float = 10.0

    def __post_init__(self):
        if min(self.gps_sigma, self.heading_sigma, self.speed_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not self.interval > 0:
            raise ValueError("interval must be > 0")


@dataclass(frozen=True)
class BehaviorSpec:
    class_preference: dict = field(default_factory=lambda: {"primary": 0.6})
    idle_preference: dict | None = None  # used when not in service; defaults to class_preference
    in_service_probability: float = 0.5
    cruise_fraction: float = 0.8
    route_dispersion: float = 0.0  # sigma of per-trip lognormal edge-cost factors
    speed_spread: float = 0.0  # per-segment cruise fraction drawn from fraction * U[1-s, 1+s], capped at 1

    def __post_init__(self):
        for prefs in (self.class_preference, self.idle_preference or {}):
            if any(not w > 0 for w in prefs.values()):
                raise ValueError("preference weights must be > 0")
        if not 0 < self.cruise_fraction <= 1:
            raise ValueError("cruise_fraction must be in (0, 1]")
        if not 0 <= self.in_service_probability <= 1:
            raise ValueError("in_service_probability must be in [0, 1]")
        if self.route_dispersion < 0:
            raise ValueError("route_dispersion must be >= 0")
        if not 0 <= self.speed_spread < 1:
            raise ValueError("speed_spread must be in [0, 1)")

    def factor(self, road_class: str, in_service: bool) -> float:
        prefs = self.class_preference if in_service or self.idle_preference is None else self.idle_preference
        return prefs.get(road_class, 1.0)


def generate_network(spec: WorldSpec) -> RoadNetwork:
    """Two-way grid; horizontal lines take their class from the row index, vertical from the column."""
    rng = np.random.default_rng(spec.seed)
    nodes = {}
    x0 = -(spec.cols - 1) * spec.spacing / 2
    y0 = -(spec.rows - 1) * spec.spacing / 2
    for r in range(spec.rows):
        for c in range(spec.cols):
            dx, dy = (rng.uniform(-spec.jitter, spec.jitter, 2) if spec.jitter else (0.0, 0.0))
            nodes[r * spec.cols + c] = (x0 + c * spec.spacing + float(dx), y0 + r * spec.spacing + float(dy))

    segs = []

    def add(fid, a, b, cls):
        pl = (nodes[a], nodes[b])
        v = spec.speed_limits[cls]
        segs.append(RoadSegment(f"{fid}:f", cls, v, pl, a, b, False, fid, False))
        segs.append(RoadSegment(f"{fid}:b", cls, v, pl[::-1], b, a, False, fid, True))

    for r in range(spec.rows):
        for c in range(spec.cols - 1):
            a = r * spec.cols + c
            add(f"h{r:02d}_{c:02d}", a, a + 1, spec.line_class(r))
    for c in range(spec.cols):
        for r in range(spec.rows - 1):
            a = r * spec.cols + c
            add(f"v{c:02d}_{r:02d}", a, a + spec.cols, spec.line_class(c))
    return RoadNetwork(segs, nodes, LocalProjection(*spec.origin))


@dataclass
class DenseTrip:
    route: tuple[str, ...]
    times: np.ndarray  # seconds
    positions: np.ndarray  # (n, 2) meters on the route
    segment_index: np.ndarray  # route index under each position
    headings: np.ndarray
    speeds: np.ndarray
    in_service: bool
    start_time: float


def least_cost_route(net: RoadNetwork, origin: int, dest: int, cost) -> tuple[str, ...]:
    dist = {origin: 0.0}
    prev: dict[int, str] = {}
    heap = [(0.0, origin)]
    while heap:
        d, n = heapq.heappop(heap)
        if n == dest:
            break
        if d > dist[n]:
            continue
        for sid in net.adjacency[n]:
            s = net.by_id[sid]
            nd = d + cost(s)
            if nd < dist.get(s.to_node, math.inf):
                dist[s.to_node] = nd
                prev[s.to_node] = sid
                heapq.heappush(heap, (nd, s.to_node))
    if dest not in prev:
        raise GenerationError(f"node {dest} unreachable from {origin}")
    route = []
    n = dest
    while n != origin:
        sid = prev[n]
        route.append(sid)
        n = net.by_id[sid].from_node
    return tuple(reversed(route))


def simulate_trip(
    net: RoadNetwork,
    behavior: BehaviorSpec,
    origin: int,
    dest: int,
    start_time: float,
    seed: int,
) -> DenseTrip:
    """Drive the least-cost route at a cruise fraction of each limit, one fix per second.

    With ``route_dispersion`` every edge cost gets a per-trip random factor,
    so drivers between the same endpoints need not agree; ``speed_spread``
    varies the cruise fraction segment by segment.
    """
    if origin == dest:
        raise GenerationError("origin and destination must differ")
    rng = np.random.default_rng(seed)
    in_service = bool(rng.random() < behavior.in_service_probability)
    taste = {}
    if behavior.route_dispersion > 0:
        draws = rng.lognormal(0.0, behavior.route_dispersion, len(net.segments))
        taste = {s.id: float(v) for s, v in zip(net.segments, draws)}
    route = least_cost_route(
        net, origin, dest,
        lambda s: s.length * behavior.factor(s.road_class, in_service) * taste.get(s.id, 1.0),
    )
    segs = [net.segment(i) for i in route]
    fractions = [behavior.cruise_fraction] * len(segs)
    if behavior.speed_spread > 0:
        spread = rng.uniform(1 - behavior.speed_spread, 1 + behavior.speed_spread, len(segs))
        fractions = [min(1.0, behavior.cruise_fraction * float(u)) for u in spread]
    speeds = [f * s.speed_limit for f, s in zip(fractions, segs)]
    durations = [s.length / v for s, v in zip(segs, speeds)]
    bounds = np.concatenate([[0.0], np.cumsum(durations)])
    total = bounds[-1]
    times = np.arange(0.0, math.floor(total) + 1.0)
    idx = np.minimum(np.searchsorted(bounds, times, side="right") - 1, len(segs) - 1)
    pos, head, spd = [], [], []
    for t, k in zip(times, idx):
        s = segs[k]
        off = min((t - bounds[k]) * speeds[k], s.length)
        pos.append(s.point_at(off))
        head.append(segment_bearing(s, off))
        spd.append(speeds[k])
    return DenseTrip(route, times + start_time, np.asarray(pos), idx, np.asarray(head),
                     np.asarray(spd), in_service, start_time)


def synthesize_observations(
    trip: DenseTrip, noise: NoiseSpec, seed: int, traj_id: str = "t0", projection=None
) -> Trajectory:
    """Sample the dense trip every ``noise.interval`` seconds and perturb it."""
    rng = np.random.default_rng(seed)
    step = noise.interval
    rel = trip.times - trip.times[0]
    picks = [i for i, t in enumerate(rel) if (t / step) == math.floor(t / step)]
    if len(picks) < 2:
        raise DegenerateTrajectoryError(f"trip {traj_id} shorter than two sampling intervals")
    obs = []
    for i in picks:
        x, y = trip.positions[i] + rng.normal(0.0, noise.gps_sigma, 2) if noise.gps_sigma else trip.positions[i]
        h = (trip.headings[i] + (rng.normal(0.0, noise.heading_sigma) if noise.heading_sigma else 0.0)) % 360.0
        v = max(0.0, trip.speeds[i] + (rng.normal(0.0, noise.speed_sigma) if noise.speed_sigma else 0.0))
        pos = (float(x), float(y))
        obs.append(
            GpsObservation(
                position=pos,
                timestamp=float(trip.times[i]),
                speed=float(v),
                heading=float(h) if h < 360.0 else 0.0,
                in_service=trip.in_service,
                lonlat=projection.inverse(*pos) if projection is not None else None,
            )
        )
    labels = tuple(trip.route[trip.segment_index[i]] for i in picks)
    paths = tuple(
        tuple(trip.route[trip.segment_index[a] : trip.segment_index[b] + 1])
        for a, b in zip(picks, picks[1:])
    )
    return Trajectory(traj_id, tuple(obs), GroundTruth(labels, paths))


def generate_dataset(
    net: RoadNetwork,
    n_trips: int,
    behavior: BehaviorSpec = BehaviorSpec(),
    noise: NoiseSpec = NoiseSpec(),
    seed: int = 0,
    min_hops: int = 8,
    min_duration: float = 0.0,
    day_start: float = 0.0,
) -> list[Trajectory]:
    """Trips between random node pairs at least ``min_hops`` grid steps apart (Manhattan)
    and lasting at least ``min_duration`` seconds.

    Start times spread uniformly over one day so every time period is visited.
    """
    rng = np.random.default_rng(seed)
    node_ids = sorted(net.nodes)
    coords = np.array([net.nodes[n] for n in node_ids])
    spacing = _typical_spacing(net)
    out = []
    attempts = 0
    while len(out) < n_trips:
        attempts += 1
        if attempts > 100 * n_trips:
            raise GenerationError("could not draw enough long-enough trips")
        a, b = rng.choice(len(node_ids), 2, replace=False)
        hops = np.abs(coords[a] - coords[b]).sum() / spacing
        if hops < min_hops:
            continue
        start = day_start + float(rng.uniform(0, 86400 - 1800))
        trip = simulate_trip(net, behavior, node_ids[a], node_ids[b], round(start), int(rng.integers(2**31)))
        if trip.times[-1] - trip.times[0] < min_duration:
            continue
        try:
            tr = synthesize_observations(trip, noise, int(rng.integers(2**31)), f"trip{len(out):04d}",
                                         net.projection)
        except DegenerateTrajectoryError:
            continue
        out.append(tr)
    return out


def _typical_spacing(net: RoadNetwork) -> float:
    return float(np.median([s.length for s in net.segments]))
