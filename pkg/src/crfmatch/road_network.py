"""Directed road graph with planar geometry, nearest-segment queries and
bounded path enumeration."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Sequence

EARTH_RADIUS_M = 6371008.8

# Known road classes, in canonical order. A network's vocabulary is the
# subset present, kept in this order.
ROAD_CLASSES = (
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "unclassified",
    "residential",
    "service",
    "motorway_link",
    "trunk_link",
    "primary_link",
    "secondary_link",
)


class NetworkError(ValueError):
    """Malformed or invalid road network input."""


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection about a fixed origin (degrees -> meters)."""

    lon0: float
    lat0: float

    def forward(self, lon: float, lat: float) -> tuple[float, float]:
        k = math.cos(math.radians(self.lat0))
        x = EARTH_RADIUS_M * math.radians(lon - self.lon0) * k
        y = EARTH_RADIUS_M * math.radians(lat - self.lat0)
        return x, y

    def inverse(self, x: float, y: float) -> tuple[float, float]:
        k = math.cos(math.radians(self.lat0))
        lon = self.lon0 + math.degrees(x / (EARTH_RADIUS_M * k))
        lat = self.lat0 + math.degrees(y / EARTH_RADIUS_M)
        return lon, lat


@dataclass(frozen=True)
class RoadSegment:
    id: str
    road_class: str
    speed_limit: float  # m/s
    polyline: tuple[tuple[float, float], ...]
    from_node: int
    to_node: int
    oneway: bool
    feature_id: str = ""
    reverse: bool = False
    length: float = field(init=False)
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise NetworkError(f"segment {self.id}: polyline needs >= 2 vertices")
        if not self.speed_limit > 0:
            raise NetworkError(f"segment {self.id}: speed limit must be > 0")
        cum = [0.0]
        for (x0, y0), (x1, y1) in zip(self.polyline, self.polyline[1:]):
            cum.append(cum[-1] + math.hypot(x1 - x0, y1 - y0))
        if not cum[-1] > 0:
            raise NetworkError(f"segment {self.id}: zero length")
        object.__setattr__(self, "_cum", tuple(cum))
        object.__setattr__(self, "length", math.fsum(
            math.hypot(x1 - x0, y1 - y0)
            for (x0, y0), (x1, y1) in zip(self.polyline, self.polyline[1:])
        ))

    def point_at(self, offset: float) -> tuple[float, float]:
        offset = min(max(offset, 0.0), self.length)
        k = _piece_index(self._cum, offset)
        (x0, y0), (x1, y1) = self.polyline[k], self.polyline[k + 1]
        piece = self._cum[k + 1] - self._cum[k]
        u = 0.0 if piece == 0 else (offset - self._cum[k]) / piece
        return x0 + u * (x1 - x0), y0 + u * (y1 - y0)


def _piece_index(cum: Sequence[float], offset: float) -> int:
    # index of the polyline piece containing offset; at an interior vertex the
    # following piece wins
    n = len(cum) - 1
    for k in range(n):
        if offset < cum[k + 1]:
            return k
    return n - 1


@dataclass(frozen=True)
class Projection:
    projected_point: tuple[float, float]
    distance: float
    offset: float


@dataclass(frozen=True)
class Path:
    segment_ids: tuple[str, ...]
    length: float
    speed_limits: tuple[float, ...]
    class_sequence: tuple[str, ...]
    segment_lengths: tuple[float, ...] = ()

    @property
    def start_segment(self) -> str:
        return self.segment_ids[0]

    @property
    def end_segment(self) -> str:
        return self.segment_ids[-1]


def project_to_segment(p: tuple[float, float], s: RoadSegment) -> Projection:
    """Closest point on the polyline of ``s`` to ``p``.

    Ties between pieces resolve to the earliest piece along the polyline.
    """
    px, py = p
    best = None
    for k, ((x0, y0), (x1, y1)) in enumerate(zip(s.polyline, s.polyline[1:])):
        dx, dy = x1 - x0, y1 - y0
        seg2 = dx * dx + dy * dy
        u = 0.0 if seg2 == 0 else ((px - x0) * dx + (py - y0) * dy) / seg2
        u = min(max(u, 0.0), 1.0)
        qx, qy = x0 + u * dx, y0 + u * dy
        d = math.hypot(px - qx, py - qy)
        if best is None or d < best[0]:
            best = (d, (qx, qy), s._cum[k] + u * (s._cum[k + 1] - s._cum[k]))
    d, q, off = best
    return Projection(projected_point=q, distance=d, offset=min(off, s.length))


def segment_bearing(s: RoadSegment, offset: float) -> float:
    """Bearing (degrees clockwise from north) of the piece containing ``offset``."""
    if offset < 0 or offset > s.length:
        raise ValueError(f"offset {offset} outside [0, {s.length}] for segment {s.id}")
    k = _piece_index(s._cum, offset)
    (x0, y0), (x1, y1) = s.polyline[k], s.polyline[k + 1]
    return math.degrees(math.atan2(x1 - x0, y1 - y0)) % 360.0


class GridIndex:
    """Uniform-grid bucket index over segment bounding boxes.

    Candidates are over-collected from the buckets touched by the query disc's
    bounding box and then filtered by exact projection distance, so results
    equal a brute-force scan.
    """

    def __init__(self, segments: Sequence[RoadSegment], cell: float = 100.0):
        self.cell = cell
        self.buckets: dict[tuple[int, int], list[int]] = {}
        for i, s in enumerate(segments):
            xs = [x for x, _ in s.polyline]
            ys = [y for _, y in s.polyline]
            for cx in range(self._c(min(xs)), self._c(max(xs)) + 1):
                for cy in range(self._c(min(ys)), self._c(max(ys)) + 1):
                    self.buckets.setdefault((cx, cy), []).append(i)

    def _c(self, v: float) -> int:
        return math.floor(v / self.cell)

    def candidates(self, p: tuple[float, float], radius: float) -> set[int]:
        x, y = p
        out: set[int] = set()
        for cx in range(self._c(x - radius), self._c(x + radius) + 1):
            for cy in range(self._c(y - radius), self._c(y + radius) + 1):
                out.update(self.buckets.get((cx, cy), ()))
        return out


class RoadNetwork:
    """Immutable directed road graph.

    Two-way roads are held as two directed segments with reversed polylines.
    """

    def __init__(
        self,
        segments: Iterable[RoadSegment],
        nodes: dict[int, tuple[float, float]],
        projection: LocalProjection | None = None,
        index_cell: float = 100.0,
    ):
        self.segments: tuple[RoadSegment, ...] = tuple(segments)
        self.nodes = dict(nodes)
        self.projection = projection
        self.by_id: dict[str, RoadSegment] = {}
        self.adjacency: dict[int, list[str]] = {n: [] for n in self.nodes}
        self.incoming: dict[int, list[str]] = {n: [] for n in self.nodes}
        for s in self.segments:
            if s.id in self.by_id:
                raise NetworkError(f"duplicate segment id {s.id!r}")
            for n in (s.from_node, s.to_node):
                if n not in self.nodes:
                    raise NetworkError(f"segment {s.id}: unknown node {n}")
            self.by_id[s.id] = s
            self.adjacency[s.from_node].append(s.id)
            self.incoming[s.to_node].append(s.id)
        for lst in (*self.adjacency.values(), *self.incoming.values()):
            lst.sort()
        present = {s.road_class for s in self.segments}
        self.class_vocabulary = tuple(c for c in ROAD_CLASSES if c in present) + tuple(
            sorted(present - set(ROAD_CLASSES))
        )
        self.max_speed = max((s.speed_limit for s in self.segments), default=0.0)
        self.spatial_index = GridIndex(self.segments, cell=index_cell)
        self._dist_cache: dict[int, dict[int, float]] = {}

    def __len__(self):
        return len(self.segments)

    def segment(self, sid: str) -> RoadSegment:
        try:
            return self.by_id[sid]
        except KeyError:
            raise KeyError(f"unknown segment id {sid!r}") from None

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for s in self.segments:
            h.update(repr((s.id, s.road_class, s.speed_limit, s.polyline)).encode())
        return h.hexdigest()[:16]

    def make_path(self, ids: Sequence[str]) -> Path:
        segs = [self.segment(i) for i in ids]
        return Path(
            segment_ids=tuple(ids),
            length=math.fsum(s.length for s in segs),
            speed_limits=tuple(s.speed_limit for s in segs),
            class_sequence=tuple(s.road_class for s in segs),
            segment_lengths=tuple(s.length for s in segs),
        )

    def distances_to(self, node: int) -> dict[int, float]:
        """Shortest network distance from every node that can reach ``node``."""
        cached = self._dist_cache.get(node)
        if cached is not None:
            return cached
        dist = {node: 0.0}
        heap = [(0.0, node)]
        while heap:
            d, n = heapq.heappop(heap)
            if d > dist.get(n, math.inf):
                continue
            for sid in self.incoming[n]:
                s = self.by_id[sid]
                nd = d + s.length
                if nd < dist.get(s.from_node, math.inf):
                    dist[s.from_node] = nd
                    heapq.heappush(heap, (nd, s.from_node))
        self._dist_cache[node] = dist
        return dist


def nearby_segments(
    net: RoadNetwork, p: tuple[float, float], radius: float
) -> list[tuple[RoadSegment, Projection]]:
    """Segments within ``radius`` of ``p``, nearest first (ties by id)."""
    if not radius > 0:
        raise ValueError("radius must be > 0")
    out = []
    for i in net.spatial_index.candidates(p, radius):
        s = net.segments[i]
        proj = project_to_segment(p, s)
        if proj.distance <= radius:
            out.append((s, proj))
    out.sort(key=lambda sp: (sp[1].distance, sp[0].id))
    return out


def enumerate_paths(
    net: RoadNetwork, from_s: str, to_s: str, max_length: float, max_paths: int = 10
) -> list[Path]:
    """The ``max_paths`` shortest simple paths from ``from_s`` to ``to_s``.

    Path length counts every segment in full. Best-first search keyed on
    (length lower bound, id prefix), which yields complete paths in exactly
    the final (length, ids) order, so the search can stop at ``max_paths``.
    """
    if not max_length > 0:
        raise ValueError("max_length must be > 0")
    if max_paths < 1:
        raise ValueError("max_paths must be >= 1")
    first, last = net.segment(from_s), net.segment(to_s)
    if from_s == to_s:
        # staying put is always feasible, however long the segment
        return [net.make_path([from_s])]

    to_goal = net.distances_to(last.from_node)

    def bound(seg: RoadSegment, g: float) -> float:
        return g + to_goal.get(seg.to_node, math.inf) + last.length

    found: list[Path] = []
    heap = []
    f0 = bound(first, first.length)
    if f0 <= max_length:
        heap.append((f0, (from_s,), first.length))
    while heap and len(found) < max_paths:
        f, ids, g = heapq.heappop(heap)
        if ids[-1] == to_s:
            found.append(net.make_path(ids))
            continue
        tail = net.by_id[ids[-1]]
        for nxt in net.adjacency[tail.to_node]:
            if nxt in ids:
                continue
            s = net.by_id[nxt]
            ng = g + s.length
            if nxt == to_s:
                nf = ng
            else:
                nf = bound(s, ng)
            if nf <= max_length:
                heapq.heappush(heap, (nf, ids + (nxt,), ng))
    return found


# ---------------------------------------------------------------- GeoJSON I/O


def load_network(source, index_cell: float = 100.0) -> RoadNetwork:
    """Read a GeoJSON FeatureCollection of LineStrings into a RoadNetwork."""
    if isinstance(source, dict):
        doc = source
    else:
        text = FsPath(source).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise NetworkError(f"{source}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise NetworkError("network file must be a GeoJSON FeatureCollection")

    raw = []
    for i, feat in enumerate(doc["features"]):
        try:
            geom = feat["geometry"]
            props = feat.get("properties") or {}
            if geom["type"] != "LineString":
                raise NetworkError(f"feature {i}: geometry must be LineString")
            coords = [(float(c[0]), float(c[1])) for c in geom["coordinates"]]
            cls = props["class"]
            speed = float(props["speed_limit_kmh"])
            oneway = bool(props.get("oneway", False))
        except NetworkError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise NetworkError(f"feature {i}: malformed ({e!r})") from e
        if cls not in ROAD_CLASSES:
            raise NetworkError(f"feature {i}: unknown road class {cls!r}")
        if not speed > 0:
            raise NetworkError(f"feature {i}: speed_limit_kmh must be > 0, got {speed}")
        if len(coords) < 2:
            raise NetworkError(f"feature {i}: LineString needs >= 2 coordinates")
        fid = str(props.get("id", feat.get("id", i)))
        raw.append((fid, coords, cls, speed / 3.6, oneway))

    if raw:
        lons = [c[0] for _, cs, *_ in raw for c in cs]
        lats = [c[1] for _, cs, *_ in raw for c in cs]
        proj = LocalProjection((min(lons) + max(lons)) / 2, (min(lats) + max(lats)) / 2)
    else:
        proj = LocalProjection(0.0, 0.0)

    node_ids: dict[tuple[float, float], int] = {}
    nodes: dict[int, tuple[float, float]] = {}

    def node_for(lon, lat):
        key = (round(lon, 9), round(lat, 9))
        if key not in node_ids:
            node_ids[key] = len(node_ids)
            nodes[node_ids[key]] = proj.forward(lon, lat)
        return node_ids[key]

    segments = []
    for fid, coords, cls, speed, oneway in raw:
        a = node_for(*coords[0])
        b = node_for(*coords[-1])
        pl = [proj.forward(lon, lat) for lon, lat in coords]
        pl[0], pl[-1] = nodes[a], nodes[b]
        pl = tuple(pl)
        if oneway:
            segments.append(RoadSegment(fid, cls, speed, pl, a, b, True, fid, False))
        else:
            segments.append(RoadSegment(f"{fid}:f", cls, speed, pl, a, b, False, fid, False))
            segments.append(
                RoadSegment(f"{fid}:b", cls, speed, pl[::-1], b, a, False, fid, True)
            )
    return RoadNetwork(segments, nodes, proj, index_cell=index_cell)


def network_to_geojson(net: RoadNetwork) -> dict:
    """Inverse of :func:`load_network`; two-way pairs collapse back to one feature."""
    proj = net.projection or LocalProjection(0.0, 0.0)
    features = []
    seen = set()
    for s in net.segments:
        if s.feature_id in seen:
            continue
        if s.reverse:
            continue
        seen.add(s.feature_id)
        coords = [list(proj.inverse(x, y)) for x, y in s.polyline]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {
                    "id": s.feature_id,
                    "class": s.road_class,
                    "speed_limit_kmh": s.speed_limit * 3.6,
                    "oneway": s.oneway,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def save_network(net: RoadNetwork, dest) -> None:
    FsPath(dest).write_text(json.dumps(network_to_geojson(net), indent=1))


def brute_force_nearby(net: RoadNetwork, p, radius: float) -> list[tuple[str, float]]:
    """Linear scan used as the exactness reference for the spatial index."""
    out = []
    for s in net.segments:
        d = project_to_segment(p, s).distance
        if d <= radius:
            out.append((s.id, d))
    return sorted(out, key=lambda t: (t[1], t[0]))
