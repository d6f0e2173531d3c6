import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from crfmatch.road_network import (
    LocalProjection,
    NetworkError,
    RoadNetwork,
    enumerate_paths,
    load_network,
    nearby_segments,
    project_to_segment,
    save_network,
    segment_bearing,
)
from crfmatch.road_network import RoadSegment

from helpers import brute_nearby, dfs_paths, grid_net, make_net

ORIGIN = LocalProjection(11.57, 48.14)


def feature(coords_m, cls="primary", kmh=50, oneway=False, fid=None):
    coords = [list(ORIGIN.inverse(x, y)) for x, y in coords_m]
    props = {"class": cls, "speed_limit_kmh": kmh, "oneway": oneway}
    if fid is not None:
        props["id"] = fid
    return {"type": "Feature", "geometry": {"type": "LineString", "coordinates": coords}, "properties": props}


def collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


def straight(x0=0.0, y0=0.0, x1=100.0, y1=0.0, sid="s"):
    return RoadSegment(sid, "primary", 10.0, ((x0, y0), (x1, y1)), 0, 1, True, sid)


# ------------------------------------------------------------------ loading


def test_two_way_feature_splits():
    net = load_network(collection(feature([(-50, 0), (50, 0)])))
    assert len(net.segments) == 2
    assert len(net.nodes) == 2
    a, b = net.segments
    assert a.polyline == b.polyline[::-1]
    assert (a.from_node, a.to_node) == (b.to_node, b.from_node)


def test_one_way_polyline_length():
    net = load_network(collection(feature([(-100, 0), (0, 0), (100, 0)], oneway=True)))
    assert len(net.segments) == 1
    assert net.segments[0].length == pytest.approx(200.0, rel=1e-6)


def test_zero_speed_rejected():
    with pytest.raises(NetworkError, match="speed"):
        load_network(collection(feature([(0, 0), (10, 0)], kmh=0)))


def test_unknown_class_rejected():
    with pytest.raises(NetworkError, match="class"):
        load_network(collection(feature([(0, 0), (10, 0)], cls="goat_track")))


def test_malformed_file_reports_position(tmp_path):
    p = tmp_path / "bad.geojson"
    p.write_text('{"type": "FeatureCollection",\n "features": [}')
    with pytest.raises(NetworkError, match="line 2"):
        load_network(p)
    with pytest.raises(NetworkError, match="feature 1"):
        load_network(collection(feature([(0, 0), (10, 0)]), {"type": "Feature", "geometry": None}))


def test_shared_endpoints_become_one_node():
    net = load_network(collection(feature([(0, 0), (100, 0)]), feature([(100, 0), (100, 100)])))
    assert len(net.nodes) == 3
    assert net.class_vocabulary == ("primary",)


def test_round_trip(tmp_path):
    src = collection(
        feature([(-300, 0), (0, 0), (0, 250)], "primary", 50, False, "a"),
        feature([(0, 250), (300, 400)], "residential", 30, True, "b"),
        feature([(300, 400), (-300, 0)], "secondary", 40, False, "c"),
    )
    net = load_network(src)
    dest = tmp_path / "net.geojson"
    save_network(net, dest)
    again = load_network(dest)
    assert len(again.segments) == len(net.segments)
    for s in net.segments:
        t = again.segment(s.id)
        assert t.length == pytest.approx(s.length, rel=1e-6)
        assert t.road_class == s.road_class
        assert t.speed_limit == pytest.approx(s.speed_limit, rel=1e-12)
        assert t.oneway == s.oneway


# --------------------------------------------------------------- geometry


def test_projection_perpendicular_foot():
    pr = project_to_segment((50, 10), straight())
    assert pr.projected_point == pytest.approx((50, 0))
    assert pr.distance == pytest.approx(10)
    assert pr.offset == pytest.approx(50)


def test_projection_endpoint_clamp():
    pr = project_to_segment((-10, 0), straight())
    assert pr.projected_point == pytest.approx((0, 0))
    assert pr.distance == pytest.approx(10)
    assert pr.offset == 0


def test_projection_on_polyline():
    s = RoadSegment("s", "primary", 10, ((0, 0), (100, 0), (100, 100)), 0, 1, True)
    assert project_to_segment((100, 40), s).distance == 0
    assert project_to_segment((100, 40), s).offset == pytest.approx(140)


@given(st.floats(-500, 500), st.floats(-500, 500))
def test_projection_distance_is_euclidean(x, y):
    s = RoadSegment("s", "primary", 10, ((0, 0), (100, 0), (150, 80), (20, 200)), 0, 1, True)
    pr = project_to_segment((x, y), s)
    assert pr.distance == pytest.approx(math.dist((x, y), pr.projected_point), abs=1e-9)
    assert 0 <= pr.offset <= s.length
    # no vertex or sampled point on the polyline is closer
    for k in range(len(s.polyline) - 1):
        (x0, y0), (x1, y1) = s.polyline[k], s.polyline[k + 1]
        for u in [i / 50 for i in range(51)]:
            q = (x0 + u * (x1 - x0), y0 + u * (y1 - y0))
            assert pr.distance <= math.dist((x, y), q) + 1e-9


def test_bearings():
    assert segment_bearing(straight(), 10) == pytest.approx(90)
    north = RoadSegment("n", "primary", 10, ((0, 0), (0, 100)), 0, 1, True)
    assert segment_bearing(north, 0) == pytest.approx(0)
    bend = RoadSegment("b", "primary", 10, ((0, 0), (100, 0), (100, 100)), 0, 1, True)
    assert segment_bearing(bend, 100) == pytest.approx(0)  # vertex -> following piece
    assert segment_bearing(bend, 99.9) == pytest.approx(90)
    with pytest.raises(ValueError):
        segment_bearing(bend, 250)


# --------------------------------------------------------------- queries


def test_nearby_contains_host_segment():
    net = grid_net(3)
    hits = nearby_segments(net, (50, 0), 50)
    ids = [s.id for s, _ in hits]
    assert "h00f" in ids
    assert dict((s.id, p.distance) for s, p in hits)["h00f"] == 0


def test_nearby_empty_network():
    assert nearby_segments(RoadNetwork([], {}), (0, 0), 100) == []


def test_nearby_grid_crossing_matches_brute_force():
    net = grid_net(5)
    got = [(s.id, p.distance) for s, p in nearby_segments(net, (200, 200), 150)]
    assert got == brute_nearby(net, (200, 200), 150)


@settings(max_examples=200)
@given(st.floats(-150, 550), st.floats(-150, 550), st.floats(0.5, 400))
def test_nearby_equals_brute_force(x, y, r):
    net = grid_net(5)
    got = [(s.id, p.distance) for s, p in nearby_segments(net, (x, y), r)]
    assert got == brute_nearby(net, (x, y), r)


def test_nearby_rejects_bad_radius():
    with pytest.raises(ValueError):
        nearby_segments(grid_net(2), (0, 0), 0)


# ----------------------------------------------------------- enumeration


def test_same_segment_path():
    net = grid_net(2)
    paths = enumerate_paths(net, "h00f", "h00f", 1000, 10)
    assert [p.segment_ids for p in paths] == [("h00f",)]
    assert paths[0].length == pytest.approx(100)


def test_two_by_two_corners_equal_dfs():
    net = grid_net(2)
    got = [(p.length, p.segment_ids) for p in enumerate_paths(net, "h00f", "h10f", 10_000, 100)]
    assert got == dfs_paths(net, "h00f", "h10f", 10_000, 100)
    assert len(got) >= 2


def test_max_length_below_shortest():
    net = grid_net(3)
    assert enumerate_paths(net, "h00f", "h21f", 150, 10) == []


def test_unknown_segment():
    with pytest.raises(KeyError):
        enumerate_paths(grid_net(2), "nope", "h00f", 100, 1)


@settings(max_examples=60)
@given(
    st.integers(0, 10_000),
    st.integers(0, 10_000),
    st.floats(100, 900),
    st.integers(1, 12),
)
def test_enumeration_matches_dfs(a, b, max_len, k):
    net = grid_net(3)
    ids = sorted(net.by_id)
    s, t = ids[a % len(ids)], ids[b % len(ids)]
    got = enumerate_paths(net, s, t, max_len, k)
    assert [(p.length, p.segment_ids) for p in got] == dfs_paths(net, s, t, max_len, k)
    for p in got:
        assert p.length <= max_len
        assert p.start_segment == s and p.end_segment == t
        assert len(set(p.segment_ids)) == len(p.segment_ids)
        for u, v in zip(p.segment_ids, p.segment_ids[1:]):
            assert net.segment(u).to_node == net.segment(v).from_node
    assert len({p.segment_ids for p in got}) == len(got)


def test_path_attributes():
    nodes = {0: (0, 0), 1: (100, 0), 2: (150, 0)}
    net = make_net(nodes, [("a", 0, 1, "primary", 20.0), ("b", 1, 2, "residential", 5.0)])
    (p,) = enumerate_paths(net, "a", "b", 1000, 5)
    assert p.segment_ids == ("a", "b")
    assert p.length == pytest.approx(150)
    assert p.speed_limits == (20.0, 5.0)
    assert p.class_sequence == ("primary", "residential")
