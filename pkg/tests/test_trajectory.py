import pytest
from hypothesis import given, strategies as st

from crfmatch.road_network import LocalProjection
from crfmatch.trajectory import (
    GpsObservation,
    GroundTruth,
    Trajectory,
    TrajectoryError,
    DegenerateTrajectoryError,
    degrade_sampling,
    load_trajectories,
    split_dataset,
    trajectories_to_csv,
)

PROJ = LocalProjection(121.47, 31.23)
HEADER = "traj_id,lon,lat,timestamp,speed_kmh,heading_deg,in_service,truth_segment,truth_path\n"


def test_load_three_points():
    text = HEADER + "".join(
        f"t1,121.47{i},31.23,{10 * i},36,90,1,,\n" for i in range(3)
    )
    (tr,) = load_trajectories(text, PROJ)
    assert len(tr) == 3
    assert tr.truth is None
    assert tr.observations[0].speed == pytest.approx(10.0)
    assert tr.observations[0].in_service is True


def test_equal_timestamps_rejected():
    text = HEADER + "t1,121.47,31.23,5,,,,,\nt1,121.471,31.23,5,,,,,\n"
    with pytest.raises(TrajectoryError, match="strictly increasing"):
        load_trajectories(text, PROJ)


def test_truth_columns_populated_and_checked():
    rows = [
        "t1,121.470,31.23,0,,,,a,a|b\n",
        "t1,121.471,31.23,10,,,,b,b\n",
        "t1,121.472,31.23,20,,,,b,\n",
    ]
    (tr,) = load_trajectories(HEADER + "".join(rows), PROJ)
    assert tr.truth.point_labels == ("a", "b", "b")
    assert tr.truth.path_labels == (("a", "b"), ("b",))
    bad = rows[:1] + ["t1,121.471,31.23,10,,,,c,c\n"]
    with pytest.raises(TrajectoryError, match="gap 0"):
        load_trajectories(HEADER + "".join(bad), PROJ)


def test_csv_round_trip(tmp_path):
    obs = tuple(
        GpsObservation((10.0 * i, -3.5 * i), float(i), 4.0, 45.0, i % 2 == 0) for i in range(4)
    )
    truth = GroundTruth(("a", "a", "b", "c"), (("a",), ("a", "b"), ("b", "c")))
    tr = Trajectory("x", obs, truth)
    (back,) = load_trajectories(trajectories_to_csv([tr], PROJ), PROJ)
    assert back.truth == truth
    for o, p in zip(tr.observations, back.observations):
        assert p.position == pytest.approx(o.position, abs=1e-6)
        assert (p.timestamp, p.heading, p.in_service) == (o.timestamp, o.heading, o.in_service)
        assert p.speed == pytest.approx(o.speed, rel=1e-12)


def line_trajectory(n, step=10.0, labels=None):
    obs = tuple(GpsObservation((float(i), 0.0), step * i) for i in range(n))
    truth = None
    if labels is not None:
        paths = []
        for a, b in zip(labels, labels[1:]):
            paths.append((a,) if a == b else (a, b))
        truth = GroundTruth(tuple(labels), tuple(paths))
    return Trajectory("line", obs, truth)


def test_degrade_60():
    assert degrade_sampling(line_trajectory(13), 60).timestamps == [0, 60, 120]


def test_degrade_90():
    assert degrade_sampling(line_trajectory(13), 90).timestamps == [0, 90]


def test_degrade_too_short():
    with pytest.raises(DegenerateTrajectoryError):
        degrade_sampling(line_trajectory(3), 60)


def brute_concat(paths):
    out = list(paths[0])
    for p in paths[1:]:
        out += list(p[1:])
    return tuple(out)


@given(st.lists(st.sampled_from("abcdef"), min_size=2, max_size=30), st.sampled_from([15, 20, 30, 60]))
def test_degraded_truth_is_concatenation(labels, interval):
    tr = line_trajectory(len(labels), labels=labels)
    try:
        d = degrade_sampling(tr, interval)
    except DegenerateTrajectoryError:
        return
    keep = [round(ts / 10) for ts in d.timestamps]
    assert d.truth.point_labels == tuple(labels[i] for i in keep)
    for g, (a, b) in enumerate(zip(keep, keep[1:])):
        assert d.truth.path_labels[g] == brute_concat(tr.truth.path_labels[a:b])
    for a, b in zip(d.timestamps, d.timestamps[1:]):
        assert b - a >= interval


def test_split_ten():
    train, test = split_dataset(list(range(10)), 0.7, seed=1)
    assert (len(train), len(test)) == (7, 3)
    assert split_dataset(list(range(10)), 0.7, seed=1) == (train, test)


@given(st.integers(2, 200), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_split_partitions(n, frac, seed):
    items = [f"t{i}" for i in range(n)]
    train, test = split_dataset(items, frac, seed)
    assert set(train) | set(test) == set(items)
    assert not set(train) & set(test)
    assert train and test
