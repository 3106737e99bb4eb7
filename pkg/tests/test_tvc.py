import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from profilecast.tvc import (
    ConfigError,
    Contact,
    MovementTrace,
    Rect,
    TimePeriod,
    TVCConfig,
    config_from_json,
    empirical_statistics,
    generate_mobility,
    movement_to_contacts,
    movement_to_sessions,
    occupancy_autocorrelation,
    read_contacts,
    read_movement,
    sampled_cells,
    validate_config,
    write_contacts,
    write_movement,
)

FIELD = Rect(0, 0, 100, 100)


def config(periods=None, nodes=4, cycle=100.0, **kw):
    if periods is None:
        periods = [TimePeriod((0, cycle), {"g": FIELD}, 1.0)]
    base = dict(field=FIELD, node_count=nodes, cycle_length=cycle, periods=periods,
                speed_range=(1.0, 2.0), pause_range=(0.0, 10.0), radio_range=10.0, cell_size=25.0)
    base.update(kw)
    return TVCConfig(**base)


def still(positions, duration):
    return MovementTrace({n: (np.array([0.0, duration]), np.array([p, p], dtype=float)) for n, p in positions.items()},
                         float(duration))


# -- validation ------------------------------------------------------------

def test_tiling_accepted():
    c = config([TimePeriod((0, 40), {"g": FIELD}, 1.0), TimePeriod((40, 100), {"g": FIELD}, 0.5)])
    assert validate_config(c) is c


def test_overlap_rejected():
    c = config([TimePeriod((0, 60), {"g": FIELD}, 1.0), TimePeriod((40, 100), {"g": FIELD}, 1.0)])
    with pytest.raises(ConfigError, match="periods overlap"):
        validate_config(c)


def test_rect_outside_field():
    c = config([TimePeriod((0, 100), {"g": Rect(50, 50, 150, 80)}, 1.0)])
    with pytest.raises(ConfigError, match="outside the field"):
        validate_config(c)


def test_several_violations_listed():
    c = config(radio_range=0.0, speed_range=(0.0, 1.0))
    with pytest.raises(ConfigError) as e:
        validate_config(c)
    assert len(e.value.violations) == 2


def test_json_roundtrip_and_unknown_key():
    c = config([TimePeriod((0, 50), {"g": Rect(0, 0, 50, 100)}, 0.9), TimePeriod((50, 100), {"g": FIELD}, 1.0)],
               node_groups=["g"] * 4)
    assert config_from_json(c.to_json()) == c
    doc = c.to_json()
    doc["colour"] = "red"
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_json(doc)


# -- generation ------------------------------------------------------------

def all_positions(trace):
    return np.vstack([p for _, p in trace.waypoints.values()])


def test_left_half_community():
    left = Rect(0, 0, 50, 100)
    tr = generate_mobility(config([TimePeriod((0, 100), {"g": left}, 1.0)]), 3, 5000)
    pos = all_positions(tr)
    assert (pos[:, 0] <= 50 + 1e-9).all()


def test_random_waypoint_reduction_center_weighted():
    tr = generate_mobility(config(nodes=10, pause_range=(0.0, 0.0)), 1, 20000)
    times = np.arange(0, 20000, 5.0)
    pos = tr.positions_at(times).reshape(-1, 2)
    assert FIELD.contains(pos[:, 0].min(), pos[:, 1].min()) and FIELD.contains(pos[:, 0].max(), pos[:, 1].max())
    center = np.mean((np.abs(pos[:, 0] - 50) < 12.5) & (np.abs(pos[:, 1] - 50) < 12.5))
    corner = np.mean((pos[:, 0] < 25) & (pos[:, 1] < 25))
    assert center > corner


def test_deterministic_bytes():
    c = config([TimePeriod((0, 50), {"g": Rect(0, 0, 50, 50)}, 0.7), TimePeriod((50, 100), {"g": FIELD}, 0.7)])
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        write_movement(generate_mobility(c, 9, 3000), buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]
    assert read_movement(io.StringIO(outs[0])).nodes == [f"n{i:03d}" for i in range(4)]


def test_node_stream_independent_of_population():
    a = generate_mobility(config(nodes=3), 5, 1000)
    b = generate_mobility(config(nodes=6), 5, 1000)
    for n in a.nodes:
        assert np.array_equal(a.waypoints[n][1], b.waypoints[n][1])


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_waypoints_inside_field_and_increasing(seed, p_local):
    small = Rect(10, 10, 30, 30)
    c = config([TimePeriod((0, 50), {"g": small}, p_local), TimePeriod((50, 100), {"g": Rect(60, 60, 90, 90)}, p_local)])
    tr = generate_mobility(c, seed, 2000)
    for ts, ps in tr.waypoints.values():
        assert (np.diff(ts) > 0).all()
        assert ((ps >= 0) & (ps <= 100)).all()
        assert ts[-1] == pytest.approx(2000)


def test_local_epochs_stay_in_rect_after_first_leg():
    r1, r2 = Rect(0, 0, 40, 40), Rect(60, 60, 100, 100)
    c = config([TimePeriod((0, 1000), {"g": r1}, 1.0), TimePeriod((1000, 2000), {"g": r2}, 1.0)],
               cycle=2000.0, pause_range=(5.0, 20.0))
    tr = generate_mobility(c, 2, 6000)
    for ts, ps in tr.waypoints.values():
        for t, (x, y) in zip(ts, ps):
            # every waypoint is in one of the two communities
            assert r1.contains(x, y) or r2.contains(x, y)


def test_periodic_reappearance():
    r1, r2 = Rect(0, 0, 25, 25), Rect(75, 75, 100, 100)
    c = config([TimePeriod((0, 3000), {"g": r1}, 0.9), TimePeriod((3000, 6000), {"g": r2}, 0.9)],
               cycle=6000.0, nodes=3, pause_range=(30.0, 120.0))
    step = 60.0
    tr = generate_mobility(c, 4, 60000)
    _, codes = sampled_cells(tr, c, step)
    lag = int(6000 / step)
    for i in range(3):
        assert occupancy_autocorrelation(codes[:, i], lag) > occupancy_autocorrelation(codes[:, i], lag // 2 + 1)


# -- sessions --------------------------------------------------------------

def test_stationary_single_session():
    d = movement_to_sessions(still({"a": (10, 10)}, 500), config())
    assert [(e.location, e.start, e.end) for e in d.events] == [("c000_000", 0, 500)]


def test_one_crossing_two_sessions():
    tr = MovementTrace({"a": (np.array([0.0, 100.0]), np.array([[10.0, 10.0], [40.0, 10.0]]))}, 100.0)
    ev = movement_to_sessions(tr, config()).events
    assert len(ev) == 2
    assert ev[0].end == ev[1].start == pytest.approx(50.0)


def test_empty_movement():
    assert movement_to_sessions(MovementTrace({}, 10.0), config()).is_empty


def test_min_dwell_drops_pass_through():
    # crosses cell (1,0) in 25 s, then rests in (2,0)
    tr = MovementTrace({"a": (np.array([0.0, 50.0, 1000.0]), np.array([[12.5, 5], [62.5, 5], [62.5, 5]]))}, 1000.0)
    kept = movement_to_sessions(tr, config(), min_dwell=30.0).events
    assert [e.location for e in kept] == ["c002_000"]


# -- contacts --------------------------------------------------------------

def test_stationary_pair_in_range():
    cs = movement_to_contacts(still({"a": (10, 10), "b": (11, 10)}, 100), config())
    assert cs == [Contact(0.0, "a", "b", 100.0)]


def test_stationary_pair_out_of_range():
    assert movement_to_contacts(still({"a": (10, 10), "b": (60, 10)}, 100), config()) == []


@pytest.mark.parametrize("step", [5.0, 1.0, 0.1])
def test_crossing_converges(step):
    # a walks y=0 at 1 m/s past b at (50, 5); range 10 -> in range for |x-50| <= sqrt(75)
    tr = MovementTrace({
        "a": (np.array([0.0, 100.0]), np.array([[0.0, 0.0], [100.0, 0.0]])),
        "b": (np.array([0.0, 100.0]), np.array([[50.0, 5.0], [50.0, 5.0]])),
    }, 100.0)
    cs = movement_to_contacts(tr, config(), step)
    assert len(cs) == 1
    lo, hi = 50 - math.sqrt(75), 50 + math.sqrt(75)
    assert abs(cs[0].start - lo) <= step and abs(cs[0].end - hi) <= step


def test_contact_io_roundtrip():
    cs = [Contact(0.0, "a", "b", 5.5), Contact(2.0, "b", "c", 3.0)]
    buf = io.StringIO()
    buf.write("# manifest x\nu,v,start,end\n")
    write_contacts(cs, buf)
    assert read_contacts(io.StringIO(buf.getvalue())) == cs


# -- empirical statistics --------------------------------------------------

def test_preference_single_cell():
    cell = Rect(30, 30, 45, 45)
    c = config([TimePeriod((0, 100), {"g": cell}, 1.0)], nodes=2)
    tr = generate_mobility(c, 1, 2000)
    st_ = empirical_statistics(tr, c, ["c001_001"], step=10.0)
    for pref in st_.location_preference.values():
        assert pref == {"c001_001": pytest.approx(1.0)}
    assert all(s.time == 0 and not s.censored for s in st_.hitting_time)


def test_colocated_meeting_zero_and_censoring():
    tr = still({"a": (10, 10), "b": (12, 10), "c": (90, 90)}, 1000)
    st_ = empirical_statistics(tr, config(), ["c003_003", "c000_000"], step=10.0)
    meet = {s.subject: s for s in st_.meeting_time}
    assert meet[("a", "b")].time == 0 and not meet[("a", "b")].censored
    assert meet[("a", "c")].censored and meet[("a", "c")].time == 1000
    hit = {s.subject: s for s in st_.hitting_time}
    assert hit[("c", "c003_003")].time == 0
    assert hit[("a", "c003_003")].censored
