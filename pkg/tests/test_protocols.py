import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from profilecast.dtn import Copy, Message, SimConfig, run_simulation, HANDOFF, REPLICATE, SKIP, DELIVER_ONLY
from profilecast.protocols import (
    ASCENT,
    SPRAY,
    ContactIndex,
    Epidemic,
    PCastD,
    PCastT,
    RandomWalk,
    dequantize,
    earliest_arrival,
    epidemic_on_contact,
    make_protocol,
    oracle_delays,
    pcast_d_on_contact,
    pcast_t_on_contact,
    quantize,
)
from profilecast.tvc import Contact
from util import contact_traces, coupled, node_profiles, tagged, unit_profile


# -- pure decision rules ---------------------------------------------------

def test_pcast_t_rule_examples():
    d, s = pcast_t_on_contact({"best_distance": 0.7, "phase": ASCENT}, 0.4, 0.5)
    assert d == HANDOFF and s == {"best_distance": 0.4, "phase": SPRAY}
    d, s = pcast_t_on_contact({"best_distance": 0.7, "phase": ASCENT}, 0.9, 0.5)
    assert d == SKIP and s["best_distance"] == 0.7
    d, s = pcast_t_on_contact({"best_distance": 0.7, "phase": ASCENT}, 0.6, 0.5)
    assert d == HANDOFF and s["phase"] == ASCENT
    assert pcast_t_on_contact({"best_distance": 0.2, "phase": SPRAY}, 0.3, 0.5)[0] == REPLICATE
    assert pcast_t_on_contact({"best_distance": 0.2, "phase": SPRAY}, 0.8, 0.5)[0] == SKIP


def test_pcast_d_rule_examples():
    assert pcast_d_on_contact(2, 0.05, False, 0.1, 5) == REPLICATE
    assert pcast_d_on_contact(2, 0.8, True, 0.1, 5) == DELIVER_ONLY
    assert pcast_d_on_contact(2, 0.8, True, 0.1, 5, has_payload=True) == SKIP
    assert pcast_d_on_contact(2, 0.8, False, 0.1, 5) == SKIP
    for sim in (0.0, 0.05, 0.1):
        assert pcast_d_on_contact(5, sim, False, 0.1, 5) == SKIP


def test_epidemic_rule_examples():
    m = Message("m", "a", 0.0, 1.0, None, max_copies=4)
    assert epidemic_on_contact(False, Copy(0, 4, {}, 0.0), m) == REPLICATE
    assert epidemic_on_contact(True, Copy(0, 4, {}, 0.0), m) == SKIP
    assert epidemic_on_contact(False, Copy(0, 1, {}, 0.0), m) == SKIP


def test_make_protocol():
    assert isinstance(make_protocol("pcast_d", epsilon=0.3, p_hand=0.2), PCastD)
    with pytest.raises(ValueError):
        make_protocol("prophet")
    with pytest.raises(ValueError):
        RandomWalk(1.5)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=12).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_quantize_roundtrip(v):
    v = np.asarray(v) / np.linalg.norm(v)
    w = dequantize(quantize(v))
    # sign-free comparison, 8-bit coordinates
    assert abs(abs(v @ w) - 1) < 2e-3 * len(v)


# -- random walk -----------------------------------------------------------

def walk_chain():
    return [Contact(float(t), *pair, float(t) + 0.5) for t, pair in enumerate([("A", "B"), ("B", "C"), ("C", "A"), ("A", "B")], 1)]


def test_random_walk_extremes():
    cfg = SimConfig(truth={"m": {"B", "C"}}, nodes=["A", "B", "C"], seed=3)
    m = [coupled("m", "A", 0, 100, [1, 0, 0])]
    log, rep = run_simulation(walk_chain(), RandomWalk(1.0), m, cfg)
    hops = [(r["from"], r["to"]) for r in log if r["kind"] == "transmit"]
    assert hops == [("A", "B"), ("B", "C"), ("C", "A"), ("A", "B")]
    assert rep.peak_copies == 1
    log, rep = run_simulation(walk_chain(), RandomWalk(0.0), m, cfg)
    assert rep.transmissions == 0 and rep.delivery_ratio == 0.0


def test_random_walk_seeded():
    cs = [Contact(float(t), f"n{t % 5}", f"n{(t * 3 + 1) % 5}", t + 0.5) for t in range(60) if t % 5 != (t * 3 + 1) % 5]
    nodes = [f"n{i}" for i in range(5)]
    m = [coupled("m", "n0", 0, 100, [1, 0, 0])]

    def custody(seed):
        log, rep = run_simulation(cs, RandomWalk(0.5), m, SimConfig(truth={"m": set(nodes[1:])}, nodes=nodes, seed=seed))
        assert rep.peak_copies == 1
        return [(r["t"], r["to"]) for r in log if r["kind"] == "transmit"]

    assert custody(5) == custody(5)
    assert custody(5) != custody(6)


# -- pcast_t behavior ------------------------------------------------------

class RecordingT(PCastT):
    def __init__(self, *a, **k):
        super().__init__(*a, **k)
        self.steps = []

    def decide(self, carrier, msg, copy, reply, rng):
        dec = super().decide(carrier, msg, copy, reply, rng)
        self.steps.append((copy.state["best_distance"], dec.action, (dec.state or {}).get("best_distance")))
        return dec


@settings(max_examples=60)
@given(contact_traces(), st.data())
def test_best_distance_non_increasing(trace, data):
    nodes, cs = trace
    profs = data.draw(node_profiles(nodes))
    vec = data.draw(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 0.1))
    proto = RecordingT(0.5)
    log, rep = run_simulation(cs, proto, [coupled("m", nodes[0], 0, 100, vec)], SimConfig(profiles=profs, nodes=nodes))
    for before, action, after in proto.steps:
        if action in (HANDOFF, REPLICATE):
            assert after <= before
    # ascent keeps one copy until the neighbourhood is reached
    if not any(a == REPLICATE for _, a, _ in proto.steps):
        assert rep.messages[0].peak_copies <= 1


def test_pcast_t_climbs_to_target():
    # A -> B -> C with increasing similarity to the target; D is dissimilar
    profs = {"A": unit_profile([0, 0, 1], "A"), "B": unit_profile([1, 0, 2], "B"),
             "C": unit_profile([1, 0, 0], "C"), "D": unit_profile([0, 1, 0], "D"),
             "E": unit_profile([1, 0.2, 0], "E")}
    cs = [Contact(1.0, "A", "D", 1.5), Contact(2.0, "A", "B", 2.5), Contact(3.0, "B", "C", 3.5), Contact(4.0, "C", "E", 4.5)]
    m = coupled("m", "A", 0, 100, [1, 0, 0])
    log, rep = run_simulation(cs, PCastT(0.5), [m], SimConfig(profiles=profs))
    moves = [(r["from"], r["to"], r["action"]) for r in log if r["kind"] == "transmit"]
    assert moves == [("A", "B", HANDOFF), ("B", "C", HANDOFF), ("C", "E", REPLICATE)]
    assert {r["to"] for r in log if r["kind"] == "deliver"} == {"C", "E"}


# -- pcast_d behavior ------------------------------------------------------

class RecordingD(PCastD):
    def __init__(self, *a, **k):
        super().__init__(*a, **k)
        self.adds = []

    def decide(self, carrier, msg, copy, reply, rng):
        dec = super().decide(carrier, msg, copy, reply, rng)
        if dec.action == REPLICATE:
            self.adds.append((len(copy.state["holders"]), reply["max_similarity"]))
        return dec


@settings(max_examples=60)
@given(contact_traces(max_nodes=6, max_contacts=14), st.data(), st.floats(0.05, 0.6), st.integers(1, 4))
def test_holder_list_rule(trace, data, eps, k):
    nodes, cs = trace
    profs = data.draw(node_profiles(nodes))
    tags = {n: {data.draw(st.sampled_from(["x", "y"]))} for n in nodes}
    proto = RecordingD(eps, k)
    log, rep = run_simulation(cs, proto, [tagged("m", nodes[0], 0, 100, "x")],
                              SimConfig(profiles=profs, interest_tags=tags, nodes=nodes))
    for holders, sim in proto.adds:
        assert holders < k and sim <= eps
    delivered = {r["to"] for r in log if r["kind"] == "deliver"}
    assert all("x" in tags[n] for n in delivered)


def test_pcast_d_deliver_only_keeps_holders():
    profs = {"A": unit_profile([1, 0, 0], "A"), "B": unit_profile([1, 0.1, 0], "B"), "C": unit_profile([0, 0, 1], "C")}
    tags = {"A": {"x"}, "B": {"x"}, "C": {"y"}}
    cs = [Contact(1.0, "A", "B", 1.5), Contact(2.0, "A", "C", 2.5)]
    log, rep = run_simulation(cs, PCastD(0.2, 4), [tagged("m", "A", 0, 100, "x")],
                              SimConfig(profiles=profs, interest_tags=tags))
    moves = [(r["to"], r["action"]) for r in log if r["kind"] == "transmit"]
    assert moves == [("B", DELIVER_ONLY), ("C", REPLICATE)]
    assert rep.delivery_ratio == 1.0
    assert rep.messages[0].peak_copies == 2


# -- control channel -------------------------------------------------------

@settings(max_examples=30)
@given(contact_traces(), st.data())
def test_control_records_carry_no_profile(trace, data):
    nodes, cs = trace
    profs = data.draw(node_profiles(nodes))
    tags = {n: {"x"} for n in nodes}
    wl = [coupled("a", nodes[0], 0, 100, [1, 0, 0]), tagged("b", nodes[-1], 0, 100, "x")]
    for proto in (PCastT(0.5), PCastD(0.3, 3)):
        log, _ = run_simulation(cs, proto, wl, SimConfig(profiles=profs, interest_tags=tags, nodes=nodes))
        for r in log:
            if r["kind"] == "control":
                assert set(r) == {"t", "kind", "from", "to", "message", "bytes", "what"}
                assert r["what"] in ("request", "reply", "ack")
                if r["what"] == "reply":
                    assert r["bytes"] == 1


# -- oracle ----------------------------------------------------------------

def enumerate_arrivals(contacts, source, created):
    """Earliest arrival over every time-respecting path, by brute force."""
    best = {source: created}

    def walk(node, t, used):
        for i, c in enumerate(contacts):
            if i in used or node not in (c.u, c.v) or c.end < t:
                continue
            other = c.v if c.u == node else c.u
            arrive = max(c.start, t)
            if arrive < best.get(other, math.inf):
                best[other] = arrive
            walk(other, arrive, used | {i})

    walk(source, created, frozenset())
    return best


@settings(max_examples=200)
@given(contact_traces(max_nodes=6, max_contacts=10), st.data())
def test_oracle_matches_enumeration(trace, data):
    nodes, cs = trace
    src = data.draw(st.sampled_from(nodes))
    created = data.draw(st.integers(0, 40))
    brute = enumerate_arrivals(cs, src, float(created))
    res = oracle_delays(cs, src, float(created), nodes)
    for n in nodes:
        assert res.earliest_delivery[n] == brute.get(n)


def test_oracle_deadline_and_index():
    cs = [Contact(1.0, "A", "B", 1.5), Contact(2.0, "B", "C", 2.5)]
    assert earliest_arrival(cs, "A", 0.0) == {"A": 0.0, "B": 1.0, "C": 2.0}
    res = oracle_delays(ContactIndex(cs), "A", 0.0, ["B", "C"], ttl=1.5)
    assert res.earliest_delivery == {"B": 1.0, "C": None}
    assert res.reachable() == {"B": 1.0}
    with pytest.raises(ValueError):
        oracle_delays(cs[::-1], "A", 0.0, ["C"])


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_epidemic_equals_oracle_50_nodes(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 51))
    nodes = [f"n{i}" for i in range(n)]
    cs = []
    for _ in range(int(rng.integers(20, 250))):
        u, v = rng.choice(n, 2, replace=False)
        s = float(rng.integers(0, 500))
        cs.append(Contact(s, nodes[u], nodes[v], s + float(rng.integers(1, 30))))
    cs.sort()
    src = nodes[int(rng.integers(n))]
    created, ttl = float(rng.integers(0, 200)), float(rng.integers(10, 400))
    log, _ = run_simulation(cs, Epidemic(), [coupled("m", src, created, ttl, [1, 0, 0])],
                            SimConfig(truth={"m": set(nodes) - {src}}, nodes=nodes))
    got = {r["to"]: r["t"] for r in log if r["kind"] == "deliver"}
    want = oracle_delays(cs, src, created, set(nodes) - {src}, ttl=ttl).reachable()
    assert got == want


@settings(max_examples=40)
@given(contact_traces(max_nodes=6, max_contacts=14), st.data(), st.integers(0, 3))
def test_oracle_lower_bounds_every_protocol(trace, data, which):
    nodes, cs = trace
    profs = data.draw(node_profiles(nodes))
    proto = [Epidemic(), RandomWalk(0.7), PCastT(0.3), PCastD(0.4, 3)][which]
    tags = {n: {"x"} for n in nodes}
    src = data.draw(st.sampled_from(nodes))
    m = coupled("m", src, 0, 60, [1, 1, 0]) if which < 3 else tagged("m", src, 0, 60, "x")
    log, _ = run_simulation(cs, proto, [m], SimConfig(profiles=profs, interest_tags=tags, nodes=nodes, delta=0.3))
    floor = oracle_delays(cs, src, 0.0, nodes, ttl=60).earliest_delivery
    for r in log:
        if r["kind"] == "deliver":
            assert floor[r["to"]] is not None and r["t"] >= floor[r["to"]]
