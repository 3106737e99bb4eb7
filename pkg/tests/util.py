"""Shared builders for the engine and protocol tests."""

import numpy as np
from hypothesis import strategies as st

from profilecast.dtn import Message
from profilecast.profiling import BehavioralProfile, TargetProfile, interest_target
from profilecast.tvc import Contact

LOCS = ("L0", "L1", "L2")


def unit_profile(vec, user=None, locs=LOCS):
    v = np.asarray(vec, float)
    return BehavioralProfile((v / np.linalg.norm(v))[None, :], np.ones(1), tuple(locs), user)


def coupled(mid, src, created, ttl, vec, **kw):
    return Message(mid, src, float(created), float(ttl), TargetProfile("mobility_coupled", profile=unit_profile(vec)), **kw)


def tagged(mid, src, created, ttl, tag, **kw):
    return Message(mid, src, float(created), float(ttl), interest_target(tag), **kw)


@st.composite
def contact_traces(draw, max_nodes=6, max_contacts=10, horizon=50):
    n = draw(st.integers(2, max_nodes))
    nodes = [f"n{i}" for i in range(n)]
    k = draw(st.integers(0, max_contacts))
    cs = []
    for _ in range(k):
        u, v = draw(st.lists(st.sampled_from(nodes), min_size=2, max_size=2, unique=True))
        s = draw(st.integers(0, horizon))
        length = draw(st.integers(1, 10))
        cs.append(Contact(float(s), u, v, float(s + length)))
    return nodes, sorted(cs)


@st.composite
def node_profiles(draw, nodes):
    out = {}
    for n in nodes:
        vec = draw(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 0.1))
        out[n] = unit_profile(vec, n)
    return out
