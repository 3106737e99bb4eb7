"""Forwarding strategies for the dtn engine, plus the delay-optimal oracle.

A protocol is a small state machine. The engine calls, per contact and
carried message:

* ``request(carrier, msg, copy)`` - control record the carrier sends (or None)
* ``reply(peer, msg, request, has_payload)`` - computed on the peer with its
  own profile; may only hold scalars
* ``decide(carrier, msg, copy, reply, rng)`` - a :class:`Decision`
* ``on_acquire`` / ``acknowledge`` - peer-side hook when a copy lands, and
  the optional record it sends back to the carrier
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dtn import (
    DELIVER_ONLY,
    HANDOFF,
    REPLICATE,
    SKIP,
    Copy,
    Decision,
    MessageHeader,
    NodeView,
    matches_target,
    target_similarity,
)
from .profiling import MOBILITY_COUPLED, MOBILITY_INDEPENDENT
from .tvc import Contact

DEFAULT_DELTA = 0.5
DEFAULT_EPSILON = 0.2
DEFAULT_MAX_HOLDERS = 8
ASCENT = "ascent"
SPRAY = "spray"


class Protocol:
    name = "base"
    copy_budget_compliant = True

    def __init__(self, delta: float = DEFAULT_DELTA):
        self.delta = delta
        self._sim_cache: dict[tuple[str, str], float] = {}

    def _sim(self, view: NodeView, msg: MessageHeader) -> float:
        key = (view.node, msg.id)
        if key not in self._sim_cache:
            self._sim_cache[key] = target_similarity(view, msg.target)
        return self._sim_cache[key]

    def initial_state(self, source: NodeView, msg: MessageHeader) -> dict:
        return {}

    def request(self, carrier: NodeView, msg: MessageHeader, copy: Copy) -> dict | None:
        return None

    def reply(self, peer: NodeView, msg: MessageHeader, request, has_payload: bool = False) -> dict:
        return {"has_payload": has_payload}

    def decide(self, carrier: NodeView, msg: MessageHeader, copy: Copy, reply: Mapping, rng) -> Decision:
        raise NotImplementedError

    def on_acquire(self, peer: NodeView, msg: MessageHeader, state: dict):
        return state, None

    def acknowledge(self, carrier: NodeView, msg: MessageHeader, state: dict, ack: Mapping) -> dict:
        return state

    def accepts(self, node: NodeView, msg: MessageHeader) -> bool:
        if msg.target.mode == MOBILITY_INDEPENDENT:
            return msg.target.interest_tag in node.interest_tags
        return self._sim(node, msg) >= self.delta


class Epidemic(Protocol):
    name = "epidemic"

    def decide(self, carrier, msg, copy, reply, rng):
        # the engine never offers to a peer that already holds a copy
        if copy.can_replicate(msg.message):
            return Decision(REPLICATE)
        return Decision(SKIP)


def epidemic_on_contact(peer_has_message: bool, copy: Copy, message) -> str:
    if peer_has_message or not copy.can_replicate(message):
        return SKIP
    return REPLICATE


class RandomWalk(Protocol):
    name = "random_walk"

    def __init__(self, p_hand: float = 0.5, delta: float = DEFAULT_DELTA):
        super().__init__(delta)
        if not 0 <= p_hand <= 1:
            raise ValueError("p_hand must be in [0, 1]")
        self.p_hand = p_hand

    def decide(self, carrier, msg, copy, reply, rng):
        if rng.random() < self.p_hand and copy.can_hand_off(msg.message):
            return Decision(HANDOFF)
        return Decision(SKIP)


def _tp_units(msg: MessageHeader) -> int:
    p = msg.target.profile
    return p.rank * len(p.location_index) if p is not None else 1


class PCastT(Protocol):
    """Target mode: single-copy gradient ascent toward the target, then spray."""

    name = "pcast_t"

    def initial_state(self, source, msg):
        d = 1.0 - self._sim(source, msg)
        return {"best_distance": d, "phase": SPRAY if d <= 1.0 - self.delta else ASCENT}

    def request(self, carrier, msg, copy):
        # target eigenvectors plus the best distance so far
        return {"units": _tp_units(msg) + 1, "best_distance": copy.state["best_distance"]}

    def reply(self, peer, msg, request, has_payload=False):
        return {"distance": 1.0 - self._sim(peer, msg), "has_payload": has_payload}

    def decide(self, carrier, msg, copy, reply, rng):
        decision, state = pcast_t_on_contact(copy.state, reply["distance"], self.delta)
        if decision == HANDOFF and not copy.can_hand_off(msg.message):
            return Decision(SKIP)
        if decision == REPLICATE and not copy.can_replicate(msg.message):
            return Decision(SKIP)
        return Decision(decision, state)


def pcast_t_on_contact(state: Mapping, peer_distance: float, delta: float) -> tuple[str, dict]:
    """Pure PCast:T rule; returns (decision, state for the peer's copy)."""
    near = peer_distance <= 1.0 - delta
    if state["phase"] == ASCENT:
        if peer_distance < state["best_distance"]:
            return HANDOFF, {"best_distance": peer_distance, "phase": SPRAY if near else ASCENT}
        return SKIP, dict(state)
    if near:
        return REPLICATE, {"best_distance": min(state["best_distance"], peer_distance), "phase": SPRAY}
    return SKIP, dict(state)


def quantize(vec: np.ndarray) -> tuple[int, ...]:
    """Top-1 summary at 8 bits per coordinate (signed, scaled by 127)."""
    v = np.asarray(vec, dtype=float)
    if v.size and v[np.argmax(np.abs(v))] < 0:
        v = -v
    return tuple(int(x) for x in np.clip(np.round(v * 127), -127, 127))


def dequantize(q: Sequence[int]) -> np.ndarray:
    v = np.asarray(q, dtype=float)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def summary_similarity(view: NodeView, summary: Sequence[int]) -> float:
    if view.profile is None:
        return 0.0
    s = dequantize(summary)
    return float(view.profile.weights @ np.abs(view.profile.components @ s))


class PCastD(Protocol):
    """Dissemination mode: spread holders that are mutually dissimilar in behavior."""

    name = "pcast_d"

    def __init__(self, epsilon: float = DEFAULT_EPSILON, max_holders: int = DEFAULT_MAX_HOLDERS, delta: float = DEFAULT_DELTA):
        super().__init__(delta)
        if max_holders < 1:
            raise ValueError("max_holders must be >= 1")
        self.epsilon = epsilon
        self.max_holders = max_holders

    @staticmethod
    def _summary(view: NodeView):
        if view.profile is None:
            return None
        return quantize(view.profile.components[0])

    def initial_state(self, source, msg):
        s = self._summary(source)
        return {"holders": (s,) if s is not None else ()}

    def request(self, carrier, msg, copy):
        holders = copy.state["holders"]
        n = len(holders[0]) if holders else 1
        return {"units": max(1, len(holders) * n), "holders": tuple(holders)}

    def reply(self, peer, msg, request, has_payload=False):
        # evaluated peer-side; only the scalar outcome leaves the peer
        holders = request["holders"]
        max_sim = max((summary_similarity(peer, h) for h in holders), default=0.0)
        return {
            "max_similarity": max_sim,
            "tag_match": msg.target.interest_tag in peer.interest_tags,
            "has_payload": has_payload,
        }

    def decide(self, carrier, msg, copy, reply, rng):
        action = pcast_d_on_contact(
            len(copy.state["holders"]), reply["max_similarity"], reply["tag_match"],
            self.epsilon, self.max_holders, reply["has_payload"],
        )
        if action == REPLICATE and not copy.can_replicate(msg.message):
            action = DELIVER_ONLY if reply["tag_match"] and not reply["has_payload"] else SKIP
        return Decision(action, dict(copy.state) if action == REPLICATE else None)

    def on_acquire(self, peer, msg, state):
        s = self._summary(peer)
        if s is None:
            return state, None
        holders = tuple(state["holders"]) + (s,)
        return {"holders": holders}, {"units": len(s), "summary": s}

    def acknowledge(self, carrier, msg, state, ack):
        return {"holders": tuple(state["holders"]) + (ack["summary"],)}


def pcast_d_on_contact(
    holder_count: int,
    peer_max_similarity: float,
    tag_match: bool,
    epsilon: float,
    max_holders: int,
    has_payload: bool = False,
) -> str:
    """Pure PCast:D rule: add a dissimilar holder, else hand matching peers the payload."""
    if holder_count < max_holders and peer_max_similarity <= epsilon:
        return REPLICATE
    if tag_match and not has_payload:
        return DELIVER_ONLY
    return SKIP


ADD_HOLDER = REPLICATE


PROTOCOLS = {
    "epidemic": Epidemic,
    "random_walk": RandomWalk,
    "pcast_t": PCastT,
    "pcast_d": PCastD,
}


def make_protocol(name: str, **params) -> Protocol:
    if name not in PROTOCOLS:
        raise ValueError(f"unknown protocol {name!r}")
    cls = PROTOCOLS[name]
    allowed = {
        "epidemic": {"delta"},
        "random_walk": {"p_hand", "delta"},
        "pcast_t": {"delta"},
        "pcast_d": {"epsilon", "max_holders", "delta"},
    }[name]
    return cls(**{k: v for k, v in params.items() if k in allowed and v is not None})


# -- delay-optimal oracle ------------------------------------------------

@dataclass
class OracleResult:
    source: str
    created: float
    earliest_delivery: dict[str, float | None]  # None = unreachable
    transmissions: int | None = None
    storage: float | None = None

    def reachable(self) -> dict[str, float]:
        return {r: t for r, t in self.earliest_delivery.items() if t is not None}


class ContactIndex:
    """Per-node contact arrays sorted by end time, for repeated arrival queries."""

    def __init__(self, contacts: Sequence[Contact]):
        self.nodes = sorted({c.u for c in contacts} | {c.v for c in contacts})
        self.pos = {n: i for i, n in enumerate(self.nodes)}
        per: dict[int, list[tuple[float, float, int]]] = defaultdict(list)
        for c in contacts:
            a, b = self.pos[c.u], self.pos[c.v]
            per[a].append((c.end, c.start, b))
            per[b].append((c.end, c.start, a))
        self.ends, self.starts, self.peers, self.max_dur = {}, {}, {}, {}
        for i, rows in per.items():
            arr = np.array(sorted(rows), dtype=float).reshape(-1, 3)
            self.ends[i] = arr[:, 0]
            self.starts[i] = arr[:, 1]
            self.peers[i] = arr[:, 2].astype(np.int64)
            self.max_dur[i] = float((arr[:, 0] - arr[:, 1]).max())


def earliest_arrival(
    contacts: Sequence[Contact] | ContactIndex,
    source: str,
    created: float,
    deadline: float = math.inf,
) -> dict[str, float]:
    """Time-respecting earliest arrival times from ``source`` at ``created``.

    A contact (u, v, [s, e]) carries the message from a node reached at
    time t <= e to the other side at max(s, t). Label-setting search; arrival
    must be strictly before ``deadline``.
    """
    idx = contacts if isinstance(contacts, ContactIndex) else ContactIndex(contacts)
    if source not in idx.pos:
        return {source: created}
    reach = np.full(len(idx.nodes), np.inf)
    src = idx.pos[source]
    reach[src] = created
    heap = [(created, src)]
    done = np.zeros(len(idx.nodes), dtype=bool)
    while heap:
        t, x = heapq.heappop(heap)
        if done[x]:
            continue
        done[x] = True
        if x not in idx.ends:
            continue
        ends = idx.ends[x]
        lo = int(np.searchsorted(ends, t, side="left"))
        # contacts ending past deadline + longest duration start after the deadline
        hi = int(np.searchsorted(ends, deadline + idx.max_dur[x], side="right"))
        if lo >= hi:
            continue
        arr = np.maximum(idx.starts[x][lo:hi], t)
        peers = idx.peers[x][lo:hi]
        ok = (arr < deadline) & ~done[peers]
        if not ok.any():
            continue
        arr, peers = arr[ok], peers[ok]
        before = reach[peers].copy()
        np.minimum.at(reach, peers, arr)
        for y in np.unique(peers[reach[peers] < before]):
            heapq.heappush(heap, (float(reach[y]), int(y)))
    return {idx.nodes[i]: float(reach[i]) for i in np.flatnonzero(np.isfinite(reach))}


def oracle_delays(
    contacts: Sequence[Contact] | ContactIndex,
    source: str,
    created: float,
    receivers: Iterable[str],
    ttl: float | None = None,
) -> OracleResult:
    if not isinstance(contacts, ContactIndex):
        for a, b in zip(contacts, contacts[1:]):
            if b.start < a.start:
                raise ValueError("contacts must be sorted by start time")
    deadline = created + ttl if ttl is not None else math.inf
    reach = earliest_arrival(contacts, source, created, deadline)
    return OracleResult(source, created, {r: reach.get(r) for r in sorted(receivers)})


def matches(view: NodeView, msg: MessageHeader, delta: float) -> bool:
    return matches_target(view, msg.target, delta)


def oracle_report(contacts: Sequence[Contact], workload, sim_config, horizon: float | None = None):
    """Delay-optimal reference: earliest-arrival delivery plus the full flood's overhead.

    Delivery and delay come from the earliest-arrival search; transmissions
    and storage are those of the unbudgeted epidemic flood that realizes it.
    """
    from .dtn import Message, Simulator, MetricsReport, MessageMetrics

    flood_msgs = [Message(m.id, m.source, m.created, m.ttl, m.target) for m in workload]
    sim = Simulator(contacts, Epidemic(sim_config.delta), flood_msgs, sim_config)
    _, flood = sim.run()
    truth = sim.truth
    rows = []
    by_id = {r.message_id: r for r in flood.messages}
    index = ContactIndex(contacts)
    for m in sorted(workload, key=lambda m: (m.created, m.id)):
        res = oracle_delays(index, m.source, m.created, truth[m.id], m.ttl)
        reach = res.reachable()
        delays = [t - m.created for _, t in sorted(reach.items())]
        recv = len(truth[m.id])
        f = by_id[m.id]
        rows.append(MessageMetrics(
            message_id=m.id,
            receivers=recv,
            delivered=len(delays),
            delivery_ratio=len(delays) / recv if recv else None,
            mean_delay=float(np.mean(delays)) if delays else None,
            transmissions=f.transmissions,
            control_messages=0,
            control_units=0,
            storage=f.storage,
            peak_copies=f.peak_copies,
            false_accepts=0,
            delays=delays,
        ))
    ratios = [r.delivery_ratio for r in rows if r.delivery_ratio is not None]
    all_delays = [d for r in rows for d in r.delays]
    return MetricsReport(
        messages=rows,
        delivery_ratio=float(np.mean(ratios)) if ratios else None,
        mean_delay=float(np.mean(all_delays)) if all_delays else None,
        transmissions=sum(r.transmissions for r in rows),
        control_messages=0,
        control_units=0,
        storage=float(sum(r.storage for r in rows)),
        peak_copies=max((r.peak_copies for r in rows), default=0),
        excluded=[r.message_id for r in rows if r.receivers == 0],
    )
