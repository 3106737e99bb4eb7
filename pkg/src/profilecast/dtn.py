"""Deterministic store-carry-forward engine replaying a contact trace."""

from __future__ import annotations

import csv
import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .profiling import (
    MOBILITY_COUPLED,
    MOBILITY_INDEPENDENT,
    BehavioralProfile,
    TargetProfile,
    align_to,
    interest_target,
    similarity,
    target_profile_from_spec,
)
from .tvc import Contact

REPLICATE = "replicate"
HANDOFF = "handoff"
DELIVER_ONLY = "deliver_only"
SKIP = "skip"

_SCALARS = (bool, int, float, str, type(None))


class SimulationError(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass
class Message:
    id: str
    source: str
    created: float
    ttl: float
    target: TargetProfile
    max_hops: int | None = None
    max_copies: int | None = None

    def __post_init__(self):
        if not self.ttl > 0:
            raise ValueError(f"message {self.id}: ttl must be > 0")
        for name in ("max_hops", "max_copies"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ValueError(f"message {self.id}: {name} must be >= 1")

    @property
    def expires(self) -> float:
        return self.created + self.ttl


@dataclass
class Copy:
    hops: int
    tokens: int | None  # share of the copy budget; None when unlimited
    state: dict
    acquired: float

    def can_replicate(self, message: Message) -> bool:
        if message.max_hops is not None and self.hops + 1 > message.max_hops:
            return False
        return self.tokens is None or self.tokens >= 2

    def can_hand_off(self, message: Message) -> bool:
        return message.max_hops is None or self.hops + 1 <= message.max_hops


@dataclass(frozen=True)
class NodeView:
    """Everything a protocol may read about the node it is running on."""

    node: str
    profile: BehavioralProfile | None
    interest_tags: frozenset[str] = frozenset()


@dataclass
class Decision:
    action: str
    state: dict | None = None  # state handed to the peer's new copy
    carrier_state: dict | None = None  # replacement state for the carrier's copy


@dataclass
class NodeState:
    node: str
    view: NodeView
    buffer: dict[str, Copy] = field(default_factory=dict)
    delivered: set[str] = field(default_factory=set)
    received: set[str] = field(default_factory=set)
    opted_out: bool = False


def target_similarity(view: NodeView, target: TargetProfile) -> float:
    if target.mode != MOBILITY_COUPLED or view.profile is None:
        return 0.0
    return similarity(view.profile, target.profile)


def matches_target(view: NodeView, target: TargetProfile, delta: float) -> bool:
    if target.mode == MOBILITY_INDEPENDENT:
        return target.interest_tag in view.interest_tags
    return target_similarity(view, target) >= delta


def ground_truth_receivers(
    workload: Sequence[Message],
    profiles: Mapping[str, BehavioralProfile],
    delta: float,
    interest_tags: Mapping[str, Iterable[str]] | None = None,
    nodes: Iterable[str] | None = None,
    exclude: Iterable[str] = (),
) -> dict[str, set[str]]:
    """Evaluator-side receiver sets from global knowledge of every profile."""
    interest_tags = interest_tags or {}
    universe = sorted(set(nodes) if nodes is not None else set(profiles) | set(interest_tags))
    excluded = set(exclude)
    loc_universe = common_universe(list(profiles.values()) + [m.target.profile for m in workload if m.target.profile])
    views = {
        n: NodeView(
            n,
            align_to(profiles[n], loc_universe) if n in profiles else None,
            frozenset(interest_tags.get(n, ())),
        )
        for n in universe
    }
    out = {}
    for m in workload:
        target = align_target(m.target, loc_universe)
        out[m.id] = {
            n for n, v in views.items()
            if n != m.source and n not in excluded and matches_target(v, target, delta)
        }
    return out


def common_universe(profiles: Iterable[BehavioralProfile]) -> tuple[str, ...]:
    locs: set[str] = set()
    for p in profiles:
        locs.update(p.location_index)
    return tuple(sorted(locs))


def align_target(target: TargetProfile, universe: Sequence[str]) -> TargetProfile:
    if target.mode != MOBILITY_COUPLED:
        return target
    return TargetProfile(MOBILITY_COUPLED, profile=align_to(target.profile, universe))


@dataclass
class SimConfig:
    profiles: Mapping[str, BehavioralProfile] = field(default_factory=dict)
    interest_tags: Mapping[str, Iterable[str]] = field(default_factory=dict)
    delta: float = 0.5
    truth: Mapping[str, set[str]] | None = None
    opted_out: Iterable[str] = ()
    seed: int = 0
    horizon: float | None = None
    buffer_capacity: int | None = None
    nodes: Iterable[str] | None = None


@dataclass
class MessageMetrics:
    message_id: str
    receivers: int
    delivered: int
    delivery_ratio: float | None
    mean_delay: float | None
    transmissions: int
    control_messages: int
    control_units: int
    storage: float
    peak_copies: int
    false_accepts: int
    delays: list[float] = field(default_factory=list, repr=False)


@dataclass
class MetricsReport:
    messages: list[MessageMetrics]
    delivery_ratio: float | None
    mean_delay: float | None
    transmissions: int
    control_messages: int
    control_units: int
    storage: float
    peak_copies: int
    excluded: list[str]  # messages with an empty receiver set
    budget_violations: int = 0


class Simulator:
    def __init__(self, contacts: Sequence[Contact], protocol, workload: Sequence[Message], config: SimConfig):
        self.contacts = list(contacts)
        for a, b in zip(self.contacts, self.contacts[1:]):
            if b.start < a.start:
                raise SimulationError("contacts must be sorted by start time")
        self.protocol = protocol
        self.config = config
        nodes = set(config.nodes) if config.nodes is not None else set(config.profiles) | set(config.interest_tags)
        for c in self.contacts:
            nodes.add(c.u)
            nodes.add(c.v)
        unknown = sorted({m.source for m in workload} - nodes)
        if unknown:
            raise SimulationError(f"workload references unknown nodes: {unknown}")
        targets = [m.target.profile for m in workload if m.target.profile is not None]
        self.universe = common_universe(list(config.profiles.values()) + targets)
        self.workload = sorted(workload, key=lambda m: (m.created, m.id))
        self.messages = {m.id: m for m in self.workload}
        if len(self.messages) != len(self.workload):
            raise SimulationError("duplicate message ids in workload")
        self.targets = {m.id: align_target(m.target, self.universe) for m in self.workload}
        opted = set(config.opted_out)
        tags = config.interest_tags
        self.nodes: dict[str, NodeState] = {}
        for n in sorted(nodes):
            prof = config.profiles.get(n)
            view = NodeView(n, align_to(prof, self.universe) if prof is not None else None, frozenset(tags.get(n, ())))
            self.nodes[n] = NodeState(n, view, opted_out=n in opted)
        if config.truth is None:
            self.truth = ground_truth_receivers(
                self.workload, config.profiles, config.delta, tags, nodes=self.nodes, exclude=opted
            )
        else:
            self.truth = {k: set(v) for k, v in config.truth.items()}
        self.rng = random.Random(config.seed)
        self.log: list[dict] = []
        self.copies: dict[str, int] = {}
        self.budget_violations = 0
        self._active: dict[str, dict[str, int]] = {n: {} for n in self.nodes}
        self._contact_end: dict[int, float] = {}
        self._evaluated: dict[int, set[tuple[str, str]]] = {}

    # -- logging -------------------------------------------------------
    def _emit(self, t, kind, frm, to, mid, units=0, **extra):
        rec = {"t": t, "kind": kind, "from": frm, "to": to, "message": mid, "bytes": units}
        rec.update(extra)
        self.log.append(rec)

    # -- copy bookkeeping ----------------------------------------------
    def _store(self, node: NodeState, mid: str, copy: Copy, t: float):
        cap = self.config.buffer_capacity
        if cap is not None and len(node.buffer) >= cap:
            oldest = min(node.buffer, key=lambda k: (node.buffer[k].acquired, k))
            self._drop(node, oldest, t, "buffer_full")
        node.buffer[mid] = copy
        self.copies[mid] = self.copies.get(mid, 0) + 1
        m = self.messages[mid]
        if m.max_copies is not None and self.copies[mid] > m.max_copies and self.protocol.copy_budget_compliant:
            self.budget_violations += 1
        if m.max_hops is not None and copy.hops > m.max_hops:
            self.budget_violations += 1

    def _drop(self, node: NodeState, mid: str, t: float, reason: str):
        del node.buffer[mid]
        self.copies[mid] -= 1
        self._emit(t, "drop", node.node, None, mid, reason=reason)

    def _receive_payload(self, node: NodeState, mid: str, t: float):
        if mid in node.received:
            return
        node.received.add(mid)
        if node.node in self.truth.get(mid, ()) and mid not in node.delivered:
            node.delivered.add(mid)
            self._emit(t, "deliver", None, node.node, mid)

    # -- protocol interaction ------------------------------------------
    def _offer(self, carrier: NodeState, peer: NodeState, mid: str, t: float) -> bool:
        """Run one carrier->peer decision; True if the peer now holds a copy."""
        m = self.messages[mid]
        copy = carrier.buffer[mid]
        if t >= m.expires or mid in peer.buffer or peer.opted_out:
            return False
        header = self.targets[mid]
        msg = MessageHeader(m, header)
        request = self.protocol.request(carrier.view, msg, copy)
        if request is not None:
            self._emit(t, "control", carrier.node, peer.node, mid, int(request.get("units", 1)), what="request")
        reply = self.protocol.reply(peer.view, msg, request, has_payload=mid in peer.received)
        if request is not None:
            for key, val in reply.items():
                if not isinstance(val, _SCALARS):
                    raise ProtocolError(f"reply field {key!r} is not a scalar; profiles must stay local")
            self._emit(t, "control", peer.node, carrier.node, mid, 1, what="reply")
        decision = self.protocol.decide(carrier.view, msg, copy, reply, self.rng)
        if decision.carrier_state is not None:
            copy.state = decision.carrier_state
        action = decision.action
        if action == SKIP:
            return False
        accepted = self.protocol.accepts(peer.view, msg)
        self._emit(t, "transmit", carrier.node, peer.node, mid, 1, action=action, accepted=accepted)
        if action == DELIVER_ONLY:
            self._receive_payload(peer, mid, t)
            return False
        state = dict(decision.state if decision.state is not None else copy.state)
        if action == REPLICATE:
            if copy.tokens is None:
                share = None
            else:
                share = copy.tokens // 2
                copy.tokens -= share
            new = Copy(copy.hops + 1, share, state, t)
        elif action == HANDOFF:
            new = Copy(copy.hops + 1, copy.tokens, state, t)
            self._drop(carrier, mid, t, "handoff")
        else:
            raise ProtocolError(f"unknown action {action!r}")
        new.state, ack = self.protocol.on_acquire(peer.view, msg, new.state)
        if ack is not None and mid in carrier.buffer:
            carrier.buffer[mid].state = self.protocol.acknowledge(carrier.view, msg, carrier.buffer[mid].state, ack)
            self._emit(t, "control", peer.node, carrier.node, mid, int(ack.get("units", 1)), what="ack")
        self._store(peer, mid, new, t)
        self._receive_payload(peer, mid, t)
        return True

    def _drain(self, pending: deque, t: float):
        while pending:
            cid, x, y, mid = pending.popleft()
            seen = self._evaluated.get(cid)
            if seen is None or (mid, x) in seen:
                continue
            carrier = self.nodes[x]
            if mid not in carrier.buffer:
                continue
            seen.add((mid, x))
            if self._offer(carrier, self.nodes[y], mid, t):
                # no bouncing the copy back over the contact it arrived on
                seen.add((mid, y))
                for z in sorted(self._active[y]):
                    pending.append((self._active[y][z], y, z, mid))

    # -- main loop -----------------------------------------------------
    def run(self) -> tuple[list[dict], MetricsReport]:
        events = []
        for m in self.workload:
            events.append((m.created, 1, m.id, "create", m))
            events.append((m.expires, 0, m.id, "expire", m))
        for cid, c in enumerate(self.contacts):
            u, v = sorted((c.u, c.v))
            events.append((c.start, 2, f"{u}|{v}|{cid:09d}", "start", cid))
            events.append((c.end, 3, f"{u}|{v}|{cid:09d}", "end", cid))
        heapq.heapify(events)
        horizon = self.config.horizon
        while events:
            t, _, _, kind, obj = heapq.heappop(events)
            if horizon is not None and t > horizon:
                break
            if kind == "expire":
                for node in self.nodes.values():
                    if obj.id in node.buffer:
                        self._drop(node, obj.id, t, "expired")
            elif kind == "create":
                self._create(obj, t)
            elif kind == "start":
                self._start(obj, t)
            else:
                c = self.contacts[obj]
                for a, b in ((c.u, c.v), (c.v, c.u)):
                    if self._active[a].get(b) == obj:
                        del self._active[a][b]
                self._evaluated.pop(obj, None)
        if horizon is None:
            horizon = max([m.expires for m in self.workload] + [c.end for c in self.contacts] + [0.0])
        report = compute_metrics(self.log, self.truth, horizon, self.workload)
        report.budget_violations = self.budget_violations
        return self.log, report

    def _create(self, m: Message, t: float):
        src = self.nodes[m.source]
        msg = MessageHeader(m, self.targets[m.id])
        state = self.protocol.initial_state(src.view, msg)
        self._emit(t, "create", m.source, None, m.id, created=m.created)
        src.received.add(m.id)
        self._store(src, m.id, Copy(0, m.max_copies, state, t), t)
        pending = deque((self._active[m.source][z], m.source, z, m.id) for z in sorted(self._active[m.source]))
        self._drain(pending, t)

    def _start(self, cid: int, t: float):
        c = self.contacts[cid]
        if c.u not in self.nodes or c.v not in self.nodes:
            return
        u, v = sorted((c.u, c.v))
        self._active[u][v] = cid
        self._active[v][u] = cid
        self._evaluated[cid] = set()
        pending = deque()
        for x, y in ((u, v), (v, u)):
            for mid in sorted(self.nodes[x].buffer):
                pending.append((cid, x, y, mid))
        self._drain(pending, t)


@dataclass(frozen=True)
class MessageHeader:
    """Message as seen by protocols: budgets plus a target aligned to the run's location universe."""

    message: Message
    target: TargetProfile

    @property
    def id(self) -> str:
        return self.message.id


def run_simulation(contacts, protocol, workload, sim_config: SimConfig) -> tuple[list[dict], MetricsReport]:
    return Simulator(contacts, protocol, workload, sim_config).run()


def compute_metrics(
    log: Sequence[Mapping],
    truth: Mapping[str, set[str]],
    horizon: float,
    messages: Sequence[Message] | None = None,
) -> MetricsReport:
    created: dict[str, float] = {}
    if messages is not None:
        created = {m.id: m.created for m in messages}
    for rec in log:
        if rec["kind"] == "create":
            created.setdefault(rec["message"], rec["t"])
    ids = list(created)
    per = {mid: dict(tx=0, ctl=0, units=0, storage=0.0, peak=0, live=0, delays=[], fa=set()) for mid in ids}
    holding: dict[tuple[str, str], float] = {}
    for rec in log:
        mid, kind, t = rec["message"], rec["kind"], min(rec["t"], horizon)
        if mid not in per:
            continue
        p = per[mid]
        if kind == "create" or (kind == "transmit" and rec.get("action") in (REPLICATE, HANDOFF)):
            holder = rec["from"] if kind == "create" else rec["to"]
            holding[(mid, holder)] = t
            p["live"] += 1
            # a handoff moves the copy: the carrier's drop follows at the same instant
            moving = kind == "transmit" and rec["action"] == HANDOFF
            p["peak"] = max(p["peak"], p["live"] - moving)
        elif kind == "drop":
            start = holding.pop((mid, rec["from"]), None)
            if start is not None:
                p["storage"] += t - start
                p["live"] -= 1
        if kind == "transmit":
            p["tx"] += 1
            if rec.get("accepted") and rec["to"] not in truth.get(mid, ()):
                p["fa"].add(rec["to"])
        elif kind == "control":
            p["ctl"] += 1
            p["units"] += rec.get("bytes", 0)
        elif kind == "deliver":
            p["delays"].append(rec["t"] - created[mid])
    for (mid, _), start in holding.items():
        per[mid]["storage"] += max(horizon - start, 0.0)
    rows = []
    excluded = []
    for mid in ids:
        p = per[mid]
        recv = len(truth.get(mid, ()))
        delays = p["delays"]
        if recv == 0:
            excluded.append(mid)
        rows.append(MessageMetrics(
            message_id=mid,
            receivers=recv,
            delivered=len(delays),
            delivery_ratio=len(delays) / recv if recv else None,
            mean_delay=float(np.mean(delays)) if delays else None,
            transmissions=p["tx"],
            control_messages=p["ctl"],
            control_units=p["units"],
            storage=p["storage"],
            peak_copies=p["peak"],
            false_accepts=len(p["fa"]),
            delays=delays,
        ))
    ratios = [r.delivery_ratio for r in rows if r.delivery_ratio is not None]
    all_delays = [d for r in rows for d in r.delays]
    return MetricsReport(
        messages=rows,
        delivery_ratio=float(np.mean(ratios)) if ratios else None,
        mean_delay=float(np.mean(all_delays)) if all_delays else None,
        transmissions=sum(r.transmissions for r in rows),
        control_messages=sum(r.control_messages for r in rows),
        control_units=sum(r.control_units for r in rows),
        storage=float(sum(r.storage for r in rows)),
        peak_copies=max((r.peak_copies for r in rows), default=0),
        excluded=excluded,
    )


METRICS_COLUMNS = [
    "protocol", "seed", "message_id", "receivers", "delivered", "delivery_ratio", "mean_delay",
    "transmissions", "control_messages", "control_units", "storage", "peak_copies", "false_accepts",
]
AGGREGATE_ID = "__all__"


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(round(x, 9))
    return str(x)


def write_metrics(rows: Iterable[tuple[str, int, MetricsReport]], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for protocol, seed, rep in rows:
        for r in rep.messages:
            w.writerow([_cell(x) for x in (
                protocol, seed, r.message_id, r.receivers, r.delivered, r.delivery_ratio, r.mean_delay,
                r.transmissions, r.control_messages, r.control_units, r.storage, r.peak_copies, r.false_accepts,
            )])
        w.writerow([_cell(x) for x in (
            protocol, seed, AGGREGATE_ID, sum(r.receivers for r in rep.messages),
            sum(r.delivered for r in rep.messages), rep.delivery_ratio, rep.mean_delay, rep.transmissions,
            rep.control_messages, rep.control_units, rep.storage, rep.peak_copies,
            sum(r.false_accepts for r in rep.messages),
        )])


def write_event_log(log: Iterable[Mapping], out: IO[str]) -> None:
    for rec in log:
        out.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def message_to_json(m: Message) -> dict:
    doc = {
        "message_id": m.id, "source": m.source, "created": m.created, "ttl": m.ttl,
        "mode": m.target.mode, "max_hops": m.max_hops, "max_copies": m.max_copies,
    }
    if m.target.mode == MOBILITY_INDEPENDENT:
        doc["interest_tag"] = m.target.interest_tag
    else:
        p = m.target.profile
        doc["tp_spec"] = {"profile": p.to_json()}
    return doc


def message_from_json(doc: Mapping, profiles: Mapping[str, BehavioralProfile]) -> Message:
    """Inverse of :func:`message_to_json`.

    ``tp_spec`` may be ``"self"`` (the source's own profile),
    ``{"location_weights": {...}}`` (a virtual user) or ``{"profile": {...}}``.
    """
    mode = doc.get("mode", MOBILITY_COUPLED)
    src = doc["source"]
    if mode == MOBILITY_INDEPENDENT:
        target = interest_target(doc["interest_tag"])
    elif mode == MOBILITY_COUPLED:
        spec = doc.get("tp_spec")
        if spec == "self":
            if src not in profiles:
                raise SimulationError(f"message {doc['message_id']}: no profile for source {src}")
            target = TargetProfile(MOBILITY_COUPLED, profile=profiles[src])
        elif isinstance(spec, Mapping) and "location_weights" in spec:
            universe = common_universe(profiles.values()) or tuple(sorted(spec["location_weights"]))
            missing = set(spec["location_weights"]) - set(universe)
            universe = tuple(sorted(set(universe) | missing))
            target = target_profile_from_spec(spec["location_weights"], universe)
        elif isinstance(spec, Mapping) and "profile" in spec:
            target = TargetProfile(MOBILITY_COUPLED, profile=BehavioralProfile.from_json(spec["profile"]))
        else:
            raise SimulationError(f"message {doc['message_id']}: bad tp_spec {spec!r}")
    else:
        raise SimulationError(f"message {doc['message_id']}: unknown mode {mode!r}")
    return Message(str(doc["message_id"]), src, float(doc["created"]), float(doc["ttl"]), target,
                   doc.get("max_hops"), doc.get("max_copies"))


def load_workload(fh: IO[str], profiles: Mapping[str, BehavioralProfile]) -> list[Message]:
    doc = json.load(fh)
    if isinstance(doc, Mapping):
        doc = doc.get("messages", [])
    return [message_from_json(d, profiles) for d in doc]


def write_workload(workload: Iterable[Message], out: IO[str]) -> None:
    json.dump([message_to_json(m) for m in workload], out, indent=1, sort_keys=True)
    out.write("\n")


def read_interest_tags(fh: IO[str]) -> dict[str, set[str]]:
    """``node,tag`` rows; a node may list several tags."""
    tags: dict[str, set[str]] = {}
    for row in csv.reader(line for line in fh if line.strip() and not line.startswith("#")):
        if row[:2] == ["node", "tag"]:
            continue
        tags.setdefault(row[0].strip(), set()).add(row[1].strip())
    return tags


def write_interest_tags(tags: Mapping[str, Iterable[str]], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["node", "tag"])
    for n in sorted(tags):
        for t in sorted(tags[n]):
            w.writerow([n, t])


def is_finite(x) -> bool:
    return x is not None and math.isfinite(x)
