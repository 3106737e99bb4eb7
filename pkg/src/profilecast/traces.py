"""Session trace ingestion, encounter extraction and encounter-graph statistics."""

from __future__ import annotations

import io
import random
from functools import cached_property
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import networkx as nx
import numpy as np

DEFAULT_GAP_THRESHOLD = 60.0
PATH_SAMPLE_LIMIT = 2000
PATH_SAMPLE_SOURCES = 1000


class TraceParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class TraceValidationError(ValueError):
    def __init__(self, lineno: int | None, message: str):
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)
        self.lineno = lineno


@dataclass(frozen=True, order=True)
class SessionEvent:
    user: str
    location: str
    start: float
    end: float

    def __post_init__(self):
        if not self.user or not self.location:
            raise TraceValidationError(None, "empty user or location identifier")
        if not self.end > self.start:
            raise TraceValidationError(None, f"session end {self.end} <= start {self.start}")


@dataclass(frozen=True)
class TraceDataset:
    events: tuple[SessionEvent, ...]
    users: frozenset[str]
    locations: frozenset[str]
    span: tuple[float, float] | None  # None flags an empty dataset

    @classmethod
    def from_events(cls, events: Iterable[SessionEvent]) -> "TraceDataset":
        evs = tuple(sorted(events, key=lambda e: (e.user, e.start, e.end, e.location)))
        if not evs:
            return cls((), frozenset(), frozenset(), None)
        span = (min(e.start for e in evs), max(e.end for e in evs))
        return cls(evs, frozenset(e.user for e in evs), frozenset(e.location for e in evs), span)

    @property
    def is_empty(self) -> bool:
        return self.span is None

    @cached_property
    def _by_user(self) -> dict[str, list[SessionEvent]]:
        out: dict[str, list[SessionEvent]] = defaultdict(list)
        for e in self.events:
            out[e.user].append(e)
        return out

    def sessions_of(self, user: str) -> list[SessionEvent]:
        return list(self._by_user.get(user, ()))


@dataclass(frozen=True, order=True)
class EncounterEvent:
    u: str
    v: str
    location: str
    start: float
    end: float

    def __post_init__(self):
        if self.u == self.v:
            raise ValueError("encounter needs two distinct users")
        if self.u > self.v:
            raise ValueError("encounter endpoints must be in canonical order u < v")
        if not self.end > self.start:
            raise ValueError("encounter must have positive length")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class EdgeStats:
    count: int = 0
    total_duration: float = 0.0


@dataclass
class EncounterGraph:
    nodes: set[str]
    edges: dict[tuple[str, str], EdgeStats] = field(default_factory=dict)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(sorted(self.nodes))
        for (u, v), st in sorted(self.edges.items()):
            g.add_edge(u, v, count=st.count, total_duration=st.total_duration)
        return g


def format_time(t: float) -> str:
    if float(t).is_integer():
        return str(int(t))
    return f"{t:.3f}".rstrip("0").rstrip(".")


def _parse_time(text: str, lineno: int) -> float:
    try:
        return float(int(text))
    except ValueError:
        pass
    try:
        val = float(text)
    except ValueError:
        raise TraceParseError(lineno, f"non-numeric time {text!r}") from None
    if not np.isfinite(val):
        raise TraceParseError(lineno, f"non-finite time {text!r}")
    return val


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _as_text(source) -> IO[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    # binary file-like
    return io.TextIOWrapper(source, encoding="utf-8")


def parse_session_trace(source, format: str = "csv") -> TraceDataset:
    """Parse a ``user_id,location_id,start,end`` session CSV.

    ``source`` may be bytes, str, or a (text or binary) file object. Lines
    starting with ``#`` are comments; a first data line whose third field is
    non-numeric is taken as a header.
    """
    if format != "csv":
        raise ValueError(f"unsupported trace format {format!r}")
    events = []
    seen_data = False
    for lineno, raw in enumerate(_as_text(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if not seen_data:
            seen_data = True
            if len(fields) == 4 and not _is_number(fields[2]):
                continue
        if len(fields) != 4:
            raise TraceParseError(lineno, f"expected 4 fields, got {len(fields)}")
        user, loc, s, e = fields
        start, end = _parse_time(s, lineno), _parse_time(e, lineno)
        if not user or not loc:
            raise TraceValidationError(lineno, "empty user or location identifier")
        if end <= start:
            raise TraceValidationError(lineno, f"end {e} <= start {s}")
        events.append(SessionEvent(user, loc, start, end))
    return TraceDataset.from_events(events)


def write_session_trace(dataset: TraceDataset, out: IO[str]) -> None:
    for e in dataset.events:
        out.write(f"{e.user},{e.location},{format_time(e.start)},{format_time(e.end)}\n")


def merge_pingpong(dataset: TraceDataset, gap_threshold: float = DEFAULT_GAP_THRESHOLD) -> TraceDataset:
    """Merge same user+location sessions separated by less than ``gap_threshold``."""
    if gap_threshold < 0:
        raise ValueError("gap_threshold must be >= 0")
    by_key: dict[tuple[str, str], list[SessionEvent]] = defaultdict(list)
    for e in dataset.events:
        by_key[(e.user, e.location)].append(e)
    merged = []
    for (user, loc), evs in by_key.items():
        evs.sort(key=lambda e: (e.start, e.end))
        cur_s, cur_e = evs[0].start, evs[0].end
        for e in evs[1:]:
            if e.start - cur_e < gap_threshold:
                cur_e = max(cur_e, e.end)
            else:
                merged.append(SessionEvent(user, loc, cur_s, cur_e))
                cur_s, cur_e = e.start, e.end
        merged.append(SessionEvent(user, loc, cur_s, cur_e))
    return TraceDataset.from_events(merged)


def _merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    intervals.sort()
    out = [list(intervals[0])]
    for s, e in intervals[1:]:
        if s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def extract_encounters(dataset: TraceDataset) -> list[EncounterEvent]:
    """Pairwise co-location intervals (strictly positive overlap at one location).

    Overlapping or touching intersections for the same pair and location are
    merged, so each returned event is a maximal co-presence interval.
    """
    by_loc: dict[str, list[SessionEvent]] = defaultdict(list)
    for e in dataset.events:
        by_loc[e.location].append(e)
    raw: dict[tuple[str, str, str], list[tuple[float, float]]] = defaultdict(list)
    for loc, evs in by_loc.items():
        evs.sort(key=lambda e: (e.start, e.end, e.user))
        active: list[SessionEvent] = []
        for e in evs:
            active = [a for a in active if a.end > e.start]
            for a in active:
                if a.user == e.user:
                    continue
                s, t = max(a.start, e.start), min(a.end, e.end)
                if t > s:
                    u, v = sorted((a.user, e.user))
                    raw[(u, v, loc)].append((s, t))
            active.append(e)
    out = []
    for (u, v, loc), ivs in raw.items():
        for s, t in _merge_intervals(ivs):
            out.append(EncounterEvent(u, v, loc, s, t))
    out.sort(key=lambda x: (x.start, x.u, x.v, x.location, x.end))
    return out


def write_encounters(encounters: Sequence[EncounterEvent], out: IO[str]) -> None:
    for x in encounters:
        out.write(f"{x.u},{x.v},{x.location},{format_time(x.start)},{format_time(x.end)}\n")


def build_encounter_graph(
    encounters: Iterable[EncounterEvent],
    window: tuple[float, float] | None = None,
    nodes: Iterable[str] | None = None,
) -> EncounterGraph:
    """Aggregate encounters starting inside ``window`` (half-open) into an undirected graph."""
    encounters = list(encounters)
    g = EncounterGraph(nodes=set(nodes) if nodes is not None else set())
    if nodes is None:
        for x in encounters:
            g.nodes.update((x.u, x.v))
    for x in encounters:
        if window is not None and not (window[0] <= x.start < window[1]):
            continue
        st = g.edges.setdefault((x.u, x.v), EdgeStats())
        st.count += 1
        st.total_duration += x.duration
    return g


def _mean_path_length(g: nx.Graph, rng: random.Random) -> float:
    if g.number_of_edges() == 0:
        return 0.0
    comp = max(nx.connected_components(g), key=lambda c: (len(c), min(c)))
    sub = g.subgraph(comp)
    nodes = sorted(sub.nodes)
    if len(nodes) < 2:
        return 0.0
    sources = nodes
    if len(nodes) > PATH_SAMPLE_LIMIT:
        sources = rng.sample(nodes, PATH_SAMPLE_SOURCES)
    total = pairs = 0
    for s in sources:
        lengths = nx.single_source_shortest_path_length(sub, s)
        total += sum(lengths.values())
        pairs += len(lengths) - 1
    return total / pairs


def degree_preserving_rewire(g: nx.Graph, seed: int, swaps_per_edge: int = 10) -> nx.Graph:
    """Randomize ``g`` with seeded double-edge swaps, keeping every degree.

    Performs ``swaps_per_edge * |E|`` successful swaps (or gives up after
    100x that many attempts); swaps creating self-loops or parallel edges are
    rejected.
    """
    rng = random.Random(seed)
    nodes = sorted(g.nodes)
    edges = sorted(tuple(sorted(e)) for e in g.edges)
    adj = {n: set(g.adj[n]) for n in nodes}
    target = swaps_per_edge * len(edges)
    done = tries = 0
    if len(edges) >= 2:
        while done < target and tries < 100 * target:
            tries += 1
            i, j = rng.randrange(len(edges)), rng.randrange(len(edges))
            if i == j:
                continue
            a, b = edges[i]
            c, d = edges[j]
            if rng.random() < 0.5:
                c, d = d, c
            # (a,b),(c,d) -> (a,d),(c,b)
            if len({a, b, c, d}) < 4 or d in adj[a] or b in adj[c]:
                continue
            adj[a].discard(b); adj[b].discard(a); adj[c].discard(d); adj[d].discard(c)
            adj[a].add(d); adj[d].add(a); adj[c].add(b); adj[b].add(c)
            edges[i] = (a, d) if a < d else (d, a)
            edges[j] = (c, b) if c < b else (b, c)
            done += 1
    r = nx.Graph()
    r.add_nodes_from(nodes)
    r.add_edges_from(edges)
    return r


def small_world_metrics(graph: EncounterGraph | nx.Graph, seed: int = 0) -> dict[str, float]:
    g = graph.to_networkx() if isinstance(graph, EncounterGraph) else nx.Graph(graph)
    if g.number_of_nodes() < 3:
        raise ValueError("small-world metrics need at least 3 nodes")
    rng = random.Random(seed)
    rand = degree_preserving_rewire(g, seed)
    return {
        "clustering_coefficient": nx.average_clustering(g),
        "avg_path_length": _mean_path_length(g, rng),
        "random_cc": nx.average_clustering(rand),
        "random_pl": _mean_path_length(rand, rng),
    }


@dataclass
class UserEncounterStats:
    unique_fraction: float
    inter_meeting: list[float]
    durations: list[float]


def encounter_stats(encounters: Sequence[EncounterEvent], dataset: TraceDataset) -> dict[str, UserEncounterStats]:
    users = sorted(dataset.users)
    peers: dict[str, set[str]] = {u: set() for u in users}
    by_pair: dict[tuple[str, str], list[EncounterEvent]] = defaultdict(list)
    stats = {u: UserEncounterStats(0.0, [], []) for u in users}
    for x in encounters:
        peers.setdefault(x.u, set()).add(x.v)
        peers.setdefault(x.v, set()).add(x.u)
        by_pair[(x.u, x.v)].append(x)
        for w in (x.u, x.v):
            stats.setdefault(w, UserEncounterStats(0.0, [], [])).durations.append(x.duration)
    for (u, v), xs in by_pair.items():
        xs.sort(key=lambda x: x.start)
        gaps = [b.start - a.end for a, b in zip(xs, xs[1:])]
        stats[u].inter_meeting.extend(gaps)
        stats[v].inter_meeting.extend(gaps)
    others = max(len(users) - 1, 1)
    for u in stats:
        stats[u].unique_fraction = len(peers.get(u, ())) / others
    return stats
