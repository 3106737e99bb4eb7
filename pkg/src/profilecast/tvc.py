"""Time-variant community (TVC) mobility: synthetic movement, sessions and radio contacts.

Each node runs epochs of one waypoint leg plus a pause. At every epoch
boundary the node stays local with probability ``p_local`` of the current
time period (waypoint uniform in its group's community rectangle) or roams
(waypoint uniform over the whole field). Periods repeat every
``cycle_length`` seconds.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .traces import SessionEvent, TraceDataset, TraceParseError, format_time


class ConfigError(ValueError):
    def __init__(self, violations: Sequence[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def of(cls, seq: Sequence[float]) -> "Rect":
        if len(seq) != 4:
            raise ConfigError([f"rectangle needs 4 numbers, got {list(seq)}"])
        return cls(*(float(v) for v in seq))

    def contains(self, x: float, y: float, tol: float = 1e-9) -> bool:
        return self.x0 - tol <= x <= self.x1 + tol and self.y0 - tol <= y <= self.y1 + tol

    def within(self, other: "Rect") -> bool:
        return other.x0 <= self.x0 and other.y0 <= self.y0 and self.x1 <= other.x1 and self.y1 <= other.y1

    def sample(self, rng: random.Random) -> tuple[float, float]:
        return rng.uniform(self.x0, self.x1), rng.uniform(self.y0, self.y1)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass
class TimePeriod:
    span: tuple[float, float]
    community_assignment: dict[str, Rect]
    p_local: float


@dataclass
class TVCConfig:
    field: Rect
    node_count: int
    cycle_length: float
    periods: list[TimePeriod]
    speed_range: tuple[float, float]
    pause_range: tuple[float, float]
    radio_range: float
    cell_size: float
    # node index -> group name; default is round-robin over period 0 groups
    node_groups: list[str] | None = None
    # (time, full node_groups list) pairs switching group membership from that time on
    regroupings: list[tuple[float, list[str]]] = field(default_factory=list)

    @property
    def node_ids(self) -> list[str]:
        width = max(3, len(str(self.node_count - 1)))
        return [f"n{i:0{width}d}" for i in range(self.node_count)]

    def groups_at(self, t: float) -> list[str]:
        groups = self.node_groups
        if groups is None:
            names = sorted(self.periods[0].community_assignment)
            groups = [names[i % len(names)] for i in range(self.node_count)]
        for at, regroup in self.regroupings:
            if t >= at:
                groups = regroup
        return groups

    def period_index(self, t: float) -> int:
        phase = t % self.cycle_length
        starts = [p.span[0] for p in self.periods]
        return max(bisect.bisect_right(starts, phase) - 1, 0)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (
            max(1, math.ceil((self.field.x1 - self.field.x0) / self.cell_size - 1e-9)),
            max(1, math.ceil((self.field.y1 - self.field.y0) / self.cell_size - 1e-9)),
        )

    def to_json(self) -> dict:
        doc = {
            "field": self.field.as_list(),
            "node_count": self.node_count,
            "cycle_length": self.cycle_length,
            "periods": [
                {
                    "span": list(p.span),
                    "community_assignment": {g: r.as_list() for g, r in sorted(p.community_assignment.items())},
                    "p_local": p.p_local,
                }
                for p in self.periods
            ],
            "speed_range": list(self.speed_range),
            "pause_range": list(self.pause_range),
            "radio_range": self.radio_range,
            "cell_size": self.cell_size,
        }
        if self.node_groups is not None:
            doc["node_groups"] = list(self.node_groups)
        if self.regroupings:
            doc["regroupings"] = [[at, list(g)] for at, g in self.regroupings]
        return doc


_CONFIG_KEYS = {
    "field", "node_count", "cycle_length", "periods", "speed_range", "pause_range",
    "radio_range", "cell_size", "node_groups", "regroupings",
}


def config_from_json(doc: Mapping) -> TVCConfig:
    unknown = set(doc) - _CONFIG_KEYS
    missing = (_CONFIG_KEYS - {"node_groups", "regroupings"}) - set(doc)
    problems = [f"unknown key {k!r}" for k in sorted(unknown)] + [f"missing key {k!r}" for k in sorted(missing)]
    if problems:
        raise ConfigError(problems)
    try:
        periods = [
            TimePeriod(
                (float(p["span"][0]), float(p["span"][1])),
                {str(g): Rect.of(r) for g, r in p["community_assignment"].items()},
                float(p["p_local"]),
            )
            for p in doc["periods"]
        ]
        return TVCConfig(
            field=Rect.of(doc["field"]),
            node_count=int(doc["node_count"]),
            cycle_length=float(doc["cycle_length"]),
            periods=periods,
            speed_range=(float(doc["speed_range"][0]), float(doc["speed_range"][1])),
            pause_range=(float(doc["pause_range"][0]), float(doc["pause_range"][1])),
            radio_range=float(doc["radio_range"]),
            cell_size=float(doc["cell_size"]),
            node_groups=[str(g) for g in doc["node_groups"]] if doc.get("node_groups") is not None else None,
            regroupings=[(float(at), [str(g) for g in gs]) for at, gs in doc.get("regroupings", [])],
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError([f"malformed config: {exc!r}"]) from None


def load_config(fh: IO[str]) -> TVCConfig:
    return validate_config(config_from_json(json.load(fh)))


def validate_config(config: TVCConfig) -> TVCConfig:
    v: list[str] = []
    c = config
    if not (c.field.x1 > c.field.x0 and c.field.y1 > c.field.y0):
        v.append("field rectangle is empty")
    if c.node_count < 1:
        v.append("node_count must be >= 1")
    if c.cycle_length <= 0:
        v.append("cycle_length must be > 0")
    if not (0 < c.speed_range[0] <= c.speed_range[1]):
        v.append("speed_range must satisfy 0 < v_min <= v_max")
    if not (0 <= c.pause_range[0] <= c.pause_range[1]):
        v.append("pause_range must satisfy 0 <= p_min <= p_max")
    if c.radio_range <= 0:
        v.append("radio_range must be > 0")
    if c.cell_size <= 0:
        v.append("cell_size must be > 0")
    if not c.periods:
        v.append("at least one period is required")
    else:
        spans = sorted(p.span for p in c.periods)
        if [p.span for p in c.periods] != spans:
            v.append("periods must be listed in time order")
        for p in c.periods:
            if p.span[1] <= p.span[0]:
                v.append(f"period {list(p.span)} is empty")
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                v.append("periods overlap")
            elif b0 > a1:
                v.append(f"gap between periods at {a1}")
        if spans[0][0] != 0 or spans[-1][1] != c.cycle_length:
            v.append("periods must tile [0, cycle_length) exactly")
    groups_used = set()
    for gs in ([c.node_groups] if c.node_groups is not None else []) + [g for _, g in c.regroupings]:
        if len(gs) != c.node_count:
            v.append("node_groups length must equal node_count")
        groups_used.update(gs)
    for p in c.periods:
        if not 0 <= p.p_local <= 1:
            v.append(f"p_local {p.p_local} outside [0, 1]")
        if not p.community_assignment:
            v.append(f"period {list(p.span)} has no communities")
        for g, r in p.community_assignment.items():
            if not (r.x1 >= r.x0 and r.y1 >= r.y0):
                v.append(f"community {g} rectangle is inverted")
            if not r.within(c.field):
                v.append(f"community {g} rectangle lies outside the field")
        missing = groups_used - set(p.community_assignment)
        if missing:
            v.append(f"period {list(p.span)} lacks communities for groups {sorted(missing)}")
    if c.node_groups is None and c.periods:
        names = set(c.periods[0].community_assignment)
        for p in c.periods[1:]:
            if set(p.community_assignment) != names:
                v.append("default round-robin grouping needs the same groups in every period")
                break
    if v:
        raise ConfigError(list(dict.fromkeys(v)))
    return config


def node_seed(seed: int, node_id: str) -> int:
    """Per-node stream seed; independent of how many other nodes exist."""
    digest = hashlib.sha256(f"tvc:{seed}:{node_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class MovementTrace:
    # node -> (times, positions[k, 2]); piecewise-linear between waypoints
    waypoints: dict[str, tuple[np.ndarray, np.ndarray]]
    duration: float

    @property
    def nodes(self) -> list[str]:
        return sorted(self.waypoints)

    def positions_at(self, times: np.ndarray) -> np.ndarray:
        """Array (len(times), n_nodes, 2) in ``self.nodes`` order."""
        out = np.empty((len(times), len(self.waypoints), 2))
        for i, n in enumerate(self.nodes):
            ts, ps = self.waypoints[n]
            out[:, i, 0] = np.interp(times, ts, ps[:, 0])
            out[:, i, 1] = np.interp(times, ts, ps[:, 1])
        return out


def _node_walk(config: TVCConfig, idx: int, node: str, seed: int, duration: float) -> tuple[np.ndarray, np.ndarray]:
    rng = random.Random(node_seed(seed, node))
    vmin, vmax = config.speed_range
    pmin, pmax = config.pause_range
    t = 0.0
    period = config.periods[config.period_index(0.0)]
    x, y = period.community_assignment[config.groups_at(0.0)[idx]].sample(rng)
    ts, xs, ys = [0.0], [x], [y]
    while t < duration:
        period = config.periods[config.period_index(t)]
        rect = period.community_assignment[config.groups_at(t)[idx]]
        local = rng.random() < period.p_local
        tx, ty = rect.sample(rng) if local else config.field.sample(rng)
        speed = rng.uniform(vmin, vmax)
        travel = math.hypot(tx - x, ty - y) / speed
        pause = rng.uniform(pmin, pmax)
        if travel > 0:
            t += travel
            x, y = tx, ty
            ts.append(t); xs.append(x); ys.append(y)
        if pause > 0:
            t += pause
            ts.append(t); xs.append(x); ys.append(y)
        elif travel <= 0:
            t += 1e-3
            ts.append(t); xs.append(x); ys.append(y)
    times = np.asarray(ts)
    pos = np.column_stack([xs, ys])
    if times[-1] > duration:
        k = int(np.searchsorted(times, duration))
        px = np.interp(duration, times, pos[:, 0])
        py = np.interp(duration, times, pos[:, 1])
        times = np.append(times[:k], duration)
        pos = np.vstack([pos[:k], [px, py]])
    return times, pos


def generate_mobility(config: TVCConfig, seed: int, duration: float) -> MovementTrace:
    if duration <= 0:
        raise ValueError("duration must be > 0")
    validate_config(config)
    waypoints = {
        node: _node_walk(config, i, node, seed, duration)
        for i, node in enumerate(config.node_ids)
    }
    return MovementTrace(waypoints, float(duration))


def write_movement(trace: MovementTrace, out: IO[str]) -> None:
    for n in trace.nodes:
        ts, ps = trace.waypoints[n]
        for t, (x, y) in zip(ts, ps):
            out.write(f"{n},{format_time(t)},{x:.3f},{y:.3f}\n")


def read_movement(fh: IO[str]) -> MovementTrace:
    rows: dict[str, list[tuple[float, float, float]]] = {}
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("node_id"):
            continue
        n, t, x, y = line.split(",")
        rows.setdefault(n, []).append((float(t), float(x), float(y)))
    wps = {n: (np.array([r[0] for r in rs]), np.array([[r[1], r[2]] for r in rs])) for n, rs in rows.items()}
    duration = max((ts[-1] for ts, _ in wps.values()), default=0.0)
    return MovementTrace(wps, duration)


def cell_of(config: TVCConfig, x: float, y: float) -> tuple[int, int]:
    nx_, ny_ = config.grid_shape
    ix = min(max(int(math.floor((x - config.field.x0) / config.cell_size)), 0), nx_ - 1)
    iy = min(max(int(math.floor((y - config.field.y0) / config.cell_size)), 0), ny_ - 1)
    return ix, iy


def cell_id(ix: int, iy: int) -> str:
    return f"c{ix:03d}_{iy:03d}"


def _segment_cells(config: TVCConfig, t0, p0, t1, p1):
    """Yield (t_start, t_end, cell) pieces of one linear segment."""
    if p0[0] == p1[0] and p0[1] == p1[1]:
        yield t0, t1, cell_of(config, *p0)
        return
    cs = config.cell_size
    params = {0.0, 1.0}
    for axis, origin in ((0, config.field.x0), (1, config.field.y0)):
        a, b = p0[axis], p1[axis]
        if a == b:
            continue
        lo, hi = sorted((a, b))
        k = math.floor((lo - origin) / cs) + 1
        while origin + k * cs < hi:
            params.add((origin + k * cs - a) / (b - a))
            k += 1
    ps = sorted(params)
    for s0, s1 in zip(ps, ps[1:]):
        if s1 <= s0:
            continue
        sm = 0.5 * (s0 + s1)
        mx = p0[0] + sm * (p1[0] - p0[0])
        my = p0[1] + sm * (p1[1] - p0[1])
        yield t0 + s0 * (t1 - t0), t0 + s1 * (t1 - t0), cell_of(config, mx, my)


def movement_to_sessions(trace: MovementTrace, config: TVCConfig, min_dwell: float = 0.0) -> TraceDataset:
    """One session per maximal stay inside a grid cell; cell ids are location ids.

    Stays shorter than ``min_dwell`` (a node walking through a cell) are
    dropped when ``min_dwell`` > 0, modelling devices that only come online
    where their owner lingers.
    """
    events = []
    for node in trace.nodes:
        ts, ps = trace.waypoints[node]
        cur = None
        cur_s = cur_e = 0.0
        for k in range(len(ts) - 1):
            for s, e, cell in _segment_cells(config, ts[k], ps[k], ts[k + 1], ps[k + 1]):
                if cell == cur:
                    cur_e = e
                    continue
                if cur is not None and cur_e - cur_s > 0 and cur_e - cur_s >= min_dwell:
                    events.append(SessionEvent(node, cell_id(*cur), cur_s, cur_e))
                cur, cur_s, cur_e = cell, s, e
        if cur is not None and cur_e - cur_s > 0 and cur_e - cur_s >= min_dwell:
            events.append(SessionEvent(node, cell_id(*cur), cur_s, cur_e))
    return TraceDataset.from_events(events)


@dataclass(frozen=True, order=True)
class Contact:
    start: float
    u: str
    v: str
    end: float

    def __post_init__(self):
        if self.u == self.v:
            raise ValueError("contact needs two distinct nodes")
        if not self.end > self.start:
            raise ValueError("contact must have positive length")


def sample_times(duration: float, step: float) -> np.ndarray:
    n = int(math.floor(duration / step + 1e-9))
    return np.arange(n + 1) * step


def movement_to_contacts(
    trace: MovementTrace,
    config: TVCConfig,
    step: float = 1.0,
    chunk: int = 512,
) -> list[Contact]:
    """Radio contacts from positions sampled every ``step`` seconds.

    A contact is a maximal run of samples within ``radio_range``; it spans the
    first to the last in-range sample, and a single-sample run is given one
    ``step`` of length.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    nodes = trace.nodes
    if len(nodes) < 2:
        return []
    times = sample_times(trace.duration, step)
    iu, iv = np.triu_indices(len(nodes), k=1)
    r2 = config.radio_range**2
    open_at = np.full(len(iu), -1, dtype=np.int64)  # sample index where the run began
    last_in = np.full(len(iu), -1, dtype=np.int64)
    found: list[tuple[int, int, int]] = []  # (start sample, end sample, pair)
    for c0 in range(0, len(times), chunk):
        pos = trace.positions_at(times[c0:c0 + chunk])
        d = pos[:, iu, :] - pos[:, iv, :]
        inr = (d[..., 0] ** 2 + d[..., 1] ** 2) <= r2
        for k in range(inr.shape[0]):
            row = inr[k]
            idx = c0 + k
            starting = row & (open_at < 0)
            open_at[starting] = idx
            ending = ~row & (open_at >= 0)
            for p in np.nonzero(ending)[0]:
                found.append((int(open_at[p]), int(last_in[p]), int(p)))
            open_at[ending] = -1
            last_in[row] = idx
    for p in np.nonzero(open_at >= 0)[0]:
        found.append((int(open_at[p]), int(last_in[p]), int(p)))
    out = []
    for s, e, p in found:
        ts, te = times[s], times[e]
        if te <= ts:
            te = ts + step
        out.append(Contact(float(ts), nodes[iu[p]], nodes[iv[p]], float(te)))
    out.sort()
    return out


def write_contacts(contacts: Iterable[Contact], out: IO[str]) -> None:
    for c in contacts:
        out.write(f"{c.u},{c.v},{format_time(c.start)},{format_time(c.end)}\n")


def read_contacts(fh: IO[str]) -> list[Contact]:
    out = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise TraceParseError(lineno, "expected u,v,start,end")
        if parts[0] == "u" and parts[2] == "start":
            continue
        u, v, s, e = parts
        try:
            out.append(Contact(float(s), u, v, float(e)))
        except ValueError as err:
            raise TraceParseError(lineno, str(err)) from err
    return out


@dataclass
class CensoredSample:
    subject: tuple[str, ...]
    time: float
    censored: bool


@dataclass
class MobilityStatistics:
    location_preference: dict[str, dict[str, float]]
    reappearance: dict[str, float]
    hitting_time: list[CensoredSample]
    meeting_time: list[CensoredSample]


def occupancy_autocorrelation(cells: np.ndarray, lag: int) -> float:
    """Pooled autocorrelation of one-hot cell occupancy at ``lag`` samples.

    For indicator series the numerator reduces to how often the node sits
    in the same cell ``lag`` samples later.
    """
    n = len(cells)
    if lag <= 0 or lag >= n:
        raise ValueError("lag must be in (0, len(series))")
    _, counts = np.unique(cells, return_counts=True)
    mu2 = float(np.sum((counts / n) ** 2))
    if mu2 >= 1.0 - 1e-15:
        return 1.0
    same = float(np.mean(cells[:-lag] == cells[lag:]))
    return (same - mu2) / (1.0 - mu2)


def sampled_cells(trace: MovementTrace, config: TVCConfig, step: float) -> tuple[np.ndarray, np.ndarray]:
    """(times, cell codes[k, node]) with code = ix * ny + iy."""
    times = sample_times(trace.duration, step)
    pos = trace.positions_at(times)
    nx_, ny_ = config.grid_shape
    ix = np.clip(np.floor((pos[..., 0] - config.field.x0) / config.cell_size), 0, nx_ - 1).astype(int)
    iy = np.clip(np.floor((pos[..., 1] - config.field.y0) / config.cell_size), 0, ny_ - 1).astype(int)
    return times, ix * ny_ + iy


def empirical_statistics(
    trace: MovementTrace,
    config: TVCConfig,
    locations_of_interest: Sequence[str],
    step: float = 60.0,
    contacts: Sequence[Contact] | None = None,
) -> MobilityStatistics:
    sessions = movement_to_sessions(trace, config)
    pref: dict[str, dict[str, float]] = {}
    first_visit: dict[tuple[str, str], float] = {}
    for e in sessions.events:
        d = pref.setdefault(e.user, {})
        d[e.location] = d.get(e.location, 0.0) + (e.end - e.start)
        key = (e.user, e.location)
        if key not in first_visit or e.start < first_visit[key]:
            first_visit[key] = e.start
    for user, d in pref.items():
        tot = sum(d.values())
        pref[user] = {loc: v / tot for loc, v in sorted(d.items())}

    reappearance = {}
    lag = int(round(config.cycle_length / step))
    times, codes = sampled_cells(trace, config, step)
    if lag < len(times):
        for i, n in enumerate(trace.nodes):
            reappearance[n] = occupancy_autocorrelation(codes[:, i], lag)

    hitting = []
    for n in trace.nodes:
        for loc in locations_of_interest:
            t = first_visit.get((n, loc))
            hitting.append(CensoredSample((n, loc), trace.duration if t is None else t, t is None))

    if contacts is None:
        contacts = movement_to_contacts(trace, config, step)
    first_meet: dict[tuple[str, str], float] = {}
    for c in contacts:
        key = (c.u, c.v) if c.u < c.v else (c.v, c.u)
        if key not in first_meet:
            first_meet[key] = c.start
    meeting = []
    nodes = trace.nodes
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            t = first_meet.get((a, b))
            meeting.append(CensoredSample((a, b), trace.duration if t is None else t, t is None))
    return MobilityStatistics(pref, reappearance, hitting, meeting)
