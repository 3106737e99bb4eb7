"""Ready-made TVC schedules and message workloads.

Both schedules use a one-week cycle: on weekdays nodes spend 09:00-17:00 in
a "work" community and the rest of the day in a "home" community; weekends
are spent at home. A node's group is ``w<a>h<b>``, so the work and home
partitions cut across each other.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .dtn import Message
from .profiling import BehavioralProfile, TargetProfile, interest_target, target_profile_from_spec, MOBILITY_COUPLED
from .tvc import Rect, TimePeriod, TVCConfig, cell_id, validate_config

HOUR = 3600.0
DAY = 86400.0
WEEK = 7 * DAY


def weekly_periods(work: dict[str, Rect], home: dict[str, Rect], p_work: float, p_home: float) -> list[TimePeriod]:
    periods = []
    for day in range(5):
        base = day * DAY
        periods.append(TimePeriod((base, base + 9 * HOUR), dict(home), p_home))
        periods.append(TimePeriod((base + 9 * HOUR, base + 17 * HOUR), dict(work), p_work))
        periods.append(TimePeriod((base + 17 * HOUR, base + DAY), dict(home), p_home))
    periods.append(TimePeriod((5 * DAY, WEEK), dict(home), p_home))
    return periods


def _cell_rect(ix: int, iy: int, cell: float, margin: float) -> Rect:
    return Rect(ix * cell + margin, iy * cell + margin, (ix + 1) * cell - margin, (iy + 1) * cell - margin)


def crosscut_config(
    node_count: int,
    n_work: int,
    n_home: int,
    work_cells: list[tuple[int, int]],
    home_cells: list[tuple[int, int]],
    field_cells: int,
    cell_size: float,
    margin: float,
    p_work: float,
    p_home: float,
    speed_range=(0.5, 1.5),
    pause_range=(600.0, 3600.0),
    radio_range: float = 30.0,
    home_of=None,
) -> TVCConfig:
    """Groups ``w<a>h<b>``; node i works in community i % n_work.

    ``home_of(i)`` picks the home community; the default interleaves it so
    that work and home partitions cut across each other.
    """
    names = []
    work: dict[str, Rect] = {}
    home: dict[str, Rect] = {}
    if home_of is None:
        def home_of(i):
            return (i // n_work) % n_home
    for i in range(node_count):
        a, b = i % n_work, home_of(i)
        g = f"w{a}h{b}"
        names.append(g)
        work[g] = _cell_rect(*work_cells[a], cell_size, margin)
        home[g] = _cell_rect(*home_cells[b], cell_size, margin)
    side = field_cells * cell_size
    config = TVCConfig(
        field=Rect(0.0, 0.0, side, side),
        node_count=node_count,
        cycle_length=WEEK,
        periods=weekly_periods(work, home, p_work, p_home),
        speed_range=speed_range,
        pause_range=pause_range,
        radio_range=radio_range,
        cell_size=cell_size,
        node_groups=names,
    )
    return validate_config(config)


def campus_config(node_count: int = 200, communities: int = 20, p_local: float = 0.97) -> TVCConfig:
    """Many small communities on a sparse 20x20-cell campus.

    Work and home communities occupy distinct cells; each group meets a
    handful of peers, giving a clustered yet well-connected encounter graph.
    """
    rng = random.Random(7)
    cells = [(x, y) for x in range(20) for y in range(20)]
    rng.shuffle(cells)
    work_cells, home_cells = cells[:communities], cells[communities:2 * communities]

    def home_of(i):
        # node i's home is a fixed pseudo-random mix of work communities
        return (i * 7 + i // communities) % communities

    return crosscut_config(
        node_count, communities, communities, work_cells, home_cells,
        field_cells=20, cell_size=100.0, margin=20.0, p_work=p_local, p_home=p_local, home_of=home_of,
    )


def with_community_switch(config: TVCConfig, at: float, seed: int = 11) -> TVCConfig:
    """Copy of ``config`` where from ``at`` on every node joins a different group."""
    groups = list(config.groups_at(0.0))
    distinct = sorted(set(groups))
    rng = random.Random(seed)
    new = []
    for g in groups:
        choices = [h for h in distinct if h[:h.index("h")] != g[:g.index("h")] and h[h.index("h"):] != g[g.index("h"):]]
        new.append(rng.choice(choices or [h for h in distinct if h != g]))
    switched = TVCConfig(**{**config.__dict__, "regroupings": list(config.regroupings) + [(at, new)]})
    return validate_config(switched)


def four_community_config(node_count: int = 200, p_local: float = 0.95) -> TVCConfig:
    """Four communities, reused as work and home places with a cross-cut grouping."""
    comm = [(1, 1), (3, 1), (1, 3), (3, 3)]
    return crosscut_config(
        node_count, 4, 4, comm, comm, field_cells=5, cell_size=200.0, margin=50.0,
        p_work=p_local, p_home=p_local, radio_range=40.0,
    )


def interest_tags_orthogonal(config: TVCConfig, n_tags: int = 4) -> dict[str, set[str]]:
    """Tags independent of both work and home communities."""
    nodes = config.node_ids
    return {n: {f"tag{(i // 16) % n_tags}"} for i, n in enumerate(nodes)}


@dataclass
class WorkloadSpec:
    count: int = 50
    start: float = 5 * DAY
    spread: float = 2 * DAY
    ttl: float = 3 * DAY
    max_hops: int | None = None
    max_copies: int | None = None


def coupled_workload(
    profiles: dict[str, BehavioralProfile],
    community_cells: list[str],
    spec: WorkloadSpec,
    seed: int,
    sources: list[str] | None = None,
) -> list[Message]:
    """Half the messages target the sender's own behavior, half a virtual user at one community."""
    rng = random.Random(seed)
    nodes = sorted(sources if sources is not None else profiles)
    out = []
    for k in range(spec.count):
        src = rng.choice(nodes)
        created = round(spec.start + rng.uniform(0, spec.spread))
        if k % 2 == 0:
            tp = TargetProfile(MOBILITY_COUPLED, profile=profiles[src])
        else:
            universe = profiles[src].location_index
            tp = target_profile_from_spec({rng.choice(community_cells): 1.0}, universe)
        out.append(Message(f"m{k:03d}", src, float(created), spec.ttl, tp, spec.max_hops, spec.max_copies))
    return out


def independent_workload(
    nodes: list[str],
    tags: list[str],
    spec: WorkloadSpec,
    seed: int,
) -> list[Message]:
    rng = random.Random(seed)
    nodes = sorted(nodes)
    out = []
    for k in range(spec.count):
        src = rng.choice(nodes)
        created = round(spec.start + rng.uniform(0, spec.spread))
        out.append(Message(f"m{k:03d}", src, float(created), spec.ttl, interest_target(rng.choice(tags)),
                           spec.max_hops, spec.max_copies))
    return out


def community_cell_ids(config: TVCConfig) -> list[str]:
    """Cell ids of every community rectangle's centre."""
    from .tvc import cell_of

    ids = set()
    for p in config.periods:
        for r in p.community_assignment.values():
            ids.add(cell_id(*cell_of(config, (r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2)))
    return sorted(ids)
