"""End-to-end runs: synthetic trace -> profiles -> workload -> protocol metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

from .dtn import MetricsReport, SimConfig, run_simulation
from .profiling import BehavioralProfile, build_association_matrix, eigen_profile
from .protocols import make_protocol, oracle_report
from .traces import TraceDataset
from .tvc import Contact, MovementTrace, TVCConfig, generate_mobility, movement_to_contacts, movement_to_sessions

DAY = 86400.0


@dataclass
class Scenario:
    config: TVCConfig
    seed: int
    trace: MovementTrace
    sessions: TraceDataset
    contacts: list[Contact]
    profiles: dict[str, BehavioralProfile]
    interest_tags: dict[str, set[str]] = field(default_factory=dict)

    @property
    def nodes(self) -> list[str]:
        return self.config.node_ids


def self_profiles(
    sessions: TraceDataset,
    window_start: float = 0.0,
    days: int = 5,
    power_threshold: float = 0.9,
) -> dict[str, BehavioralProfile]:
    """Each node's own profile from its trailing ``days`` of history."""
    locs = tuple(sorted(sessions.locations))
    out = {}
    for user in sorted(sessions.users):
        m = build_association_matrix(sessions, user, window_start, days, locs)
        if m.cells.any():
            out[user] = eigen_profile(m, power_threshold)
    return out


def build_scenario(
    config: TVCConfig,
    seed: int,
    duration: float,
    step: float = 60.0,
    history_days: int = 5,
    min_dwell: float = 300.0,
) -> Scenario:
    trace = generate_mobility(config, seed, duration)
    sessions = movement_to_sessions(trace, config, min_dwell=min_dwell)
    contacts = movement_to_contacts(trace, config, step)
    profiles = self_profiles(sessions, 0.0, history_days)
    return Scenario(config, seed, trace, sessions, contacts, profiles)


def run_protocol(
    scenario: Scenario,
    protocol: str,
    workload,
    seed: int = 0,
    delta: float = 0.5,
    opted_out=(),
    horizon: float | None = None,
    **params,
) -> tuple[list[dict], MetricsReport]:
    cfg = SimConfig(
        profiles=scenario.profiles,
        interest_tags=scenario.interest_tags,
        delta=delta,
        opted_out=opted_out,
        seed=seed,
        horizon=horizon,
        nodes=scenario.nodes,
    )
    if protocol == "oracle":
        return [], oracle_report(scenario.contacts, workload, cfg, horizon)
    return run_simulation(scenario.contacts, make_protocol(protocol, delta=delta, **params), workload, cfg)
