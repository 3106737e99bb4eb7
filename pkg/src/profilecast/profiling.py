"""Association matrices, eigen-behavior profiles and the weighted cosine similarity."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .traces import TraceDataset

log = logging.getLogger(__name__)

DAY = 86400.0
DEFAULT_POWER_THRESHOLD = 0.9
DEFAULT_HISTORY_DAYS = 5
TIE_RTOL = 1e-9


class EmptyBehaviorError(ValueError):
    pass


@dataclass
class AssociationMatrix:
    user: str
    days: int
    locations: tuple[str, ...]
    cells: np.ndarray  # days x locations
    window_start: float


@dataclass
class BehavioralProfile:
    components: np.ndarray  # rank x n, rows orthonormal
    weights: np.ndarray  # rank, sums to 1, non-increasing
    location_index: tuple[str, ...]
    user: str | None = None

    @property
    def rank(self) -> int:
        return len(self.weights)

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "locations": list(self.location_index),
            "components": [[float(x) for x in row] for row in self.components],
            "weights": [float(w) for w in self.weights],
            "rank": self.rank,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "BehavioralProfile":
        comps = np.asarray(doc["components"], dtype=float).reshape(len(doc["weights"]), len(doc["locations"]))
        return cls(comps, np.asarray(doc["weights"], dtype=float), tuple(doc["locations"]), doc.get("user"))

    def top_summary(self) -> "BehavioralProfile":
        return BehavioralProfile(self.components[:1].copy(), np.ones(1), self.location_index, self.user)


MOBILITY_COUPLED = "mobility_coupled"
MOBILITY_INDEPENDENT = "mobility_independent"


@dataclass
class TargetProfile:
    mode: str
    profile: BehavioralProfile | None = None
    interest_tag: str | None = None

    def __post_init__(self):
        if self.mode == MOBILITY_COUPLED:
            if self.profile is None or self.interest_tag is not None:
                raise ValueError("mobility-coupled target needs a profile and no interest tag")
        elif self.mode == MOBILITY_INDEPENDENT:
            if self.interest_tag is None or self.profile is not None:
                raise ValueError("mobility-independent target needs an interest tag and no profile")
        else:
            raise ValueError(f"unknown target mode {self.mode!r}")


@dataclass
class UserClustering:
    clusters: list[list[str]]
    merge_dendrogram: list[tuple[tuple[str, ...], tuple[str, ...], float]] = field(default_factory=list)


def _day_index(t: float, tz_offset: float) -> float:
    return (t + tz_offset) / DAY


def build_association_matrix(
    dataset: TraceDataset,
    user: str,
    window_start: float,
    d: int = DEFAULT_HISTORY_DAYS,
    locations: Sequence[str] | None = None,
    tz_offset: float = 0.0,
) -> AssociationMatrix:
    """Row k = fraction of the user's online time at each location on day k of the window.

    ``window_start`` is aligned to the containing local midnight. Columns
    default to all dataset locations in lexicographic order.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if user not in dataset.users:
        raise KeyError(f"unknown user {user!r}")
    locs = tuple(sorted(dataset.locations)) if locations is None else tuple(locations)
    col = {loc: j for j, loc in enumerate(locs)}
    day0 = np.floor(_day_index(window_start, tz_offset)) * DAY - tz_offset
    secs = np.zeros((d, len(locs)))
    for e in dataset.sessions_of(user):
        if e.end <= day0 or e.start >= day0 + d * DAY or e.location not in col:
            continue
        j = col[e.location]
        k0 = max(int((e.start - day0) // DAY), 0)
        k1 = min(int((e.end - day0) // DAY), d - 1)
        for k in range(k0, k1 + 1):
            lo, hi = day0 + k * DAY, day0 + (k + 1) * DAY
            overlap = min(e.end, hi) - max(e.start, lo)
            if overlap > 0:
                secs[k, j] += overlap
    totals = secs.sum(axis=1, keepdims=True)
    cells = np.divide(secs, totals, out=np.zeros_like(secs), where=totals > 0)
    return AssociationMatrix(user, d, locs, cells, day0)


def eigen_profile(
    matrix: AssociationMatrix | np.ndarray,
    power_threshold: float = DEFAULT_POWER_THRESHOLD,
    location_index: Sequence[str] | None = None,
    user: str | None = None,
) -> BehavioralProfile:
    """Keep the fewest right singular vectors holding ``power_threshold`` of the energy."""
    if not 0 < power_threshold <= 1:
        raise ValueError("power_threshold must be in (0, 1]")
    if isinstance(matrix, AssociationMatrix):
        m, location_index, user = matrix.cells, matrix.locations, matrix.user
    else:
        m = np.asarray(matrix, dtype=float)
        if location_index is None:
            location_index = tuple(f"L{j}" for j in range(m.shape[1]))
    if not np.any(m):
        raise EmptyBehaviorError("empty behavior")
    _, s, vt = np.linalg.svd(m, full_matrices=False)
    energy = s**2
    total = energy.sum()
    cum = np.cumsum(energy) / total
    r = int(np.searchsorted(cum, power_threshold - 1e-12) + 1)
    r = min(r, len(s))
    # degenerate subspaces are kept whole
    while r < len(s) and np.isclose(s[r], s[r - 1], rtol=TIE_RTOL, atol=0) and s[r] > 0:
        r += 1
    while r > 1 and s[r - 1] <= s[0] * 1e-12:
        r -= 1
    weights = energy[:r] / energy[:r].sum()
    comps = vt[:r].copy()
    # sign is arbitrary; fix it so serialized profiles are canonical
    lead = comps[np.arange(r), np.argmax(np.abs(comps), axis=1)]
    comps *= np.where(lead < 0, -1.0, 1.0)[:, None]
    comps += 0.0
    return BehavioralProfile(comps, weights, tuple(location_index), user)


def similarity(a: BehavioralProfile, b: BehavioralProfile) -> float:
    """Weighted sum of absolute cosines between the two component sets."""
    if tuple(a.location_index) != tuple(b.location_index):
        raise ValueError("profiles have different location universes; align them first")
    cos = np.abs(a.components @ b.components.T)
    return float(a.weights @ cos @ b.weights)


def profile_distance(a: BehavioralProfile, b: BehavioralProfile) -> float:
    return 1.0 - similarity(a, b)


def align_profiles(a: BehavioralProfile, b: BehavioralProfile) -> tuple[BehavioralProfile, BehavioralProfile]:
    if tuple(a.location_index) == tuple(b.location_index):
        return a, b
    union = tuple(sorted(set(a.location_index) | set(b.location_index)))
    return align_to(a, union), align_to(b, union)


def align_to(p: BehavioralProfile, universe: Sequence[str]) -> BehavioralProfile:
    universe = tuple(universe)
    if universe == tuple(p.location_index):
        return p
    col = {loc: j for j, loc in enumerate(universe)}
    missing = [loc for loc in p.location_index if loc not in col]
    if missing:
        raise ValueError(f"universe lacks locations {missing[:5]}")
    comps = np.zeros((p.rank, len(universe)))
    comps[:, [col[loc] for loc in p.location_index]] = p.components
    return BehavioralProfile(comps, p.weights.copy(), universe, p.user)


def self_similarity(p: BehavioralProfile) -> float:
    return float(np.sum(p.weights**2))


def _fits(dataset: TraceDataset, start: float, d: int, tz_offset: float) -> bool:
    if dataset.span is None:
        return False
    lo = np.floor(_day_index(dataset.span[0], tz_offset)) * DAY - tz_offset
    hi = np.ceil(_day_index(dataset.span[1], tz_offset)) * DAY - tz_offset
    return start >= lo and start + d * DAY <= hi


def stability_series(
    dataset: TraceDataset,
    user: str,
    d: int = DEFAULT_HISTORY_DAYS,
    gaps: Sequence[int] = (1, 7, 14),
    start: float | None = None,
    power_threshold: float = DEFAULT_POWER_THRESHOLD,
    tz_offset: float = 0.0,
) -> list[tuple[int, float]]:
    """Similarity between d-day profiles starting at ``start`` and ``start + T`` days.

    Gaps whose second window leaves the trace, or whose windows hold no
    activity, are omitted with a logged notice.
    """
    if dataset.span is None:
        return []
    if start is None:
        start = np.floor(_day_index(dataset.span[0], tz_offset)) * DAY - tz_offset
    locs = tuple(sorted(dataset.locations))
    cache: dict[float, BehavioralProfile | None] = {}

    def profile_at(t0: float) -> BehavioralProfile | None:
        if t0 not in cache:
            m = build_association_matrix(dataset, user, t0, d, locs, tz_offset)
            try:
                cache[t0] = eigen_profile(m, power_threshold)
            except EmptyBehaviorError:
                cache[t0] = None
        return cache[t0]

    out = []
    for gap in gaps:
        t2 = start + gap * DAY
        if not (_fits(dataset, start, d, tz_offset) and _fits(dataset, t2, d, tz_offset)):
            log.warning("user %s: gap T=%s omitted, window exceeds trace span", user, gap)
            continue
        p1, p2 = profile_at(start), profile_at(t2)
        if p1 is None or p2 is None:
            log.warning("user %s: gap T=%s omitted, empty behavior in window", user, gap)
            continue
        out.append((gap, similarity(p1, p2)))
    return out


def cluster_users(
    profiles: Sequence[BehavioralProfile],
    distance_threshold: float = 0.5,
    labels: Sequence[str] | None = None,
) -> UserClustering:
    """Average-linkage agglomerative clustering on ``1 - similarity``.

    Merging stops once the closest pair of clusters is farther apart than
    ``distance_threshold``.
    """
    if not profiles:
        raise ValueError("no profiles to cluster")
    if labels is None:
        labels = [p.user if p.user is not None else str(i) for i, p in enumerate(profiles)]
    n = len(profiles)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = 1.0 - similarity(profiles[i], profiles[j])
    return average_linkage(dist, list(labels), distance_threshold)


def average_linkage(dist: np.ndarray, labels: list[str], threshold: float) -> UserClustering:
    clusters: dict[int, list[int]] = {i: [i] for i in range(len(labels))}
    merges = []
    while len(clusters) > 1:
        keys = sorted(clusters)
        best = None
        for ai, a in enumerate(keys):
            for b in keys[ai + 1:]:
                dd = dist[np.ix_(clusters[a], clusters[b])].mean()
                if best is None or dd < best[0] - 1e-15:
                    best = (dd, a, b)
        dd, a, b = best
        if dd > threshold:
            break
        merges.append((tuple(labels[i] for i in clusters[a]), tuple(labels[i] for i in clusters[b]), float(dd)))
        clusters[a] = sorted(clusters[a] + clusters.pop(b))
    parts = sorted(([labels[i] for i in members] for members in clusters.values()), key=lambda c: c[0])
    return UserClustering(parts, merges)


def target_profile_from_spec(location_weights: Mapping[str, float], location_index: Sequence[str]) -> TargetProfile:
    """Profile of a virtual user spending the given fractions of time at each location."""
    if not location_weights:
        raise ValueError("empty target location weights")
    index = tuple(location_index)
    col = {loc: j for j, loc in enumerate(index)}
    row = np.zeros(len(index))
    for loc, w in location_weights.items():
        if w < 0:
            raise ValueError("target weights must be nonnegative")
        if loc not in col:
            raise KeyError(f"target location {loc!r} not in location index")
        row[col[loc]] = w
    if not np.isclose(row.sum(), 1.0, atol=1e-6):
        raise ValueError("target weights must sum to 1")
    return TargetProfile(MOBILITY_COUPLED, profile=eigen_profile(row[None, :], location_index=index))


def interest_target(tag: str) -> TargetProfile:
    return TargetProfile(MOBILITY_INDEPENDENT, interest_tag=tag)


def write_profiles(profiles: Mapping[str, BehavioralProfile], out, extra: Mapping | None = None) -> None:
    doc = dict(extra or {})
    doc["profiles"] = [profiles[u].to_json() for u in sorted(profiles)]
    json.dump(doc, out, indent=1, sort_keys=True)
    out.write("\n")


def read_profiles(fh) -> dict[str, BehavioralProfile]:
    doc = json.load(fh)
    items = doc["profiles"] if isinstance(doc, Mapping) else doc
    out = {}
    for d in items:
        p = BehavioralProfile.from_json(d)
        out[p.user] = p
    return out
