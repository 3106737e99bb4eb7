"""Command-line front end: gen, analyze, simulate, compare (plus workload).

Every output file carries the digest of the run manifest that produced it:
a ``# manifest <digest>`` first line in CSV, a ``manifest`` key in JSON and
a leading ``{"kind": "manifest"}`` record in NDJSON. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .dtn import (
    AGGREGATE_ID,
    METRICS_COLUMNS,
    SimConfig,
    SimulationError,
    load_workload,
    read_interest_tags,
    run_simulation,
    write_event_log,
    write_interest_tags,
    write_metrics,
    write_workload,
)
from .profiling import (
    EmptyBehaviorError,
    build_association_matrix,
    cluster_users,
    eigen_profile,
    read_profiles,
    stability_series,
    write_profiles,
)
from .protocols import PROTOCOLS, make_protocol, oracle_report
from .scenarios import (
    DAY,
    WorkloadSpec,
    campus_config,
    community_cell_ids,
    coupled_workload,
    four_community_config,
    independent_workload,
    interest_tags_orthogonal,
)
from .traces import (
    TraceParseError,
    TraceValidationError,
    build_encounter_graph,
    encounter_stats,
    extract_encounters,
    merge_pingpong,
    parse_session_trace,
    small_world_metrics,
    write_encounters,
    write_session_trace,
)
from .tvc import (
    ConfigError,
    config_from_json,
    generate_mobility,
    movement_to_contacts,
    movement_to_sessions,
    read_contacts,
    write_contacts,
    write_movement,
)

log = logging.getLogger("profilecast")

PRESETS = {
    "four_community": lambda: four_community_config(p_local=1.0),
    "campus": lambda: campus_config(p_local=0.995),
}


class UsageError(Exception):
    """Bad invocation or inconsistent inputs (exit code 2)."""


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    params: dict
    seeds: list[int]
    inputs: list[list[str]] = field(default_factory=list)  # [file name, sha256] in argument order
    outputs: list[str] = field(default_factory=list)
    version: str = __version__

    @property
    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def add_input(self, path: str | Path | None) -> None:
        if path is not None:
            p = Path(path)
            self.inputs.append([p.name, sha256_file(p)])

    def write(self, out_dir: Path) -> Path:
        doc = asdict(self)
        doc["digest"] = self.digest
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


class Outputs:
    """Writes files into the output directory, stamping the manifest digest."""

    def __init__(self, out_dir: Path, manifest: RunManifest, names: Sequence[str]):
        self.dir = out_dir
        self.manifest = manifest
        manifest.outputs = sorted(names)
        self.digest = manifest.digest
        out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, fill) -> Path:
        buf = io.StringIO()
        buf.write(f"# manifest {self.digest}\n")
        fill(buf)
        return self._put(name, buf.getvalue())

    def json(self, name: str, doc: Mapping) -> Path:
        doc = {**doc, "manifest": self.digest}
        return self._put(name, json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def ndjson(self, name: str, records: Iterable[Mapping]) -> Path:
        buf = io.StringIO()
        write_event_log([{"kind": "manifest", "digest": self.digest}], buf)
        write_event_log(records, buf)
        return self._put(name, buf.getvalue())

    def text(self, name: str, body: str) -> Path:
        return self._put(name, f"manifest {self.digest}\n" + body)

    def path(self, name: str) -> Path:
        return self.dir / name

    def _put(self, name: str, text: str) -> Path:
        p = self.dir / name
        p.write_text(text)
        return p

    def finish(self) -> None:
        self.manifest.write(self.dir)


def _read_json(path: str | Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e


def _read_config(path: str | Path):
    doc = _read_json(path)
    if isinstance(doc, dict):
        doc.pop("manifest", None)
    return config_from_json(doc)


def _load_sessions(path: str):
    with open(path) as fh:
        return parse_session_trace(fh)


def _days_to_seconds(args) -> float:
    if args.duration is not None:
        return float(args.duration)
    return float(args.days) * DAY


# -- gen -----------------------------------------------------------------

def cmd_gen(args) -> int:
    if (args.config is None) == (args.preset is None):
        raise UsageError("gen needs exactly one of CONFIG or --preset")
    if args.config is not None:
        config = _read_config(args.config)
    else:
        config = PRESETS[args.preset]()
    duration = _days_to_seconds(args)
    if duration <= 0:
        raise UsageError("duration must be positive")
    man = RunManifest("gen", {"duration": duration, "step": args.step, "min_dwell": args.min_dwell,
                              "preset": args.preset}, [args.seed])
    man.add_input(args.config)
    names = ["movement.csv", "sessions.csv", "contacts.csv", "config.json"]
    out = Outputs(Path(args.out), man, names)
    trace = generate_mobility(config, args.seed, duration)
    out.csv("movement.csv", lambda fh: write_movement(trace, fh))
    out.csv("sessions.csv", lambda fh: write_session_trace(movement_to_sessions(trace, config, args.min_dwell), fh))
    out.csv("contacts.csv", lambda fh: write_contacts(movement_to_contacts(trace, config, args.step), fh))
    out.json("config.json", config.to_json())
    out.finish()
    return 0


# -- analyze -------------------------------------------------------------

def _profiles_from_sessions(dataset, start, days, threshold, tz):
    if start is None:
        start = math.floor((dataset.span[0] + tz) / DAY) * DAY - tz if dataset.span else 0.0
    locs = tuple(sorted(dataset.locations))
    profiles = {}
    for user in sorted(dataset.users):
        m = build_association_matrix(dataset, user, start, days, locs, tz)
        try:
            profiles[user] = eigen_profile(m, threshold)
        except EmptyBehaviorError:
            log.warning("user %s: no activity in the profile window, skipped", user)
    return profiles


def cmd_analyze(args) -> int:
    sub = args.analysis
    params = {k: v for k, v in vars(args).items()
              if k not in ("func", "trace", "out", "jobs", "seed", "analysis", "verbose")}
    man = RunManifest(f"analyze {sub}", params, [args.seed])
    man.add_input(args.trace)
    figs = getattr(args, "figures", False)
    if sub == "profiles":
        ds = _load_sessions(args.trace)
        out = Outputs(Path(args.out), man, ["profiles.json"])
        profiles = _profiles_from_sessions(ds, args.start, args.days, args.threshold, args.tz_offset)
        buf = io.StringIO()
        write_profiles(profiles, buf, {"manifest": out.digest})
        out._put("profiles.json", buf.getvalue())
    elif sub == "encounters":
        ds = _load_sessions(args.trace)
        if args.merge_gap is not None:
            ds = merge_pingpong(ds, args.merge_gap)
        names = ["encounters.csv", "smallworld.json"] + (["encounters.png"] if figs else [])
        out = Outputs(Path(args.out), man, names)
        encs = extract_encounters(ds)
        window = None
        if args.window_days is not None and ds.span is not None:
            window = (ds.span[0], ds.span[0] + args.window_days * DAY)
        graph = build_encounter_graph(encs, window, nodes=sorted(ds.users))
        doc: dict = {"nodes": len(graph.nodes), "edges": len(graph.edges), "encounters": len(encs)}
        if len(graph.nodes) >= 3:
            doc.update(small_world_metrics(graph, seed=args.seed))
        st = encounter_stats([e for e in encs if window is None or window[0] <= e.start < window[1]], ds)
        uf = [st[u].unique_fraction for u in sorted(st)]
        if uf:
            doc["unique_fraction_median"] = float(np.median(uf))
            spread = len(uf) > 2 and np.ptp(uf) > 1e-12 * max(1.0, abs(np.mean(uf)))
            doc["unique_fraction_skewness"] = float(stats.skew(uf)) if spread else None
        out.csv("encounters.csv", lambda fh: write_encounters(encs, fh))
        out.json("smallworld.json", doc)
        if figs:
            from .report import encounter_figure

            encounter_figure(uf, out.path("encounters.png"), out.digest)
    elif sub == "stability":
        ds = _load_sessions(args.trace)
        names = ["stability.csv"] + (["stability.png"] if figs else [])
        out = Outputs(Path(args.out), man, names)
        series = {u: stability_series(ds, u, args.days, args.gaps, args.start, args.threshold, args.tz_offset)
                  for u in sorted(ds.users)}

        def fill(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "T", "score"])
            for u, pts in series.items():
                for gap, score in pts:
                    w.writerow([u, gap, repr(float(score))])

        out.csv("stability.csv", fill)
        if figs:
            from .report import stability_figure

            stability_figure(series, out.path("stability.png"), out.digest)
    elif sub == "cluster":
        out = Outputs(Path(args.out), man, ["clusters.json", "dendrogram.csv"])
        if args.trace.endswith(".json"):
            with open(args.trace) as fh:
                profiles = read_profiles(fh)
        else:
            profiles = _profiles_from_sessions(_load_sessions(args.trace), args.start, args.days,
                                               args.threshold, args.tz_offset)
        if not profiles:
            raise UsageError("no profiles to cluster")
        users = sorted(profiles)
        res = cluster_users([profiles[u] for u in users], args.distance_threshold, users)
        out.json("clusters.json", {"distance_threshold": args.distance_threshold, "clusters": res.clusters})

        def fill(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "left", "right", "distance"])
            for k, (a, b, dist) in enumerate(res.merge_dendrogram):
                w.writerow([k, "|".join(a), "|".join(b), repr(float(dist))])

        out.csv("dendrogram.csv", fill)
    else:  # argparse restricts choices; kept for direct callers
        raise UsageError(f"unknown analysis {sub!r}")
    out.finish()
    return 0


# -- workload ------------------------------------------------------------

def cmd_workload(args) -> int:
    """Synthesize a message workload (and interest tags) for ``simulate``."""
    man = RunManifest("workload", {k: v for k, v in vars(args).items()
                                   if k not in ("func", "out", "jobs", "verbose", "profiles", "config")}, [args.seed])
    man.add_input(args.profiles)
    man.add_input(args.config)
    spec = WorkloadSpec(args.count, args.start * DAY, args.spread * DAY, args.ttl * DAY,
                        args.max_hops, args.max_copies)
    with open(args.profiles) as fh:
        profiles = read_profiles(fh)
    config = _read_config(args.config)
    out = Outputs(Path(args.out), man, ["workload.json", "tags.csv"])
    tags = interest_tags_orthogonal(config)
    if args.mode == "coupled":
        wl = coupled_workload(profiles, community_cell_ids(config), spec, args.seed)
    else:
        wl = independent_workload(config.node_ids, sorted({t for v in tags.values() for t in v}), spec, args.seed)
    buf = io.StringIO()
    write_workload(wl, buf)
    doc = {"messages": json.loads(buf.getvalue())}
    out.json("workload.json", doc)
    out.csv("tags.csv", lambda fh: write_interest_tags(tags, fh))
    out.finish()
    return 0


# -- simulate ------------------------------------------------------------

_PROTOCOL_KEYS = {"protocol", "delta", "epsilon", "max_holders", "p_hand", "seeds"}


def parse_protocol_config(doc) -> dict:
    if not isinstance(doc, Mapping):
        raise UsageError("protocol config must be a JSON object")
    unknown = set(doc) - _PROTOCOL_KEYS
    if unknown:
        raise UsageError(f"protocol config: unknown keys {sorted(unknown)}")
    name = doc.get("protocol")
    if name not in set(PROTOCOLS) | {"oracle"}:
        raise UsageError(f"protocol config: unknown protocol {name!r}")
    if name == "pcast_t" and doc.get("delta") is None:
        raise UsageError("protocol config: pcast_t requires delta")
    if name == "random_walk" and doc.get("p_hand") is None:
        raise UsageError("protocol config: random_walk requires p_hand")
    delta = doc.get("delta", 0.5)
    if not 0.0 <= float(delta) <= 1.0:
        raise UsageError("protocol config: delta must lie in [0, 1]")
    return dict(doc)


def _run_one(job):
    contacts, workload, pconf, cfg_kwargs, seed = job
    cfg = SimConfig(seed=seed, **cfg_kwargs)
    name = pconf["protocol"]
    if name == "oracle":
        return name, seed, [], oracle_report(contacts, workload, cfg, cfg.horizon)
    params = {k: pconf.get(k) for k in ("epsilon", "max_holders", "p_hand")}
    proto = make_protocol(name, delta=cfg.delta, **params)
    log_, rep = run_simulation(contacts, proto, workload, cfg)
    return name, seed, log_, rep


def _check_universe(population: set[str], contacts, workload, opted_out) -> None:
    offenders = set()
    for c in contacts:
        for n in (c.u, c.v):
            if n not in population:
                offenders.add(("contacts", n))
    for m in workload:
        if m.source not in population:
            offenders.add(("workload", m.source))
    for n in opted_out:
        if n not in population:
            offenders.add(("opt-out", n))
    if offenders:
        listing = ", ".join(f"{where}:{n}" for where, n in sorted(offenders)[:20])
        more = "" if len(offenders) <= 20 else f" (+{len(offenders) - 20} more)"
        raise UsageError(f"node universe mismatch: {listing}{more}")


def cmd_simulate(args) -> int:
    pconf = parse_protocol_config(_read_json(args.protocol))
    seeds = [int(s) for s in pconf.get("seeds", [args.seed])]
    profiles = {}
    if args.profiles:
        with open(args.profiles) as fh:
            profiles = read_profiles(fh)
    tags = {}
    if args.tags:
        with open(args.tags) as fh:
            tags = read_interest_tags(fh)
    opted_out: list[str] = []
    if args.opt_out:
        with open(args.opt_out) as fh:
            opted_out = sorted({ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")})
    with open(args.contacts) as fh:
        contacts = read_contacts(fh)
    with open(args.workload) as fh:
        try:
            workload = load_workload(fh, profiles)
        except (json.JSONDecodeError, KeyError) as e:
            raise UsageError(f"{args.workload}: bad workload: {e}") from e
    population = set(profiles) | set(tags)
    if not population:
        population = {c.u for c in contacts} | {c.v for c in contacts}
    _check_universe(population, contacts, workload, opted_out)

    name = pconf["protocol"]
    man = RunManifest("simulate", {"protocol": pconf, "horizon": args.horizon}, seeds)
    for p in (args.contacts, args.workload, args.protocol, args.profiles, args.tags, args.opt_out):
        man.add_input(p)
    logs = [] if name == "oracle" else [f"events_{name}_s{s}.ndjson" for s in seeds]
    out = Outputs(Path(args.out), man, ["metrics.csv"] + logs)
    cfg_kwargs = dict(profiles=profiles, interest_tags=tags, delta=float(pconf.get("delta", 0.5)),
                      opted_out=opted_out, horizon=args.horizon, nodes=sorted(population))
    jobs = [(contacts, workload, pconf, cfg_kwargs, s) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with Pool(min(args.jobs, len(jobs))) as pool:
            results = pool.map(_run_one, jobs)
    else:
        results = [_run_one(j) for j in jobs]
    out.csv("metrics.csv", lambda fh: write_metrics([(n, s, r) for n, s, _, r in results], fh))
    if name != "oracle":
        for n, s, lg, _ in results:
            out.ndjson(f"events_{n}_s{s}.ndjson", lg)
    out.finish()
    return 0


# -- compare -------------------------------------------------------------

def read_metrics(path: str | Path) -> list[dict]:
    with open(path) as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    if rows and set(rows[0]) != set(METRICS_COLUMNS):
        raise UsageError(f"{path}: not a metrics file")
    return rows


def _num(x):
    return None if x in ("", None) else float(x)


def _ratio(a, b):
    if a is None or b is None or b == 0:
        return None
    return a / b


COMPARE_COLUMNS = [
    "protocol", "seeds", "delivery_ratio", "mean_delay", "transmissions", "storage",
    "success_vs_oracle", "delay_vs_oracle", "delta_delay_vs_oracle", "transmissions_vs_oracle", "storage_vs_oracle",
    "success_vs_epidemic", "delay_vs_epidemic", "transmissions_vs_epidemic", "storage_vs_epidemic",
]


def compare_metrics(tables: Sequence[Sequence[dict]]) -> tuple[list[dict], str]:
    """Aggregate each (file, protocol) entry over seeds and form the ratios.

    The oracle reference is the first entry named ``oracle`` or, failing
    that, the first entry; the epidemic reference is the first ``epidemic``.
    """
    entries: list[tuple[str, list[dict]]] = []
    workloads = []
    for rows in tables:
        by_proto: dict[str, list[dict]] = {}
        for r in rows:
            by_proto.setdefault(r["protocol"], []).append(r)
        for proto in sorted(by_proto):
            rs = by_proto[proto]
            entries.append((proto, rs))
            for seed in sorted({r["seed"] for r in rs}):
                workloads.append((proto, frozenset(r["message_id"] for r in rs
                                                   if r["seed"] == seed and r["message_id"] != AGGREGATE_ID)))
    if len(entries) < 2:
        raise UsageError("compare needs at least two metrics inputs")
    ids = {w for _, w in workloads}
    if len(ids) > 1:
        raise UsageError("metrics inputs cover different workloads")
    agg = []
    seen: dict[str, int] = {}
    for proto, rs in entries:
        tot = [r for r in rs if r["message_id"] == AGGREGATE_ID]
        label = proto if proto not in seen else f"{proto}#{seen[proto] + 1}"
        seen[proto] = seen.get(proto, 0) + 1

        def mean(key):
            vals = [_num(r[key]) for r in tot if _num(r[key]) is not None]
            return float(np.mean(vals)) if vals else None

        agg.append({
            "protocol": label,
            "seeds": len(tot),
            "delivery_ratio": mean("delivery_ratio"),
            "mean_delay": mean("mean_delay"),
            "transmissions": mean("transmissions"),
            "storage": mean("storage"),
        })
    oracle = next((a for a in agg if a["protocol"] == "oracle"), agg[0])
    epidemic = next((a for a in agg if a["protocol"] == "epidemic"), None)
    for a in agg:
        a["success_vs_oracle"] = _ratio(a["delivery_ratio"], oracle["delivery_ratio"])
        a["delay_vs_oracle"] = _ratio(a["mean_delay"], oracle["mean_delay"])
        a["delta_delay_vs_oracle"] = None if a["delay_vs_oracle"] is None else a["delay_vs_oracle"] - 1.0
        a["transmissions_vs_oracle"] = _ratio(a["transmissions"], oracle["transmissions"])
        a["storage_vs_oracle"] = _ratio(a["storage"], oracle["storage"])
        for k in ("success", "delay", "transmissions", "storage"):
            src = {"success": "delivery_ratio", "delay": "mean_delay"}.get(k, k)
            a[f"{k}_vs_epidemic"] = None if epidemic is None else _ratio(a[src], epidemic[src])
    lines = [f"reference: {oracle['protocol']}" + ("" if epidemic else "; no epidemic input")]
    header = f"{'protocol':<14}{'delivery':>10}{'delay(s)':>12}{'tx':>10}{'succ/opt':>10}{'delay/opt':>10}" \
             f"{'tx/epi':>8}{'stor/epi':>9}"
    lines.append(header)

    def f(x, spec):
        return format(x, spec) if x is not None else format("-", ">" + spec.split(".")[0])

    for a in agg:
        lines.append(f"{a['protocol']:<14}{f(a['delivery_ratio'], '10.3f')}{f(a['mean_delay'], '12.1f')}"
                     f"{f(a['transmissions'], '10.0f')}{f(a['success_vs_oracle'], '10.3f')}"
                     f"{f(a['delay_vs_oracle'], '10.3f')}{f(a['transmissions_vs_epidemic'], '8.3f')}"
                     f"{f(a['storage_vs_epidemic'], '9.3f')}")
    return agg, "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    man = RunManifest("compare", {"figures": args.figures}, [args.seed])
    for p in args.metrics:
        man.add_input(p)
    tables = [read_metrics(p) for p in args.metrics]
    agg, text = compare_metrics(tables)
    names = ["comparison.csv", "comparison.txt"] + (["comparison.png"] if args.figures else [])
    out = Outputs(Path(args.out), man, names)

    def fill(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for a in agg:
            w.writerow(["" if a[c] is None else (repr(a[c]) if isinstance(a[c], float) else a[c])
                        for c in COMPARE_COLUMNS])

    out.csv("comparison.csv", fill)
    out.text("comparison.txt", text)
    if args.figures:
        from .report import comparison_figure

        comparison_figure(agg, out.path("comparison.png"), out.digest)
    out.finish()
    sys.stdout.write(text)
    return 0


# -- argument parsing ----------------------------------------------------

def _gaps(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad gap list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="profilecast", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1, help="parallel (seed, protocol) runs")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate TVC movement, session and contact traces")
    g.add_argument("config", nargs="?", help="TVC config JSON")
    g.add_argument("--preset", choices=sorted(PRESETS))
    dur = g.add_mutually_exclusive_group(required=True)
    dur.add_argument("--days", type=float)
    dur.add_argument("--duration", type=float, help="seconds")
    g.add_argument("--step", type=float, default=60.0, help="contact sampling step (s)")
    g.add_argument("--min-dwell", type=float, default=300.0, help="drop cell stays shorter than this (s)")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analyze", help="profiles, encounters, stability or clustering of a session trace")
    asub = a.add_subparsers(dest="analysis", required=True)

    def common(p):
        p.add_argument("trace")
        p.add_argument("--days", type=int, default=5, help="history window d")
        p.add_argument("--start", type=float, default=None, help="window start (s); default first midnight")
        p.add_argument("--threshold", type=float, default=0.9, help="SVD power threshold")
        p.add_argument("--tz-offset", type=float, default=0.0)
        p.set_defaults(func=cmd_analyze)
        return p

    common(asub.add_parser("profiles"))
    e = asub.add_parser("encounters")
    e.add_argument("trace")
    e.add_argument("--merge-gap", type=float, default=None, help="merge ping-pong sessions first")
    e.add_argument("--window-days", type=float, default=None)
    e.add_argument("--figures", action="store_true")
    e.set_defaults(func=cmd_analyze)
    s = common(asub.add_parser("stability"))
    s.add_argument("--gaps", type=_gaps, default=[1, 7, 14])
    s.add_argument("--figures", action="store_true")
    c = common(asub.add_parser("cluster"))
    c.add_argument("--distance-threshold", type=float, default=0.5)

    w = sub.add_parser("workload", help="synthesize a message workload from profiles")
    w.add_argument("profiles")
    w.add_argument("config", help="TVC config JSON (as written by gen)")
    w.add_argument("--mode", choices=["coupled", "independent"], default="coupled")
    w.add_argument("--count", type=int, default=50)
    w.add_argument("--start", type=float, default=5.0, help="days")
    w.add_argument("--spread", type=float, default=6.0, help="days")
    w.add_argument("--ttl", type=float, default=3.0, help="days")
    w.add_argument("--max-hops", type=int, default=None)
    w.add_argument("--max-copies", type=int, default=None)
    w.set_defaults(func=cmd_workload)

    m = sub.add_parser("simulate", help="replay a contact trace under one protocol")
    m.add_argument("--contacts", required=True)
    m.add_argument("--workload", required=True)
    m.add_argument("--protocol", required=True, help="protocol config JSON")
    m.add_argument("--profiles")
    m.add_argument("--tags", help="node,tag CSV")
    m.add_argument("--opt-out", help="file with one opted-out node per line")
    m.add_argument("--horizon", type=float, default=None)
    m.set_defaults(func=cmd_simulate)

    k = sub.add_parser("compare", help="ratios vs oracle and epidemic")
    k.add_argument("metrics", nargs="+")
    k.add_argument("--figures", action="store_true")
    k.set_defaults(func=cmd_compare)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError, TraceParseError, TraceValidationError, SimulationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
