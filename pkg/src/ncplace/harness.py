"""Experiment sweeps: corpora, placement strategies, simulation and summary tables."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import topology as T
from .config import ExperimentConfig
from .selection import CENTRALIZED, LOCAL, RANDOM, SelectionPlan, all_nc, promote, select
from .simulator import monte_carlo
from .topology import OverlayGraph, TopologyError

log = logging.getLogger(__name__)

PLACEMENT_SIZES = (32, 56)
PLACEMENT_DIAMETERS = (6, 8)
ESTIMATOR_MAX_NODES = 20

FIELDS = ["topology", "strategy", "radius", "seed", "A", "nodes", "est_delay_seconds", "sim_delay_seconds",
          "ci95_delay_seconds", "throughput_pps", "norm_delay", "norm_throughput", "completed", "status"]
REFERENCES = ("all_sf", "all_nc", "maxflow_nc", "maxflow_routing")


# ---------------------------------------------------------------------------
# corpora


def estimator_corpus(count: int = 20, seed: int = 0) -> list[OverlayGraph]:
    """Small overlays (at most 20 nodes) for checking the estimator against simulation."""
    return [T.generate(8 + i % 12, 1, 3, seed=seed + i) for i in range(count)]


def _sized_graph(trace: T.TraceMatrix, target: int, diameter: int, seed: int) -> OverlayGraph | None:
    lo, hi = target, PLACEMENT_SIZES[1]
    for n in range(target, 8 * target, 4):
        try:
            g = trace.generate(n, seed=seed)
        except TopologyError:
            return None
        if len(g) >= lo:
            return g if len(g) <= hi and g.diameter() == diameter else None
    return None


def placement_corpus(count: int = 10, seed: int = 0, max_attempts: int = 500) -> list[OverlayGraph]:
    """Overlays of 32 to 56 nodes grown over geometric synthetic traces.

    Graph ``i`` targets a size spread evenly over the range and a diameter
    alternating between 6 and 8 hops; traces are redrawn until both hold.
    """
    lo, hi = PLACEMENT_SIZES
    out = []
    for i in range(count):
        target = lo + round(i * (hi - lo) / max(1, count - 1))
        want = PLACEMENT_DIAMETERS[i % 2]
        for a in range(max_attempts):
            trace = T.synthetic_trace(seed=seed * 1_000_003 + 1000 * i + a)
            g = _sized_graph(trace, target, want, a)
            if g is not None:
                out.append(g)
                break
        else:
            raise TopologyError(f"no {target}-node graph with diameter {want} after {max_attempts} traces")
    return out


def load_topologies(config: ExperimentConfig) -> list[tuple[str, OverlayGraph]]:
    if config.topology == "placement":
        graphs = placement_corpus(config.count, config.corpus_seed)
        return [(f"placement-{i:02d}", g) for i, g in enumerate(graphs)]
    if config.topology == "estimator":
        graphs = estimator_corpus(config.count, config.corpus_seed)
        return [(f"estimator-{i:02d}", g) for i, g in enumerate(graphs)]
    if config.topology == "generate":
        g = T.generate(config.n_nodes, config.n_sources, config.n_clients, config.parents,
                       loss_rate=config.loss, seed=config.topo_seed)
        return [(f"generated-{config.topo_seed}", g)]
    return [(Path(p).stem, T.load(p)) for p in config.topology_files]


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepResults:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r.get(k)) for k in FIELDS})

    @classmethod
    def load(cls, path) -> "SweepResults":
        with open(path, newline="") as fh:
            rows = [_parse(r) for r in csv.DictReader(fh)]
        return cls(rows)

    def cells(self, strategy: str | None = None) -> list[dict]:
        return [r for r in self.rows if r["strategy"] not in REFERENCES
                and (strategy is None or r["strategy"] == strategy)]

    def reference(self, topology: str, kind: str) -> dict | None:
        for r in self.rows:
            if r["topology"] == topology and r["strategy"] == kind:
                return r
        return None

    @property
    def topologies(self) -> list[str]:
        return sorted({r["topology"] for r in self.rows})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return " ".join(map(str, v))
    return v


_INT = ("radius", "seed", "A", "completed")
_FLOAT = ("est_delay_seconds", "sim_delay_seconds", "ci95_delay_seconds", "throughput_pps", "norm_delay",
          "norm_throughput")


def _parse(r: dict) -> dict:
    out = dict(r)
    for k in _INT:
        out[k] = int(r[k]) if r[k] != "" else None
    for k in _FLOAT:
        out[k] = float(r[k]) if r[k] != "" else math.nan
    out["nodes"] = [int(x) for x in r["nodes"].split()]
    return out


def _simulate_cell(args):
    g, nodes, G, runs, seed, packet_size = args
    try:
        s = monte_carlo(promote(g, nodes) if nodes else g, G, runs=runs, seed=seed, packet_size=packet_size)
        return s.mean_delay, float(np.mean([c.ci95_delay for c in s.clients.values()])), s.total_rate, \
            min(c.completed for c in s.clients.values()), ""
    except Exception as exc:  # recorded per cell; the sweep goes on
        return math.nan, math.nan, math.nan, 0, f"error: {exc}"


def _plans(g: OverlayGraph, config: ExperimentConfig, top: int) -> list[tuple[SelectionPlan, str, dict]]:
    out = []
    variants: list[tuple[str, dict]] = []
    for s in config.strategies:
        if s == CENTRALIZED:
            variants.append((s, {}))
        elif s == LOCAL:
            variants += [(s, {"radius": d}) for d in config.radii]
        elif s == RANDOM:
            variants += [(s, {"seed": k}) for k in config.seeds]
    for s, kw in variants:
        try:
            out.append((select(g, s, top, config.G, **kw), "", kw))
        except Exception as exc:
            out.append((SelectionPlan(s, top, radius=kw.get("radius"), seed=kw.get("seed")), f"error: {exc}", kw))
    return out


def run_sweep(config: ExperimentConfig) -> SweepResults:
    """Select, promote and simulate every (topology, strategy, budget) cell.

    All cells share ``config.sim_seed``, so configurations are compared on
    common random numbers and identical configurations give identical rows.
    Reference rows per topology: all-SF and all-NC simulations and the two
    lossy max-flow bounds.  Delays and throughputs are also reported
    normalized to all-NC.
    """
    config.validate()
    topologies = load_topologies(config)
    top = max(config.budgets) if config.budgets else 0
    jobs: dict[tuple[int, frozenset], tuple] = {}
    pending: list[tuple[int, dict]] = []
    refs: list[tuple[int, dict]] = []

    def job(ti, nodes):
        key = (ti, frozenset(nodes))
        if key not in jobs:
            jobs[key] = (topologies[ti][1], sorted(nodes), config.G, config.runs, config.sim_seed, config.packet_size)
        return key

    for ti, (name, g) in enumerate(topologies):
        log.info("planning %s (%d nodes)", name, len(g))
        refs.append((ti, {"topology": name, "strategy": "all_sf", "nodes": [], "key": job(ti, [])}))
        refs.append((ti, {"topology": name, "strategy": "all_nc", "nodes": list(g.sf_nodes),
                          "key": job(ti, g.sf_nodes)}))
        for kind, mode in (("maxflow_nc", "network_coding"), ("maxflow_routing", "routing")):
            refs.append((ti, {"topology": name, "strategy": kind, "nodes": [],
                              "throughput_pps": T.max_flow_bound(g, mode, lossy=True)}))
        for plan, err, kw in _plans(g, config, top):
            for A in config.budgets:
                row = {"topology": name, "strategy": plan.strategy, "radius": kw.get("radius"),
                       "seed": kw.get("seed"), "A": A}
                if err:
                    row.update(nodes=[], status=err)
                elif A > len(plan):
                    row.update(nodes=plan.nodes, status=f"error: budget {A} exceeds {len(plan)} SF nodes")
                else:
                    row.update(nodes=plan.nodes[:A], est_delay_seconds=plan.base_delay if A == 0 else plan.delays[A - 1],
                               key=job(ti, plan.nodes[:A]))
                pending.append((ti, row))

    keys = list(jobs)
    log.info("simulating %d distinct configurations", len(keys))
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            outcomes = dict(zip(keys, pool.map(_simulate_cell, [jobs[k] for k in keys])))
    else:
        outcomes = {k: _simulate_cell(jobs[k]) for k in keys}

    nc_ref = {}
    rows = []
    for ti, row in refs + pending:
        key = row.pop("key", None)
        if key is not None:
            d, ci, thr, done, status = outcomes[key]
            row.update(sim_delay_seconds=d, ci95_delay_seconds=ci, throughput_pps=thr, completed=done,
                       status=row.get("status") or status or "ok")
        else:
            row.setdefault("status", "ok")
        if row["strategy"] == "all_nc":
            nc_ref[ti] = row
        rows.append((ti, row))
    out = []
    for ti, row in rows:
        ref = nc_ref[ti]
        for k in ("est_delay_seconds", "sim_delay_seconds", "ci95_delay_seconds", "throughput_pps"):
            row.setdefault(k, math.nan)
        row.setdefault("completed", None)
        row["norm_delay"] = _ratio(row["sim_delay_seconds"], ref["sim_delay_seconds"])
        row["norm_throughput"] = _ratio(row["throughput_pps"], ref["throughput_pps"])
        out.append(row)
    return SweepResults(out)


def _ratio(a: float, b: float) -> float:
    return a / b if b and math.isfinite(a) and math.isfinite(b) else math.nan


def write_outputs(results: SweepResults, outdir) -> Path:
    """``results.csv``, ``compare.csv`` and the plot tables under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    results.to_csv(out / "results.csv")
    compare(results).to_csv(out / "compare.csv")
    emit_plots_data(results, out)
    return out


# ---------------------------------------------------------------------------
# summaries


def _label(r: dict) -> str:
    return f"local_d{r['radius']}" if r["strategy"] == LOCAL else r["strategy"]


def _by_cell(results: SweepResults) -> dict[tuple[str, str, int], list[dict]]:
    """Usable cells grouped by (label, topology, A); random seeds share a group."""
    groups = defaultdict(list)
    for r in results.cells():
        if r["status"] == "ok" and math.isfinite(r["sim_delay_seconds"]):
            groups[(_label(r), r["topology"], r["A"])].append(r)
    return groups


@dataclass
class Comparison:
    rows: list[dict]

    def to_csv(self, path) -> None:
        fields = ["kind", "strategy", "A", "wins", "losses", "ties", "topologies", "agreement"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in fields})

    def record(self, kind: str, strategy: str, A: int) -> dict | None:
        for r in self.rows:
            if (r["kind"], r["strategy"], r["A"]) == (kind, strategy, A):
                return r
        return None


def compare(results: SweepResults, baseline: str = RANDOM, rel_tol: float = 1e-12) -> Comparison:
    """Per-budget win/loss/tie counts against ``baseline`` and local-vs-centralized agreement.

    Random placements enter as the mean simulated delay over their seeds.
    Agreement at budget A is the share of topologies where the local
    strategy's first A picks equal the centralized ones as a set.
    """
    groups = _by_cell(results)
    mean = {k: float(np.mean([r["sim_delay_seconds"] for r in v])) for k, v in groups.items()}
    labels = sorted({k[0] for k in groups})
    budgets = sorted({k[2] for k in groups})
    rows = []
    for lab in labels:
        for A in budgets:
            wins = losses = ties = 0
            for topo in results.topologies:
                a, b = mean.get((lab, topo, A)), mean.get((baseline, topo, A))
                if a is None or b is None:
                    continue
                if abs(a - b) <= rel_tol * max(abs(a), abs(b)):
                    ties += 1
                elif a < b:
                    wins += 1
                else:
                    losses += 1
            n = wins + losses + ties
            if n:
                rows.append({"kind": f"vs_{baseline}", "strategy": lab, "A": A, "wins": wins, "losses": losses,
                             "ties": ties, "topologies": n})
    for lab in labels:
        if not lab.startswith("local"):
            continue
        for A in budgets:
            if A < 1:
                continue
            hits = total = 0
            for topo in results.topologies:
                loc, cen = groups.get((lab, topo, A)), groups.get((CENTRALIZED, topo, A))
                if not loc or not cen:
                    continue
                total += 1
                hits += set(loc[0]["nodes"]) == set(cen[0]["nodes"])
            if total:
                rows.append({"kind": "agreement", "strategy": lab, "A": A, "topologies": total,
                             "agreement": hits / total})
    return Comparison(rows)


def emit_plots_data(results: SweepResults, outdir) -> list[Path]:
    """``delay.csv`` and ``throughput.csv``: normalized metric per budget, one column per strategy.

    Values are means over topologies (random seeds averaged first);
    ``all_sf`` is the constant all-SF reference.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    groups = _by_cell(results)
    labels = sorted({k[0] for k in groups})
    budgets = sorted({k[2] for k in groups})
    paths = []
    for metric, col in (("delay", "norm_delay"), ("throughput", "norm_throughput")):
        series = labels + (["all_sf"] if labels else [])
        sf = [r[col] for r in results.rows if r["strategy"] == "all_sf" and math.isfinite(r[col])]
        path = out / f"{metric}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["A"] + series)
            for A in budgets:
                line = [A]
                for lab in labels:
                    per_topo = [float(np.mean([r[col] for r in groups[(lab, t, A)]]))
                                for t in results.topologies if (lab, t, A) in groups]
                    line.append(float(np.mean(per_topo)) if per_topo else math.nan)
                line.append(float(np.mean(sf)) if sf else math.nan)
                w.writerow(line)
        paths.append(path)
    return paths
