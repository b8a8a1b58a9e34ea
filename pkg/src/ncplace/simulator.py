"""Discrete-event packet-level simulation of one generation over an overlay.

Each edge owns a deterministic transmission schedule at ``k / b`` seconds;
equal timestamps are served in topological edge order.  Sources emit fresh
random combinations, SF nodes forward from MB then replay from CB, NC nodes
recombine their innovative buffer, and clients decode progressively.  All
randomness comes from one SplitMix64 stream, so the compiled and pure-Python
cores produce identical results for a given seed.
"""
from __future__ import annotations

import csv
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .rnc import PACKET_SIZE, CodedPacket
from .topology import OverlayGraph, Role, client_max_flows

DEADLINE_FACTOR = 50.0


@dataclass
class SimResult:
    G: int
    seed: int
    deadline: float
    decode_time: dict[int, float]
    first_time: dict[int, float]
    useful_rate: dict[int, float]
    rank: dict[int, int]
    innovative: dict[int, int]
    duplicates: dict[int, int]
    overflow: dict[int, int]
    edge_sent: dict[tuple[int, int], int]
    edge_lost: dict[tuple[int, int], int]
    edge_delivered: dict[tuple[int, int], int]
    edge_in_flight: dict[tuple[int, int], int]
    end_time: float
    packets_created: int
    decoded: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def clients(self) -> list[int]:
        return sorted(self.decode_time)

    @property
    def complete(self) -> dict[int, bool]:
        return {c: not math.isnan(t) for c, t in self.decode_time.items()}

    @property
    def incomplete(self) -> list[int]:
        return [c for c, ok in self.complete.items() if not ok]

    @property
    def mean_delay(self) -> float:
        vals = list(self.decode_time.values())
        return float(np.mean(vals)) if vals else math.nan

    @property
    def packets_sent(self) -> int:
        return sum(self.edge_sent.values())

    @property
    def packets_lost(self) -> int:
        return sum(self.edge_lost.values())

    def rows(self) -> list[dict]:
        return [{"client_id": c, "seed": self.seed, "decode_time_seconds": self.decode_time[c],
                 "useful_rate_pps": self.useful_rate[c], "rank": self.rank[c],
                 "innovative": self.innovative[c], "duplicates": self.duplicates[c],
                 "complete": int(self.complete[c])} for c in self.clients]

    def to_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["client_id"])
            w.writeheader()
            w.writerows(rows)


def default_deadline(g: OverlayGraph, G: int) -> float:
    """Fifty times the slowest client's cut-limited delivery time."""
    flows = [f for f in client_max_flows(g).values() if f > 0]
    if not flows:
        return 0.0
    return DEADLINE_FACTOR * G / min(flows)


class CompiledGraph:
    """Kernel-ready arrays for one overlay; nodes in topological order."""

    def __init__(self, g: OverlayGraph):
        self.graph = g
        self.order = g.topo_order()
        idx = {u: i for i, u in enumerate(self.order)}
        self.edges = g.edge_order()
        self.role = np.array([int(g.role(u)) for u in self.order], dtype=np.int64)
        self.h = np.array([g.nodes[u].h for u in self.order], dtype=np.int64)
        self.esrc = np.array([idx[a] for a, _ in self.edges], dtype=np.int64)
        self.edst = np.array([idx[b] for _, b in self.edges], dtype=np.int64)
        self.bw = np.array([g.edges[k].bandwidth for k in self.edges], dtype=np.float64)
        self.loss = np.array([g.edges[k].loss for k in self.edges], dtype=np.float64)
        self.clients = [i for i, u in enumerate(self.order) if self.role[i] == Role.CLIENT]


def simulate(g: OverlayGraph | CompiledGraph, G: int = 32, packet_size: int = PACKET_SIZE,
             deadline: float | None = None, seed: int = 0, latency: float = 0.0, carry_payload: bool = False,
             backend: str | None = None, trace_path=None, generation_id: int = 0) -> SimResult:
    """Run one generation and report per-client decoding delay and useful rate.

    A packet whose transmission starts at ``t`` on an edge of bandwidth ``b``
    arrives at ``t + 1/b + latency``.  Delays depend only on coefficient
    vectors, so payload bytes are carried only when ``carry_payload`` is set
    (needed for bit-exact decode checks and the packet trace).
    ``trace_path`` writes one wire-format record per delivery and requires
    the pure-Python core.
    """
    if G < 1:
        raise ValueError("G must be >= 1")
    cg = g if isinstance(g, CompiledGraph) else CompiledGraph(g)
    if deadline is None:
        deadline = default_deadline(cg.graph, G)
    order, edges = cg.order, cg.edges
    seed = int(seed) & ((1 << 64) - 1)
    P = packet_size if (carry_payload or trace_path is not None) else 0
    natives = np.random.default_rng(seed).integers(0, 256, (G, P), dtype=np.uint8)
    core = kernels.backend(backend) if backend else kernels
    trace = None
    fh = None
    if trace_path is not None:
        core = kernels.backend("python")
        fh = open(trace_path, "wb")

        def trace(t, e, coef, pay):
            fh.write(CodedPacket(generation_id, coef, pay).to_bytes())

    try:
        raw = core.sim_run(cg.role, cg.h, cg.esrc, cg.edst, cg.bw, cg.loss, G, natives, seed,
                           float(deadline), float(latency), trace)
    finally:
        if fh is not None:
            fh.close()

    decode_time, first_time, rate = {}, {}, {}
    for i in cg.clients:
        u = order[i]
        dt, ft = float(raw["decode_time"][i]), float(raw["first_time"][i])
        rank, fc = int(raw["rank"][i]), int(raw["first_count"][i])
        decode_time[u] = dt
        first_time[u] = ft
        stop = dt if not math.isnan(dt) else float(raw["end_time"])
        if math.isnan(ft) or stop <= ft:
            rate[u] = 0.0 if math.isnan(ft) or rank <= fc else math.inf
        else:
            rate[u] = (rank - fc) / (stop - ft)

    def per_node(key):
        return dict(zip(order, raw[key].tolist()))

    def per_edge(key):
        return dict(zip(edges, raw[key].tolist()))

    return SimResult(
        G=G, seed=seed, deadline=float(deadline), decode_time=decode_time, first_time=first_time,
        useful_rate=rate, rank=per_node("rank"), innovative=per_node("innovative"),
        duplicates=per_node("duplicates"), overflow=per_node("overflow"),
        edge_sent=per_edge("edge_sent"), edge_lost=per_edge("edge_lost"),
        edge_delivered=per_edge("edge_delivered"), edge_in_flight=per_edge("edge_in_flight"),
        end_time=float(raw["end_time"]), packets_created=int(raw["packets_created"]),
        decoded={order[i]: v for i, v in raw["decoded"].items()},
    )


def read_trace(path, G: int, packet_size: int = PACKET_SIZE) -> list[CodedPacket]:
    data = Path(path).read_bytes()
    size = 4 + G + packet_size
    if len(data) % size:
        raise ValueError(f"trace length {len(data)} is not a multiple of the {size}-byte record")
    return [CodedPacket.from_bytes(data[i:i + size], G) for i in range(0, len(data), size)]


def run_seed(master: int, i: int) -> int:
    """Seed of the ``i``-th independent run derived from ``master``."""
    return int(np.random.SeedSequence([int(master), int(i)]).generate_state(1, np.uint64)[0])


def measure_duplicates(result: SimResult) -> float:
    """Fraction of client arrivals that were not innovative."""
    clients = result.clients
    dup = sum(result.duplicates[c] for c in clients)
    total = dup + sum(result.innovative[c] for c in clients)
    return dup / total if total else 0.0


@dataclass
class ClientStats:
    client: int
    mean_delay: float
    std_delay: float
    ci95_delay: float
    mean_rate: float
    std_rate: float
    ci95_rate: float
    completed: int
    runs: int


@dataclass
class MonteCarloSummary:
    G: int
    runs: int
    seed: int
    clients: dict[int, ClientStats]
    duplicate_fraction: float

    @property
    def mean_delay(self) -> float:
        vals = [s.mean_delay for s in self.clients.values()]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def total_rate(self) -> float:
        return float(sum(s.mean_rate for s in self.clients.values()))

    def rows(self) -> list[dict]:
        return [{"client_id": s.client, "runs": s.runs, "completed": s.completed,
                 "mean_delay_seconds": s.mean_delay, "std_delay_seconds": s.std_delay,
                 "ci95_delay_seconds": s.ci95_delay, "mean_rate_pps": s.mean_rate,
                 "std_rate_pps": s.std_rate, "ci95_rate_pps": s.ci95_rate}
                for s in self.clients.values()]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["client_id", "runs", "completed", "mean_delay_seconds",
                                               "std_delay_seconds", "ci95_delay_seconds", "mean_rate_pps",
                                               "std_rate_pps", "ci95_rate_pps"])
            w.writeheader()
            w.writerows(self.rows())


_Z95 = statistics.NormalDist().inv_cdf(0.975)


def _stats(xs: list[float]) -> tuple[float, float, float]:
    if not xs:
        return math.nan, math.nan, math.nan
    mean = float(np.mean(xs))
    if len(xs) < 2:
        return mean, 0.0, 0.0
    sd = float(np.std(xs, ddof=1))
    return mean, sd, _Z95 * sd / math.sqrt(len(xs))


def _one(args):
    g, G, seed, kw = args
    return simulate(g, G, seed=seed, **kw)


def monte_carlo(g: OverlayGraph, G: int = 32, runs: int = 100, seed: int = 0, workers: int = 1,
                **kwargs) -> MonteCarloSummary:
    """Aggregate ``runs`` independently seeded simulations.

    Delay statistics cover completed runs only; ``completed`` counts them.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if "deadline" not in kwargs or kwargs["deadline"] is None:
        kwargs["deadline"] = default_deadline(g, G)
    cg = CompiledGraph(g)
    jobs = [(cg, G, run_seed(seed, i), kwargs) for i in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    clients = {}
    for c in g.clients:
        delays = [r.decode_time[c] for r in results if not math.isnan(r.decode_time[c])]
        rates = [r.useful_rate[c] for r in results if math.isfinite(r.useful_rate[c])]
        md, sd, cd = _stats(delays)
        mr, sr, cr = _stats(rates)
        clients[c] = ClientStats(c, md, sd, cd, mr, sr, cr, len(delays), runs)
    dup = float(np.mean([measure_duplicates(r) for r in results]))
    return MonteCarloSummary(G, runs, seed, clients, dup)
