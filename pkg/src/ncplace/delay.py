"""Analytic per-client decoding-delay estimation.

Every source and NC node is treated as an independent sender whose packets
reach a client over the sub-DAG that avoids other coding nodes.  Each
sender's stand-alone delay comes from either its full outgoing rate
(over-provisioned senders) or a rank-arrival recursion driven by the rate of
useful packets it receives (rate-limited senders); the client's delay is the
harmonic composite over senders.  SF replication rates are refined from the
buffer model until the delays settle.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .buffer_model import drop_probability, equivalent_replication, replication_levels
from .topology import OverlayGraph, Role, nc_processing_order

INF = math.inf
MASS_TOL = 1e-9
MIN_MASS = 0.999
STEP_CAP_FACTOR = 50
CERTAIN_LOSS = 1.0 - 1e-12


class DivergenceError(ArithmeticError):
    """Rank recursion did not accumulate enough probability mass before the step cap."""


# ---------------------------------------------------------------------------
# rank-arrival recursion


def arrival_pmf(nu: float, eps: float, k: int | None = None):
    """Probability that ``k`` of the ``nu`` packets sent per useful arrival reach the client.

    Binomial(nu, 1 - eps), linearly interpolated between the nearest integers
    when ``nu`` is fractional.  Returns the whole pmf when ``k`` is None.
    """
    if nu < 1:
        raise ValueError("nu must be >= 1")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    A = kernels.arrival_pmf(nu, eps)
    if k is None:
        return A
    return float(A[k]) if 0 <= k < len(A) else 0.0


@dataclass(frozen=True)
class RankTable:
    """``P[r, n]``: client rank r after the sender's n-th useful arrival.

    ``first[r, n]``: probability the client rank first reaches ``r`` at step ``n``.
    """
    nu: float
    eps: float
    G: int
    P: np.ndarray
    first: np.ndarray


def rank_recursion(nu: float, eps: float, G: int, n_max: int) -> RankTable:
    """Tabulate the client-rank distribution over the sender's useful arrivals.

    Each arrival lets the sender emit ``nu`` combinations, ``k`` of which
    reach the client with probability ``A_k``; the client rank is capped by
    both the sender's rank ``n`` and ``G``.
    """
    if G < 1 or n_max < G:
        raise ValueError("need G >= 1 and n_max >= G")
    A = arrival_pmf(nu, eps)
    tail = np.cumsum(A[::-1])[::-1]
    P = np.zeros((G + 1, n_max + 1))
    first = np.zeros((G + 1, n_max + 1))
    P[0, 0] = 1.0
    for n in range(1, n_max + 1):
        cap = min(n, G)
        P[G, n] = P[G, n - 1]
        for src in range(min(n - 1, G - 1) + 1):
            p = P[src, n - 1]
            if p == 0.0:
                continue
            for k in range(len(A)):
                if src + k >= cap:
                    P[cap, n] += p * tail[k]
                    break
                P[src + k, n] += p * A[k]
            for r in range(src + 1, cap + 1):
                if r - src < len(tail):
                    first[r, n] += p * tail[r - src]
    return RankTable(nu, eps, G, P, first)


def expected_sources(table: RankTable, G: int | None = None) -> float:
    """Expected number of sender arrivals until the client reaches rank G."""
    G = table.G if G is None else G
    hits = table.first[G]
    mass = float(hits.sum())
    if mass < MIN_MASS:
        raise DivergenceError(f"rank-G probability mass {mass:.6f} < {MIN_MASS} within {hits.size - 1} steps")
    return float(np.dot(np.arange(hits.size), hits))


@lru_cache(maxsize=65536)
def expected_useful(nu: float, eps: float, G: int) -> float:
    """Fast kernel for ``expected_sources(rank_recursion(...))`` with adaptive truncation."""
    if eps >= 1.0:
        raise DivergenceError("every packet is lost")
    if nu == 1.0:
        # the sender never limits the client: negative binomial mean
        return G / (1.0 - eps)
    E, mass, _ = kernels.expected_useful(float(nu), float(eps), int(G), MASS_TOL, STEP_CAP_FACTOR * G)
    if mass < MIN_MASS:
        raise DivergenceError(f"rank-G probability mass {mass:.6f} < {MIN_MASS} after {STEP_CAP_FACTOR * G} steps")
    return E


def over_provisioned_delay(b_o: float, eps: float, G: int) -> float:
    rate = b_o * (1.0 - eps)
    return G / rate if rate > 0 else INF


def single_node_delay(b_o: float, N: float, eps: float, G: int, mode: str | None = None) -> tuple[float, str]:
    """Stand-alone delay of one sender and the regime used.

    ``mode`` is ``"limited"`` (useful input slower than the output rate),
    ``"over"`` or None to choose from ``N`` versus ``b_o``.  A rate-limited
    recursion that fails to converge falls back to the over-provisioned form,
    which is its limit, and reports ``"fallback"``.
    """
    if mode is None:
        mode = "limited" if N <= b_o else "over"
    if mode == "over":
        return over_provisioned_delay(b_o, eps, G), "over"
    if N <= 0 or eps >= 1.0:
        return INF, "idle"
    nu = max(1.0, b_o / N)
    try:
        return expected_useful(nu, eps, G) / N, "limited"
    except DivergenceError:
        return over_provisioned_delay(b_o, eps, G), "fallback"


def invert_differential(delta_n: float, b_o: float, b_i: float, eps: float, r_hat: float) -> float:
    """Useful input rate of a node from the useful rate it relays while in SF mode."""
    if delta_n <= 0:
        return 0.0
    if b_o >= b_i:
        frac = 1.0 - eps ** r_hat
    else:
        frac = (b_o / b_i) * (1.0 - eps)
    return delta_n / frac if frac > 0 else 0.0


# ---------------------------------------------------------------------------
# loss probabilities

class _View:
    """Per-configuration cache of the quantities the loss recursion needs."""

    def __init__(self, g: OverlayGraph, absorbing: frozenset = frozenset()):
        self.g = g
        self.absorbing = absorbing
        self.rev = g.topo_order()[::-1]
        self.role = {u: g.role(u) for u in g.nodes}
        self.bo = {u: g.out_bw(u) for u in g.nodes}
        self.bi = {u: g.in_bw(u) for u in g.nodes}
        self.beta = {u: (drop_probability(self.bo[u], self.bi[u])
                         if self.role[u] == Role.SF and self.bi[u] > 0 else 0.0)
                     for u in g.nodes}
        self.ratio = {u: (max(1.0, self.bo[u] / self.bi[u]) if self.bi[u] > 0 else 1.0) for u in g.nodes}
        self.out = {}
        for u in g.nodes:
            tot = self.bo[u]
            self.out[u] = [(v, e.bandwidth / tot, e.loss) for v in g.children(u)
                           for e in (g.edge(u, v),)]

    def loss_map(self, c: int, r_hat: Mapping[int, float]) -> dict[int, float]:
        eps = {}
        for x in self.rev:
            if x == c:
                eps[x] = 0.0
                continue
            out = self.out[x]
            if not out:
                eps[x] = 1.0
                continue
            acc = 0.0
            for v, rho, pi in out:
                if v == c:
                    term = pi
                elif self.role[v] != Role.SF or v in self.absorbing:
                    term = 1.0
                else:
                    beta = self.beta[v]
                    down = eps[v] ** r_hat.get(v, self.ratio[v])
                    term = pi + (1.0 - pi) * (beta + (1.0 - beta) * down)
                acc += rho * term
            eps[x] = 1.0 if acc >= CERTAIN_LOSS else acc
        return eps


def loss_probability(g: OverlayGraph, u: int, c: int, r_hat: Mapping[int, float] | None = None) -> float:
    """Probability that a packet sent by ``u`` never reaches client ``c``.

    Packets forwarded into coding nodes, sources or other clients count as
    lost for this sender.  ``r_hat`` overrides the replication rate of SF
    nodes; missing entries default to ``max(1, b_o/b_i)``.
    """
    if g.role(c) != Role.CLIENT:
        raise ValueError(f"{c} is not a client")
    return _View(g).loss_map(c, r_hat or {})[u]


# ---------------------------------------------------------------------------
# full estimate


@dataclass
class SenderEstimate:
    node: int
    client: int
    eps: float
    useful_rate: float
    delay: float
    mode: str


@dataclass
class DelayReport:
    G: int
    delays: dict[int, float]
    senders: dict[tuple[int, int], SenderEstimate]
    iterations: int
    converged: bool
    unreachable: list[int] = field(default_factory=list)
    fallbacks: int = 0
    r_hat: dict[int, dict[int, float]] = field(default_factory=dict)
    # overflow of a forwarded packet is charged to the receiving node
    overflow_at_receiver: bool = True

    @property
    def clients(self) -> list[int]:
        return sorted(self.delays)

    @property
    def total_delay(self) -> float:
        return float(sum(self.delays.values()))

    @property
    def mean_delay(self) -> float:
        return self.total_delay / len(self.delays) if self.delays else INF

    def sender_delays(self, c: int) -> dict[int, float]:
        return {u: s.delay for (u, cc), s in self.senders.items() if cc == c}

    def rows(self) -> list[dict]:
        return [{"client_id": c, "t_c_seconds": self.delays[c], "iterations": self.iterations,
                 "converged": int(self.converged)} for c in self.clients]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["client_id", "t_c_seconds", "iterations", "converged"])
            w.writeheader()
            w.writerows(self.rows())

    def senders_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "client_id", "eps", "useful_rate_pps", "t_seconds", "mode"])
            for (u, c) in sorted(self.senders):
                s = self.senders[(u, c)]
                w.writerow([u, c, s.eps, s.useful_rate, s.delay, s.mode])


def _composite(delays: Iterable[float]) -> float:
    rate = sum(1.0 / t for t in delays if t > 0 and t < INF)
    return 1.0 / rate if rate > 0 else INF


def _close(a: Mapping[int, float], b: Mapping[int, float], tol: float) -> bool:
    for k, x in a.items():
        y = b[k]
        if math.isinf(x) or math.isinf(y):
            if x != y:
                return False
        elif abs(x - y) > tol * abs(y):
            return False
    return True


def _interpolated_r_hat(h: int, R: float, n_real: float, eps: float) -> float:
    """R-hat at a fractional arrival count, linear between the neighbouring integers.

    Rounding would make the refinement map discontinuous and can trap it in a
    two-cycle.
    """
    def at(n: int) -> float:
        values, counts = replication_levels(h, R, n)
        return equivalent_replication(values, eps, counts)

    lo = math.floor(n_real)
    w = n_real - lo
    return at(lo) if w == 0.0 else (1.0 - w) * at(lo) + w * at(lo + 1)


def estimate(g: OverlayGraph, G: int = 32, max_iter: int = 20, tol: float = 1e-4) -> DelayReport:
    """Estimate the decoding delay of every client of ``g`` for generation size ``G``."""
    if not g.sources or not g.clients:
        raise ValueError("graph needs at least one source and one client")
    base = _View(g)
    sources = g.sources
    clients = g.clients
    order = nc_processing_order(g)
    sf_nodes = [u for u in g.sf_nodes if base.bi[u] > 0]
    ancestors = {u: g.ancestors(u) for u in order}
    # NC nodes below u have no useful rate yet; they forward transparently while u is probed
    sf_view = {u: _View(g.with_roles({d: Role.SF for d in g.descendants(u) | {u}
                                      if d in g.nodes and g.role(d) == Role.NC}))
               for u in order}
    # a silent node keeps its in-edges but forwards nothing
    silent_view = {u: _View(sf_view[u].g, frozenset([u])) for u in order}

    r_hat: dict[int, dict[int, float]] = {c: {} for c in clients}
    prev: dict[int, float] | None = None
    converged = False
    fallbacks = 0
    it = 0
    for it in range(1, max_iter + 1):
        fallbacks = 0
        delays: dict[int, float] = {}
        senders: dict[tuple[int, int], SenderEstimate] = {}
        eps_all: dict[int, dict[int, float]] = {}
        for c in clients:
            rc = r_hat[c]
            eps = base.loss_map(c, rc)
            eps_all[c] = eps
            N: dict[int, float] = {}
            t: dict[int, float] = {}
            for s in sources:
                N[s] = base.bo[s] * (1.0 - eps[s])
                t[s] = over_provisioned_delay(base.bo[s], eps[s], G)
                senders[(s, c)] = SenderEstimate(s, c, eps[s], N[s], t[s], "source")
            for u in order:
                upstream = [w for w in sources + order if w in t and w in ancestors[u]]
                rates = []
                eps_sf = None
                for view in (sf_view[u], silent_view[u]):
                    e = view.loss_map(c, rc) if c in view.role else None
                    if view is sf_view[u]:
                        eps_sf = e
                    if e is None:
                        rates.append(0.0)
                        continue
                    ts = []
                    for w in upstream:
                        if view.role[w] == Role.SOURCE:
                            ts.append(over_provisioned_delay(view.bo[w], e[w], G))
                        else:
                            tw, mode = single_node_delay(view.bo[w], N[w], e[w], G)
                            fallbacks += mode == "fallback"
                            ts.append(tw)
                    comp = _composite(ts)
                    rates.append(G / comp if comp < INF else 0.0)
                delta = max(0.0, rates[0] - rates[1])
                N[u] = invert_differential(delta, base.bo[u], base.bi[u], eps_sf[u],
                                           rc.get(u, sf_view[u].ratio[u]))
                t[u], mode = single_node_delay(base.bo[u], N[u], eps[u], G)
                fallbacks += mode == "fallback"
                senders[(u, c)] = SenderEstimate(u, c, eps[u], N[u], t[u], mode)
            delays[c] = _composite(t.values())

        if prev is not None and _close(delays, prev, tol):
            converged = True
            break
        prev = delays
        finite = [d for d in delays.values() if d < INF]
        if not finite:
            converged = True
            break
        horizon = max(finite)
        changed = False
        for u in sf_nodes:
            R = base.bo[u] / base.bi[u]
            if R <= 1.0:
                continue
            n_real = max(1.0, base.bi[u] * horizon)
            for c in clients:
                new = _interpolated_r_hat(g.nodes[u].h, R, n_real, eps_all[c][u])
                old = r_hat[c].get(u, base.ratio[u])
                if new != old:
                    changed = True
                r_hat[c][u] = new
        if not changed:
            converged = True
            break

    unreachable = [c for c in clients if math.isinf(delays[c])]
    return DelayReport(G, delays, senders, it, converged, unreachable, fallbacks,
                       {c: dict(v) for c, v in r_hat.items()})


def useful_rate(g: OverlayGraph, u: int, c: int, G: int = 32) -> float:
    """Useful input rate N_c(u) of node ``u`` for client ``c`` as the estimator sees it."""
    report = estimate(g, G)
    return report.senders[(u, c)].useful_rate
