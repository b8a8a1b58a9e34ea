"""Greedy placement of network-coding nodes and baseline placements."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .delay import estimate
from .topology import OverlayGraph, Role, neighborhood

CENTRALIZED = "centralized"
LOCAL = "local"
RANDOM = "random"
STRATEGIES = (CENTRALIZED, LOCAL, RANDOM)


@dataclass
class SelectionPlan:
    strategy: str
    budget: int
    picks: list[tuple[int, float]] = field(default_factory=list)
    radius: int | None = None
    seed: int | None = None
    base_delay: float = math.nan

    @property
    def nodes(self) -> list[int]:
        return [u for u, _ in self.picks]

    @property
    def delays(self) -> list[float]:
        return [d for _, d in self.picks]

    def __len__(self) -> int:
        return len(self.picks)

    def is_nonincreasing(self, rel_tol: float = 1e-9) -> bool:
        seq = [self.base_delay] + self.delays
        return all(b <= a * (1 + rel_tol) for a, b in zip(seq, seq[1:]))

    def rows(self) -> list[dict]:
        return [{"rank": i + 1, "node_id": u, "est_delay_seconds": d, "strategy": self.strategy,
                 "radius": "" if self.radius is None else self.radius,
                 "seed": "" if self.seed is None else self.seed}
                for i, (u, d) in enumerate(self.picks)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["rank", "node_id", "est_delay_seconds", "strategy", "radius", "seed"])
            w.writeheader()
            w.writerows(self.rows())


def promote(g: OverlayGraph, nodes) -> OverlayGraph:
    return g.with_roles({u: Role.NC for u in nodes})


def apply(g: OverlayGraph, plan: SelectionPlan, k: int | None = None) -> OverlayGraph:
    """Graph with the first ``k`` picks of ``plan`` promoted to NC."""
    k = len(plan) if k is None else k
    if not 0 <= k <= len(plan):
        raise ValueError(f"prefix length {k} outside [0, {len(plan)}]")
    return promote(g, plan.nodes[:k]) if k else g


def all_nc(g: OverlayGraph) -> OverlayGraph:
    return promote(g, g.sf_nodes)


def all_sf(g: OverlayGraph) -> OverlayGraph:
    return g.with_roles({u: Role.SF for u in g.nc_nodes})


def _mean_delay(g: OverlayGraph, G: int) -> float:
    return estimate(g, G).mean_delay


def select_centralized(g: OverlayGraph, A: int, G: int = 32, early_stop: bool = False) -> SelectionPlan:
    """Promote, ``A`` times, the SF node whose promotion minimizes the summed client delay."""
    plan = SelectionPlan(CENTRALIZED, A, base_delay=_mean_delay(g, G))
    current = g
    n_clients = len(g.clients)
    for _ in range(min(A, len(g.sf_nodes))):
        scores = {u: estimate(promote(current, [u]), G).total_delay for u in current.sf_nodes}
        best = min(scores, key=lambda u: (scores[u], u))
        assert all(scores[best] <= s for s in scores.values())
        delay = scores[best] / n_clients
        if early_stop and plan.picks and delay >= plan.picks[-1][1]:
            break
        if early_stop and not plan.picks and delay >= plan.base_delay:
            break
        plan.picks.append((best, delay))
        current = promote(current, [best])
    return plan


def local_score(g: OverlayGraph, u: int, radius: int, G: int = 32) -> tuple[float, float]:
    """Relative change of the summed client delay on ``u``'s neighborhood when ``u`` is promoted.

    Neighborhoods differ in proxy-client count and rate scale, so the agent
    compares scale-free scores.  Returns ``(after / before - 1, after)``;
    only clients reachable before the promotion are counted, and a
    neighborhood without a reachable client scores ``(0, 0)``.
    """
    local = neighborhood(g, u, radius)
    if not local.sources or not local.clients:
        return 0.0, 0.0
    before = estimate(local, G).delays
    keep = [c for c, t in before.items() if math.isfinite(t)]
    if not keep:
        return 0.0, 0.0
    after = estimate(promote(local, [u]), G).delays
    total_before = sum(before[c] for c in keep)
    total_after = sum(after[c] for c in keep)
    return total_after / total_before - 1.0, total_after


def select_local(g: OverlayGraph, A: int, radius: int, G: int = 32, early_stop: bool = False) -> SelectionPlan:
    """Greedy placement where each candidate is scored on its own ``radius``-hop neighborhood.

    The agent promotes the candidate with the largest relative local delay
    reduction; recorded delays are full-graph estimates after each promotion.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    plan = SelectionPlan(LOCAL, A, radius=radius, base_delay=_mean_delay(g, G))
    current = g
    for _ in range(min(A, len(g.sf_nodes))):
        scores = {u: local_score(current, u, radius, G) for u in current.sf_nodes}
        best = min(scores, key=lambda u: (*scores[u], u))
        if early_stop and scores[best][0] >= 0:
            break
        current = promote(current, [best])
        plan.picks.append((best, _mean_delay(current, G)))
    return plan


def select_random(g: OverlayGraph, A: int, seed: int = 0, G: int = 32, evaluate: bool = True) -> SelectionPlan:
    """Uniformly random distinct SF nodes, reproducible per seed."""
    rng = np.random.default_rng(seed)
    sf = np.array(g.sf_nodes, dtype=np.int64)
    order = [int(u) for u in rng.permutation(sf)[: min(A, len(sf))]]
    plan = SelectionPlan(RANDOM, A, seed=seed, base_delay=_mean_delay(g, G) if evaluate else math.nan)
    current = g
    for u in order:
        current = promote(current, [u])
        plan.picks.append((u, _mean_delay(current, G) if evaluate else math.nan))
    return plan


def select(g: OverlayGraph, strategy: str, A: int, G: int = 32, radius: int | None = None,
           seed: int = 0, early_stop: bool = False) -> SelectionPlan:
    if strategy == CENTRALIZED:
        return select_centralized(g, A, G, early_stop)
    if strategy == LOCAL:
        if radius is None:
            raise ValueError("local strategy needs a radius")
        return select_local(g, A, radius, G, early_stop)
    if strategy == RANDOM:
        return select_random(g, A, seed, G)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
