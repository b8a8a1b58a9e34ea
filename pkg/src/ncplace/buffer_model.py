"""Replication model for store-and-forward relays.

An SF node keeps a main buffer (MB) of unsent packets and a copies buffer
(CB) of the last ``h`` sent packets.  Spare outgoing opportunities replay a
uniformly chosen CB packet, so a packet's expected copy count depends on how
long it stays in CB before being overwritten or flushed at the deadline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


def replication_ratio(b_o: float, b_i: float) -> float:
    return b_o / b_i if b_i > 0 else 1.0


def drop_probability(b_o: float, b_i: float) -> float:
    """Overflow probability: share of incoming packets the node cannot forward."""
    if b_i <= 0:
        raise ValueError("incoming bandwidth must be positive")
    return 1.0 - b_o / b_i if b_o < b_i else 0.0


def last_stationary_index(h: int, N_total: int) -> int:
    """K: last arrival that completes a full CB lifetime before the flush."""
    return max(h, N_total - h)


def per_packet_replication(k: int, h: int, R: float, K: int | None = None,
                           N_total: int | None = None) -> float:
    """Expected copies sent of the ``k``-th arrival (1-based).

    Early arrivals (k <= h) share a CB that is still filling; arrivals in
    (h, K] see a full CB and get R copies; later arrivals are flushed before
    their CB lifetime ends.  When ``N_total < 2h`` there is no stationary
    range and the CB lifetime is truncated at ``N_total``.  ``N_total=None``
    means the generation never ends.
    """
    if R <= 1.0:
        return 1.0
    if h < 1 or k < 1:
        raise ValueError("h and k must be >= 1")
    if N_total is not None and k > N_total:
        raise ValueError(f"k={k} beyond N_total={N_total}")
    if N_total is not None and N_total < 2 * h:
        last = min(N_total, k + h - 1)
        s = sum(1.0 / min(j, h) for j in range(k, last + 1))
        return 1.0 + (R - 1.0) * s
    if K is None:
        K = math.inf if N_total is None else last_stationary_index(h, N_total)
    if k <= h:
        return 1.0 + (R - 1.0) * (sum(1.0 / x for x in range(k, h + 1)) + (k - 1) / h)
    if k <= K:
        return float(R)
    kp = k - K
    return 1.0 + (R - 1.0) * (h - kp + 1) / h


def replication_sequence(h: int, R: float, N_total: int) -> np.ndarray:
    """R_k for k = 1..N_total."""
    K = last_stationary_index(h, N_total)
    return np.array([per_packet_replication(k, h, R, K, N_total) for k in range(1, N_total + 1)])


def replication_levels(h: int, R: float, N_total: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct R_k values with their multiplicities; O(h) for any ``N_total``."""
    if N_total < 1:
        raise ValueError("N_total must be >= 1")
    if N_total < 2 * h:
        return replication_sequence(h, R, N_total), np.ones(N_total)
    K = last_stationary_index(h, N_total)
    ks = list(range(1, h + 1)) + list(range(K + 1, N_total + 1))
    values = [per_packet_replication(k, h, R, K, N_total) for k in ks] + [float(R)]
    counts = [1.0] * len(ks) + [float(K - h)]
    return np.array(values), np.array(counts)


def equivalent_replication(R_k: Sequence[float], eps: float, weights: Sequence[float] | None = None) -> float:
    """Scalar R-hat preserving the mean delivery probability 1 - eps**R_k.

    ``weights`` gives multiplicities when ``R_k`` lists distinct values.
    """
    R_k = np.asarray(R_k, dtype=float)
    if R_k.size == 0:
        raise ValueError("empty replication sequence")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    w = np.ones_like(R_k) if weights is None else np.asarray(weights, dtype=float)
    keep = w > 0
    R_k, w = R_k[keep], w[keep]
    if np.all(R_k == R_k[0]):
        return float(R_k[0])
    if eps == 0.0:
        return 1.0
    if eps == 1.0:
        return float(np.average(R_k, weights=w))
    # log of the weighted mean of eps**R_k, stable when eps**R_k underflows
    a = R_k * math.log(eps)
    top = float(a.max())
    log_mean = top + math.log(float(np.dot(w, np.exp(a - top))) / float(w.sum()))
    return log_mean / math.log(eps)


@dataclass(frozen=True)
class ReplicationProfile:
    node: int
    h: int
    R: float
    K: int
    N_total: int
    per_packet: np.ndarray
    R_hat: float
    stationary: bool


def build_profile(node: int, graph, N_total: float, eps: float) -> ReplicationProfile:
    """Replication profile of SF ``node`` receiving ``N_total`` packets per generation."""
    n = max(1, int(round(N_total)))
    h = graph.nodes[node].h
    b_i, b_o = graph.in_bw(node), graph.out_bw(node)
    R = replication_ratio(b_o, b_i)
    K = last_stationary_index(h, n)
    if R <= 1.0:
        seq = np.ones(n)
        r_hat = 1.0
    else:
        seq = replication_sequence(h, R, n)
        r_hat = equivalent_replication(seq, eps)
    return ReplicationProfile(node, h, R, K, n, seq, r_hat, K > h)


def simulate_copies(h: int, R: float, N_total: int, generations: int = 100_000,
                    seed: int = 0) -> np.ndarray:
    """Monte Carlo mean copy count per arrival position.

    Arrivals are unit-spaced; transmissions are spaced ``1/R`` with a uniform
    random phase per generation.  The first opportunity after an arrival
    sends it from MB, every further opportunity replays a uniform CB entry,
    and CB is flushed when the ``N_total``-th interval ends.
    """
    if R < 1.0:
        raise ValueError("R must be >= 1")
    rng = np.random.default_rng(seed)
    phase = rng.random(generations)
    totals = np.full(N_total, float(generations))
    per_interval = int(math.ceil(R)) + 1
    for j in range(1, N_total + 1):
        # opportunities m with (phase + m) / R in [j - 1, j)
        lo = np.ceil((j - 1) * R - phase)
        hi = np.ceil(j * R - phase)
        extra = (hi - lo).astype(np.int64) - 1
        width = min(j, h)
        first = j - width
        picks = rng.integers(0, width, size=(generations, per_interval))
        mask = np.arange(per_interval)[None, :] < extra[:, None]
        totals[first:j] += np.bincount(picks[mask], minlength=width)
    return totals / generations
