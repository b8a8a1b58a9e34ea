"""Pure-Python implementations of the hot kernels.

Every function here has a twin in ``_core.pyx`` with the same signature and
bit-identical results (the simulator consumes the same SplitMix64 stream).
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from .gf256 import INV, MUL

M64 = (1 << 64) - 1

SOURCE, CLIENT, SF, NC = 0, 1, 2, 3


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & M64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next() >> 11) * (1.0 / 9007199254740992.0)

    def bytes(self, n: int) -> np.ndarray:
        out = bytearray()
        while len(out) < n:
            out += self.next().to_bytes(8, "little")
        return np.frombuffer(bytes(out[:n]), dtype=np.uint8).copy()


def in_span(basis, pivots, rank, vec) -> bool:
    v = np.array(vec, dtype=np.uint8)
    for i in range(rank):
        c = v[pivots[i]]
        if c:
            v ^= MUL[c][basis[i]]
    return not v.any()


def insert_row(basis, pivots, rank, vec, pbasis, pvec) -> int:
    """Reduce ``vec`` against the RREF rows and append it if innovative.

    ``vec`` and ``pvec`` are modified in place.  Returns the new rank.
    """
    carry = pbasis.shape[1] > 0
    for i in range(rank):
        c = vec[pivots[i]]
        if c:
            vec ^= MUL[c][basis[i]]
            if carry:
                pvec ^= MUL[c][pbasis[i]]
    nz = np.flatnonzero(vec)
    if len(nz) == 0:
        return rank
    col = int(nz[0])
    s = INV[vec[col]]
    if s != 1:
        vec[:] = MUL[s][vec]
        if carry:
            pvec[:] = MUL[s][pvec]
    for i in range(rank):
        c = basis[i, col]
        if c:
            basis[i] ^= MUL[c][vec]
            if carry:
                pbasis[i] ^= MUL[c][pvec]
    basis[rank] = vec
    if carry:
        pbasis[rank] = pvec
    pivots[rank] = col
    return rank + 1


def combine(coeffs, rows) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.uint8)
    rows = np.asarray(rows, dtype=np.uint8)
    out = np.zeros(rows.shape[1], dtype=np.uint8)
    for i in range(len(coeffs)):
        c = coeffs[i]
        if c:
            out ^= MUL[c][rows[i]]
    return out


def _binom_pmf(n: int, p: float, size: int) -> np.ndarray:
    out = np.zeros(size)
    if p >= 1.0:
        out[n] = 1.0
        return out
    if p <= 0.0:
        out[0] = 1.0
        return out
    lp, lq = math.log(p), math.log1p(-p)
    for k in range(n + 1):
        out[k] = math.exp(math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1) + k * lp + (n - k) * lq)
    return out


def arrival_pmf(nu: float, eps: float) -> np.ndarray:
    """Binomial(nu, 1-eps) pmf, linearly interpolated in nu for non-integer nu."""
    lo = math.floor(nu)
    hi = math.ceil(nu)
    p = 1.0 - eps
    if lo == hi:
        return _binom_pmf(lo, p, hi + 1)
    w = nu - lo
    return (1.0 - w) * _binom_pmf(lo, p, hi + 1) + w * _binom_pmf(hi, p, hi + 1)


def capped_pmf(nu: float, eps: float, G: int) -> np.ndarray:
    """``arrival_pmf`` with all mass at k >= G lumped into entry G.

    The client never gains more than G ranks per arrival, so the lumped pmf
    drives the rank recursion exactly like the full one.
    """
    if nu <= G:
        return arrival_pmf(nu, eps)
    if eps >= 1.0:
        out = np.zeros(G + 1)
        out[0] = 1.0
        return out
    # mass below G for binomial(n, 1-eps), interpolated in n like arrival_pmf
    lo, hi = math.floor(nu), math.ceil(nu)

    def head(n: int) -> np.ndarray:
        p = 1.0 - eps
        if p >= 1.0:
            return np.zeros(G)
        lp, lq = math.log(p), math.log1p(-p)
        return np.array([math.exp(math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                                  + k * lp + (n - k) * lq) for k in range(G)])

    h = head(lo) if lo == hi else (1.0 - (nu - lo)) * head(lo) + (nu - lo) * head(hi)
    return np.append(h, max(0.0, 1.0 - h.sum()))


def expected_useful(nu: float, eps: float, G: int, tol: float, n_cap: int):
    """Truncated sum of n * Pr[client reaches rank G exactly at sender count n].

    Returns ``(expectation, accumulated_mass, steps)``.
    """
    A = capped_pmf(nu, eps, G)
    kmax = len(A) - 1
    tail = np.cumsum(A[::-1])[::-1]
    P = np.zeros(G + 1)
    P[0] = 1.0
    expectation = 0.0
    mass = 0.0
    n = 0
    while n < n_cap:
        n += 1
        cap = n if n < G else G
        new = np.zeros(G + 1)
        for r in range(min(n - 1, G - 1) + 1):
            pr = P[r]
            if pr == 0.0:
                continue
            for k in range(kmax + 1):
                r2 = r + k
                if r2 >= cap:
                    new[cap] += pr * tail[k]
                    break
                new[r2] += pr * A[k]
        if cap == G:
            hit = new[G]
            expectation += n * hit
            mass += hit
            new[G] = 0.0
        P = new
        if mass >= 1.0 - tol:
            break
    return expectation, mass, n


class _Decoder:
    __slots__ = ("basis", "pbasis", "pivots", "rank")

    def __init__(self, G: int, P: int):
        self.basis = np.zeros((G, G), dtype=np.uint8)
        self.pbasis = np.zeros((G, P), dtype=np.uint8)
        self.pivots = np.full(G, -1, dtype=np.int64)
        self.rank = 0


def sim_run(role, h, esrc, edst, bw, loss, G, natives, seed, deadline, latency, trace=None):
    """Run one generation through the overlay; see ``simulator.simulate``."""
    n = len(role)
    m = len(esrc)
    P = natives.shape[1]
    rng = SplitMix64(seed)

    coefs: list[np.ndarray] = []
    pays: list[np.ndarray] = []
    mb = [deque() for _ in range(n)]
    cb = [deque() for _ in range(n)]
    sent_set = [set() for _ in range(n)]
    dec = [_Decoder(G, P) if role[v] in (NC, CLIENT) else None for v in range(n)]

    decode_time = np.full(n, np.nan)
    first_time = np.full(n, np.nan)
    first_count = np.zeros(n, dtype=np.int64)
    innov = np.zeros(n, dtype=np.int64)
    dup = np.zeros(n, dtype=np.int64)
    overflow = np.zeros(n, dtype=np.int64)
    e_sent = np.zeros(m, dtype=np.int64)
    e_lost = np.zeros(m, dtype=np.int64)
    e_deliv = np.zeros(m, dtype=np.int64)

    clients = [v for v in range(n) if role[v] == CLIENT]
    remaining = len(clients)
    next_k = [0] * m
    inflight = [deque() for _ in range(m)]
    bwl = [float(b) for b in bw]
    lossl = [float(x) for x in loss]

    def new_packet(coef, pay):
        coefs.append(coef)
        pays.append(pay)
        return len(coefs) - 1

    def pick(u):
        r = role[u]
        if r == SOURCE:
            c = rng.bytes(G)
            pay = combine(c, natives) if P else None
            return new_packet(c, pay)
        if r == SF:
            while mb[u]:
                pid = mb[u].popleft()
                if pid in sent_set[u]:
                    continue
                sent_set[u].add(pid)
                if len(cb[u]) >= h[u]:
                    cb[u].popleft()
                cb[u].append(pid)
                return pid
            if cb[u]:
                return cb[u][rng.next() % len(cb[u])]
            return -1
        if r == NC:
            d = dec[u]
            if d.rank == 0:
                return -1
            while True:
                f = rng.bytes(d.rank)
                if f.any():
                    break
            c = combine(f, d.basis[: d.rank])
            pay = combine(f, d.pbasis[: d.rank]) if P else None
            return new_packet(c, pay)
        return -1

    def deliver(e, pid, t):
        nonlocal remaining
        v = edst[e]
        e_deliv[e] += 1
        if trace is not None:
            trace(t, e, coefs[pid], pays[pid])
        r = role[v]
        if r == SF:
            # duplicates still occupy MB; they are skipped when their turn to send comes
            if pid in sent_set[v] or pid in mb[v]:
                dup[v] += 1
            else:
                innov[v] += 1
            if len(mb[v]) >= h[v]:
                mb[v].popleft()
                overflow[v] += 1
            mb[v].append(pid)
        elif (r == NC or r == CLIENT) and dec[v].rank == G:
            dup[v] += 1
        elif r == NC or r == CLIENT:
            d = dec[v]
            vec = coefs[pid].copy()
            pvec = pays[pid].copy() if P else np.zeros(0, dtype=np.uint8)
            new_rank = insert_row(d.basis, d.pivots, d.rank, vec, d.pbasis, pvec)
            if new_rank > d.rank:
                d.rank = new_rank
                innov[v] += 1
                if math.isnan(first_time[v]):
                    first_time[v] = t
                    first_count[v] = 1
                elif first_time[v] == t:
                    first_count[v] += 1
                if r == CLIENT and new_rank == G:
                    decode_time[v] = t
                    remaining -= 1
            else:
                dup[v] += 1
        else:
            dup[v] += 1

    t = 0.0
    end_time = 0.0
    while remaining > 0:
        t_opp = math.inf
        e_opp = -1
        for e in range(m):
            te = next_k[e] / bwl[e]
            if te < t_opp:
                t_opp = te
                e_opp = e
        t_arr = math.inf
        e_arr = -1
        for e in range(m):
            if inflight[e] and inflight[e][0][0] < t_arr:
                t_arr = inflight[e][0][0]
                e_arr = e
        if e_arr >= 0 and t_arr <= t_opp:
            t = t_arr
            if t > deadline:
                break
            end_time = t
            _, pid = inflight[e_arr].popleft()
            deliver(e_arr, pid, t)
        else:
            t = t_opp
            if e_opp < 0 or t > deadline:
                break
            e = e_opp
            next_k[e] += 1
            end_time = t
            pid = pick(esrc[e])
            if pid < 0:
                continue
            e_sent[e] += 1
            if rng.random() < lossl[e]:
                e_lost[e] += 1
            else:
                inflight[e].append((t + 1.0 / bwl[e] + latency, pid))

    rank = np.array([d.rank if d is not None else 0 for d in dec], dtype=np.int64)
    e_infl = np.array([len(q) for q in inflight], dtype=np.int64)
    decoded = {}
    if P:
        for v in clients:
            d = dec[v]
            if d.rank == G:
                order = np.argsort(d.pivots)
                decoded[v] = d.pbasis[order].copy()
    return {
        "decode_time": decode_time,
        "first_time": first_time,
        "first_count": first_count,
        "rank": rank,
        "innovative": innov,
        "duplicates": dup,
        "overflow": overflow,
        "edge_sent": e_sent,
        "edge_lost": e_lost,
        "edge_delivered": e_deliv,
        "edge_in_flight": e_infl,
        "end_time": end_time,
        "packets_created": len(coefs),
        "decoded": decoded,
    }
