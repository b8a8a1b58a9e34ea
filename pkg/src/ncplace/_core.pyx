# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: GF(256) row reduction, the rank-arrival recursion and the
packet-level event loop.  Mirrors ``_pycore`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, realloc, free, calloc
from libc.string cimport memset, memcpy
from libc.math cimport INFINITY, NAN, isnan
from libc.stdint cimport uint64_t, int64_t

from ._pycore import capped_pmf

cnp.import_array()

cdef unsigned char MUL[256][256]
cdef unsigned char INV[256]
cdef bint _tables_ready = False

DEF SOURCE = 0
DEF CLIENT = 1
DEF SF = 2
DEF NC = 3


def set_tables(const unsigned char[:, ::1] mul, const unsigned char[::1] inv):
    global _tables_ready
    cdef int a, b
    for a in range(256):
        INV[a] = inv[a]
        for b in range(256):
            MUL[a][b] = mul[a, b]
    _tables_ready = True


# ---------------------------------------------------------------- rng

cdef inline uint64_t sm_next(uint64_t* s) nogil:
    cdef uint64_t z
    s[0] = s[0] + <uint64_t>0x9E3779B97F4A7C15ULL
    z = s[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double sm_random(uint64_t* s) nogil:
    return (sm_next(s) >> 11) * (1.0 / 9007199254740992.0)


cdef inline void sm_bytes(uint64_t* s, unsigned char* out, int n) nogil:
    cdef int i
    cdef uint64_t x = 0
    for i in range(n):
        if i % 8 == 0:
            x = sm_next(s)
        out[i] = <unsigned char>((x >> (8 * (i % 8))) & 0xFF)


# ---------------------------------------------------------------- gf rows

cdef inline void axpy(unsigned char* dst, unsigned char c, const unsigned char* src, int n) nogil:
    cdef int j
    cdef unsigned char* row = MUL[c]
    for j in range(n):
        dst[j] ^= row[src[j]]


cdef inline void scal(unsigned char* dst, unsigned char c, int n) nogil:
    cdef int j
    cdef unsigned char* row = MUL[c]
    for j in range(n):
        dst[j] = row[dst[j]]


cdef int c_insert(unsigned char* basis, int64_t* pivots, int rank, unsigned char* vec,
                  unsigned char* pbasis, unsigned char* pvec, int G, int P) nogil:
    cdef int i, col
    cdef unsigned char c, s
    for i in range(rank):
        c = vec[pivots[i]]
        if c:
            axpy(vec, c, basis + i * G, G)
            if P:
                axpy(pvec, c, pbasis + i * P, P)
    col = -1
    for i in range(G):
        if vec[i]:
            col = i
            break
    if col < 0:
        return rank
    s = INV[vec[col]]
    if s != 1:
        scal(vec, s, G)
        if P:
            scal(pvec, s, P)
    for i in range(rank):
        c = basis[i * G + col]
        if c:
            axpy(basis + i * G, c, vec, G)
            if P:
                axpy(pbasis + i * P, c, pvec, P)
    memcpy(basis + rank * G, vec, G)
    if P:
        memcpy(pbasis + rank * P, pvec, P)
    pivots[rank] = col
    return rank + 1


cdef void c_combine(const unsigned char* coeffs, int k, const unsigned char* rows, int width,
                    unsigned char* out) nogil:
    cdef int i
    memset(out, 0, width)
    for i in range(k):
        if coeffs[i]:
            axpy(out, coeffs[i], rows + i * width, width)


def in_span(unsigned char[:, ::1] basis, int64_t[::1] pivots, int rank, const unsigned char[::1] vec):
    cdef int G = vec.shape[0]
    cdef unsigned char* v = <unsigned char*>malloc(G)
    cdef int i
    cdef bint zero = True
    memcpy(v, &vec[0], G)
    for i in range(rank):
        if v[pivots[i]]:
            axpy(v, v[pivots[i]], &basis[i, 0], G)
    for i in range(G):
        if v[i]:
            zero = False
            break
    free(v)
    return zero


def insert_row(unsigned char[:, ::1] basis, int64_t[::1] pivots, int rank, unsigned char[::1] vec,
               unsigned char[:, ::1] pbasis, unsigned char[::1] pvec):
    cdef int G = vec.shape[0]
    cdef int P = pbasis.shape[1]
    cdef unsigned char* pb = &pbasis[0, 0] if P else NULL
    cdef unsigned char* pv = &pvec[0] if P else NULL
    return c_insert(&basis[0, 0], &pivots[0], rank, &vec[0], pb, pv, G, P)


def combine(coeffs, rows):
    cdef const unsigned char[::1] c = np.ascontiguousarray(coeffs, dtype=np.uint8)
    cdef const unsigned char[:, ::1] r = np.ascontiguousarray(rows, dtype=np.uint8)
    cdef int width = r.shape[1]
    out = np.zeros(width, dtype=np.uint8)
    cdef unsigned char[::1] o = out
    if c.shape[0] and width:
        c_combine(&c[0], c.shape[0], &r[0, 0], width, &o[0])
    return out


# ---------------------------------------------------------------- recursion

def expected_useful(double nu, double eps, int G, double tol, int n_cap):
    cdef cnp.ndarray[double, ndim=1] A = np.ascontiguousarray(capped_pmf(nu, eps, G), dtype=np.float64)
    cdef int kmax = A.shape[0] - 1
    cdef double* tail = <double*>malloc((kmax + 1) * sizeof(double))
    cdef double* P = <double*>calloc(G + 1, sizeof(double))
    cdef double* Q = <double*>calloc(G + 1, sizeof(double))
    cdef double* tmp
    cdef double acc = 0.0, pr, hit, expectation = 0.0, mass = 0.0
    cdef int k, n = 0, r, r2, cap, rtop
    for k in range(kmax, -1, -1):
        acc += A[k]
        tail[k] = acc
    P[0] = 1.0
    while n < n_cap:
        n += 1
        cap = n if n < G else G
        memset(Q, 0, (G + 1) * sizeof(double))
        rtop = n - 1 if n - 1 < G - 1 else G - 1
        for r in range(rtop + 1):
            pr = P[r]
            if pr == 0.0:
                continue
            for k in range(kmax + 1):
                r2 = r + k
                if r2 >= cap:
                    Q[cap] += pr * tail[k]
                    break
                Q[r2] += pr * A[k]
        if cap == G:
            hit = Q[G]
            expectation += n * hit
            mass += hit
            Q[G] = 0.0
        tmp = P
        P = Q
        Q = tmp
        if mass >= 1.0 - tol:
            break
    free(tail)
    free(P)
    free(Q)
    return expectation, mass, n


# ---------------------------------------------------------------- simulator

cdef struct Sim:
    int n, m, G, P, hmax
    uint64_t rng
    # packet store
    int64_t npk, cap
    unsigned char* coefs
    unsigned char* pays
    unsigned char* sent        # pid-major bitmap: sent[pid * n + node]
    # buffers
    int64_t* mb
    int* mb_head
    int* mb_len
    int64_t* cb
    int* cb_head
    int* cb_len
    # decoders
    unsigned char* basis
    unsigned char* pbasis
    int64_t* pivots
    int* rank
    unsigned char* vtmp
    unsigned char* ptmp
    unsigned char* ftmp


cdef int64_t grow(Sim* s) except -1:
    cdef int64_t newcap = s.cap * 2
    cdef unsigned char* p
    p = <unsigned char*>realloc(s.coefs, newcap * s.G)
    if p == NULL:
        raise MemoryError()
    s.coefs = p
    if s.P:
        p = <unsigned char*>realloc(s.pays, newcap * s.P)
        if p == NULL:
            raise MemoryError()
        s.pays = p
    p = <unsigned char*>realloc(s.sent, newcap * s.n)
    if p == NULL:
        raise MemoryError()
    s.sent = p
    memset(s.sent + s.cap * s.n, 0, (newcap - s.cap) * s.n)
    s.cap = newcap
    return 0


cdef int64_t new_packet(Sim* s) except -1:
    if s.npk == s.cap:
        grow(s)
    s.npk += 1
    return s.npk - 1


# Event order: (time, arrival before transmission, edge index).  Each edge
# holds one key, its earliest pending event, in an indexed binary heap.
cdef inline bint ev_less(double* kt, int* kk, int a, int b) nogil:
    if kt[a] != kt[b]:
        return kt[a] < kt[b]
    if kk[a] != kk[b]:
        return kk[a] < kk[b]
    return a < b


cdef void heap_fix(int* heap, int* pos, double* kt, int* kk, int m, int e) nogil:
    cdef int i = pos[e], p, c, x
    while i > 0:
        p = (i - 1) >> 1
        if not ev_less(kt, kk, heap[i], heap[p]):
            break
        x = heap[p]; heap[p] = heap[i]; heap[i] = x
        pos[heap[p]] = p; pos[heap[i]] = i
        i = p
    while True:
        c = 2 * i + 1
        if c >= m:
            break
        if c + 1 < m and ev_less(kt, kk, heap[c + 1], heap[c]):
            c += 1
        if not ev_less(kt, kk, heap[c], heap[i]):
            break
        x = heap[c]; heap[c] = heap[i]; heap[i] = x
        pos[heap[c]] = c; pos[heap[i]] = i
        i = c


cdef inline void rekey(int e, double* t_next, double* fl_t, int64_t* fl_off, int* fl_head, int* fl_len,
                       double* kt, int* kk) nogil:
    cdef double ta
    if fl_len[e]:
        ta = fl_t[fl_off[e] + fl_head[e]]
        if ta <= t_next[e]:
            kt[e] = ta
            kk[e] = 0
            return
    kt[e] = t_next[e]
    kk[e] = 1


def sim_run(role_, h_, esrc_, edst_, bw_, loss_, int G, natives_, uint64_t seed,
            double deadline, double latency, trace=None):
    if trace is not None:
        raise ValueError("trace hooks are only supported by the pure-Python core")
    cdef const signed char[::1] role = np.ascontiguousarray(role_, dtype=np.int8)
    cdef const int[::1] h = np.ascontiguousarray(h_, dtype=np.int32)
    cdef const int[::1] esrc = np.ascontiguousarray(esrc_, dtype=np.int32)
    cdef const int[::1] edst = np.ascontiguousarray(edst_, dtype=np.int32)
    cdef const double[::1] bw = np.ascontiguousarray(bw_, dtype=np.float64)
    cdef const double[::1] loss = np.ascontiguousarray(loss_, dtype=np.float64)
    nat_arr = np.ascontiguousarray(natives_, dtype=np.uint8)
    cdef int n = role.shape[0]
    cdef int m = esrc.shape[0]
    cdef int P = nat_arr.shape[1]
    cdef const unsigned char[:, ::1] natives = nat_arr if P else np.zeros((G, 1), np.uint8)

    decode_time = np.full(n, np.nan)
    first_time = np.full(n, np.nan)
    first_count = np.zeros(n, dtype=np.int64)
    innov = np.zeros(n, dtype=np.int64)
    dup = np.zeros(n, dtype=np.int64)
    overflow = np.zeros(n, dtype=np.int64)
    e_sent = np.zeros(m, dtype=np.int64)
    e_lost = np.zeros(m, dtype=np.int64)
    e_deliv = np.zeros(m, dtype=np.int64)
    e_infl = np.zeros(m, dtype=np.int64)
    cdef double[::1] dt = decode_time
    cdef double[::1] ft = first_time
    cdef int64_t[::1] fc = first_count
    cdef int64_t[::1] inv_ = innov
    cdef int64_t[::1] dp = dup
    cdef int64_t[::1] ov = overflow
    cdef int64_t[::1] es = e_sent
    cdef int64_t[::1] el = e_lost
    cdef int64_t[::1] ed = e_deliv
    cdef int64_t[::1] ei = e_infl

    cdef Sim s
    cdef int u, v, e, i, r, j, hmax = 1, remaining = 0, new_rank, k
    cdef int64_t pid
    cdef double t = 0.0, end_time = 0.0
    cdef bint any_nz, found
    for u in range(n):
        if h[u] > hmax:
            hmax = h[u]
        if role[u] == CLIENT:
            remaining += 1

    s.n = n; s.m = m; s.G = G; s.P = P; s.hmax = hmax
    s.rng = seed
    s.npk = 0
    s.cap = 1024
    s.coefs = <unsigned char*>malloc(s.cap * G)
    s.pays = <unsigned char*>malloc(s.cap * P) if P else NULL
    s.sent = <unsigned char*>calloc(s.cap * n, 1)
    s.mb = <int64_t*>malloc(n * hmax * sizeof(int64_t))
    s.cb = <int64_t*>malloc(n * hmax * sizeof(int64_t))
    s.mb_head = <int*>calloc(n, sizeof(int))
    s.mb_len = <int*>calloc(n, sizeof(int))
    s.cb_head = <int*>calloc(n, sizeof(int))
    s.cb_len = <int*>calloc(n, sizeof(int))
    s.basis = <unsigned char*>calloc(n * G * G, 1)
    s.pbasis = <unsigned char*>calloc(n * G * P, 1) if P else NULL
    s.pivots = <int64_t*>malloc(n * G * sizeof(int64_t))
    s.rank = <int*>calloc(n, sizeof(int))
    s.vtmp = <unsigned char*>malloc(G)
    s.ptmp = <unsigned char*>malloc(P) if P else NULL
    s.ftmp = <unsigned char*>malloc(G)
    for i in range(n * G):
        s.pivots[i] = -1

    cdef int64_t* next_k = <int64_t*>calloc(m, sizeof(int64_t))
    cdef double* t_next = <double*>calloc(m, sizeof(double))
    # in-flight rings: a packet started at t arrives at t + 1/b + latency
    cdef int* fl_cap = <int*>calloc(m, sizeof(int))
    cdef int* fl_head = <int*>calloc(m, sizeof(int))
    cdef int* fl_len = <int*>calloc(m, sizeof(int))
    cdef int64_t* fl_off = <int64_t*>calloc(m + 1, sizeof(int64_t))
    for e in range(m):
        fl_cap[e] = <int>(latency * bw[e]) + 4
        fl_off[e + 1] = fl_off[e] + fl_cap[e]
    cdef double* fl_t = <double*>malloc((fl_off[m] + 1) * sizeof(double))
    cdef int64_t* fl_pid = <int64_t*>malloc((fl_off[m] + 1) * sizeof(int64_t))
    cdef int* heap = <int*>malloc((m + 1) * sizeof(int))
    cdef int* hpos = <int*>malloc((m + 1) * sizeof(int))
    cdef double* kt = <double*>malloc((m + 1) * sizeof(double))
    cdef int* kk = <int*>malloc((m + 1) * sizeof(int))
    for e in range(m):
        heap[e] = e
        hpos[e] = e
        kt[e] = 0.0
        kk[e] = 1

    try:
        while remaining > 0:
            if m == 0:
                break
            e = heap[0]
            t = kt[e]
            if t > deadline:
                break
            if kk[e] == 0:
                pid = fl_pid[fl_off[e] + fl_head[e]]
                fl_head[e] = (fl_head[e] + 1) % fl_cap[e]
                fl_len[e] -= 1
                rekey(e, t_next, fl_t, fl_off, fl_head, fl_len, kt, kk)
                heap_fix(heap, hpos, kt, kk, m, e)
            else:
                next_k[e] += 1
                t_next[e] = next_k[e] / bw[e]
                rekey(e, t_next, fl_t, fl_off, fl_head, fl_len, kt, kk)
                heap_fix(heap, hpos, kt, kk, m, e)
                end_time = t
                # ---- pick a packet at the sending node
                u = esrc[e]
                pid = -1
                r = role[u]
                if r == SOURCE:
                    pid = new_packet(&s)
                    sm_bytes(&s.rng, s.coefs + pid * G, G)
                    if P:
                        c_combine(s.coefs + pid * G, G, &natives[0, 0], P, s.pays + pid * P)
                elif r == SF:
                    while s.mb_len[u]:
                        pid = s.mb[u * hmax + s.mb_head[u]]
                        s.mb_head[u] = (s.mb_head[u] + 1) % h[u]
                        s.mb_len[u] -= 1
                        if s.sent[pid * n + u]:
                            pid = -1
                            continue
                        s.sent[pid * n + u] = 1
                        if s.cb_len[u] >= h[u]:
                            s.cb_head[u] = (s.cb_head[u] + 1) % h[u]
                            s.cb_len[u] -= 1
                        s.cb[u * hmax + (s.cb_head[u] + s.cb_len[u]) % h[u]] = pid
                        s.cb_len[u] += 1
                        break
                    if pid < 0 and s.cb_len[u]:
                        j = <int>(sm_next(&s.rng) % <uint64_t>s.cb_len[u])
                        pid = s.cb[u * hmax + (s.cb_head[u] + j) % h[u]]
                elif r == NC:
                    k = s.rank[u]
                    if k:
                        while True:
                            sm_bytes(&s.rng, s.ftmp, k)
                            any_nz = False
                            for i in range(k):
                                if s.ftmp[i]:
                                    any_nz = True
                                    break
                            if any_nz:
                                break
                        pid = new_packet(&s)
                        c_combine(s.ftmp, k, s.basis + u * G * G, G, s.coefs + pid * G)
                        if P:
                            c_combine(s.ftmp, k, s.pbasis + u * G * P, P, s.pays + pid * P)
                if pid < 0:
                    continue
                es[e] += 1
                if sm_random(&s.rng) < loss[e]:
                    el[e] += 1
                    continue
                j = (fl_head[e] + fl_len[e]) % fl_cap[e]
                fl_t[fl_off[e] + j] = t + 1.0 / bw[e] + latency
                fl_pid[fl_off[e] + j] = pid
                fl_len[e] += 1
                if fl_len[e] == 1:
                    rekey(e, t_next, fl_t, fl_off, fl_head, fl_len, kt, kk)
                    heap_fix(heap, hpos, kt, kk, m, e)
                continue
            end_time = t
            # ---- deliver pid over edge e at time t
            v = edst[e]
            ed[e] += 1
            r = role[v]
            if r == SF:
                found = s.sent[pid * n + v] != 0
                if not found:
                    for i in range(s.mb_len[v]):
                        if s.mb[v * hmax + (s.mb_head[v] + i) % h[v]] == pid:
                            found = True
                            break
                # duplicates still occupy MB; they are skipped when their turn to send comes
                if found:
                    dp[v] += 1
                else:
                    inv_[v] += 1
                if s.mb_len[v] >= h[v]:
                    s.mb_head[v] = (s.mb_head[v] + 1) % h[v]
                    s.mb_len[v] -= 1
                    ov[v] += 1
                s.mb[v * hmax + (s.mb_head[v] + s.mb_len[v]) % h[v]] = pid
                s.mb_len[v] += 1
            elif (r == NC or r == CLIENT) and s.rank[v] == G:
                dp[v] += 1
            elif r == NC or r == CLIENT:
                memcpy(s.vtmp, s.coefs + pid * G, G)
                if P:
                    memcpy(s.ptmp, s.pays + pid * P, P)
                new_rank = c_insert(s.basis + v * G * G, s.pivots + v * G, s.rank[v], s.vtmp,
                                    s.pbasis + v * G * P if P else NULL, s.ptmp, G, P)
                if new_rank > s.rank[v]:
                    s.rank[v] = new_rank
                    inv_[v] += 1
                    if isnan(ft[v]):
                        ft[v] = t
                        fc[v] = 1
                    elif ft[v] == t:
                        fc[v] += 1
                    if r == CLIENT and new_rank == G:
                        dt[v] = t
                        remaining -= 1
                else:
                    dp[v] += 1
            else:
                dp[v] += 1

        rank = np.zeros(n, dtype=np.int64)
        for v in range(n):
            if role[v] == NC or role[v] == CLIENT:
                rank[v] = s.rank[v]
        for e in range(m):
            ei[e] = fl_len[e]
        decoded = {}
        if P:
            for v in range(n):
                if role[v] == CLIENT and s.rank[v] == G:
                    piv = np.array([s.pivots[v * G + i] for i in range(G)])
                    pb = np.empty((G, P), dtype=np.uint8)
                    for i in range(G):
                        pb[i] = np.frombuffer((<char*>(s.pbasis + v * G * P + i * P))[:P], dtype=np.uint8)
                    decoded[v] = pb[np.argsort(piv)].copy()
        npk = s.npk
    finally:
        free(s.coefs); free(s.pays); free(s.sent)
        free(s.mb); free(s.cb); free(s.mb_head); free(s.mb_len); free(s.cb_head); free(s.cb_len)
        free(s.basis); free(s.pbasis); free(s.pivots); free(s.rank)
        free(s.vtmp); free(s.ptmp); free(s.ftmp)
        free(next_k); free(t_next)
        free(fl_cap); free(fl_head); free(fl_len); free(fl_off); free(fl_t); free(fl_pid)
        free(heap); free(hpos); free(kt); free(kk)

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
        "packets_created": npk,
        "decoded": decoded,
    }
