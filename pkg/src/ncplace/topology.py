"""Overlay graph model, random topology generation and graph queries."""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

DEFAULT_BUFFER = 16


class Role(IntEnum):
    SOURCE = 0
    CLIENT = 1
    SF = 2
    NC = 3


class TopologyError(ValueError):
    pass


class TopologyFormatError(TopologyError):
    pass


@dataclass(frozen=True)
class NodeRecord:
    id: int
    role: Role
    h: int = DEFAULT_BUFFER


@dataclass(frozen=True)
class EdgeRecord:
    src: int
    dst: int
    bandwidth: float
    loss: float


class OverlayGraph:
    """Directed acyclic overlay.  Treat instances as immutable."""

    def __init__(self, nodes: Iterable[NodeRecord], edges: Iterable[EdgeRecord]):
        self.nodes: dict[int, NodeRecord] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise TopologyError(f"duplicate node {n.id}")
            if n.h < 1:
                raise TopologyError(f"node {n.id}: buffer capacity must be >= 1")
            self.nodes[n.id] = NodeRecord(n.id, Role(n.role), int(n.h))
        self.edges: dict[tuple[int, int], EdgeRecord] = {}
        self._out: dict[int, list[int]] = {u: [] for u in self.nodes}
        self._in: dict[int, list[int]] = {u: [] for u in self.nodes}
        for e in edges:
            key = (e.src, e.dst)
            if e.src not in self.nodes or e.dst not in self.nodes:
                raise TopologyError(f"edge {key} references an unknown node")
            if key in self.edges:
                raise TopologyError(f"duplicate edge {key}")
            if e.src == e.dst:
                raise TopologyError(f"self loop on {e.src}")
            if not (e.bandwidth > 0 and math.isfinite(e.bandwidth)):
                raise TopologyError(f"edge {key}: bandwidth must be a positive real")
            if not (0.0 <= e.loss < 1.0):
                raise TopologyError(f"edge {key}: loss must lie in [0, 1)")
            self.edges[key] = e
            self._out[e.src].append(e.dst)
            self._in[e.dst].append(e.src)
        for u in self.nodes:
            self._out[u].sort()
            self._in[u].sort()
        for u, rec in self.nodes.items():
            if rec.role == Role.SOURCE and self._in[u]:
                raise TopologyError(f"source {u} has incoming edges")
            if rec.role == Role.CLIENT and self._out[u]:
                raise TopologyError(f"client {u} has outgoing edges")
        self._topo = self._toposort()

    # -- structure ---------------------------------------------------------

    def _toposort(self) -> list[int]:
        indeg = {u: len(self._in[u]) for u in self.nodes}
        heap = [u for u, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            u = heapq.heappop(heap)
            order.append(u)
            for v in self._out[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(heap, v)
        if len(order) != len(self.nodes):
            raise TopologyError("graph contains a cycle")
        return order

    def topo_order(self) -> list[int]:
        return list(self._topo)

    def children(self, u: int) -> list[int]:
        return self._out[u]

    def parents(self, u: int) -> list[int]:
        return self._in[u]

    def edge(self, u: int, v: int) -> EdgeRecord:
        return self.edges[(u, v)]

    def out_bw(self, u: int) -> float:
        return sum(self.edges[(u, v)].bandwidth for v in self._out[u])

    def in_bw(self, u: int) -> float:
        return sum(self.edges[(p, u)].bandwidth for p in self._in[u])

    def role(self, u: int) -> Role:
        return self.nodes[u].role

    def ids(self, role: Role) -> list[int]:
        return sorted(u for u, n in self.nodes.items() if n.role == role)

    @property
    def sources(self) -> list[int]:
        return self.ids(Role.SOURCE)

    @property
    def clients(self) -> list[int]:
        return self.ids(Role.CLIENT)

    @property
    def sf_nodes(self) -> list[int]:
        return self.ids(Role.SF)

    @property
    def nc_nodes(self) -> list[int]:
        return self.ids(Role.NC)

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OverlayGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __repr__(self) -> str:
        return (f"OverlayGraph({len(self.nodes)} nodes, {len(self.edges)} edges, "
                f"{len(self.sources)} sources, {len(self.clients)} clients, {len(self.nc_nodes)} NC)")

    # -- derived graphs ----------------------------------------------------

    def with_roles(self, roles: Mapping[int, Role]) -> "OverlayGraph":
        nodes = [replace(n, role=Role(roles.get(n.id, n.role))) for n in self.nodes.values()]
        return OverlayGraph(nodes, self.edges.values())

    def without_nodes(self, drop: Iterable[int]) -> "OverlayGraph":
        drop = set(drop)
        return OverlayGraph(
            [n for n in self.nodes.values() if n.id not in drop],
            [e for e in self.edges.values() if e.src not in drop and e.dst not in drop],
        )

    def subgraph(self, keep: Iterable[int]) -> "OverlayGraph":
        keep = set(keep)
        return self.without_nodes(u for u in self.nodes if u not in keep)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for n in self.nodes.values():
            g.add_node(n.id, role=n.role, h=n.h)
        for e in self.edges.values():
            g.add_edge(e.src, e.dst, capacity=e.bandwidth, loss=e.loss)
        return g

    # -- queries -----------------------------------------------------------

    def descendants(self, u: int) -> set[int]:
        seen, stack = set(), [u]
        while stack:
            for v in self._out[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    def ancestors(self, u: int) -> set[int]:
        seen, stack = set(), [u]
        while stack:
            for v in self._in[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    def hop_distances(self, u: int) -> dict[int, int]:
        """Undirected hop count from ``u`` to every reachable node."""
        dist = {u: 0}
        q = deque([u])
        while q:
            x = q.popleft()
            for y in self._out[x] + self._in[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    q.append(y)
        return dist

    def diameter(self) -> int:
        return max((max(self.hop_distances(u).values()) for u in self.nodes), default=0)

    def check_invariants(self) -> None:
        """Raise TopologyError unless every node lies on a source-to-client path."""
        down: set[int] = set()
        for s in self.sources:
            down |= {s} | self.descendants(s)
        up: set[int] = set()
        for c in self.clients:
            up |= {c} | self.ancestors(c)
        bad = [u for u in self.nodes if u not in down or u not in up]
        if bad:
            raise TopologyError(f"nodes off every source-to-client path: {sorted(bad)}")

    def edge_order(self) -> list[tuple[int, int]]:
        """Edges sorted by the topological rank of (src, dst); simulator tie-break order."""
        rank = {u: i for i, u in enumerate(self._topo)}
        return sorted(self.edges, key=lambda k: (rank[k[0]], rank[k[1]]))


# ---------------------------------------------------------------------------
# generation


def uniform_bandwidth(lo: float = 8.0, hi: float = 64.0):
    """Bandwidth sampler drawing packets/second uniformly from [lo, hi]."""

    def sample(rng: np.random.Generator, parent_host, child_host) -> float:
        return float(rng.uniform(lo, hi))

    return sample


def permissive(parent_host, child_host) -> bool:
    return True


def generate(
    n_nodes: int,
    n_sources: int = 1,
    n_clients: int = 3,
    parents_per_node: int = 4,
    adjacency: Callable[[Hashable, Hashable], bool] | None = None,
    bandwidth_sampler: Callable | None = None,
    loss_rate: float = 0.05,
    seed: int = 0,
    h: int = DEFAULT_BUFFER,
    host_pool: Sequence[Hashable] | None = None,
    max_rejections: int = 10_000,
) -> OverlayGraph:
    """Grow a random overlay one node at a time, then prune it.

    Each new node draws ``parents_per_node`` distinct parents among the nodes
    already placed and links to those it is adjacent to; a node adjacent to
    none of its parents is rejected and another host is drawn.  Clients are
    placed last, with parents drawn among the relays.
    """
    if n_nodes < n_sources + n_clients:
        raise TopologyError("n_nodes must cover the sources and clients")
    if parents_per_node < 1:
        raise TopologyError("parents_per_node must be >= 1")
    rng = np.random.default_rng(seed)
    adjacency = adjacency or permissive
    bandwidth_sampler = bandwidth_sampler or uniform_bandwidth()

    if host_pool is not None:
        pool = list(host_pool)
        if len(pool) < n_nodes:
            raise TopologyError("host pool smaller than n_nodes")
    else:
        pool = None
    next_fresh = 0

    def draw_host():
        nonlocal next_fresh
        if pool is None:
            next_fresh += 1
            return next_fresh - 1
        return pool.pop(int(rng.integers(len(pool))))

    def release_host(host):
        if pool is not None:
            pool.append(host)

    hosts: dict[int, Hashable] = {}
    roles: dict[int, Role] = {}
    edges: list[EdgeRecord] = []
    for i in range(n_sources):
        hosts[i] = draw_host()
        roles[i] = Role.SOURCE

    n_relays = n_nodes - n_sources - n_clients
    rejections = 0
    for k in range(n_relays + n_clients):
        nid = n_sources + k
        is_client = k >= n_relays
        candidates = [u for u, r in roles.items() if r == Role.SF] if is_client else list(roles)
        if not candidates:
            candidates = [u for u, r in roles.items() if r == Role.SOURCE]
        while True:
            host = draw_host()
            count = min(parents_per_node, len(candidates))
            picks = rng.choice(len(candidates), size=count, replace=False)
            parents = sorted(candidates[i] for i in picks)
            linked = [p for p in parents if adjacency(hosts[p], host)]
            if linked:
                break
            release_host(host)
            rejections += 1
            if rejections > max_rejections:
                raise TopologyError(f"gave up after {rejections} rejected nodes; "
                                    "the adjacency predicate is too restrictive")
        hosts[nid] = host
        roles[nid] = Role.CLIENT if is_client else Role.SF
        for p in linked:
            edges.append(EdgeRecord(p, nid, bandwidth_sampler(rng, hosts[p], host), loss_rate))

    g = OverlayGraph([NodeRecord(u, r, h) for u, r in roles.items()], edges)
    g.hosts = hosts
    pruned = prune(g)
    pruned.hosts = {u: hosts[u] for u in pruned.nodes}
    return pruned


def prune(g: OverlayGraph) -> OverlayGraph:
    """Keep exactly the nodes lying on some source-to-client path."""
    down: set[int] = set()
    for s in g.sources:
        down |= {s} | g.descendants(s)
    up: set[int] = set()
    for c in g.clients:
        up |= {c} | g.ancestors(c)
    keep = down & up
    if not any(s in keep for s in g.sources) or not any(c in keep for c in g.clients):
        raise TopologyError("no source-to-client path")
    if len(keep) == len(g.nodes):
        return g
    return g.subgraph(keep)


class TraceMatrix:
    """Pairwise bandwidth matrix standing in for a measured overlay snapshot.

    Entry ``[i, j]`` is the measured bandwidth from host ``i`` to host ``j``;
    zero means the hosts are not adjacent.  Bandwidths are multiplied by
    ``scale`` (packets/second per measured unit).
    """

    def __init__(self, matrix, scale: float = 1.0 / 200.0):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise TopologyFormatError("trace matrix must be square")
        self.scale = scale

    @classmethod
    def load(cls, path, scale: float = 1.0 / 200.0) -> "TraceMatrix":
        return cls(np.loadtxt(path, comments="#", ndmin=2), scale)

    @property
    def hosts(self) -> list[int]:
        return list(range(self.matrix.shape[0]))

    def adjacent(self, a: int, b: int) -> bool:
        return a != b and self.matrix[a, b] > 0

    def bandwidth(self, rng, a: int, b: int) -> float:
        return float(self.matrix[a, b] * self.scale)

    def generate(self, n_nodes: int, **kwargs) -> OverlayGraph:
        return generate(n_nodes, adjacency=self.adjacent, bandwidth_sampler=self.bandwidth,
                        host_pool=self.hosts, **kwargs)


def synthetic_trace(n_hosts: int = 1000, radius: float = 0.4, median: float = 6400.0,
                    sigma: float = 1.0, seed: int = 0, scale: float = 1.0 / 200.0) -> TraceMatrix:
    """Geometric stand-in for a measured snapshot.

    Hosts are uniform points in the unit square and adjacent when closer than
    ``radius``; measured bandwidths are log-normal with the given median.
    """
    rng = np.random.default_rng(seed)
    pts = rng.random((n_hosts, 2))
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    m = rng.lognormal(math.log(median), sigma, (n_hosts, n_hosts))
    m[(dist > radius) | (dist == 0)] = 0.0
    return TraceMatrix(m, scale)


# ---------------------------------------------------------------------------
# max-flow bounds


def max_flow_bound(g: OverlayGraph, mode: str = "network_coding", lossy: bool = False) -> float:
    """Max-flow throughput bound with a lossless, uncapacitated hyper-source.

    ``network_coding``: sum over clients of the hyper-source -> client max flow.
    ``routing``: max flow from the hyper-source to a hyper-sink on all clients.
    With ``lossy`` each capacity is scaled by its delivery probability.
    """
    mode = mode.lower()
    if mode not in ("network_coding", "routing"):
        raise ValueError(f"unknown mode {mode!r}")
    G = nx.DiGraph()
    for e in g.edges.values():
        G.add_edge(e.src, e.dst, capacity=e.bandwidth * ((1.0 - e.loss) if lossy else 1.0))
    hs, hk = ("hyper", "source"), ("hyper", "sink")
    G.add_node(hs)
    for s in g.sources:
        G.add_edge(hs, s)
    if mode == "network_coding":
        return float(sum(client_max_flows(g, lossy).values()))
    G.add_node(hk)
    for c in g.clients:
        G.add_edge(c, hk)
    return float(nx.maximum_flow_value(G, hs, hk))


def client_max_flows(g: OverlayGraph, lossy: bool = False) -> dict[int, float]:
    """Max flow from the hyper-source to each client separately."""
    G = nx.DiGraph()
    for e in g.edges.values():
        G.add_edge(e.src, e.dst, capacity=e.bandwidth * ((1.0 - e.loss) if lossy else 1.0))
    hs = ("hyper", "source")
    G.add_node(hs)
    for s in g.sources:
        G.add_edge(hs, s)
    return {c: float(nx.maximum_flow_value(G, hs, c)) if c in G else 0.0 for c in g.clients}


# ---------------------------------------------------------------------------
# local views


def neighborhood(g: OverlayGraph, u: int, radius: int) -> OverlayGraph:
    """Subgraph of nodes within ``radius`` undirected hops of ``u``.

    Boundary nodes with parents outside the ball become proxy sources whose
    outgoing bandwidth is capped at their true incoming bandwidth; boundary
    nodes with children outside become proxy clients.  The result is pruned.
    """
    if u not in g.nodes:
        raise KeyError(u)
    dist = g.hop_distances(u)
    ball = {x for x, d in dist.items() if d <= radius}
    if len(ball) == len(g.nodes):
        return g
    roles: dict[int, Role] = {}
    scale: dict[int, float] = {}
    for x in ball:
        if x == u:
            continue
        ext_parents = [p for p in g.parents(x) if p not in ball]
        ext_children = [c for c in g.children(x) if c not in ball]
        if ext_parents and g.role(x) != Role.SOURCE:
            roles[x] = Role.SOURCE
            b_in = g.in_bw(x)
            b_out = sum(g.edge(x, c).bandwidth for c in g.children(x) if c in ball)
            if b_out > b_in > 0:
                scale[x] = b_in / b_out
        elif ext_children and g.role(x) not in (Role.CLIENT, Role.SOURCE):
            roles[x] = Role.CLIENT
    nodes = [NodeRecord(x, roles.get(x, g.role(x)), g.nodes[x].h) for x in sorted(ball)]
    edges = []
    for (a, b), e in g.edges.items():
        if a not in ball or b not in ball:
            continue
        if roles.get(b) == Role.SOURCE or roles.get(a) == Role.CLIENT:
            continue
        edges.append(replace(e, bandwidth=e.bandwidth * scale.get(a, 1.0)))
    local = OverlayGraph(nodes, edges)
    try:
        return prune(local)
    except TopologyError:
        return local


def nc_processing_order(g: OverlayGraph) -> list[int]:
    """NC nodes in topological order, so every NC ancestor precedes its descendants."""
    return [u for u in g.topo_order() if g.role(u) == Role.NC]


# ---------------------------------------------------------------------------
# file format


def save(g: OverlayGraph, path) -> None:
    lines = ["# ncplace topology", "# node <id> <role> <h>", "# edge <from> <to> <bandwidth_pps> <loss>"]
    for u in sorted(g.nodes):
        n = g.nodes[u]
        lines.append(f"node {n.id} {n.role.name} {n.h}")
    for key in sorted(g.edges):
        e = g.edges[key]
        lines.append(f"edge {e.src} {e.dst} {e.bandwidth!r} {e.loss!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def loads(text: str) -> OverlayGraph:
    nodes: list[NodeRecord] = []
    edges: list[EdgeRecord] = []
    seen_nodes: set[int] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0].lower()
        try:
            if kind == "node":
                if len(parts) != 4:
                    raise TopologyFormatError("expected: node <id> <role> <h>")
                nid = int(parts[1])
                try:
                    role = Role[parts[2].upper()]
                except KeyError:
                    raise TopologyFormatError(f"unknown role {parts[2]!r}") from None
                if nid in seen_nodes:
                    raise TopologyFormatError(f"duplicate node {nid}")
                seen_nodes.add(nid)
                nodes.append(NodeRecord(nid, role, int(parts[3])))
            elif kind == "edge":
                if len(parts) != 5:
                    raise TopologyFormatError("expected: edge <from> <to> <bandwidth_pps> <loss>")
                src, dst = int(parts[1]), int(parts[2])
                bw, loss = float(parts[3]), float(parts[4])
                if not (bw > 0 and math.isfinite(bw)):
                    raise TopologyFormatError(f"bandwidth field {parts[3]!r} must be a positive real")
                if not (0.0 <= loss < 1.0):
                    raise TopologyFormatError(f"loss field {parts[4]!r} must lie in [0, 1)")
                edges.append(EdgeRecord(src, dst, bw, loss))
            else:
                raise TopologyFormatError(f"unknown record type {parts[0]!r}")
        except TopologyFormatError as exc:
            raise TopologyFormatError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise TopologyFormatError(f"line {lineno}: {exc}") from None
    try:
        return OverlayGraph(nodes, edges)
    except TopologyError as exc:
        raise TopologyFormatError(str(exc)) from None


def load(path) -> OverlayGraph:
    return loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# small fixtures


def chain(bandwidths: Sequence[float], losses: Sequence[float] | float = 0.0, h: int = DEFAULT_BUFFER) -> OverlayGraph:
    """Source 0 -> relays -> client, one edge per entry of ``bandwidths``."""
    k = len(bandwidths)
    if isinstance(losses, (int, float)):
        losses = [float(losses)] * k
    roles = [Role.SOURCE] + [Role.SF] * (k - 1) + [Role.CLIENT]
    nodes = [NodeRecord(i, r, h) for i, r in enumerate(roles)]
    edges = [EdgeRecord(i, i + 1, float(b), float(p)) for i, (b, p) in enumerate(zip(bandwidths, losses))]
    return OverlayGraph(nodes, edges)


def butterfly(capacity: float = 1.0, loss: float = 0.0, relay_role: Role = Role.NC) -> OverlayGraph:
    """Two-source butterfly: sources 0 and 1, relays 2 -> 3, clients 4 and 5.

    Each client has one direct source edge and shares the 2 -> 3 bottleneck.
    """
    nodes = [NodeRecord(0, Role.SOURCE), NodeRecord(1, Role.SOURCE), NodeRecord(2, relay_role),
             NodeRecord(3, relay_role), NodeRecord(4, Role.CLIENT), NodeRecord(5, Role.CLIENT)]
    pairs = [(0, 4), (0, 2), (1, 2), (1, 5), (2, 3), (3, 4), (3, 5)]
    return OverlayGraph(nodes, [EdgeRecord(a, b, capacity, loss) for a, b in pairs])
