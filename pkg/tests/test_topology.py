import networkx as nx
import numpy as np
import pytest

from oracles import max_flow

from ncplace import harness
from ncplace import topology as T
from ncplace.topology import EdgeRecord, NodeRecord, OverlayGraph, Role, TopologyError, TopologyFormatError


@pytest.mark.parametrize("seed", range(10))
def test_generate_invariants(seed):
    g = T.generate(30, 2, 4, parents_per_node=3, loss_rate=0.05, seed=seed)
    assert nx.is_directed_acyclic_graph(g.to_networkx())
    g.check_invariants()
    assert len(g) <= 30
    assert 1 <= len(g.sources) <= 2 and 1 <= len(g.clients) <= 4
    assert all(not g.parents(s) for s in g.sources)
    assert all(not g.children(c) for c in g.clients)
    assert all(e.loss == 0.05 and 8.0 <= e.bandwidth <= 64.0 for e in g.edges.values())
    # clients hang off relays
    assert all(g.role(p) == Role.SF for c in g.clients for p in g.parents(c))


def test_generate_is_deterministic():
    assert T.generate(25, seed=3) == T.generate(25, seed=3)
    assert T.generate(25, seed=3) != T.generate(25, seed=4)


def test_generate_argument_checks():
    with pytest.raises(TopologyError):
        T.generate(3, 2, 2)
    with pytest.raises(TopologyError):
        T.generate(10, parents_per_node=0)
    with pytest.raises(TopologyError):
        T.generate(10, adjacency=lambda a, b: False, max_rejections=20)


def test_trace_generation_respects_adjacency():
    trace = T.synthetic_trace(200, radius=0.3, seed=1)
    g = trace.generate(20, seed=2)
    for (a, b), e in g.edges.items():
        assert trace.adjacent(g.hosts[a], g.hosts[b])
        assert e.bandwidth == pytest.approx(trace.matrix[g.hosts[a], g.hosts[b]] / 200)
    assert len(set(g.hosts.values())) == len(g)


def test_trace_matrix_load(tmp_path):
    p = tmp_path / "trace.txt"
    p.write_text("# bandwidths\n0 400\n0 0\n")
    trace = T.TraceMatrix.load(p)
    assert trace.adjacent(0, 1) and not trace.adjacent(1, 0)
    assert trace.bandwidth(None, 0, 1) == 2.0
    with pytest.raises(TopologyFormatError):
        T.TraceMatrix(np.zeros((2, 3)))


def test_prune_drops_dead_ends():
    nodes = [NodeRecord(0, Role.SOURCE), NodeRecord(1, Role.SF), NodeRecord(2, Role.SF), NodeRecord(3, Role.CLIENT)]
    g = OverlayGraph(nodes, [EdgeRecord(0, 1, 1.0, 0.0), EdgeRecord(1, 3, 1.0, 0.0), EdgeRecord(0, 2, 1.0, 0.0)])
    with pytest.raises(TopologyError):
        g.check_invariants()
    assert sorted(T.prune(g).nodes) == [0, 1, 3]


@pytest.mark.parametrize("bad", [
    lambda: OverlayGraph([NodeRecord(0, Role.SF)] * 2, []),
    lambda: OverlayGraph([NodeRecord(0, Role.SF), NodeRecord(1, Role.SF)],
                         [EdgeRecord(0, 1, 1.0, 0.0), EdgeRecord(1, 0, 1.0, 0.0)]),
    lambda: OverlayGraph([NodeRecord(0, Role.SF)], [EdgeRecord(0, 0, 1.0, 0.0)]),
    lambda: OverlayGraph([NodeRecord(0, Role.SF), NodeRecord(1, Role.SF)], [EdgeRecord(0, 1, 0.0, 0.0)]),
    lambda: OverlayGraph([NodeRecord(0, Role.SF), NodeRecord(1, Role.SF)], [EdgeRecord(0, 1, 1.0, 1.0)]),
    lambda: OverlayGraph([NodeRecord(0, Role.SF), NodeRecord(1, Role.SOURCE)], [EdgeRecord(0, 1, 1.0, 0.0)]),
    lambda: OverlayGraph([NodeRecord(0, Role.CLIENT), NodeRecord(1, Role.SF)], [EdgeRecord(0, 1, 1.0, 0.0)]),
    lambda: OverlayGraph([NodeRecord(0, Role.SF, h=0)], []),
    lambda: OverlayGraph([NodeRecord(0, Role.SF)], [EdgeRecord(0, 5, 1.0, 0.0)]),
])
def test_invalid_graphs_rejected(bad):
    with pytest.raises(TopologyError):
        bad()


def _oracle_bounds(g, lossy=False):
    cap = {k: e.bandwidth * ((1 - e.loss) if lossy else 1) for k, e in g.edges.items()}
    for s in g.sources:
        cap[("S", s)] = 1e18
    nc = sum(max_flow(cap, "S", c) for c in g.clients)
    routing_cap = dict(cap)
    for c in g.clients:
        routing_cap[(c, "T")] = 1e18
    return nc, max_flow(routing_cap, "S", "T")


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("lossy", [False, True])
def test_max_flow_matches_edmonds_karp(seed, lossy):
    g = T.generate(20, 2, 3, seed=seed)
    nc, routing = _oracle_bounds(g, lossy)
    assert T.max_flow_bound(g, "network_coding", lossy) == pytest.approx(nc, rel=1e-9)
    assert T.max_flow_bound(g, "routing", lossy) == pytest.approx(routing, rel=1e-9)


def test_butterfly_bounds():
    g = T.butterfly(1.0)
    assert T.client_max_flows(g) == {4: 2.0, 5: 2.0}
    assert T.max_flow_bound(g, "network_coding") == 4.0
    assert T.max_flow_bound(g, "routing") == 3.0
    with pytest.raises(ValueError):
        T.max_flow_bound(g, "multicast")


def test_routing_never_exceeds_coding_bound():
    for g in harness.estimator_corpus(10):
        assert T.max_flow_bound(g, "routing") <= T.max_flow_bound(g, "network_coding") + 1e-9


def test_neighborhood_full_radius_is_identity():
    g = T.generate(20, seed=1)
    assert T.neighborhood(g, g.sf_nodes[0], 100) is g


def test_neighborhood_builds_proxies():
    g = T.chain([10.0, 20.0, 30.0, 40.0, 50.0])
    local = T.neighborhood(g, 2, 1)
    assert sorted(local.nodes) == [1, 2, 3]
    assert local.role(1) == Role.SOURCE and local.role(3) == Role.CLIENT and local.role(2) == Role.SF
    # proxy source capped at what it actually receives
    assert local.edge(1, 2).bandwidth == 10.0
    assert local.edge(2, 3).bandwidth == 30.0
    with pytest.raises(KeyError):
        T.neighborhood(g, 99, 1)


def test_neighborhood_keeps_hop_limit():
    g = T.generate(30, seed=4)
    u = g.sf_nodes[len(g.sf_nodes) // 2]
    dist = g.hop_distances(u)
    local = T.neighborhood(g, u, 2)
    assert all(dist[x] <= 2 for x in local.nodes)


def test_processing_order_is_topological():
    g = T.generate(20, seed=0)
    g = g.with_roles({u: Role.NC for u in g.sf_nodes[::2]})
    order = T.nc_processing_order(g)
    assert sorted(order) == g.nc_nodes
    pos = {u: i for i, u in enumerate(order)}
    for u in order:
        assert all(pos[a] < pos[u] for a in g.ancestors(u) if a in pos)


def test_save_load_roundtrip(tmp_path):
    g = T.generate(25, 2, 3, loss_rate=0.03, seed=5, h=8)
    T.save(g, tmp_path / "g.topo")
    back = T.load(tmp_path / "g.topo")
    assert back == g
    assert all(back.nodes[u].h == 8 for u in back.nodes)


@pytest.mark.parametrize("text,msg", [
    ("node 0 SOURCE 16\nnode 0 CLIENT 16\n", "line 2: duplicate node"),
    ("node 0 ROUTER 16\n", "line 1: unknown role"),
    ("node 0 SOURCE\n", "line 1: expected"),
    ("node 0 SOURCE 16\nnode 1 CLIENT 16\nedge 0 1 -3 0\n", "line 3: bandwidth"),
    ("node 0 SOURCE 16\nnode 1 CLIENT 16\nedge 0 1 3 1.5\n", "line 3: loss"),
    ("link 0 1\n", "line 1: unknown record"),
    ("node x SOURCE 16\n", "line 1:"),
    ("node 0 SOURCE 16\nedge 0 1 3 0\n", "unknown node"),
])
def test_loads_errors(text, msg):
    with pytest.raises(TopologyFormatError, match=msg):
        T.loads(text)


def test_loads_comments_and_case():
    g = T.loads("# header\nnode 0 source 4  # the source\n\nNODE 1 client 4\nedge 0 1 12.5 0.1\n")
    assert g.role(0) == Role.SOURCE and g.edge(0, 1).bandwidth == 12.5


def test_derived_graphs():
    g = T.chain([1.0, 2.0, 3.0])
    assert g.in_bw(1) == 1.0 and g.out_bw(1) == 2.0
    h = g.with_roles({1: Role.NC})
    assert h.nc_nodes == [1] and g.nc_nodes == []
    assert sorted(g.subgraph([0, 1]).nodes) == [0, 1]
    assert g.diameter() == 3
    assert g.edge_order() == [(0, 1), (1, 2), (2, 3)]
    assert g.descendants(1) == {2, 3} and g.ancestors(2) == {0, 1}


def test_neighborhood_keeps_real_sources():
    g = T.chain([10.0, 10.0, 10.0, 10.0])
    local = T.neighborhood(g, 1, 1)
    assert local.role(0) == Role.SOURCE and local.role(2) == Role.CLIENT


def test_three_node_graph_is_a_chain():
    g = T.generate(3, 1, 1, parents_per_node=1, seed=0)
    assert sorted(g.edges) == [(0, 1), (1, 2)]
    assert [g.role(u) for u in (0, 1, 2)] == [Role.SOURCE, Role.SF, Role.CLIENT]


def test_forty_node_in_degree():
    for seed in range(100):
        g = T.generate(40, 1, 3, parents_per_node=4, loss_rate=0.05, seed=seed)
        assert all(len(g.parents(u)) <= 4 for u in g.nodes)
        g.check_invariants()


def test_chain_bounds_and_disconnected_client():
    g = T.chain([7.0, 3.0])
    assert T.max_flow_bound(g, "network_coding") == T.max_flow_bound(g, "routing") == 3.0
    nodes = [NodeRecord(0, Role.SOURCE), NodeRecord(1, Role.CLIENT), NodeRecord(2, Role.SF), NodeRecord(3, Role.CLIENT)]
    g = OverlayGraph(nodes, [EdgeRecord(0, 1, 5.0, 0.0), EdgeRecord(2, 3, 5.0, 0.0)])
    assert T.client_max_flows(g) == {1: 5.0, 3: 0.0}


def test_neighborhood_grows_with_radius():
    g = T.generate(30, seed=8)
    u = g.sf_nodes[0]
    sizes = [set(T.neighborhood(g, u, d).nodes) | {u} for d in range(1, 6)]
    dist = g.hop_distances(u)
    for d, s in enumerate(sizes, 1):
        assert {x for x in s if x in g.nodes} <= {x for x, k in dist.items() if k <= d}
    balls = [{x for x, k in dist.items() if k <= d} for d in range(1, 6)]
    assert all(a <= b for a, b in zip(balls, balls[1:]))
