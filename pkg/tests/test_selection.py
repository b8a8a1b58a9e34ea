import math

import pytest

from ncplace import harness
from ncplace import selection as SEL
from ncplace import topology as T
from ncplace.delay import estimate
from ncplace.topology import Role

CORPUS = harness.estimator_corpus(8)


@pytest.mark.parametrize("gi", [0, 3, 5])
def test_centralized_first_pick_is_the_argmin(gi):
    g = CORPUS[gi]
    plan = SEL.select_centralized(g, 1)
    totals = {u: estimate(SEL.promote(g, [u])).total_delay for u in g.sf_nodes}
    best = min(totals.values())
    assert totals[plan.nodes[0]] == best
    assert plan.nodes[0] == min(u for u, t in totals.items() if t == best)
    assert plan.delays[0] == pytest.approx(best / len(g.clients))


@pytest.mark.parametrize("gi", range(len(CORPUS)))
def test_plans_are_nonincreasing(gi):
    g = CORPUS[gi]
    for plan in (SEL.select_centralized(g, 3), SEL.select_local(g, 3, 2)):
        assert plan.is_nonincreasing()
        assert len(set(plan.nodes)) == len(plan) == min(3, len(g.sf_nodes))


@pytest.mark.parametrize("gi", range(4))
def test_whole_graph_radius_matches_centralized(gi):
    g = CORPUS[gi]
    assert SEL.select_local(g, 3, radius=50).nodes == SEL.select_centralized(g, 3).nodes


def test_random_is_reproducible():
    g = CORPUS[6]
    a = SEL.select_random(g, 3, seed=4)
    assert a.nodes == SEL.select_random(g, 3, seed=4).nodes
    assert len(set(a.nodes)) == 3 and set(a.nodes) <= set(g.sf_nodes)
    others = {tuple(SEL.select_random(g, 3, seed=s, evaluate=False).nodes) for s in range(10)}
    assert len(others) > 1
    assert all(math.isnan(d) for d in SEL.select_random(g, 2, seed=1, evaluate=False).delays)


def test_recorded_delays_match_prefix_estimates():
    g = CORPUS[2]
    for plan in (SEL.select_centralized(g, 2), SEL.select_local(g, 2, 1), SEL.select_random(g, 2, seed=0)):
        for k in range(1, len(plan) + 1):
            assert plan.delays[k - 1] == pytest.approx(estimate(SEL.apply(g, plan, k)).mean_delay)
        assert plan.base_delay == pytest.approx(estimate(g).mean_delay)


def test_budget_larger_than_candidates():
    g = T.chain([10.0, 20.0, 30.0])
    plan = SEL.select_centralized(g, 5)
    assert sorted(plan.nodes) == [1, 2]


def test_early_stop_halts_when_nothing_helps():
    # promoting the relay of a lossless equal-rate chain changes nothing
    g = T.chain([10.0, 10.0])
    assert len(SEL.select_centralized(g, 1, early_stop=True)) == 0
    assert len(SEL.select_local(g, 1, 1, early_stop=True)) == 0
    assert len(SEL.select_centralized(g, 1)) == 1


def test_local_score_of_isolated_candidate():
    g = T.chain([10.0, 10.0, 10.0, 10.0, 10.0])
    # a 1-hop ball in the middle has proxy endpoints
    score, after = SEL.local_score(g, 2, 1)
    assert score <= 0 and after > 0


def test_local_score_without_a_client_is_neutral():
    # the only child of 1 inside its 1-hop ball also has a parent outside it,
    # so it becomes a proxy source and the ball holds no client
    nodes = [T.NodeRecord(0, Role.SOURCE), T.NodeRecord(1, Role.SF), T.NodeRecord(2, Role.SF),
             T.NodeRecord(3, Role.SF), T.NodeRecord(4, Role.CLIENT), T.NodeRecord(5, Role.SF)]
    pairs = [(0, 1), (1, 2), (0, 3), (3, 5), (5, 2), (2, 4)]
    g = T.OverlayGraph(nodes, [T.EdgeRecord(a, b, 5.0, 0.0) for a, b in pairs])
    assert SEL.local_score(g, 1, 1) == (0.0, 0.0)


def test_apply_and_reset_helpers():
    g = CORPUS[0]
    plan = SEL.select_random(g, 3, seed=0, evaluate=False)
    assert SEL.apply(g, plan, 0) is g
    assert SEL.apply(g, plan).nc_nodes == sorted(plan.nodes)
    with pytest.raises(ValueError):
        SEL.apply(g, plan, 4)
    assert SEL.all_sf(SEL.all_nc(g)) == g
    assert SEL.all_nc(g).sf_nodes == []


def test_dispatch_and_errors():
    g = CORPUS[1]
    assert SEL.select(g, "random", 2, seed=3).nodes == SEL.select_random(g, 2, seed=3).nodes
    with pytest.raises(ValueError):
        SEL.select(g, "local", 2)
    with pytest.raises(ValueError):
        SEL.select(g, "greedy", 2)
    with pytest.raises(ValueError):
        SEL.select_local(g, 1, 0)


def test_plan_csv(tmp_path):
    plan = SEL.select_local(CORPUS[0], 2, 1)
    plan.to_csv(tmp_path / "plan.csv")
    lines = (tmp_path / "plan.csv").read_text().splitlines()
    assert lines[0] == "rank,node_id,est_delay_seconds,strategy,radius,seed"
    assert lines[1].startswith(f"1,{plan.nodes[0]},")
    assert lines[1].endswith(",local,1,")


def test_full_budget_reaches_all_nc():
    g = CORPUS[0]
    plan = SEL.select_centralized(g, len(g.sf_nodes))
    assert sorted(plan.nodes) == g.sf_nodes
    assert math.isfinite(plan.delays[-1])
    assert plan.delays[-1] == pytest.approx(estimate(SEL.all_nc(g)).mean_delay)
    assert len(SEL.select_centralized(g, 0)) == 0


def test_random_full_budget_and_seed_spread():
    g = harness.placement_corpus(1)[0]
    a = SEL.select_random(g, 3, seed=0, evaluate=False)
    b = SEL.select_random(g, 3, seed=1, evaluate=False)
    assert a.nodes != b.nodes
    full = SEL.select_random(CORPUS[0], 100, seed=2, evaluate=False)
    assert sorted(full.nodes) == CORPUS[0].sf_nodes


def test_apply_is_idempotent():
    g = CORPUS[1]
    plan = SEL.select_random(g, 2, seed=0, evaluate=False)
    assert SEL.apply(g, plan, 1) == SEL.apply(g, plan, 1)
    assert SEL.apply(g, plan).nc_nodes == sorted(plan.nodes)
