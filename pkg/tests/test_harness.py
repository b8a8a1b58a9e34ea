import csv
import math

import pytest

from ncplace import harness as H
from ncplace import selection as SEL
from ncplace.config import ExperimentConfig

SMALL = ExperimentConfig(topology="estimator", count=3, budgets=[0, 1, 2], radii=[1], seeds=[0, 1], runs=4)


@pytest.fixture(scope="module")
def sweep():
    return H.run_sweep(SMALL)


def test_estimator_corpus_shape():
    graphs = H.estimator_corpus(20)
    assert len(graphs) == 20
    assert all(len(g) <= H.ESTIMATOR_MAX_NODES for g in graphs)
    assert all(e.loss == 0.05 for g in graphs for e in g.edges.values())
    assert H.estimator_corpus(3) == graphs[:3]


def test_placement_corpus_shape():
    graphs = H.placement_corpus(2)
    assert [g.diameter() for g in graphs] == [6, 8]
    assert all(32 <= len(g) <= 56 for g in graphs)
    for g in graphs:
        g.check_invariants()


def test_sweep_rows(sweep):
    topos = sweep.topologies
    assert topos == ["estimator-00", "estimator-01", "estimator-02"]
    # centralized + local_d1 + 2 random seeds, 3 budgets each, plus 4 references
    assert len(sweep.rows) == 3 * (4 * 3 + 4)
    for t in topos:
        nc = sweep.reference(t, "all_nc")
        assert nc["norm_delay"] == pytest.approx(1.0)
        assert sweep.reference(t, "maxflow_routing")["throughput_pps"] <= sweep.reference(t, "maxflow_nc")[
            "throughput_pps"] + 1e-9
    for r in sweep.cells():
        assert r["status"] == "ok"
        assert len(r["nodes"]) == r["A"]
        assert math.isfinite(r["sim_delay_seconds"]) and r["completed"] == SMALL.runs


def test_budget_zero_is_all_sf(sweep):
    for t in sweep.topologies:
        sf = sweep.reference(t, "all_sf")
        for r in sweep.cells():
            if r["topology"] == t and r["A"] == 0:
                assert r["sim_delay_seconds"] == sf["sim_delay_seconds"]


def test_sweep_roundtrips_through_csv(sweep, tmp_path):
    sweep.to_csv(tmp_path / "r.csv")
    back = H.SweepResults.load(tmp_path / "r.csv")
    assert len(back.rows) == len(sweep.rows)
    for a, b in zip(sweep.rows, back.rows):
        assert a["nodes"] == b["nodes"] and a.get("A") == b["A"] and a["strategy"] == b["strategy"]
        assert a["sim_delay_seconds"] == b["sim_delay_seconds"] or (
            math.isnan(a["sim_delay_seconds"]) and math.isnan(b["sim_delay_seconds"]))


def test_sweep_is_deterministic(sweep, tmp_path):
    H.write_outputs(sweep, tmp_path / "a")
    H.write_outputs(H.run_sweep(SMALL), tmp_path / "b")
    for name in ("results.csv", "compare.csv", "delay.csv", "throughput.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_compare(sweep):
    cmp = H.compare(sweep)
    for A in (0, 1, 2):
        rec = cmp.record("vs_random", "centralized", A)
        assert rec["wins"] + rec["losses"] + rec["ties"] == 3
    assert cmp.record("vs_random", "random", 1)["ties"] == 3
    assert cmp.record("vs_random", "centralized", 0)["ties"] == 3
    agree = cmp.record("agreement", "local_d1", 1)
    assert agree["topologies"] == 3 and 0.0 <= agree["agreement"] <= 1.0


def test_agreement_counts_first_picks():
    g = H.estimator_corpus(1)[0]
    cen, loc = SEL.select_centralized(g, 1), SEL.select_local(g, 1, 1)
    rows = [
        {"topology": "t", "strategy": "centralized", "radius": None, "seed": None, "A": 1, "nodes": cen.nodes,
         "sim_delay_seconds": 1.0, "status": "ok"},
        {"topology": "t", "strategy": "local", "radius": 1, "seed": None, "A": 1, "nodes": loc.nodes,
         "sim_delay_seconds": 1.0, "status": "ok"},
    ]
    rec = H.compare(H.SweepResults(rows)).record("agreement", "local_d1", 1)
    assert rec["agreement"] == float(cen.nodes == loc.nodes)


def test_plot_tables(sweep, tmp_path):
    paths = H.emit_plots_data(sweep, tmp_path)
    with open(paths[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["A", "centralized", "local_d1", "random", "all_sf"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
    # every strategy at A=0 is the all-SF configuration
    assert len({r for r in rows[1][1:]}) == 1


def test_empty_plot_tables(tmp_path):
    paths = H.emit_plots_data(H.SweepResults([]), tmp_path)
    assert paths[0].read_text().strip() == "A"


def test_oversized_budget_is_reported():
    cfg = ExperimentConfig(topology="generate", n_nodes=8, n_clients=2, budgets=[0, 50], strategies=["centralized"],
                           runs=2)
    res = H.run_sweep(cfg)
    bad = [r for r in res.cells() if r["A"] == 50]
    assert bad and bad[0]["status"].startswith("error: budget 50 exceeds")


def test_topology_files(tmp_path):
    from ncplace import topology as T

    T.save(H.estimator_corpus(1)[0], tmp_path / "mine.topo")
    cfg = ExperimentConfig(topology="files", topology_files=[str(tmp_path / "mine.topo")])
    assert [name for name, _ in H.load_topologies(cfg)] == ["mine"]


def test_identical_strategies_tie():
    rows = [{"topology": f"t{i}", "strategy": s, "radius": None, "seed": None, "A": 1, "nodes": [1],
             "sim_delay_seconds": 2.0, "status": "ok"} for i in range(3) for s in ("centralized", "random")]
    rec = H.compare(H.SweepResults(rows)).record("vs_random", "centralized", 1)
    assert (rec["wins"], rec["losses"], rec["ties"]) == (0, 0, 3)


def test_full_budget_matches_all_nc():
    cfg = ExperimentConfig(topology="estimator", count=1, budgets=[4], strategies=["centralized"], runs=3)
    g = H.estimator_corpus(1)[0]
    assert len(g.sf_nodes) == 4
    res = H.run_sweep(cfg)
    assert res.cells()[0]["norm_delay"] == pytest.approx(1.0)
    assert res.cells()[0]["norm_throughput"] == pytest.approx(1.0)
