import csv

import pytest

from ncplace import topology as T
from ncplace.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def topo(tmp_path):
    path = tmp_path / "g.topo"
    assert main(["gen", "--nodes", "14", "--seed", "2", "--out", str(path)]) == 0
    return path


def test_gen_writes_a_loadable_topology(topo):
    g = T.load(topo)
    assert g == T.generate(14, seed=2)


def test_gen_corpus(tmp_path):
    assert main(["gen", "--corpus", "estimator", "--count", "3", "--out", str(tmp_path / "c")]) == 0
    assert sorted(p.name for p in (tmp_path / "c").iterdir()) == [f"estimator-0{i}.topo" for i in range(3)]


def test_estimate(topo, tmp_path, capsys):
    assert main(["estimate", str(topo), "--out", str(tmp_path / "e.csv"), "--senders", str(tmp_path / "s.csv")]) == 0
    rows = _rows(tmp_path / "e.csv")
    assert len(rows) == len(T.load(topo).clients)
    assert _rows(tmp_path / "s.csv")
    assert main(["estimate", str(topo)]) == 0
    assert capsys.readouterr().out.startswith("client_id,t_c_seconds")


def test_select_then_simulate(topo, tmp_path):
    plan = tmp_path / "plan.csv"
    assert main(["select", str(topo), "--strategy", "local", "--radius", "2", "--budget", "2",
                 "--out", str(plan)]) == 0
    assert [r["rank"] for r in _rows(plan)] == ["1", "2"]
    out = tmp_path / "sim.csv"
    assert main(["simulate", str(topo), "--plan", str(plan), "--runs", "3", "--out", str(out)]) == 0
    rows = _rows(out)
    assert {r["runs"] for r in rows} == {"3"}


def test_simulate_trace(topo, tmp_path):
    out = tmp_path / "one.csv"
    assert main(["simulate", str(topo), "--nc", "3", "--trace", str(tmp_path / "t.bin"), "--G", "8",
                 "--packet-size", "16", "--out", str(out)]) == 0
    assert (tmp_path / "t.bin").stat().st_size % (4 + 8 + 16) == 0
    assert "decode_time_seconds" in _rows(out)[0]


def test_sweep_and_compare(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("topology = estimator\ncount = 2\nbudgets = 0, 1\nradii = 1\nseeds = 0\nruns = 2\n")
    out = tmp_path / "res"
    assert main(["sweep", "--config", str(cfg), "--output", str(out), "--runs", "3"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["compare.csv", "config.txt", "delay.csv", "results.csv",
                                                     "throughput.csv"]
    assert "runs = 3" in (out / "config.txt").read_text()
    assert main(["compare", str(out / "results.csv"), "--out", str(tmp_path / "cmp.csv")]) == 0
    assert _rows(tmp_path / "cmp.csv")


def test_errors_exit_with_status_2(tmp_path, capsys):
    assert main(["estimate", str(tmp_path / "missing.topo")]) == 2
    (tmp_path / "bad.topo").write_text("node 0 ROUTER 4\n")
    assert main(["estimate", str(tmp_path / "bad.topo")]) == 2
    assert "line 1" in capsys.readouterr().err
    (tmp_path / "bad.cfg").write_text("colour = red\n")
    assert main(["sweep", "--config", str(tmp_path / "bad.cfg")]) == 2
    with pytest.raises(SystemExit):
        main(["select"])
