"""Command-line entry point: ``ncplace <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import harness, selection, simulator, topology
from .delay import estimate


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _strs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _write_rows(rows: list[dict], out, fields: list[str] | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def cmd_gen(args) -> int:
    if args.corpus:
        graphs = (harness.placement_corpus(args.count, args.seed) if args.corpus == "placement"
                  else harness.estimator_corpus(args.count, args.seed))
        out = Path(args.out or f"{args.corpus}-corpus")
        out.mkdir(parents=True, exist_ok=True)
        for i, g in enumerate(graphs):
            topology.save(g, out / f"{args.corpus}-{i:02d}.topo")
        print(f"wrote {len(graphs)} topologies to {out}")
        return 0
    g = topology.generate(args.nodes, args.sources, args.clients, args.parents, loss_rate=args.loss,
                          seed=args.seed, h=args.buffer)
    out = args.out or "overlay.topo"
    topology.save(g, out)
    print(f"wrote {out}: {len(g)} nodes, {len(g.edges)} edges, diameter {g.diameter()}")
    return 0


def cmd_estimate(args) -> int:
    g = topology.load(args.topology)
    report = estimate(g, args.G, max_iter=args.max_iter)
    if args.out:
        report.to_csv(args.out)
    else:
        _write_rows(report.rows(), None)
    if args.senders:
        report.senders_to_csv(args.senders)
    return 0


def cmd_select(args) -> int:
    g = topology.load(args.topology)
    plan = selection.select(g, args.strategy, args.budget, args.G, radius=args.radius, seed=args.seed,
                            early_stop=args.early_stop)
    if args.out:
        plan.to_csv(args.out)
    else:
        _write_rows(plan.rows(), None, ["rank", "node_id", "est_delay_seconds", "strategy", "radius", "seed"])
    return 0


def _plan_nodes(path) -> list[int]:
    with open(path, newline="") as fh:
        return [int(r["node_id"]) for r in csv.DictReader(fh)]


def cmd_simulate(args) -> int:
    g = topology.load(args.topology)
    nodes = _ints(args.nc) if args.nc else []
    if args.plan:
        nodes += _plan_nodes(args.plan)
    if nodes:
        g = selection.promote(g, nodes)
    kw = {"packet_size": args.packet_size, "deadline": args.deadline, "backend": args.backend}
    if args.trace:
        result = simulator.simulate(g, args.G, seed=args.seed, trace_path=args.trace, **kw)
        rows = result.rows()
    else:
        summary = simulator.monte_carlo(g, args.G, runs=args.runs, seed=args.seed, workers=args.workers, **kw)
        rows = summary.rows()
    _write_rows(rows, args.out)
    return 0


_SWEEP_FLAGS = {
    "topology": str, "topology_files": _strs, "count": int, "corpus_seed": int, "n_nodes": int,
    "n_sources": int, "n_clients": int, "parents": int, "loss": float, "topo_seed": int, "G": int,
    "packet_size": int, "budgets": _ints, "strategies": _strs, "radii": _ints, "seeds": _ints, "runs": int,
    "sim_seed": int, "workers": int, "output": str,
}


def cmd_sweep(args) -> int:
    base = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    config = base.with_overrides(**{k: getattr(args, k) for k in _SWEEP_FLAGS})
    results = harness.run_sweep(config)
    out = harness.write_outputs(results, config.output)
    (out / "config.txt").write_text(config.dumps())
    failed = sum(r["status"] != "ok" for r in results.rows)
    print(f"wrote {len(results.rows)} rows to {out / 'results.csv'}" + (f" ({failed} failed cells)" if failed else ""))
    return 0


def cmd_compare(args) -> int:
    results = harness.SweepResults.load(args.results)
    summary = harness.compare(results, baseline=args.baseline)
    if args.out:
        summary.to_csv(args.out)
    else:
        _write_rows(summary.rows, None, ["kind", "strategy", "A", "wins", "losses", "ties", "topologies",
                                         "agreement"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncplace", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a topology or a corpus")
    g.add_argument("--nodes", type=int, default=40)
    g.add_argument("--sources", type=int, default=1)
    g.add_argument("--clients", type=int, default=3)
    g.add_argument("--parents", type=int, default=4)
    g.add_argument("--loss", type=float, default=0.05)
    g.add_argument("--buffer", type=int, default=topology.DEFAULT_BUFFER)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corpus", choices=["placement", "estimator"])
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("estimate", help="estimate per-client decoding delay")
    e.add_argument("topology")
    e.add_argument("--G", type=int, default=32)
    e.add_argument("--max-iter", type=int, default=20)
    e.add_argument("--out")
    e.add_argument("--senders", help="also write per-sender estimates")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("select", help="choose NC nodes")
    s.add_argument("topology")
    s.add_argument("--strategy", choices=selection.STRATEGIES, default=selection.CENTRALIZED)
    s.add_argument("--budget", type=int, default=3)
    s.add_argument("--radius", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--G", type=int, default=32)
    s.add_argument("--early-stop", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_select)

    m = sub.add_parser("simulate", help="packet-level simulation")
    m.add_argument("topology")
    m.add_argument("--nc", help="comma-separated nodes to promote")
    m.add_argument("--plan", help="selection CSV whose picks are promoted")
    m.add_argument("--runs", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--G", type=int, default=32)
    m.add_argument("--packet-size", type=int, default=512)
    m.add_argument("--deadline", type=float)
    m.add_argument("--backend", choices=["cython", "python"])
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--trace", help="single run; write wire-format packet trace here")
    m.add_argument("--out")
    m.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run an experiment sweep")
    w.add_argument("--config")
    for name, conv in _SWEEP_FLAGS.items():
        w.add_argument("--" + name.replace("_", "-"), dest=name, type=conv)
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="summarize a sweep against a baseline")
    c.add_argument("results")
    c.add_argument("--baseline", default=selection.RANDOM)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (topology.TopologyError, cfgmod.ConfigError, ValueError, OSError) as exc:
        print(f"ncplace: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
