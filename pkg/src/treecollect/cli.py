"""Command line front end: run scenarios, analyze traces, compare graphs.

Every analyze report comes out twice: a human-readable table, then
line-delimited `key=value` records for golden-file comparison. `--format`
narrows that to one or the other.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import analysis as an
from . import trace as tr
from .core import NetworkGraph
from .engine import run_scenario
from .scenarios import CANNED, load_scenario

EXIT_OK = 0
EXIT_AUDIT_FAIL = 2


def _load_cli_scenario(name: str, seed):
    if name in CANNED:
        return CANNED[name](seed=seed) if seed is not None else CANNED[name]()
    path = Path(name)
    if not path.exists():
        known = ", ".join(sorted(CANNED))
        raise SystemExit(f"unknown scenario {name!r}; not a file and not one "
                         f"of: {known}")
    sc = load_scenario(path)
    if seed is not None:
        sc = dataclasses.replace(sc, seed=seed)
    return sc


def _cmd_run(args) -> int:
    sc = _load_cli_scenario(args.scenario, args.seed)
    out: Path | None = args.out
    trace_path = snoop_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        trace_path = out / "trace.tsv"
        if sc.snoopers:
            snoop_path = out / "snoops.tsv"
    eng = run_scenario(sc, trace_path=trace_path, snoop_path=snoop_path)
    m = eng.metrics
    print(f"scenario={sc.name} seed={sc.seed} nodes={len(sc.positions)} "
          f"rounds={m.rounds_seen}")
    print(f"digest=sha256:{eng.trace_digest()}")
    for rnd in range(m.rounds_seen):
        slots = [s for (r, s) in m.assemblies if r == rnd]
        reports = sum(len(v) for (r, _), v in m.assemblies.items() if r == rnd)
        print(f"round={rnd} slots_assembled={len(slots)} reports={reports}")
    written = []
    if out is not None:
        written.append(trace_path)
        if snoop_path is not None:
            written.append(snoop_path)
        for rnd, stage, edge_lines, parent_map in m.topologies:
            gpath = out / f"graph-r{rnd}s{stage}.edges"
            gpath.write_text(edge_lines)
            tpath = out / f"tree-r{rnd}s{stage}.txt"
            tpath.write_text("".join(f"TREE {u} {p}\n"
                                     for u, p in sorted(parent_map.items())
                                     if u != p))
            written += [gpath, tpath]
        for p in written:
            print(f"wrote {p}")
    return EXIT_OK


# ----------------------------------------------------------------- analyze

_TABLE = "table"
_RECORDS = "records"


def _emit(fmt: str, header: list[str], rows: list[list], record_tag: str,
          record_fields: list[str]) -> None:
    """One report, as an aligned table and/or key=value record lines."""
    cells = [[str(c) for c in row] for row in rows]
    if fmt in (_TABLE, "both"):
        widths = [max(len(h), *(len(r[i]) for r in cells), 1) if cells
                  else len(h) for i, h in enumerate(header)]
        print("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
        for r in cells:
            print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    if fmt in (_RECORDS, "both"):
        if fmt == "both":
            print()
        for r in cells:
            pairs = "\t".join(f"{k}={v}" for k, v in zip(record_fields, r))
            print(f"{record_tag}\t{pairs}")


def _report_yield(events, args, fmt) -> int:
    rep = an.yield_report(events, args.round)
    rows = [[n, got, rep.slots_expected] for n, got in rep.per_node.items()]
    _emit(fmt, ["node", "delivered", "expected"], rows,
          "yield", ["node", "delivered", "expected"])
    if rep.partial:
        print(f"note: round ended early ({rep.slots_seen} of "
              f"{rep.slots_expected} slots in trace)", file=sys.stderr)
    return EXIT_OK


def _report_census(events, args, fmt) -> int:
    census = an.packet_census(events, args.round, view=args.view)
    rows = [[n, c.data_sent, c.acks_received, c.sleeps_sent,
             c.sleeps_received, c.worst_tries()]
            for n, c in census.items()]
    _emit(fmt, ["node", "data_sent", "acks_rx", "sleeps_sent", "sleeps_rx",
                "worst_tries"], rows,
          "census", ["node", "data_sent", "acks_rx", "sleeps_sent",
                     "sleeps_rx", "worst_tries"])
    return EXIT_OK


def _report_dualloss(events, args, fmt) -> int:
    hits = an.detect_dualloss(events)
    if args.round is not None:
        hits = [h for h in hits if h.round_no == args.round]
    rows = [[h.round_no, h.slot, h.child, h.tries, int(h.data_lost)]
            for h in hits]
    _emit(fmt, ["round", "slot", "child", "tries", "data_lost"], rows,
          "dualloss", ["round", "slot", "child", "tries", "data_lost"])
    lost = sum(h.data_lost for h in hits)
    print(f"{len(hits)} dualloss event(s), {lost} with data loss",
          file=sys.stderr)
    return EXIT_OK


def _report_energy(events, args, fmt) -> int:
    table = an.energy_table(events, round_no=args.round)
    rows = [[r.node, f"{r.delta_mv:.3f}", f"{r.delta_mah:.4f}"]
            for r in table.rows]
    _emit(fmt, ["node", "delta_mv", "delta_mah"], rows,
          "energy", ["node", "delta_mv", "delta_mah"])
    for node in table.omitted:
        print(f"warning: node {node} lacks two battery reports, omitted",
              file=sys.stderr)
    return EXIT_OK


def _report_bound(events, args, fmt) -> int:
    audit = an.bound_audit(events, args.round, m_sync=args.sync_broadcasts)
    rows = [[p.phase, p.actual, p.bound, p.slack, "ok" if p.ok else "OVER"]
            for p in audit.phases]
    rows.append(["total", audit.total_actual, audit.total_bound,
                 audit.total_bound - audit.total_actual,
                 "ok" if audit.total_actual <= audit.total_bound else "OVER"])
    _emit(fmt, ["phase", "actual", "bound", "slack", "verdict"], rows,
          "bound", ["phase", "actual", "bound", "slack", "verdict"])
    if not audit.ok:
        bad = ", ".join(audit.failing()) or "total"
        print(f"audit FAILED: {bad}", file=sys.stderr)
        return EXIT_AUDIT_FAIL
    return EXIT_OK


_REPORTS = {
    "yield": _report_yield,
    "census": _report_census,
    "dualloss": _report_dualloss,
    "energy": _report_energy,
    "bound": _report_bound,
}


def _cmd_analyze(args) -> int:
    events = tr.read_trace(args.trace)
    if args.report in ("yield", "census", "bound") and args.round is None:
        raise SystemExit(f"--round is required for --report {args.report}")
    return _REPORTS[args.report](events, args, args.format)


def _cmd_diff_graphs(args) -> int:
    graphs = [NetworkGraph.from_edge_lines(p.read_text()) for p in args.graphs]
    diffs = an.graph_diff(graphs)
    rows = [[f"{i}->{i + 1}", d.added, d.removed, d.retained, d.common_to_all]
            for i, d in enumerate(diffs)]
    _emit(args.format, ["pair", "added", "removed", "retained", "common_all"],
          rows, "graphdiff", ["pair", "added", "removed", "retained",
                              "common_all"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="treecollect",
        description="Simulate synchronized tree-based data collection and "
                    "analyze the traces it produces.")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a canned or YAML scenario")
    p_run.add_argument("scenario",
                       help="canned name (%s) or scenario YAML path"
                            % ", ".join(sorted(CANNED)))
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", type=Path, default=None,
                       help="directory for trace, snoop log and topology files")
    p_run.set_defaults(fn=_cmd_run)

    p_an = sub.add_parser("analyze", help="report on a trace file")
    p_an.add_argument("trace", type=Path)
    p_an.add_argument("--round", type=int, default=None)
    p_an.add_argument("--report", required=True, choices=sorted(_REPORTS))
    p_an.add_argument("--view", choices=("truth", "snooper"), default="truth",
                      help="census source: the real trace or a snooper log")
    p_an.add_argument("--format", choices=(_TABLE, _RECORDS, "both"),
                      default="both")
    p_an.add_argument("--sync-broadcasts", type=int, default=10,
                      help="per-node timestamp broadcast budget the bound "
                           "audit assumes")
    p_an.set_defaults(fn=_cmd_analyze)

    p_diff = sub.add_parser("diff-graphs",
                            help="edge churn between consecutive graphs")
    p_diff.add_argument("graphs", type=Path, nargs="+")
    p_diff.add_argument("--format", choices=(_TABLE, _RECORDS, "both"),
                        default="both")
    p_diff.set_defaults(fn=_cmd_diff_graphs)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
