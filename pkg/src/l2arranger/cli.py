"""Command line entry point: ``l2arranger {run,bench,replay,validate-costs,gen-corpus}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness.scenario import FixtureInvalid
from .incentives import CostModel, min_budget, validate_cost_relations

SCENARIO_DIR = Path(__file__).parent / "scenarios"


def _emit(args, payload: dict, csv_text: str | None = None) -> None:
    if args.format == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))


def _fixtures(paths: list[str]) -> list[Path]:
    out = []
    for p in paths:
        path = Path(p)
        if not path.exists() and (SCENARIO_DIR / p).exists():
            path = SCENARIO_DIR / p
        if not path.exists() and (SCENARIO_DIR / f"{p}.json").exists():
            path = SCENARIO_DIR / f"{p}.json"
        out.extend(sorted(path.glob("*.json")) if path.is_dir() else [path])
    return out


def cmd_run(args) -> int:
    from .harness.runner import run_scenario

    worst = 0
    summary = []
    for path in _fixtures(args.fixtures or [str(SCENARIO_DIR)]):
        try:
            report, code = run_scenario(path, args.out_dir, args.seed)
        except FixtureInvalid as exc:
            print(f"{path}: invalid fixture: {exc}", file=sys.stderr)
            worst = max(worst, 2)
            continue
        worst = max(worst, code)
        failed = [k for k, v in report["checks"].items() if not v["ok"]]
        summary.append({"fixture": str(path), "ok": report["ok"], "failed": failed})
        if not args.quiet:
            print(f"{'PASS' if report['ok'] else 'FAIL'} {path.name} seed={report['seed']}"
                  + (f" failed={','.join(failed)}" if failed else ""), file=sys.stderr)
        for k in failed:
            print(f"  {k}: {report['checks'][k]['detail']}", file=sys.stderr)
    if args.format == "csv":
        print("fixture,ok,failed")
        for s in summary:
            print(f"{s['fixture']},{int(s['ok'])},{';'.join(s['failed'])}")
    else:
        print(json.dumps(summary, indent=2))
    return worst


def cmd_bench(args) -> int:
    from .harness import bench, corpus

    txs = corpus.load(args.corpus) if args.corpus else None
    report = bench.run_bench(txs, seed=args.seed or 0, runs=args.runs, duration=args.duration,
                             workers=args.workers, corpus_size=args.corpus_size,
                             only=args.only.split(",") if args.only else None)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(report.to_csv())
        (out / "bench.machine.json").write_text(json.dumps(report.machine, indent=2, sort_keys=True) + "\n")
    _emit(args, report.to_dict(), report.to_csv())
    return 0


def cmd_replay(args) -> int:
    from .harness.replay import TraceCorrupt, replay

    try:
        text = replay(args.trace, server=args.server, challenge=args.challenge, contract=args.contract,
                      record=args.record, kinds=args.kind, include_messages=args.messages)
    except TraceCorrupt as exc:
        print(f"corrupt trace: {exc}", file=sys.stderr)
        return 2
    if text:
        print(text)
    return 0


def cmd_validate_costs(args) -> int:
    data = json.loads(Path(args.model).read_text()) if args.model else {}
    try:
        cm = CostModel.from_dict(data)
    except (TypeError, ValueError) as exc:
        print(f"invalid cost model: {exc}", file=sys.stderr)
        return 2
    bad = validate_cost_relations(cm, args.min_stakers)
    payload = {"ok": not bad, "violated": bad, "min_budget": min_budget(cm), "model": cm.to_dict()}
    _emit(args, payload, "relation,ok\n" + "".join(f"{r},0\n" for r in bad))
    return 0 if not bad else 1


def cmd_gen_corpus(args) -> int:
    from .harness import corpus

    txs = corpus.generate(args.count, args.seed or 0)
    out = Path(args.output or Path(args.out_dir or ".") / f"corpus.s{args.seed or 0}.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.dump(txs, out)
    print(json.dumps({"path": str(out), "transactions": len(txs), "bytes": out.stat().st_size}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        parser.add_argument("--seed", type=int, default=default(None),
                            help="override the fixture or generator seed")
        parser.add_argument("--out-dir", default=default(None), help="directory for traces, reports and bench CSVs")
        parser.add_argument("--format", choices=("json", "csv"), default=default("json"))

    p = argparse.ArgumentParser(prog="l2arranger", description=__doc__)
    global_flags(p, lambda v: v)
    # the same flags are accepted after the subcommand without clobbering earlier values
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, lambda v: argparse.SUPPRESS)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", parents=[common], help="run scenario fixtures and check them")
    r.add_argument("fixtures", nargs="*", help="fixture files, directories or bundled names")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", parents=[common], help="run the micro-benchmarks")
    b.add_argument("--corpus", help="corpus file from gen-corpus (default: generate in memory)")
    b.add_argument("--corpus-size", type=int, default=40_000)
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--duration", type=float, default=0.1, help="seconds per measured run")
    b.add_argument("--workers", type=int, default=16, help="pool size for parallel verification")
    b.add_argument("--only", help="comma list out of size,kernels,sign,agg,ver")
    b.set_defaults(func=cmd_bench)

    rp = sub.add_parser("replay", parents=[common], help="print a trace as a timeline")
    rp.add_argument("trace")
    rp.add_argument("--server", type=int)
    rp.add_argument("--challenge", type=int, help="game id")
    rp.add_argument("--contract", type=int, help="HTLC id")
    rp.add_argument("--record", type=int, help="logger record id")
    rp.add_argument("--kind", action="append", help="event kind (repeatable)")
    rp.add_argument("--messages", action="store_true", help="include network deliveries")
    rp.set_defaults(func=cmd_replay)

    v = sub.add_parser("validate-costs", parents=[common], help="check a cost model against the required relations")
    v.add_argument("model", nargs="?", help="JSON cost model (default: the shipped model)")
    v.add_argument("--min-stakers", type=int, default=1)
    v.set_defaults(func=cmd_validate_costs)

    g = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic transaction corpus")
    g.add_argument("--count", type=int, default=40_000)
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_gen_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
