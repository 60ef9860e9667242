"""Run one fixture end to end and write its trace and report."""
from __future__ import annotations

import json
from pathlib import Path

from ..l1sim import server_account
from .checker import run_checks
from .scenario import Scenario, load_scenario
from .world import AGENT, STF, World, build_world


def build_report(w: World) -> dict:
    checks = run_checks(w)
    sc = w.scenario
    report = {
        "scenario": sc.name,
        "seed": sc.seed,
        "mode": sc.mode,
        "ok": all(ok for ok, _ in checks.values()),
        "checks": {k: {"ok": ok, "detail": d} for k, (ok, d) in sorted(checks.items())},
        "end_tick": w.sim.now,
    }
    if w.l1 is not None:
        l1 = w.l1
        report["records"] = [
            {"rid": r.rid, "id": r.id, "root": r.root.hex(), "poster": r.poster, "status": r.status,
             "signers": list(r.tag.signers)} for r in l1.records.values()]
        accts = [server_account(i) for i in range(sc.n)] + [STF, AGENT, "sequencer"]
        report["wealth"] = {a: {"initial": w.initial_wealth.get(a, 0), "final": w.wealth(a)} for a in accts}
        report["blocks"] = l1.height
        report["minted"], report["burned"] = l1.ledger.minted, l1.ledger.burned
    if w.nodes:
        report["epochs"] = {str(nd.index): nd.epoch for nd in w.nodes}
    if w.agent is not None:
        report["agent"] = {
            "tasks": [{"rid": t.rid, "via": t.via, "outcome": t.outcome, "spent": t.spent,
                       "plan": t.plan[0] if t.plan else None} for t in w.agent.tasks.values()],
            "failures": [list(x) for x in w.agent.failures],
        }
    return report


def run_scenario(source: str | Path | Scenario, out_dir: str | Path | None = None,
                 seed: int | None = None) -> tuple[dict, int]:
    """Build, run and check a fixture. Exit code is 0 iff every check passed."""
    sc = source if isinstance(source, Scenario) else load_scenario(source)
    if seed is not None:
        sc = Scenario.from_dict({**sc.to_dict(), "seed": seed})
    w = build_world(sc).run()
    report = build_report(w)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{sc.name}.s{sc.seed}"
        (out / f"{stem}.trace.jsonl").write_text(w.sim.trace.dumps())
        (out / f"{stem}.report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report, 0 if report["ok"] else 1
