from __future__ import annotations

import csv
import io
import json
import random

import pytest

from l2arranger.cli import SCENARIO_DIR, main
from l2arranger.core import DecodeError
from l2arranger.harness import corpus
from l2arranger.harness.bench import COLUMNS, BenchReport, run_bench, sample_batches
from l2arranger.harness.corpus import CorpusTooSmall
from l2arranger.harness.replay import TraceCorrupt, parse_trace, render, select
from l2arranger.harness.runner import run_scenario
from l2arranger.harness.scenario import FixtureInvalid, Scenario, load_scenario

FIXTURES = sorted(SCENARIO_DIR.glob("*.json"))


# scenarios


def test_every_bundled_fixture_loads():
    assert len(FIXTURES) >= 20
    for path in FIXTURES:
        assert load_scenario(path).name == path.stem


@pytest.mark.parametrize("n,f", [(3, 1), (6, 2), (9, 3)])
def test_fault_bound_is_enforced(n, f):
    with pytest.raises(FixtureInvalid):
        Scenario.from_dict({"n": n, "f": f})


def test_semi_mode_uses_majority_bound():
    Scenario.from_dict({"mode": "semi", "n": 3, "f": 1})
    with pytest.raises(FixtureInvalid):
        Scenario.from_dict({"mode": "semi", "n": 2, "f": 1})


@pytest.mark.parametrize("bad", [
    {"nodes": 4},
    {"mode": "hybrid"},
    {"byzantine": {"7": ["silent"]}},
    {"byzantine": {"0": ["silent"], "1": ["silent"]}},
    {"cost": {"s": 1, "bogus": 2}},
    {"mode": "semi", "adversary": {"model": "ONE", "controlled": [0, 1]}},
])
def test_invalid_fixtures_rejected(bad):
    with pytest.raises(FixtureInvalid):
        Scenario.from_dict(bad)


def test_unreadable_fixture(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(FixtureInvalid):
        load_scenario(p)
    with pytest.raises(FixtureInvalid):
        load_scenario(tmp_path / "missing.json")


# runner


def test_runner_writes_identical_outputs(tmp_path):
    outs = []
    for i in range(2):
        d = tmp_path / str(i)
        report, code = run_scenario(SCENARIO_DIR / "b2-invalid-tx.json", d)
        assert code == 0 and report["ok"]
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"b2-invalid-tx.s0.trace.jsonl", "b2-invalid-tx.s0.report.json"}


def test_seed_override_changes_the_run(tmp_path):
    a, _ = run_scenario(SCENARIO_DIR / "happy-n4.json", tmp_path, seed=1)
    b, _ = run_scenario(SCENARIO_DIR / "happy-n4.json", tmp_path, seed=2)
    assert (a["seed"], b["seed"]) == (1, 2)
    assert (tmp_path / "happy-n4.s1.trace.jsonl").read_bytes() != (tmp_path / "happy-n4.s2.trace.jsonl").read_bytes()


def test_failed_check_gives_exit_code_one():
    sc = load_scenario(SCENARIO_DIR / "happy-n4.json")
    sc.expect = {"confirmed": 99}
    report, code = run_scenario(sc)
    assert code == 1 and not report["ok"]


# replay

TRACE = "\n".join(json.dumps(r) for r in [
    {"kind": "header", "scenario": "x"},
    {"kind": "deliver", "t": 3, "src": "server:0", "dst": "server:1"},
    {"kind": "post_tag", "t": 10, "block": 1, "rid": 1, "poster": "server:0", "root": "ab" * 32},
    {"kind": "data_open", "t": 20, "block": 2, "gid": 2, "rid": 1, "challenger": "agent", "defender": "server:0"},
    {"kind": "htlc_deploy", "t": 30, "block": 3, "cid": 3, "owner": "agent", "beneficiary": "server:2"},
])


def test_replay_filters():
    header, recs = parse_trace(TRACE)
    assert header["scenario"] == "x"
    assert [r["kind"] for r in select(recs)] == ["post_tag", "data_open", "htlc_deploy"]
    assert len(select(recs, include_messages=True)) == 4
    assert [r["kind"] for r in select(recs, server=0)] == ["deliver", "post_tag", "data_open"]
    assert [r["kind"] for r in select(recs, server=2)] == ["htlc_deploy"]
    assert [r["kind"] for r in select(recs, challenge=2)] == ["data_open"]
    assert [r["kind"] for r in select(recs, contract=3)] == ["htlc_deploy"]
    assert [r["kind"] for r in select(recs, record=1)] == ["post_tag", "data_open"]
    assert [r["kind"] for r in select(recs, kinds=["htlc_deploy"])] == ["htlc_deploy"]
    text = render(select(recs, record=1))
    assert "abababababab.." in text and len(text.splitlines()) == 2


@pytest.mark.parametrize("text", [
    '{"kind": "post_tag", "t": 1}\n{"kind": "header"}',
    '{"kind": "post_tag"}',
    '{"t": 4}',
    '[1, 2]',
    '{"kind": "post_tag", "t": 1}\n{broken',
])
def test_corrupt_traces(text):
    with pytest.raises(TraceCorrupt):
        parse_trace(text)


# corpus and bench


def test_corpus_roundtrip(tmp_path):
    txs = corpus.generate(300, seed=4)
    assert txs == corpus.generate(300, seed=4)
    assert len(set(txs)) == 300
    path = tmp_path / "c.bin"
    corpus.dump(txs, path)
    assert corpus.load(path) == txs
    (tmp_path / "empty.bin").write_bytes(b"")
    with pytest.raises(DecodeError):
        corpus.load(tmp_path / "empty.bin")


def test_sample_batches_are_canonical_and_bounded():
    txs = corpus.generate(50, seed=1)
    batches = sample_batches(txs, 20, 4, random.Random(0))
    assert [len(b.txs) for b in batches] == [20] * 4
    assert all(len(set(b.txs)) == 20 for b in batches)
    with pytest.raises(CorpusTooSmall):
        sample_batches(txs, 51, 1, random.Random(0))


def test_tiny_bench_report_shape():
    txs = corpus.generate(400, seed=0)
    r = run_bench(txs, runs=2, duration=0.01, workers=2, sizes=(100, 200), counts=(2, 4))
    hyps = {row["hypothesis"] for row in r.rows}
    assert hyps == {"H.Size", "H.Hash", "H.Compress", "H.Trans", "H.Sign", "H.Agg", "H.Ver"}
    assert set(r.mean("H.Agg", "throughput")) == {2, 4}
    assert set(r.mean("H.Ver", "throughput")) == {1, 2}
    rows = list(csv.DictReader(io.StringIO(r.to_csv())))
    assert tuple(rows[0]) == COLUMNS
    assert all(float(row["value"]) > 0 for row in rows)
    assert r.machine["elapsed_s"] > 0


def test_bench_report_mean_rows():
    r = BenchReport()
    r.add("H.X", 1, [1.0, 3.0], "m", "u")
    assert r.mean("H.X", "m") == {1: 2.0}
    assert [row["run"] for row in r.rows] == [0, 1, "mean"]


# CLI


def test_cli_run_named_fixture(capsys, tmp_path):
    assert main(["run", "legal-defense", "--out-dir", str(tmp_path), "-q"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary[0]["ok"] and summary[0]["failed"] == []
    assert (tmp_path / "legal-defense.s0.report.json").exists()


def test_cli_run_csv_and_global_flags_before_subcommand(capsys):
    assert main(["--format", "csv", "--seed", "3", "run", "happy-n4", "-q"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "fixture,ok,failed" and out[1].endswith(",1,")


def test_cli_run_invalid_fixture(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"n": 3, "f": 1}))
    assert main(["run", str(p)]) == 2
    assert "invalid fixture" in capsys.readouterr().err


def test_cli_replay(tmp_path, capsys):
    main(["run", "htlc-happy", "--out-dir", str(tmp_path), "-q"])
    capsys.readouterr()
    trace = tmp_path / "htlc-happy.s0.trace.jsonl"
    assert main(["replay", str(trace), "--kind", "htlc_deploy"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all("htlc_deploy" in ln for ln in lines)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("garbage\n")
    assert main(["replay", str(bad)]) == 2


def test_cli_validate_costs(tmp_path, capsys):
    assert main(["validate-costs"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["ok"] and out["min_budget"] == 1800
    p = tmp_path / "cm.json"
    p.write_text(json.dumps({"cc_translate": 30}))
    assert main(["validate-costs", str(p)]) == 1
    assert json.loads(capsys.readouterr().out)["violated"] == ["CC_translate > SR_translate"]
    p.write_text(json.dumps({"nope": 1}))
    assert main(["validate-costs", str(p)]) == 2


def test_cli_gen_corpus(tmp_path, capsys):
    out = tmp_path / "c.bin"
    assert main(["gen-corpus", "--count", "25", "-o", str(out), "--seed", "2"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["transactions"] == 25
    assert corpus.load(out) == corpus.generate(25, 2)


def test_cli_bench_writes_csv(tmp_path, capsys):
    c = tmp_path / "c.bin"
    corpus.dump(corpus.generate(500, 0), c)
    code = main(["bench", "--corpus", str(c), "--runs", "1", "--duration", "0.01", "--only", "sign,agg",
                 "--out-dir", str(tmp_path), "--format", "csv"])
    assert code == 0
    assert capsys.readouterr().out.startswith(",".join(COLUMNS))
    assert (tmp_path / "bench.csv").exists() and (tmp_path / "bench.machine.json").exists()
