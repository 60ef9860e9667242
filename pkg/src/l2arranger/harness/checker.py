"""Omniscient post-hoc checks over a finished world.

The checker sees every party's private state, which no protocol participant
can. Each check returns ``(ok, detail)``; the report keeps them by name.
"""
from __future__ import annotations

from ..agents import incompatible_tags
from ..arranger import legal_batch
from ..core import ElementKind, SetElement, to_batch
from ..l1sim import CONFIRMED, DISCARDED, PENDING
from .world import STF, World

Result = tuple[bool, str]


def _ok(bad: list, what: str) -> Result:
    return (not bad, f"{len(bad)} {what}" + (f": {bad[:3]}" if bad else ""))


# setchain

def _correct_servers(w: World):
    return [nd for nd in w.correct_nodes() if not nd.behavior.byzantine]


def _added_to_correct(w: World) -> list[SetElement]:
    correct = {nd.index for nd in _correct_servers(w)}
    out = [SetElement.tx(tx) for target, tx in w.added if getattr(target, "index", None) in correct]
    # epoch signatures injected by correct servers are adds too
    for nd in _correct_servers(w):
        out.extend(e for e in nd.theset if e.kind == ElementKind.META_SIGNATURE and e.body.signer == nd.index)
    return out


def check_get_global(w: World) -> Result:
    added = _added_to_correct(w)
    bad = [(nd.index, e.digest.hex()[:8]) for nd in _correct_servers(w) for e in added if e not in nd.theset]
    return _ok(bad, "elements missing from a correct theset")


def check_get_after_add(w: World) -> Result:
    bad = []
    for nd in _correct_servers(w):
        in_hist = set().union(*nd.history.values()) if nd.history else set()
        for e in _added_to_correct(w):
            if e in in_hist:
                continue
            # signatures over the final epoch have no later epoch to land in
            if e.kind == ElementKind.META_SIGNATURE and e.body.epoch >= nd.epoch:
                continue
            bad.append((nd.index, e.digest.hex()[:8]))
    return _ok(bad, "added elements never placed in an epoch")


def check_unique_epoch(w: World) -> Result:
    bad = []
    for nd in _correct_servers(w):
        seen: dict = {}
        for ep in sorted(nd.history):
            for e in nd.history[ep]:
                if e in seen:
                    bad.append((nd.index, seen[e], ep))
                seen[e] = ep
    return _ok(bad, "elements in two epochs")


def check_consistent_gets(w: World) -> Result:
    servers = _correct_servers(w)
    bad = []
    for a in servers:
        for b in servers:
            if a.index < b.index:
                for ep in set(a.history) & set(b.history):
                    if a.history[ep] != b.history[ep]:
                        bad.append((a.index, b.index, ep))
    return _ok(bad, "epochs that differ between correct servers")


def check_valid_get(w: World) -> Result:
    bad = []
    for nd in _correct_servers(w):
        for e in nd.theset:
            if not nd.validate(e):
                bad.append((nd.index, e.digest.hex()[:8]))
    return _ok(bad, "invalid elements in a correct get")


def check_history_dense(w: World) -> Result:
    bad = [nd.index for nd in _correct_servers(w) if sorted(nd.history) != list(range(1, nd.epoch + 1))]
    return _ok(bad, "servers with gaps in history")


# L1 legality

def _legal_records(w: World) -> list:
    """Records whose tag is legal, with B4 judged against confirmed batches of other ids."""
    l1 = w.l1
    confirmed = {bid: set(w.batch_of(l1.records[rid]).txs) for bid, rid in l1.confirmed.items()}
    out = []
    for rec in l1.records.values():
        batch = w.batch_of(rec)
        if batch is None or batch.id != rec.id or not l1.certified(rec.tag):
            continue
        others = set().union(*(v for k, v in confirmed.items() if k != rec.id))
        if not legal_batch(batch, others):
            out.append((rec, batch))
    return out


def record_legal(w: World, rec, prior_txs: set) -> list[str]:
    bad = [] if w.l1.certified(rec.tag) else ["B1"]
    batch = w.batch_of(rec)
    if batch is None or batch.id != rec.id:
        return bad + ["unknown batch"]
    return bad + legal_batch(batch, prior_txs)


def check_confirm_correct(w: World) -> Result:
    l1 = w.l1
    prior: set = set()
    bad = []
    for bid in sorted(l1.confirmed):
        rec = l1.records[l1.confirmed[bid]]
        v = record_legal(w, rec, prior)
        if v:
            bad.append((rec.rid, v))
        b = w.batch_of(rec)
        if b is not None:
            prior.update(b.txs)
    return _ok(bad, "illegal confirmed records")


def check_confirm_exclusive(w: World) -> Result:
    l1 = w.l1
    bad = [bid for bid, rids in l1.logger.items()
           if sum(l1.records[r].status == CONFIRMED for r in rids) > 1]
    bad += [bid for bid in l1.confirmed
            if any(l1.records[r].status == PENDING for r in l1.logger[bid])]
    return _ok(bad, "ids with several confirmed or lingering rivals")


def check_conservation(w: World) -> Result:
    led = w.l1.ledger
    return led.conserved(), f"total={led.total()} initial={led.initial} minted={led.minted} burned={led.burned}"


def check_honest_stakers(w: World) -> Result:
    # a server that takes HTLC payments without revealing is not honest, whatever its setchain role
    honest = [f"server:{nd.index}" for nd in _correct_servers(w)
              if w.scenario.providers.get(nd.index, "honest") in ("honest", "refuse")]
    if w.stf is not None:
        honest.append(STF)
    if w.sequencer is not None and w.scenario.expect.get("sequencer_honest", True):
        honest.append("sequencer")
    bad = [(a, w.initial_wealth[a], w.wealth(a)) for a in honest if w.wealth(a) < w.initial_wealth[a]]
    return _ok(bad, "honest stakers that lost tokens")


def check_dac(w: World) -> Result:
    if w.agent is None:
        return True, "no agent"
    bad = []
    for t in w.agent.tasks.values():
        rec = w.l1.records[t.rid]
        if t.batch is None and rec.status != DISCARDED and t.phase != "failed":
            bad.append(t.rid)
    return _ok(bad, "records neither learned nor discarded")


# arranger

def check_unique_batch(w: World) -> Result:
    roots: dict[int, set] = {}
    for rec, _ in _legal_records(w):
        roots.setdefault(rec.id, set()).add(rec.root)
    return _ok([k for k, v in roots.items() if len(v) > 1], "ids with two legal roots")


def check_integrity1(w: World) -> Result:
    bad = [rec.rid for rec, b in _legal_records(w) if len(set(b.txs)) != len(b.txs)]
    return _ok(bad, "legal tags with duplicates")


def check_integrity2(w: World) -> Result:
    where: dict = {}
    bad = []
    for rec, b in _legal_records(w):
        for tx in b.txs:
            prev = where.setdefault(tx, rec.id)
            if prev != rec.id:
                bad.append((tx.short(), prev, rec.id))
    return _ok(bad, "transactions in two legal batch ids")


def check_termination(w: World) -> Result:
    l1 = w.l1
    done = set()
    for bid, rid in l1.confirmed.items():
        done.update(w.batch_of(l1.records[rid]).txs)
    valid = {tx for _, tx in w.added}
    bad = [tx.short() for tx in sorted(valid, key=lambda t: t.digest) if tx not in done]
    return _ok(bad, "valid transactions never confirmed")


def check_availability(w: World) -> Result:
    bad = []
    correct = {nd.index: nd for nd in _correct_servers(w)}
    pool = correct if w.nodes else {m.index: m for m in w.dac if not m.silent}
    for rec, _ in _legal_records(w):
        ok = False
        for s in rec.tag.signers:
            src = pool.get(s)
            if src is None:
                continue
            try:
                src.translate(rec.id, rec.root)
                ok = True
                break
            except Exception:
                continue
        if not ok:
            bad.append(rec.rid)
    return _ok(bad, "legal tags no correct signer can translate")


def check_batch_epoch(w: World) -> Result:
    servers = _correct_servers(w)
    bad = []
    for rec, b in _legal_records(w):
        for nd in servers:
            if rec.id in nd.history and to_batch(rec.id, nd.history[rec.id]) != b:
                bad.append((rec.rid, nd.index))
    return _ok(bad, "legal tags that differ from their epoch")


def check_every_epoch_posted(w: World) -> Result:
    servers = _correct_servers(w)
    top = min((nd.epoch for nd in servers), default=0)
    bad = [k for k in range(1, top + 1) if k not in w.l1.confirmed]
    return _ok(bad, "epochs without a confirmed tag")


def check_semi_validity(w: World) -> Result:
    l1 = w.l1
    seen: dict = {}
    bad = []
    for rid in w.sequencer.posted:
        for tx in w.batch_of(l1.records[rid]).txs:
            if seen.setdefault(tx, rid) != rid:
                bad.append(tx.short())
    return _ok(bad, "transactions in two sequencer tags")


# scenario expectations

def check_expectations(w: World) -> dict[str, Result]:
    exp = w.scenario.expect
    out: dict[str, Result] = {}
    l1 = w.l1
    if "adversary_records" in exp and w.adversary is not None:
        got = [l1.records[p["rid"]].status for p in w.adversary.posted]
        want = exp["adversary_records"]
        out["expect_adversary_records"] = (bool(got) and all(s == want for s in got), f"{got} want {want}")
    if "unfired" in exp and w.adversary is not None:
        out["expect_adversary_fired"] = (not w.adversary.pending, f"{len(w.adversary.pending)} steps unfired")
    if "incompatible_tags" in exp:
        pairs = incompatible_tags(l1)
        out["expect_incompatible_tags"] = (bool(pairs) == exp["incompatible_tags"], f"pairs={pairs}")
    if "censored" in exp:
        prefixes = w.adversary.censored_prefixes if w.adversary else []
        hit = [tx.short() for rec in l1.records.values() for tx in (w.batch_of(rec) or _Empty).txs
               if any(tx.payload.startswith(p) for p in prefixes)]
        censored = [tx.short() for _, tx in w.added if any(tx.payload.startswith(p) for p in prefixes)]
        ok = bool(censored) and not hit
        out["expect_censored"] = (ok == exp["censored"], f"censored={len(censored)} leaked={len(hit)}")
    if "stall" in exp:
        stalled = w.sequencer is not None and not w.sequencer.posted and bool(w.added)
        out["expect_stall"] = (stalled == exp["stall"], f"posted={len(w.sequencer.posted) if w.sequencer else 0}")
    if "agent_failed" in exp:
        failed = bool(w.agent and w.agent.failures)
        out["expect_agent_failed"] = (failed == exp["agent_failed"], f"failures={w.agent.failures if w.agent else []}")
    if "offchain_only" in exp and w.agent is not None:
        vias = [t.via for t in w.agent.tasks.values() if t.batch is not None]
        ok = all(v == "offchain" for v in vias) and bool(vias)
        out["expect_offchain_only"] = (ok == exp["offchain_only"], f"vias={vias}")
    if "accusations" in exp and w.agent is not None:
        n = len(w.agent.accusations)
        out["expect_accusations"] = ((n > 0) == exp["accusations"], f"accusations={n}")
    if "confirmed" in exp:
        out["expect_confirmed"] = (len(l1.confirmed) >= exp["confirmed"], f"confirmed={len(l1.confirmed)}")
    return out


class _Empty:
    txs = ()


def run_checks(w: World) -> dict[str, Result]:
    sc = w.scenario
    exp = sc.expect
    adv_model = (sc.adversary or {}).get("model")
    checks: dict[str, Result] = {}
    # a dictated consensus can keep a censored transaction pending forever
    want_exceeded = bool(exp.get("exceeded", False))
    checks["quiescent"] = (w.exceeded == want_exceeded, f"end tick {w.sim.now}, exceeded={w.exceeded}")
    if w.nodes and adv_model != "TWO":
        for name, fn in [("get_global", check_get_global), ("get_after_add", check_get_after_add),
                         ("unique_epoch", check_unique_epoch), ("consistent_gets", check_consistent_gets),
                         ("valid_get", check_valid_get), ("history_dense", check_history_dense)]:
            checks[name] = fn(w)
    if w.l1 is not None:
        # an agent that cannot afford the challenges is expected to let an illegal tag through
        if not exp.get("agent_failed"):
            checks["confirm_correct"] = check_confirm_correct(w)
        checks["confirm_exclusive"] = check_confirm_exclusive(w)
        checks["conservation"] = check_conservation(w)
        if not exp.get("agent_failed"):
            checks["honest_stakers"] = check_honest_stakers(w)
            checks["dac_disjunction"] = check_dac(w)
        if w.nodes and adv_model is None:
            checks["unique_batch"] = check_unique_batch(w)
            checks["integrity1"] = check_integrity1(w)
            checks["integrity2"] = check_integrity2(w)
            checks["availability"] = check_availability(w)
            checks["batch_epoch"] = check_batch_epoch(w)
        if exp.get("termination", adv_model is None and not exp.get("stall")):
            checks["termination"] = check_termination(w)
            if w.nodes:
                checks["every_epoch_posted"] = check_every_epoch_posted(w)
        if w.sequencer is not None:
            checks["semi_validity"] = check_semi_validity(w)
            checks["availability"] = check_availability(w)
        checks.update(check_expectations(w))
    return checks

