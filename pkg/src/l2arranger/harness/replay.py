"""Render a JSON-lines trace as a filtered, human-readable timeline."""
from __future__ import annotations

import json
from pathlib import Path

from ..core import ArrangerError

PARTY_KEYS = ("src", "dst", "poster", "account", "defender", "challenger", "owner", "beneficiary", "source",
              "to", "stf", "client")


class TraceCorrupt(ArrangerError):
    pass


def parse_trace(text: str) -> tuple[dict, list[dict]]:
    header, records = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceCorrupt(f"line {lineno}: {exc.msg}") from exc
        if not isinstance(rec, dict) or "kind" not in rec:
            raise TraceCorrupt(f"line {lineno}: record without a kind")
        if rec["kind"] == "header":
            if lineno != 1 or records:
                raise TraceCorrupt(f"line {lineno}: header must come first")
            header = rec
            continue
        if "t" not in rec:
            raise TraceCorrupt(f"line {lineno}: record without a timestamp")
        records.append(rec)
    return header, records


def load_trace(path: str | Path) -> tuple[dict, list[dict]]:
    try:
        return parse_trace(Path(path).read_text())
    except OSError as exc:
        raise TraceCorrupt(str(exc)) from exc


def _server_match(rec: dict, idx: int) -> bool:
    name = f"server:{idx}"
    if rec.get("server") == idx or rec.get("server") == name:
        return True
    return any(rec.get(k) == name for k in PARTY_KEYS)


def select(records, server: int | None = None, challenge: int | None = None, contract: int | None = None,
           record: int | None = None, kinds=None, include_messages: bool = False) -> list[dict]:
    out = []
    kinds = set(kinds) if kinds else None
    for rec in records:
        if rec["kind"] == "deliver" and not include_messages and server is None:
            continue
        if server is not None and not _server_match(rec, server):
            continue
        if challenge is not None and rec.get("gid") != challenge:
            continue
        if contract is not None and rec.get("cid") != contract:
            continue
        if record is not None and rec.get("rid") != record:
            continue
        if kinds is not None and rec["kind"] not in kinds:
            continue
        out.append(rec)
    return out


def _fmt(v) -> str:
    if isinstance(v, str) and len(v) > 16 and all(c in "0123456789abcdef" for c in v):
        return v[:12] + ".."
    if isinstance(v, list):
        return "[" + ",".join(_fmt(x) for x in v) + "]"
    return str(v)


def render(records) -> str:
    lines = []
    for rec in records:
        where = f"b{rec['block']}" if "block" in rec else "-"
        src = rec.get("src", "")
        rest = " ".join(f"{k}={_fmt(v)}" for k, v in rec.items() if k not in ("t", "block", "kind", "src"))
        lines.append(f"{rec['t']:>8} {where:>5} {src:<10} {rec['kind']:<16} {rest}".rstrip())
    return "\n".join(lines)


def replay(path: str | Path, **filters) -> str:
    _, records = load_trace(path)
    return render(select(records, **filters))
