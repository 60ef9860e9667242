"""Micro-benchmarks for tag size and the per-batch kernels.

Every kernel is applied repeatedly for ``duration`` seconds, cycling over its
input, and each measurement is repeated ``runs`` times. Rows keep the per-run
values; a ``mean`` row follows each group.
"""
from __future__ import annotations

import csv
import io
import multiprocessing as mp
import os
import platform
import random
import socket
import socketserver
import statistics
import time
from dataclasses import dataclass, field

from ..arranger import (STATUS_INVALID_HASH, STATUS_INVALID_ID, STATUS_OK, compress, decode_request,
                        decode_response, encode_request, encode_response, read_frame)
from ..core import Batch, BatchTag, SignedBatchTag, canonical_order, tag_message
from ..crypto import BlsScheme, SignatureShare
from ..merkle import merkle_root
from .corpus import CorpusTooSmall, generate

SIZES = tuple(range(400, 4401, 400))
SIGNER_COUNTS = (8, 16, 32, 64, 128, 256)
COLUMNS = ("hypothesis", "parameter", "run", "metric", "value", "unit")
PAIRS = 50


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    machine: dict = field(default_factory=dict)

    def add(self, hyp: str, param, values, metric: str, unit: str) -> None:
        for i, v in enumerate(values):
            self.rows.append(dict(hypothesis=hyp, parameter=param, run=i, metric=metric, value=v, unit=unit))
        self.rows.append(dict(hypothesis=hyp, parameter=param, run="mean", metric=metric,
                              value=statistics.fmean(values), unit=unit))

    def mean(self, hyp: str, metric: str) -> dict:
        return {r["parameter"]: r["value"] for r in self.rows
                if r["hypothesis"] == hyp and r["metric"] == metric and r["run"] == "mean"}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"machine": self.machine, "rows": self.rows}


def machine_descriptor() -> dict:
    return {"python": platform.python_version(), "platform": platform.platform(),
            "processor": platform.processor(), "cpus": os.cpu_count()}


def throughput(fn, items, duration: float) -> float:
    """Calls ``fn`` cycling over ``items`` for ``duration`` seconds; returns calls per second."""
    count, i, n = 0, 0, len(items)
    start = time.perf_counter()
    end = start + duration
    while True:
        fn(items[i])
        count += 1
        i = (i + 1) % n
        now = time.perf_counter()
        if now >= end:
            return count / (now - start)


def sample_batches(corpus, size: int, count: int, rng: random.Random) -> list[Batch]:
    if size > len(corpus):
        raise CorpusTooSmall(f"need {size} transactions, corpus has {len(corpus)}")
    order = list(corpus)
    rng.shuffle(order)
    out = []
    pos = 0
    for k in range(count):
        if pos + size > len(order):
            rng.shuffle(order)
            pos = 0
        out.append(Batch(k + 1, tuple(canonical_order(order[pos:pos + size]))))
        pos += size
    return out


# H.Size

def bench_size(corpus, report: BenchReport, sizes=SIZES, batches: int = 10, seed: int = 0,
               signers: int = 4) -> None:
    bls = BlsScheme()
    keys = [bls.keygen(b"bench:%d" % i) for i in range(signers)]
    for size in sizes:
        rng = random.Random(seed * 100_003 + size)
        comp, tags = [], []
        for batch in sample_batches(corpus, size, batches, rng):
            comp.append(len(compress(batch.txs)))
            root = merkle_root(batch)
            msg = tag_message(batch.id, root)
            agg = bls.aggregate(SignatureShare(i, msg, bls.sign(kp.sk, msg)) for i, kp in enumerate(keys))
            tags.append(len(SignedBatchTag(BatchTag(batch.id, root), agg.sig, agg.signers).serialize()))
        report.add("H.Size", size, comp, "compressed_batch", "bytes")
        report.add("H.Size", size, tags, "signed_tag", "bytes")


# H.Hash / H.Compress / H.Trans

class _TranslationHandler(socketserver.StreamRequestHandler):
    def handle(self):
        store = self.server.store
        sock = self.request
        while True:
            body = read_frame(sock.recv)
            if body is None:
                return
            bid, root = decode_request(body)
            ids = self.server.ids
            if bid not in ids:
                sock.sendall(encode_response(STATUS_INVALID_ID))
            elif (bid, root) not in store:
                sock.sendall(encode_response(STATUS_INVALID_HASH))
            else:
                sock.sendall(encode_response(STATUS_OK, store[(bid, root)]))


def _serve(store: dict, port_q) -> None:
    class Server(socketserver.TCPServer):
        allow_reuse_address = True
    srv = Server(("127.0.0.1", 0), _TranslationHandler)
    srv.store = store
    srv.ids = {k[0] for k in store}
    port_q.put(srv.server_address[1])
    srv.serve_forever()


class TranslationServer:
    """Serves ``(id, root) -> compressed batch`` from a child process over TCP."""

    def __init__(self, store: dict):
        ctx = mp.get_context("fork")
        q = ctx.Queue()
        self.proc = ctx.Process(target=_serve, args=(store, q), daemon=True)
        self.proc.start()
        self.port = q.get(timeout=30)

    def client(self) -> TranslationClient:
        return TranslationClient(self.port)

    def close(self) -> None:
        self.proc.terminate()
        self.proc.join()


class TranslationClient:
    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port))
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def translate(self, batch_id: int, root: bytes) -> tuple[int, bytes]:
        self.sock.sendall(encode_request(batch_id, root))
        body = read_frame(self.sock.recv)
        if body is None:
            raise ConnectionError("translation server closed the stream")
        return decode_response(body)

    def close(self) -> None:
        self.sock.close()


def bench_batch_kernels(corpus, report: BenchReport, sizes=SIZES, runs: int = 10, duration: float = 0.1,
                        seed: int = 0, trans: bool = True) -> None:
    for size in sizes:
        rng = random.Random(seed * 100_003 + size)
        batches = sample_batches(corpus, size, 10, rng)
        blobs = {(b.id, merkle_root(b)): compress(b.txs) for b in batches}
        report.add("H.Hash", size, [size * throughput(merkle_root, batches, duration) for _ in range(runs)],
                   "throughput", "tx/s")
        report.add("H.Compress", size,
                   [size * throughput(lambda b: compress(b.txs), batches, duration) for _ in range(runs)],
                   "throughput", "tx/s")
        if not trans:
            continue
        server = TranslationServer(blobs)
        client = server.client()
        try:
            keys = list(blobs)

            def ask(key):
                status, payload = client.translate(*key)
                if status != STATUS_OK or not payload:
                    raise RuntimeError(f"translation failed with status {status}")
            report.add("H.Trans", size, [size * throughput(ask, keys, duration) for _ in range(runs)],
                       "throughput", "tx/s")
        finally:
            client.close()
            server.close()


# H.Sign / H.Agg / H.Ver

def _pairs(seed: int) -> list[bytes]:
    rng = random.Random(seed)
    return [tag_message(i + 1, rng.randbytes(32)) for i in range(PAIRS)]


def bench_sign(report: BenchReport, runs: int = 10, duration: float = 0.1, seed: int = 0) -> None:
    bls = BlsScheme()
    kp = bls.keygen(b"bench:sign")
    msgs = _pairs(seed)
    report.add("H.Sign", 1, [throughput(lambda m: bls.sign(kp.sk, m), msgs, duration) for _ in range(runs)],
               "throughput", "sig/s")


def bench_agg(report: BenchReport, counts=SIGNER_COUNTS, runs: int = 10, duration: float = 0.1,
              seed: int = 0) -> None:
    bls = BlsScheme()
    keys = [bls.keygen(b"bench:agg:%d" % i) for i in range(max(counts))]
    msgs = _pairs(seed)[:5]
    shares = [[SignatureShare(i, m, bls.sign(kp.sk, m)) for i, kp in enumerate(keys)] for m in msgs]
    for n in counts:
        groups = [s[:n] for s in shares]
        report.add("H.Agg", n, [throughput(bls.aggregate, groups, duration) for _ in range(runs)],
                   "throughput", "agg/s")


def _verify_fixture(seed: int):
    bls = BlsScheme()
    kp = bls.keygen(b"bench:ver")
    msgs = _pairs(seed)
    return bls, kp.pk, [(m, bls.sign(kp.sk, m)) for m in msgs]


_WORKER_FIXTURE = None


def _init_verify_worker(seed: int) -> None:
    global _WORKER_FIXTURE
    _WORKER_FIXTURE = _verify_fixture(seed)


def _verify_worker(duration: float) -> int:
    bls, pk, items = _WORKER_FIXTURE
    count, i = 0, 0
    end = time.perf_counter() + duration
    while time.perf_counter() < end:
        m, sig = items[i]
        if not bls.verify(pk, m, sig):
            raise RuntimeError("benchmark signature failed to verify")
        count += 1
        i = (i + 1) % len(items)
    return count


def bench_verify(report: BenchReport, workers: int = 16, runs: int = 10, duration: float = 0.1,
                 seed: int = 0) -> None:
    bls, pk, items = _verify_fixture(seed)
    report.add("H.Ver", 1, [throughput(lambda it: bls.verify(pk, *it), items, duration) for _ in range(runs)],
               "throughput", "sig/s")
    if workers <= 1:
        return
    ctx = mp.get_context("fork")
    # each worker builds its keys and signatures once, outside the measurement
    with ctx.Pool(workers, initializer=_init_verify_worker, initargs=(seed,)) as pool:
        pool.map(_verify_worker, [0.0] * workers, chunksize=1)
        vals = []
        for _ in range(runs):
            start = time.perf_counter()
            total = sum(pool.map(_verify_worker, [duration] * workers, chunksize=1))
            vals.append(total / (time.perf_counter() - start))
    report.add("H.Ver", workers, vals, "throughput", "sig/s")


def run_bench(corpus=None, seed: int = 0, runs: int = 10, duration: float = 0.1, workers: int = 16,
              sizes=SIZES, counts=SIGNER_COUNTS, corpus_size: int = 40_000, only=None) -> BenchReport:
    """Runs the selected hypotheses (all by default) and returns the report."""
    only = set(only or ("size", "kernels", "sign", "agg", "ver"))
    corpus = corpus if corpus is not None else generate(corpus_size, seed)
    report = BenchReport(machine=machine_descriptor())
    started = time.perf_counter()
    if "size" in only:
        bench_size(corpus, report, sizes, seed=seed)
    if "kernels" in only:
        bench_batch_kernels(corpus, report, sizes, runs, duration, seed)
    if "sign" in only:
        bench_sign(report, runs, duration, seed)
    if "agg" in only:
        bench_agg(report, counts, runs, duration, seed)
    if "ver" in only:
        bench_verify(report, workers, runs, duration, seed)
    report.machine["elapsed_s"] = time.perf_counter() - started
    return report


__all__ = ["BenchReport", "COLUMNS", "CorpusTooSmall", "SIGNER_COUNTS", "SIZES", "STATUS_INVALID_HASH",
           "STATUS_INVALID_ID", "TranslationServer", "run_bench"]
