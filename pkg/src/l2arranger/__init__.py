"""Decentralized L2 arranger: setchain-backed batching, a simulated L1 with
fraud-proof games, offchain paid translation and a benchmark harness."""

__version__ = "0.1.0"
