"""Scenario runner, checker, benchmarks and replay."""
