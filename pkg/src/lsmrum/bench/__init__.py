"""Workload generation, replay oracle and benchmark drivers."""

from lsmrum.bench.oracle import ReplayOracle, canonical
from lsmrum.bench.runner import (
    STRATEGIES,
    BenchReport,
    StrategyIndex,
    VerificationError,
    run_ingest,
    run_mixed,
)
from lsmrum.bench.workload import (
    SELECTIVITY_LADDER,
    TraceError,
    gen_workload,
    read_trace,
    write_trace,
)

__all__ = [
    "SELECTIVITY_LADDER",
    "STRATEGIES",
    "BenchReport",
    "ReplayOracle",
    "StrategyIndex",
    "TraceError",
    "VerificationError",
    "canonical",
    "gen_workload",
    "read_trace",
    "run_ingest",
    "run_mixed",
    "write_trace",
]
