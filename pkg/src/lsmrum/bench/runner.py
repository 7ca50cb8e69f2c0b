"""Benchmark drivers: strategy adapters, ingest runs and mixed update/query runs."""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

from lsmrum.baselines import EagerLSMRtree, ValidationLSMRtree
from lsmrum.core import OpKind, Rect, WorkloadOp
from lsmrum.engine import EngineConfig, LSMRumTree
from lsmrum.bench.oracle import ReplayOracle, canonical, diff

STRATEGIES = ("eager", "validation", "um", "um_f", "um_m", "um_fm", "um_bv", "um_fmbv")

_UM_FLAGS = {
    "um": "",
    "um_f": "F",
    "um_m": "M",
    "um_fm": "FM",
    "um_bv": "BV",
    "um_fmbv": "FMBV",
}

SAMPLE_EVERY = 1000
DECILES = 10


class VerificationError(AssertionError):
    """A query answer differed from the replay oracle."""


def parse_strategies(value: str) -> List[str]:
    if value == "all":
        return list(STRATEGIES)
    names = [v.strip() for v in value.split(",") if v.strip()]
    bad = [n for n in names if n not in STRATEGIES]
    if bad or not names:
        raise ValueError(f"unknown strategy {bad or value!r}; expected 'all' or some of {STRATEGIES}")
    return names


class StrategyIndex:
    """Uniform face over the engine and the two baselines."""

    def __init__(self, strategy: str, config: Optional[EngineConfig] = None, directory=None) -> None:
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        self.strategy = strategy
        base = config or EngineConfig()
        if strategy == "eager":
            self.index = EagerLSMRtree(base, directory)
            idx = self.index
            self.insert = idx.insert
            self.delete = idx.delete
            self.update = idx.update
            self._native = None
        elif strategy == "validation":
            self.index = ValidationLSMRtree(base, directory)
            idx = self.index
            self.insert = idx.insert
            self.delete = lambda oid, old_loc: idx.delete(oid)
            self.update = lambda oid, old_loc, loc: idx.update(oid, loc)
            self._native = (idx.delete, idx.update)
        else:
            self.index = LSMRumTree(base.replace(cleaning_flags=_UM_FLAGS[strategy]), directory)
            idx = self.index
            self.insert = idx.ingest_insert
            self.delete = lambda oid, old_loc: idx.ingest_delete(oid)
            self.update = lambda oid, old_loc, loc: idx.ingest_update(oid, loc)
            self._native = (idx.ingest_delete, idx.ingest_update)
        self.query = self.index.range_query

    @property
    def memo(self):
        return getattr(self.index, "memo", None)

    def apply(self, op: WorkloadOp) -> int:
        k = op.kind
        if k is OpKind.INSERT:
            return self.insert(op.oid, op.loc)
        if k is OpKind.UPDATE:
            return self.update(op.oid, op.old_loc, op.loc)
        if k is OpKind.DELETE:
            return self.delete(op.oid, op.old_loc)
        raise ValueError("queries are not applied")

    def um_size(self) -> int:
        memo = self.memo
        return memo.size() if memo is not None else 0

    def stats(self):
        return self.index.stats()

    def close(self) -> None:
        self.index.close()


@dataclass
class BenchReport:
    strategy: str
    threads: int = 1
    ops: int = 0
    updates: int = 0
    queries: int = 0
    ingest_seconds: float = 0.0
    phase_seconds: List[float] = field(default_factory=list)
    throughput_ops_per_ms: float = 0.0
    query_ms_by_decile: List[Optional[float]] = field(default_factory=list)
    query_count_by_decile: List[int] = field(default_factory=list)
    query_ms_mean: Optional[float] = None
    flush_count: int = 0
    merge_count: int = 0
    um_size_max: int = 0
    um_size_sampled_max: int = 0
    um_size_now: int = 0
    component_count: int = 0
    clean_removals: Dict[str, int] = field(default_factory=dict)
    records_scanned: int = 0
    pages_scanned: int = 0
    verified_queries: int = 0
    mismatches: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _fill_stats(report: BenchReport, idx: StrategyIndex) -> None:
    st = idx.stats()
    report.flush_count = st.flush_count
    report.merge_count = st.merge_count
    report.um_size_max = st.um_size_max
    report.um_size_now = st.um_size_now
    report.component_count = st.component_count
    report.clean_removals = dict(st.clean_removals) if idx.memo is not None else {}
    report.records_scanned = st.records_scanned
    report.pages_scanned = st.pages_scanned


def _compile(ops: Sequence[WorkloadOp], idx: StrategyIndex) -> list:
    """Bind every write op to its index call ahead of the clock."""
    out = []
    native = idx._native
    for op in ops:
        k = op.kind
        if k is OpKind.INSERT:
            out.append((idx.insert, (op.oid, op.loc)))
        elif native is not None:
            # strategies that ignore old_loc get their own methods, with no adapter in between
            if k is OpKind.UPDATE:
                out.append((native[1], (op.oid, op.loc)))
            elif k is OpKind.DELETE:
                out.append((native[0], (op.oid,)))
        elif k is OpKind.UPDATE:
            out.append((idx.update, (op.oid, op.old_loc, op.loc)))
        elif k is OpKind.DELETE:
            out.append((idx.delete, (op.oid, op.old_loc)))
    return out


def partition(ops: Sequence[WorkloadOp], threads: int) -> List[List[WorkloadOp]]:
    """Split write ops by oid so every object's ops stay on one thread, in order."""
    parts: List[List[WorkloadOp]] = [[] for _ in range(threads)]
    for op in ops:
        if op.kind is not OpKind.QUERY:
            parts[op.oid % threads].append(op)
    return parts


def run_ingest(
    ops: Sequence[WorkloadOp],
    strategy: str,
    threads: int = 1,
    config: Optional[EngineConfig] = None,
    index: Optional[StrategyIndex] = None,
):
    """Ingest the write ops of a trace and time it; query ops are skipped.

    Returns ``(report, index)``; the index stays open for post-hoc checks
    and must be closed by the caller.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    idx = index or StrategyIndex(strategy, config)
    parts = [_compile(p, idx) for p in partition(ops, threads)]
    n = sum(len(p) for p in parts)
    report = BenchReport(strategy, threads=threads, ops=len(ops), updates=n)
    marks: List[List[float]] = [[] for _ in range(threads)]
    samples: List[int] = [0]
    barrier = threading.Barrier(threads + 1)

    def worker(t: int) -> None:
        calls = parts[t]
        m = len(calls)
        step = max(1, m // DECILES)
        mk = marks[t]
        sample = t == 0
        um_size = idx.um_size
        barrier.wait()
        clock = time.perf_counter
        for i, (fn, args) in enumerate(calls, 1):
            fn(*args)
            if i % step == 0 and len(mk) < DECILES:
                mk.append(clock())
            if sample and i % SAMPLE_EVERY == 0:
                s = um_size()
                if s > samples[0]:
                    samples[0] = s
        mk.append(clock())

    pool = [threading.Thread(target=worker, args=(t,), name=f"ingest-{t}") for t in range(threads)]
    for th in pool:
        th.start()
    barrier.wait()
    t0 = time.perf_counter()
    for th in pool:
        th.join()
    wall = time.perf_counter() - t0

    report.ingest_seconds = wall
    report.throughput_ops_per_ms = n / (wall * 1000.0) if wall > 0 else 0.0
    # cumulative seconds at each decile: slowest thread at that point
    report.phase_seconds = [max(mk[d] if d < len(mk) else mk[-1] for mk in marks) - t0 for d in range(DECILES)]
    report.um_size_sampled_max = samples[0]
    _fill_stats(report, idx)
    return report, idx


def run_mixed(
    ops: Sequence[WorkloadOp],
    strategy: str,
    config: Optional[EngineConfig] = None,
    verify: bool = False,
    index: Optional[StrategyIndex] = None,
):
    """Single-threaded interleaved updates and queries.

    Query latency is averaged per decile of the trace processed. With
    ``verify`` each answer is checked against the replay oracle and the
    first mismatch raises :class:`VerificationError`.
    """
    idx = index or StrategyIndex(strategy, config)
    report = BenchReport(strategy, threads=1, ops=len(ops))
    oracle = ReplayOracle() if verify else None
    n = len(ops)
    q_ms = [0.0] * DECILES
    q_cnt = [0] * DECILES
    update_s = 0.0
    phase = []
    step = max(1, n // DECILES)
    clock = time.perf_counter
    query = idx.query
    apply = idx.apply
    for i, op in enumerate(ops):
        if op.kind is OpKind.QUERY:
            t0 = clock()
            got = query(op.window)
            dt = clock() - t0
            d = min(DECILES - 1, i * DECILES // n)
            q_ms[d] += dt * 1000.0
            q_cnt[d] += 1
            report.queries += 1
            if oracle is not None:
                want = oracle.query(op.window)
                report.verified_queries += 1
                if canonical(got) != canonical(want):
                    report.mismatches += 1
                    raise VerificationError(
                        f"{strategy}: query #{report.queries} at op {i} window {tuple(op.window)}: {diff(want, got)}"
                    )
        else:
            t0 = clock()
            apply(op)
            update_s += clock() - t0
            report.updates += 1
            if oracle is not None:
                oracle.apply(op)
            if report.updates % SAMPLE_EVERY == 0:
                report.um_size_sampled_max = max(report.um_size_sampled_max, idx.um_size())
        if (i + 1) % step == 0 and len(phase) < DECILES:
            phase.append(update_s)
    while len(phase) < DECILES:
        phase.append(update_s)
    report.ingest_seconds = update_s
    report.phase_seconds = phase
    report.throughput_ops_per_ms = report.updates / (update_s * 1000.0) if update_s > 0 else 0.0
    if report.queries:
        report.query_ms_by_decile = [q_ms[d] / q_cnt[d] if q_cnt[d] else None for d in range(DECILES)]
        report.query_count_by_decile = q_cnt
        report.query_ms_mean = sum(q_ms) / report.queries
    _fill_stats(report, idx)
    return report, idx


def windows_at(ops: Sequence[WorkloadOp]) -> List[Rect]:
    return [op.window for op in ops if op.kind is OpKind.QUERY]
