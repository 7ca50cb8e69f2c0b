"""The LSM RUM-tree engine: ingest, flush, prefix merge and validated queries."""

from __future__ import annotations

import logging
import math
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, FrozenSet, List, Optional, Union

import numpy as np

from lsmrum.atomic import AtomicInt, RWLock
from lsmrum.cleaning import BufferedCleaner, VacuumCleaner
from lsmrum.core import Location, ObjectRecord, Rect, TimestampCounter
from lsmrum.rtree import DEFAULT_MIN_FILL, DEFAULT_NODE_CAPACITY, Rtree
from lsmrum.storage import (
    CRC_SIZE,
    DEFAULT_WORLD,
    HEADER_SIZE,
    RECORD_SIZE,
    Curve,
    RecordRun,
    atomic_write,
    load_run,
    window_intervals,
)
from lsmrum.update_memo import UpdateMemo

logger = logging.getLogger(__name__)

#: Fixed per-record size estimate used for the memory budget.
RECORD_BYTES_ESTIMATE = 40

CLEANING_FLAGS = frozenset("FMBV")


def parse_flags(value: Union[str, FrozenSet[str], set, list, tuple, None]) -> FrozenSet[str]:
    if value is None:
        return frozenset()
    if isinstance(value, str):
        value = value.strip().upper().replace(",", "").replace(" ", "")
        if value in ("", "NONE", "-"):
            return frozenset()
    flags = frozenset(str(f).upper() for f in value)
    bad = flags - CLEANING_FLAGS
    if bad:
        raise ValueError(f"unknown cleaning flags {sorted(bad)}; expected a subset of FMBV")
    return flags


@dataclass
class EngineConfig:
    memory_budget_bytes: int = 4 * 1024 * 1024
    page_size_bytes: int = 2048
    merge_threshold: int = 5
    node_capacity: int = DEFAULT_NODE_CAPACITY
    buffered_threshold: int = 4
    vacuum_threshold: int = 8
    cleaning_flags: FrozenSet[str] = frozenset()
    curve: Curve = Curve.HILBERT
    world: Rect = DEFAULT_WORLD
    max_mergeable_bytes: Optional[int] = None
    vacuum_skip_recent: bool = True
    min_fill: float = DEFAULT_MIN_FILL

    def __post_init__(self) -> None:
        self.cleaning_flags = parse_flags(self.cleaning_flags)
        self.curve = Curve.parse(self.curve)
        for name in ("merge_threshold", "buffered_threshold", "vacuum_threshold"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.memory_budget_bytes < RECORD_BYTES_ESTIMATE:
            raise ValueError("memory budget smaller than one record")
        if self.page_size_bytes < 1:
            raise ValueError("page_size_bytes must be >= 1")
        if self.node_capacity < 2:
            raise ValueError("node_capacity must be >= 2")
        if self.max_mergeable_bytes is None:
            self.max_mergeable_bytes = 16 * self.memory_budget_bytes
        w = self.world
        if not (w.min.x < w.max.x and w.min.y < w.max.y):
            raise ValueError("world box must have positive extent")

    @property
    def memory_capacity_records(self) -> int:
        return self.memory_budget_bytes // RECORD_BYTES_ESTIMATE

    def replace(self, **changes) -> "EngineConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        if "memory_budget_bytes" in changes and "max_mergeable_bytes" not in changes:
            values["max_mergeable_bytes"] = None
        values.update(changes)
        return EngineConfig(**values)


# -- disk layer ---------------------------------------------------------------------


@dataclass
class DiskComponent:
    id: int
    path: Path
    record_count: int
    min_ts: int
    max_ts: int
    run: RecordRun = field(repr=False)
    # Eager baseline: keys deleted while this component was the memory one
    deleted_keys: FrozenSet[int] = field(default=frozenset(), repr=False)

    @property
    def size_bytes(self) -> int:
        return HEADER_SIZE + self.record_count * RECORD_SIZE + CRC_SIZE


class DiskLayer:
    """Immutable components, oldest first, plus the prefix merge policy."""

    def __init__(self, directory: Path, config: EngineConfig, prefix: str = "c") -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.prefix = prefix
        self.components: List[DiskComponent] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.components)

    def write(self, run: RecordRun, deleted_keys: FrozenSet[int] = frozenset()) -> DiskComponent:
        """Persist ``run`` as a new component file (not yet installed)."""
        cid = self._next_id
        path = self.directory / f"{self.prefix}{cid:08d}.lrum"
        atomic_write(path, run.encode())
        self._next_id += 1
        if len(run):
            min_ts = int(run.tss.min())
            max_ts = int(run.tss.max())
        else:
            min_ts = max_ts = 0
        return DiskComponent(cid, path, len(run), min_ts, max_ts, run, frozenset(deleted_keys))

    def install(self, comp: DiskComponent) -> None:
        self.components.append(comp)

    def pick_merge(self) -> List[DiskComponent]:
        """Newest components whose combined size fits the mergeable budget.

        Returns them (oldest first) once there are at least ``merge_threshold``
        of them, otherwise an empty list.
        """
        limit = self.config.max_mergeable_bytes
        picked: List[DiskComponent] = []
        total = 0
        for comp in reversed(self.components):
            if total + comp.size_bytes > limit:
                break
            total += comp.size_bytes
            picked.append(comp)
        if len(picked) < self.config.merge_threshold:
            return []
        picked.reverse()
        return picked

    def replace(self, inputs: List[DiskComponent], merged: DiskComponent) -> None:
        """Swap a contiguous run of components for their merge result."""
        ids = [c.id for c in self.components]
        start = ids.index(inputs[0].id)
        assert ids[start : start + len(inputs)] == [c.id for c in inputs], "merge inputs not contiguous"
        self.components[start : start + len(inputs)] = [merged]
        for comp in inputs:
            try:
                comp.path.unlink()
            except FileNotFoundError:
                pass

    @staticmethod
    def concat(runs: List[RecordRun], config: EngineConfig) -> RecordRun:
        """Merge-scan input runs into a single run in curve order."""
        if not runs:
            return RecordRun.empty(config.curve, config.world)
        keys = np.concatenate([r.keys for r in runs])
        oids = np.concatenate([r.oids for r in runs])
        tss = np.concatenate([r.tss for r in runs])
        xs = np.concatenate([r.xs for r in runs])
        ys = np.concatenate([r.ys for r in runs])
        order = np.lexsort((tss, oids, keys))
        return RecordRun(keys[order], oids[order], tss[order], xs[order], ys[order], config.curve, config.world)

    def reload(self, comp: DiskComponent) -> RecordRun:
        _, run = load_run(comp.path, self.config.world)
        return run


def run_from_records(records, config: EngineConfig) -> RecordRun:
    recs = list(records)
    return RecordRun.sorted_from(
        [r.oid for r in recs],
        [r.ts for r in recs],
        [r.loc.x for r in recs],
        [r.loc.y for r in recs],
        config.curve,
        config.world,
    )


def obsolete_mask(run: RecordRun, memo: UpdateMemo) -> np.ndarray:
    """True where the memo says a record has been superseded."""
    return np.array(memo.stale_flags(run.oids.tolist(), run.tss.tolist()), dtype=bool)


# -- engine ---------------------------------------------------------------------------


@dataclass
class EngineStats:
    flush_count: int = 0
    merge_count: int = 0
    um_size_now: int = 0
    um_size_max: int = 0
    component_count: int = 0
    component_records: List[int] = field(default_factory=list)
    memory_records: int = 0
    clean_removals: Dict[str, int] = field(default_factory=lambda: {f: 0 for f in "BVFM"})
    records_scanned: int = 0
    pages_scanned: int = 0
    flush_seconds: float = 0.0
    merge_seconds: float = 0.0


class LSMRumTree:
    """LSM R-tree secondary index validated through an update memo.

    Inserts go straight to the memory R-tree. Deletes only touch the memo.
    Updates touch the memo and insert the new copy. Queries gather candidates
    from every component and keep those the memo considers fresh.
    """

    def __init__(self, config: Optional[EngineConfig] = None, directory: Union[str, Path, None] = None) -> None:
        self.config = config or EngineConfig()
        self._tmpdir = None
        if directory is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="lsmrum-")
            directory = self._tmpdir.name
        self.directory = Path(directory)
        self.clock = TimestampCounter()
        self.memo = UpdateMemo()
        self.memory = self._new_tree()
        self.disk = DiskLayer(self.directory, self.config)
        self._lock = RWLock()
        flags = self.config.cleaning_flags
        self.buffered = BufferedCleaner(self.config.buffered_threshold) if "B" in flags else None
        self.vacuum = (
            VacuumCleaner(self.memory, self.config.vacuum_threshold, self.config.vacuum_skip_recent)
            if "V" in flags
            else None
        )
        self._update_seq = 0
        self._flush_count = 0
        self._merge_count = 0
        self._flush_seconds = 0.0
        self._merge_seconds = 0.0
        self._removed = {"F": 0, "M": 0}
        self._scanned = AtomicInt(0)
        self._pages = AtomicInt(0)

    def _new_tree(self) -> Rtree:
        return Rtree(self.config.node_capacity, self.config.min_fill)

    def close(self) -> None:
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None

    def __enter__(self) -> "LSMRumTree":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- ingest ---------------------------------------------------------------------

    def _make_room(self) -> None:
        mem = self.memory
        if mem.size and (mem.size + 1) * RECORD_BYTES_ESTIMATE > self.config.memory_budget_bytes:
            self._flush_locked()

    def ingest_insert(self, oid: int, loc: Location) -> int:
        lock = self._lock
        lock.acquire_write()
        try:
            self._make_room()
            ts = self.clock.next_timestamp()
            self.memory.insert(ObjectRecord(loc, oid, ts))
        finally:
            lock.release_write()
        return ts

    def ingest_delete(self, oid: int) -> int:
        ts = self.clock.next_timestamp()
        self.memo.record_obsolete(oid, ts)
        return ts

    def ingest_update(self, oid: int, loc: Location) -> int:
        lock = self._lock
        lock.acquire_write()
        try:
            self._make_room()
            ts = self.clock.next_timestamp()
            memo = self.memo
            memo.record_obsolete(oid, ts)
            tree = self.memory
            leaf = tree.insert(ObjectRecord(loc, oid, ts))
            self._update_seq += 1
            if self.buffered is not None:
                self.buffered.on_update(tree, leaf, memo, self._update_seq)
            if self.vacuum is not None:
                self.vacuum.on_update(tree, memo, self._update_seq)
        finally:
            lock.release_write()
        return ts

    # -- flush and merge ------------------------------------------------------------

    def flush(self):
        """Flush the memory component; returns the new component or None if empty."""
        with self._lock.write():
            return self._flush_locked()

    def _flush_locked(self):
        mem = self.memory
        if not mem.size:
            return None
        t0 = time.perf_counter()
        run = run_from_records(mem.records(), self.config)
        dropped = None
        if "F" in self.config.cleaning_flags:
            dropped = obsolete_mask(run, self.memo)
            if dropped.any():
                run_kept = run.take(~dropped)
            else:
                run_kept = run
        else:
            run_kept = run
        comp = self.disk.write(run_kept)
        # the file is durable; only now give counts back to the memo
        if dropped is not None and dropped.any():
            self._give_back(run.oids[dropped])
            self._removed["F"] += int(dropped.sum())
        self.disk.install(comp)
        self.memory = self._new_tree()
        if self.vacuum is not None:
            self.vacuum.reset(self.memory)
        self._flush_count += 1
        self._flush_seconds += time.perf_counter() - t0
        logger.debug("flushed %d records into component %d", comp.record_count, comp.id)
        while self._merge_locked(self.disk.pick_merge()) is not None:
            pass
        return comp

    def _give_back(self, oids: np.ndarray) -> None:
        clean_one = self.memo.clean_one
        for oid in oids.tolist():
            clean_one(oid)

    def maybe_merge(self):
        """Run the prefix merge policy once; returns the merged component or None."""
        with self._lock.write():
            return self._merge_locked(self.disk.pick_merge())

    def compact_all(self):
        """Merge every disk component into one, regardless of policy."""
        with self._lock.write():
            if not self.disk.components:
                return None
            return self._merge_locked(list(self.disk.components))

    def _merge_locked(self, inputs: List[DiskComponent]):
        if not inputs:
            return None
        t0 = time.perf_counter()
        run = DiskLayer.concat([c.run for c in inputs], self.config)
        dropped = None
        if "M" in self.config.cleaning_flags and len(run):
            dropped = obsolete_mask(run, self.memo)
            run_kept = run.take(~dropped) if dropped.any() else run
        else:
            run_kept = run
        merged = self.disk.write(run_kept)
        if dropped is not None and dropped.any():
            self._give_back(run.oids[dropped])
            self._removed["M"] += int(dropped.sum())
        self.disk.replace(inputs, merged)
        self._merge_count += 1
        self._merge_seconds += time.perf_counter() - t0
        logger.debug("merged %d components into %d (%d records)", len(inputs), merged.id, merged.record_count)
        return merged

    def clean_memory(self) -> int:
        """Run node cleaning over every leaf of the memory tree."""
        with self._lock.write():
            tree = self.memory
            removed = 0
            for leaf in tree.leaves():
                if leaf.alive:
                    removed += tree.clean_node(leaf, self.memo, self._update_seq)
            return removed

    # -- queries ----------------------------------------------------------------------

    def candidates(self, window: Rect) -> List[ObjectRecord]:
        """Unvalidated matches from every component, oldest component first."""
        with self._lock.read():
            return self._candidates_locked(window)

    def _candidates_locked(self, window: Rect) -> List[ObjectRecord]:
        out: List[ObjectRecord] = []
        comps = self.disk.components
        scanned = 0
        pages = 0
        if comps:
            intervals = window_intervals(window, self.config.curve, self.config.world)
            page = self.config.page_size_bytes
            for comp in comps:
                if not comp.record_count:
                    continue
                recs, n = comp.run.prune_scan(window, intervals)
                out.extend(recs)
                scanned += n
                pages += math.ceil(n * RECORD_SIZE / page)
        out.extend(self.memory.range_search(window))
        if scanned:
            self._scanned.add_and_get(scanned)
            self._pages.add_and_get(pages)
        return out

    def range_query(self, window: Rect) -> List[ObjectRecord]:
        with self._lock.read():
            return self.memo.validate(self._candidates_locked(window))

    # -- inspection -------------------------------------------------------------------

    def stats(self) -> EngineStats:
        with self._lock.read():
            removals = {
                "B": self.buffered.removed if self.buffered else 0,
                "V": self.vacuum.removed if self.vacuum else 0,
                "F": self._removed["F"],
                "M": self._removed["M"],
            }
            comps = self.disk.components
            return EngineStats(
                flush_count=self._flush_count,
                merge_count=self._merge_count,
                um_size_now=self.memo.size(),
                um_size_max=self.memo.max_size(),
                component_count=len(comps),
                component_records=[c.record_count for c in comps],
                memory_records=self.memory.size,
                clean_removals=removals,
                records_scanned=self._scanned.get(),
                pages_scanned=self._pages.get(),
                flush_seconds=self._flush_seconds,
                merge_seconds=self._merge_seconds,
            )

    def all_records(self) -> Dict[str, List[ObjectRecord]]:
        """Every stored record, keyed by component name (for audits)."""
        with self._lock.read():
            out = {f"disk:{c.id}": c.run.records() for c in self.disk.components}
            out["memory"] = list(self.memory.records())
            return out

    def visit(self, fn: Callable[[ObjectRecord], None]) -> None:
        for recs in self.all_records().values():
            for r in recs:
                fn(r)
