"""Reference strategies: Eager (deleted-key sets) and Validation (primary-key index)."""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple, Union

import numpy as np

from lsmrum.atomic import AtomicInt, RWLock
from lsmrum.core import Location, ObjectRecord, Rect, TimestampCounter
from lsmrum.engine import RECORD_BYTES_ESTIMATE, DiskComponent, DiskLayer, EngineConfig, EngineStats, run_from_records
from lsmrum.rtree import Rtree
from lsmrum.storage import RECORD_SIZE, window_intervals, write_key_file


class _LSMBase:
    """Memory R-tree, disk layer, clock and lock shared by both baselines."""

    prefix = "b"

    def __init__(self, config: Optional[EngineConfig] = None, directory: Union[str, Path, None] = None) -> None:
        self.config = config or EngineConfig()
        self._tmpdir = None
        if directory is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix=f"lsmrum-{self.prefix}-")
            directory = self._tmpdir.name
        self.directory = Path(directory)
        self.clock = TimestampCounter()
        self.memory = self._new_tree()
        self.disk = DiskLayer(self.directory, self.config, prefix=self.prefix)
        self._lock = RWLock()
        self._flush_count = 0
        self._merge_count = 0
        self._flush_seconds = 0.0
        self._merge_seconds = 0.0
        self._scanned = AtomicInt(0)
        self._pages = AtomicInt(0)
        self.probes = AtomicInt(0)

    def _new_tree(self) -> Rtree:
        return Rtree(self.config.node_capacity, self.config.min_fill)

    def close(self) -> None:
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _make_room(self) -> None:
        mem = self.memory
        if mem.size and (mem.size + 1) * RECORD_BYTES_ESTIMATE > self.config.memory_budget_bytes:
            self._flush_locked()

    def flush(self):
        with self._lock.write():
            return self._flush_locked()

    def _flush_locked(self):
        raise NotImplementedError

    def _after_flush(self) -> None:
        while True:
            inputs = self.disk.pick_merge()
            if not inputs:
                break
            self._merge_locked(inputs)

    def _merge_locked(self, inputs: List[DiskComponent]):
        raise NotImplementedError

    def maybe_merge(self):
        with self._lock.write():
            inputs = self.disk.pick_merge()
            return self._merge_locked(inputs) if inputs else None

    def compact_all(self):
        with self._lock.write():
            if not self.disk.components:
                return None
            return self._merge_locked(list(self.disk.components))

    def _scan_components(self, window: Rect) -> List[Tuple[int, List[ObjectRecord]]]:
        """Raw candidates per disk component position, oldest first."""
        out = []
        comps = self.disk.components
        if not comps:
            return out
        intervals = window_intervals(window, self.config.curve, self.config.world)
        scanned = pages = 0
        page = self.config.page_size_bytes
        for i, comp in enumerate(comps):
            if not comp.record_count:
                continue
            recs, n = comp.run.prune_scan(window, intervals)
            scanned += n
            pages += math.ceil(n * RECORD_SIZE / page)
            if recs:
                out.append((i, recs))
        if scanned:
            self._scanned.add_and_get(scanned)
            self._pages.add_and_get(pages)
        return out

    def _base_stats(self) -> EngineStats:
        comps = self.disk.components
        return EngineStats(
            flush_count=self._flush_count,
            merge_count=self._merge_count,
            component_count=len(comps),
            component_records=[c.record_count for c in comps],
            memory_records=self.memory.size,
            records_scanned=self._scanned.get(),
            pages_scanned=self._pages.get(),
            flush_seconds=self._flush_seconds,
            merge_seconds=self._merge_seconds,
        )

    def stats(self) -> EngineStats:
        with self._lock.read():
            return self._base_stats()


class EagerLSMRtree(_LSMBase):
    """Deletes remove the record from memory if present and log the key.

    Every component carries the set of keys deleted while it was the memory
    component. A candidate from a component survives only when no newer
    component (memory included) lists its key.
    """

    prefix = "e"

    def __init__(self, config: Optional[EngineConfig] = None, directory: Union[str, Path, None] = None) -> None:
        super().__init__(config, directory)
        self.deleted: Set[int] = set()
        self.memory_removals = 0

    def insert(self, oid: int, loc: Location) -> int:
        lock = self._lock
        lock.acquire_write()
        try:
            self._make_room()
            ts = self.clock.next_timestamp()
            self.memory.insert(ObjectRecord(loc, oid, ts))
        finally:
            lock.release_write()
        return ts

    def _delete_locked(self, oid: int, old_loc: Optional[Location]) -> None:
        if old_loc is not None and self.memory.remove_exact(old_loc, oid):
            self.memory_removals += 1
        self.deleted.add(oid)

    def delete(self, oid: int, old_loc: Optional[Location]) -> int:
        lock = self._lock
        lock.acquire_write()
        try:
            ts = self.clock.next_timestamp()
            self._delete_locked(oid, old_loc)
        finally:
            lock.release_write()
        return ts

    def update(self, oid: int, old_loc: Optional[Location], new_loc: Location) -> int:
        lock = self._lock
        lock.acquire_write()
        try:
            self._make_room()
            ts = self.clock.next_timestamp()
            self._delete_locked(oid, old_loc)
            self.memory.insert(ObjectRecord(new_loc, oid, ts))
        finally:
            lock.release_write()
        return ts

    def _flush_locked(self):
        if not self.memory.size and not self.deleted:
            return None
        t0 = time.perf_counter()
        run = run_from_records(self.memory.records(), self.config)
        comp = self.disk.write(run, frozenset(self.deleted))
        write_key_file(comp.path.with_suffix(".del"), sorted(self.deleted))
        self.disk.install(comp)
        self.memory = self._new_tree()
        self.deleted = set()
        self._flush_count += 1
        self._flush_seconds += time.perf_counter() - t0
        self._after_flush()
        return comp

    def _merge_locked(self, inputs: List[DiskComponent]):
        t0 = time.perf_counter()
        config = self.config
        # newer inputs' deleted keys invalidate records of older inputs
        parts = []
        newer: Set[int] = set()
        for comp in reversed(inputs):
            run = comp.run
            if newer and len(run):
                mask = ~np.isin(run.oids, np.fromiter(newer, dtype=np.uint64, count=len(newer)))
                run = run.take(mask) if not mask.all() else run
            parts.append(run)
            newer |= comp.deleted_keys
        merged_run = DiskLayer.concat(parts, config)
        includes_oldest = inputs[0] is self.disk.components[0]
        keys = frozenset() if includes_oldest else frozenset(newer)
        merged = self.disk.write(merged_run, keys)
        write_key_file(merged.path.with_suffix(".del"), sorted(keys))
        for comp in inputs:
            try:
                comp.path.with_suffix(".del").unlink()
            except FileNotFoundError:
                pass
        self.disk.replace(inputs, merged)
        self._merge_count += 1
        self._merge_seconds += time.perf_counter() - t0
        return merged

    def range_query(self, window: Rect) -> List[ObjectRecord]:
        with self._lock.read():
            comps = self.disk.components
            per_comp = self._scan_components(window)
            out: List[ObjectRecord] = []
            probes = 0
            mem_deleted = self.deleted
            for i, recs in per_comp:
                newer = [c.deleted_keys for c in comps[i + 1 :] if c.deleted_keys]
                newer.append(mem_deleted)
                for r in recs:
                    oid = r.oid
                    for keys in newer:
                        probes += 1
                        if oid in keys:
                            break
                    else:
                        out.append(r)
            out.extend(self.memory.range_search(window))
            if probes:
                self.probes.add_and_get(probes)
            return out


class ValidationLSMRtree(_LSMBase):
    """Every entry is timestamped; a primary-key index holds the latest ts per key.

    Deletes only write a control entry into the key index. Queries keep a
    candidate when its timestamp is the key's latest and the key is live.
    """

    prefix = "v"

    def __init__(self, config: Optional[EngineConfig] = None, directory: Union[str, Path, None] = None) -> None:
        super().__init__(config, directory)
        # oid -> (latest ts, deleted)
        self.pk: Dict[int, Tuple[int, bool]] = {}

    def insert(self, oid: int, loc: Location) -> int:
        lock = self._lock
        lock.acquire_write()
        try:
            self._make_room()
            ts = self.clock.next_timestamp()
            self.memory.insert(ObjectRecord(loc, oid, ts))
            self.pk[oid] = (ts, False)
        finally:
            lock.release_write()
        return ts

    update = insert

    def delete(self, oid: int) -> int:
        lock = self._lock
        lock.acquire_write()
        try:
            ts = self.clock.next_timestamp()
            self.pk[oid] = (ts, True)
        finally:
            lock.release_write()
        return ts

    def _flush_locked(self):
        if not self.memory.size:
            return None
        t0 = time.perf_counter()
        run = run_from_records(self.memory.records(), self.config)
        comp = self.disk.write(run)
        self._write_pk_snapshot()
        self.disk.install(comp)
        self.memory = self._new_tree()
        self._flush_count += 1
        self._flush_seconds += time.perf_counter() - t0
        self._after_flush()
        return comp

    def _write_pk_snapshot(self) -> None:
        oids = list(self.pk)
        # deletion markers are stored with the top bit set
        vals = [ts | (1 << 63) if dead else ts for ts, dead in self.pk.values()]
        write_key_file(self.directory / "pk.snapshot", oids, vals)

    def _merge_locked(self, inputs: List[DiskComponent]):
        t0 = time.perf_counter()
        run = DiskLayer.concat([c.run for c in inputs], self.config)
        merged = self.disk.write(run)
        self.disk.replace(inputs, merged)
        self._merge_count += 1
        self._merge_seconds += time.perf_counter() - t0
        return merged

    def range_query(self, window: Rect) -> List[ObjectRecord]:
        with self._lock.read():
            cands: List[ObjectRecord] = []
            for _, recs in self._scan_components(window):
                cands.extend(recs)
            cands.extend(self.memory.range_search(window))
            pk_get = self.pk.get
            out = []
            for c in cands:
                e = pk_get(c.oid)
                if e is not None and e[0] == c.ts and not e[1]:
                    out.append(c)
            if cands:
                self.probes.add_and_get(len(cands))
            return out
