import hashlib
import random
import threading
from collections import Counter

import pytest

from lsmrum.bench.oracle import ReplayOracle, canonical
from lsmrum.bench.workload import gen_workload
from lsmrum.core import Location, ObjectRecord, OpKind, Rect
from lsmrum.engine import RECORD_BYTES_ESTIMATE, EngineConfig, EngineStats, LSMRumTree
from lsmrum import engine as engine_mod

from _support import expected_memo, last_op_ts, running_example_ops, scan_all

L = Location
FLAG_SETS = ["", "F", "M", "FM", "B", "V", "BV", "FMBV"]


def cfg(records=2, **kw):
    return EngineConfig(memory_budget_bytes=records * RECORD_BYTES_ESTIMATE, **kw)


def apply(eng, op):
    if op.kind is OpKind.INSERT:
        return eng.ingest_insert(op.oid, op.loc)
    if op.kind is OpKind.DELETE:
        return eng.ingest_delete(op.oid)
    return eng.ingest_update(op.oid, op.loc)


def test_running_example(tmp_path):
    eng = LSMRumTree(cfg(2), tmp_path)
    stamps = [apply(eng, op) for op in running_example_ops()]
    t = dict(zip(("t1", "t2", "t3", "t4", "t5", "t7", "t8"), stamps))
    assert eng.memo.snapshot() == sorted([(1, t["t3"], 1), (3, t["t7"], 1), (2, t["t8"], 1)])
    got = eng.range_query(Rect.of(30, 30, 40, 40))
    assert canonical(got) == canonical([ObjectRecord(L(40.0, 40.0), 4, t["t5"]), ObjectRecord(L(30.0, 30.0), 2, t["t8"])])


def test_insert_leaves_memo_untouched():
    with LSMRumTree(cfg(8)) as eng:
        ts = eng.ingest_insert(1, L(10, 10))
        assert ts == 1
        assert list(eng.memory.records()) == [ObjectRecord(L(10, 10), 1, 1)]
        assert eng.memo.size() == 0


def test_insert_into_full_memory_flushes_first():
    with LSMRumTree(cfg(3)) as eng:
        for i in range(3):
            eng.ingest_insert(i, L(i, i))
        assert eng.stats().flush_count == 0
        ts = eng.ingest_insert(9, L(9, 9))
        assert eng.stats().flush_count == 1
        assert list(eng.memory.records()) == [ObjectRecord(L(9, 9), 9, ts)]
        assert eng.stats().component_records == [3]


def test_duplicate_inserts_both_visible():
    with LSMRumTree(cfg(8)) as eng:
        eng.ingest_insert(1, L(1, 1))
        eng.ingest_insert(1, L(2, 2))
        assert len(eng.range_query(Rect.of(0, 0, 5, 5))) == 2


def test_delete_only_touches_memo():
    with LSMRumTree(cfg(8)) as eng:
        eng.ingest_insert(1, L(1, 1))
        before = list(eng.memory.records())
        t3 = eng.ingest_delete(1)
        assert list(eng.memory.records()) == before
        assert eng.memo.lookup(1) == (t3, 1)
        t4 = eng.ingest_delete(1)
        assert eng.memo.lookup(1) == (t4, 2)


def test_delete_never_flushes():
    with LSMRumTree(cfg(1)) as eng:
        eng.ingest_insert(1, L(1, 1))
        for _ in range(10):
            eng.ingest_delete(1)
        assert eng.stats().flush_count == 0


def test_delete_of_unknown_oid_suppresses_nothing():
    with LSMRumTree(cfg(8)) as eng:
        eng.ingest_insert(1, L(1, 1))
        eng.ingest_delete(77)
        assert eng.memo.lookup(77) == (2, 1)
        assert len(eng.range_query(Rect.of(0, 0, 5, 5))) == 1


def test_consecutive_updates():
    with LSMRumTree(cfg(8)) as eng:
        eng.ingest_insert(2, L(20, 20))
        t8 = eng.ingest_update(2, L(30, 30))
        assert eng.memo.lookup(2) == (t8, 1)
        t9 = eng.ingest_update(2, L(31, 31))
        assert eng.memo.lookup(2) == (t9, 2)
        assert sorted(r.ts for r in eng.memory.records() if r.oid == 2) == [1, t8, t9]
        assert eng.range_query(Rect.of(0, 0, 50, 50)) == [ObjectRecord(L(31, 31), 2, t9)]


def test_update_of_unknown_oid_is_insert_plus_phantom():
    with LSMRumTree(cfg(8)) as eng:
        ts = eng.ingest_update(5, L(1, 1))
        assert eng.memo.lookup(5) == (ts, 1)
        assert eng.range_query(Rect.of(0, 0, 2, 2)) == [ObjectRecord(L(1, 1), 5, ts)]


def _three_in_memory(flags):
    eng = LSMRumTree(cfg(16, cleaning_flags=flags))
    eng.ingest_insert(1, L(1, 1))
    eng.ingest_update(1, L(2, 2))
    eng.ingest_update(1, L(3, 3))
    return eng


def test_flush_with_f_drops_obsolete():
    with _three_in_memory("F") as eng:
        comp = eng.flush()
        assert comp.record_count == 1
        assert comp.run.records() == [ObjectRecord(L(3, 3), 1, 3)]
        assert eng.memo.lookup(1) is None
        assert eng.stats().clean_removals["F"] == 2


def test_flush_without_f_keeps_all():
    with _three_in_memory("") as eng:
        comp = eng.flush()
        assert comp.record_count == 3
        assert eng.memo.lookup(1) == (3, 2)


def test_flush_empty_memory_is_noop():
    with LSMRumTree() as eng:
        assert eng.flush() is None
        assert eng.stats().flush_count == 0


def test_hundred_objects_flush_holds_hundred():
    rng = random.Random(1)
    with LSMRumTree(EngineConfig(cleaning_flags="F")) as eng:
        for oid in range(100):
            eng.ingest_insert(oid, L(rng.uniform(0, 10), rng.uniform(0, 10)))
        for _ in range(5000):
            eng.ingest_update(rng.randrange(100), L(rng.uniform(0, 10), rng.uniform(0, 10)))
        comp = eng.flush()
        assert comp.record_count == 100
        assert sorted(comp.run.oids.tolist()) == list(range(100))


def _n_flushes(eng, n, start=0):
    for i in range(n):
        eng.ingest_insert(start + i, L(i, i))
        eng.flush()


def test_prefix_merge_five_into_one():
    with LSMRumTree(EngineConfig(merge_threshold=5)) as eng:
        _n_flushes(eng, 4)
        assert eng.stats().component_count == 4
        assert eng.maybe_merge() is None
        _n_flushes(eng, 1, start=10)
        st = eng.stats()
        assert (st.component_count, st.merge_count, st.component_records) == (1, 1, [5])


def test_merge_replaces_files(tmp_path):
    with LSMRumTree(EngineConfig(merge_threshold=3), tmp_path) as eng:
        _n_flushes(eng, 3)
        files = sorted(p.name for p in tmp_path.glob("*.lrum"))
        assert files == [f"c{eng.disk.components[0].id:08d}.lrum"]


def test_prefix_respects_max_mergeable():
    # old big component stays out of the merge; the small newer ones merge
    with LSMRumTree(EngineConfig(merge_threshold=3, max_mergeable_bytes=500)) as eng:
        for i in range(12):
            eng.ingest_insert(i, L(i, i))
        eng.flush()
        _n_flushes(eng, 3, start=100)
        assert eng.stats().component_records == [12, 3]


def test_empty_memo_after_full_clean_and_merge():
    ops = gen_workload("moving", 4000, 40, seed=7, delete_fraction=0.05, step_sigma=0.01)
    with LSMRumTree(cfg(50, cleaning_flags="FMBV")) as eng:
        for op in ops:
            apply(eng, op)
        assert eng.memo.size() > 0
        eng.clean_memory()
        eng.flush()
        eng.compact_all()
        assert eng.stats().component_count == 1
        assert eng.memo.size() == 0


def test_merge_of_all_obsolete_yields_empty_component():
    with LSMRumTree(cfg(16, cleaning_flags="M", merge_threshold=2)) as eng:
        eng.ingest_insert(1, L(1, 1))
        eng.flush()
        eng.ingest_insert(2, L(2, 2))
        eng.flush()
        eng.ingest_delete(1)
        eng.ingest_delete(2)
        # the deletes count one obsolete copy each, so M drops both
        merged = eng.compact_all()
        assert merged.record_count == 0
        assert eng.stats().component_records == [0]
        assert eng.range_query(Rect.of(0, 0, 5, 5)) == []
        assert eng.memo.size() == 0


def test_fresh_engine_stats_are_zero():
    with LSMRumTree() as eng:
        assert eng.stats() == EngineStats()
        assert eng.range_query(Rect.of(-1, -1, 1, 1)) == []


def _replay(flags, ops, records, capacity=8, threshold=3):
    eng = LSMRumTree(cfg(records, cleaning_flags=flags, node_capacity=capacity, merge_threshold=threshold,
                         buffered_threshold=2, vacuum_threshold=3))
    oracle = ReplayOracle()
    stamps = []
    for op in ops:
        if op.kind is OpKind.QUERY:
            assert canonical(eng.range_query(op.window)) == canonical(oracle.query(op.window))
            continue
        ts = apply(eng, op)
        assert ts == oracle.apply(op)
        stamps.append(ts)
    return eng, oracle, stamps


@pytest.mark.parametrize("flags", FLAG_SETS)
def test_random_workload_matches_oracle_and_memo_audit(flags):
    for seed in range(3):
        ops = gen_workload("moving" if seed % 2 else "pickup", 4000, 60, seed=seed,
                           delete_fraction=0.05, query_fraction=0.03, query_area=0.01, step_sigma=0.02)
        eng, oracle, stamps = _replay(flags, ops, records=150)
        writes = [op for op in ops if op.kind is not OpKind.QUERY]
        latest, latest_du = last_op_ts(writes, stamps)
        assert eng.memo.snapshot() == expected_memo(scan_all(eng), latest, latest_du)
        rng = random.Random(seed)
        for _ in range(30):
            x, y = rng.uniform(-180, 170), rng.uniform(-90, 80)
            w = Rect.of(x, y, x + rng.uniform(0, 60), y + rng.uniform(0, 30))
            assert canonical(eng.range_query(w)) == canonical(oracle.query(w))
        eng.close()


def test_timestamp_containment_and_f_freshness():
    ops = gen_workload("moving", 6000, 50, seed=4, delete_fraction=0.02, step_sigma=0.01)
    eng = LSMRumTree(cfg(100, cleaning_flags="F", merge_threshold=100))
    seen = 0
    for op in ops:
        before = eng.stats().flush_count
        if op.kind is OpKind.UPDATE or op.kind is OpKind.INSERT:
            # snapshot the memo just before a flush that this op will trigger
            if eng.memory.size and (eng.memory.size + 1) * RECORD_BYTES_ESTIMATE > eng.config.memory_budget_bytes:
                latest = {oid: ts for oid, ts, _ in eng.memo.snapshot()}
                pending = list(eng.memory.records())
        apply(eng, op)
        if eng.stats().flush_count != before:
            comp = eng.disk.components[-1]
            for r in comp.run.records():
                assert r.ts >= latest.get(r.oid, 0)
            assert comp.record_count == len([r for r in pending if r.ts >= latest.get(r.oid, 0)])
            seen += 1
        mem_ts = [r.ts for r in eng.memory.records()]
        if mem_ts:
            for c in eng.disk.components:
                if c.record_count:
                    assert c.max_ts < min(mem_ts)
    assert seen > 10
    eng.close()


def test_component_files_are_immutable(tmp_path):
    ops = gen_workload("checkin", 3000, 100, seed=2, delete_fraction=0.1)
    eng = LSMRumTree(cfg(60, cleaning_flags="FMBV", merge_threshold=3), tmp_path)
    digests = {}
    for op in ops:
        apply(eng, op)
        for c in eng.disk.components:
            h = hashlib.sha256(c.path.read_bytes()).hexdigest()
            assert digests.setdefault(c.path, h) == h
    assert len(digests) > 10
    assert eng.stats().merge_count > 0
    eng.close()


def test_failed_flush_leaves_memory_intact(monkeypatch):
    with _three_in_memory("F") as eng:
        before = sorted(eng.memory.records())
        memo_before = eng.memo.snapshot()

        def boom(path, data):
            raise OSError("disk full")

        monkeypatch.setattr(engine_mod, "atomic_write", boom)
        with pytest.raises(OSError):
            eng.flush()
        assert sorted(eng.memory.records()) == before
        assert eng.memo.snapshot() == memo_before
        assert eng.stats().component_count == 0
        monkeypatch.undo()
        assert eng.flush().record_count == 1


def test_failed_merge_keeps_inputs(monkeypatch):
    with LSMRumTree(EngineConfig(merge_threshold=10, cleaning_flags="M")) as eng:
        _n_flushes(eng, 3)
        eng.ingest_delete(0)
        monkeypatch.setattr(engine_mod, "atomic_write", lambda p, d: (_ for _ in ()).throw(OSError("io")))
        with pytest.raises(OSError):
            eng.compact_all()
        assert eng.stats().component_count == 3
        assert eng.memo.lookup(0) == (4, 1)


@pytest.mark.parametrize(
    "kw",
    [dict(merge_threshold=0), dict(buffered_threshold=0), dict(vacuum_threshold=0), dict(memory_budget_bytes=1),
     dict(node_capacity=1), dict(cleaning_flags="FX"), dict(curve="peano")],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EngineConfig(**kw)


def test_config_replace_rescales_max_mergeable():
    c = EngineConfig().replace(memory_budget_bytes=4000)
    assert c.max_mergeable_bytes == 64000
    assert c.replace(cleaning_flags="BV").cleaning_flags == frozenset("BV")


def test_threaded_ingest_matches_sequential():
    ops = [op for op in gen_workload("pickup", 8000, 200, seed=9, delete_fraction=0.05) if op.kind is not OpKind.QUERY]
    parts = [[op for op in ops if op.oid % 4 == t] for t in range(4)]
    eng = LSMRumTree(cfg(300, cleaning_flags="FMBV", merge_threshold=3))
    threads = [threading.Thread(target=lambda p=p: [apply(eng, op) for op in p]) for p in parts]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    final = {}
    for op in ops:
        if op.kind is OpKind.DELETE:
            final.pop(op.oid, None)
        else:
            final[op.oid] = op.loc
    got = eng.range_query(Rect.of(-180, -90, 180, 90))
    assert sorted((r.oid, r.loc) for r in got) == sorted(final.items())
    # memo audit with per-oid latest timestamps read back from the index itself
    stamps = Counter()
    latest = {}
    for r in scan_all(eng):
        latest[r.oid] = max(latest.get(r.oid, 0), r.ts)
    for oid, ts, cnt in eng.memo.snapshot():
        latest[oid] = max(latest.get(oid, 0), ts)
    for r in scan_all(eng):
        if r.ts < latest[r.oid]:
            stamps[r.oid] += 1
    assert {oid: cnt for oid, _, cnt in eng.memo.snapshot()} == {k: v for k, v in stamps.items() if v}
    eng.close()
