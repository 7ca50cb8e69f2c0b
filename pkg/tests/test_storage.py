import hashlib
import random
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lsmrum.core import Location, ObjectRecord, Rect
from lsmrum.storage import (
    DEFAULT_WORLD,
    GRID,
    HEADER_SIZE,
    MAX_INTERVALS,
    RECORD_SIZE,
    ComponentCorruptError,
    ComponentFormatError,
    Curve,
    RecordRun,
    StorageError,
    curve_key,
    curve_keys,
    decode_component,
    hilbert_index,
    load_run,
    read_component,
    read_key_file,
    window_intervals,
    write_component,
    write_key_file,
    zorder_index,
)

GOLDEN_SHA = "f40b2ac9a6c3f3606eebf7510eb90213770aba051db87abea153e400a457f038"


def R(x, y, oid, ts):
    return ObjectRecord(Location(float(x), float(y)), oid, ts)


def _sorted(records, curve=Curve.HILBERT):
    keys = curve_keys([r.loc.x for r in records], [r.loc.y for r in records], curve)
    order = np.lexsort(([r.ts for r in records], [r.oid for r in records], keys))
    return [records[i] for i in order]


# -- curves ---------------------------------------------------------------------------


def test_zorder_min_corner_is_zero():
    assert curve_key(DEFAULT_WORLD.min, Curve.ZORDER) == 0
    assert curve_key(DEFAULT_WORLD.min, Curve.HILBERT) == 0


def _interleave(x, y):
    k = 0
    for b in range(16):
        k |= ((x >> b) & 1) << (2 * b)
        k |= ((y >> b) & 1) << (2 * b + 1)
    return k


def test_zorder_matches_bit_interleaving():
    rng = random.Random(3)
    pts = [(rng.randrange(GRID), rng.randrange(GRID)) for _ in range(1000)]
    got = zorder_index([p[0] for p in pts], [p[1] for p in pts]).tolist()
    assert got == [_interleave(x, y) for x, y in pts]


def test_hilbert_order_one():
    # visiting order of the 2x2 curve: (0,0) (0,1) (1,1) (1,0)
    assert hilbert_index([0, 0, 1, 1], [0, 1, 1, 0], order=1).tolist() == [0, 1, 2, 3]


@pytest.mark.parametrize("order", [2, 3, 5])
def test_hilbert_is_bijective_and_adjacent(order):
    n = 1 << order
    xs, ys = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    d = hilbert_index(xs.ravel(), ys.ravel(), order=order)
    assert sorted(d.tolist()) == list(range(n * n))
    inv = np.empty((n * n, 2), dtype=np.int64)
    inv[d] = np.stack([xs.ravel(), ys.ravel()], axis=1)
    steps = np.abs(np.diff(inv, axis=0)).sum(axis=1)
    assert np.all(steps == 1)


@pytest.mark.parametrize("curve", list(Curve))
def test_window_cover_is_conservative_and_bounded(curve):
    rng = random.Random(int(curve) + 11)
    pts = [(rng.uniform(-180, 180), rng.uniform(-90, 90)) for _ in range(3000)]
    keys = curve_keys([p[0] for p in pts], [p[1] for p in pts], curve).tolist()
    for _ in range(200):
        w = rng.choice([0.5, 5, 40, 200])
        x, y = rng.uniform(-190, 170), rng.uniform(-95, 80)
        win = Rect.of(x, y, x + w, y + w / 2)
        cover = window_intervals(win, curve)
        assert 1 <= len(cover) <= MAX_INTERVALS
        assert all(lo <= hi for lo, hi in cover)
        assert all(a[1] < b[0] for a, b in zip(cover, cover[1:]))
        for (px, py), k in zip(pts, keys):
            if win.contains_point(Location(px, py)):
                assert any(lo <= k <= hi for lo, hi in cover)


def test_window_outside_box_clamps_to_border():
    win = Rect.of(500, 500, 600, 600)
    k = curve_key(Location(180.0, 90.0))
    assert any(lo <= k <= hi for lo, hi in window_intervals(win))


# -- component files -------------------------------------------------------------------


def test_round_trip_small(tmp_path):
    recs = _sorted([R(10, 10, 1, 1), R(20, 20, 2, 2), R(30, 30, 3, 4)])
    header = write_component(tmp_path / "c", recs)
    assert (header.record_count, header.min_ts, header.max_ts) == (3, 1, 4)
    assert read_component(tmp_path / "c") == recs


def test_golden_bytes(tmp_path):
    recs = _sorted([R(10, 10, 1, 1), R(20, 20, 2, 2), R(30, 30, 3, 4)])
    write_component(tmp_path / "c", recs)
    data = (tmp_path / "c").read_bytes()
    assert len(data) == HEADER_SIZE + 3 * RECORD_SIZE + 4 == 144
    assert hashlib.sha256(data).hexdigest() == GOLDEN_SHA

    # independent construction of the same bytes
    head = b"LRUM" + struct.pack("<HQQQB", 1, 3, 1, 4, 0) + bytes(13)
    body = b"".join(struct.pack("<QQdd", r.oid, r.ts, r.loc.x, r.loc.y) for r in recs)
    payload = head + body
    assert data == payload + struct.pack("<I", zlib.crc32(payload))


def test_round_trip_large(tmp_path):
    rng = np.random.default_rng(5)
    n = 100_000
    run = RecordRun.sorted_from(
        np.arange(n), rng.integers(1, 10**12, n), rng.uniform(-180, 180, n), rng.uniform(-90, 90, n),
        Curve.ZORDER, DEFAULT_WORLD,
    )
    (tmp_path / "c").write_bytes(run.encode())
    header, back = load_run(tmp_path / "c")
    assert header.record_count == n and header.curve is Curve.ZORDER
    for col in ("keys", "oids", "tss", "xs", "ys"):
        assert np.array_equal(getattr(back, col), getattr(run, col))


def test_empty_component(tmp_path):
    header = write_component(tmp_path / "c", [])
    assert header.record_count == 0
    assert read_component(tmp_path / "c") == []


def test_truncated_file_is_format_error(tmp_path):
    write_component(tmp_path / "c", _sorted([R(1, 1, 1, 1), R(2, 2, 2, 2)]))
    data = (tmp_path / "c").read_bytes()
    for cut in (0, 10, HEADER_SIZE, len(data) - 1):
        with pytest.raises(ComponentFormatError):
            decode_component(data[:cut])


def test_every_single_byte_flip_is_detected(tmp_path):
    write_component(tmp_path / "c", _sorted([R(10, 10, 1, 1), R(20, 20, 2, 2), R(30, 30, 3, 4)]))
    data = (tmp_path / "c").read_bytes()
    for i in range(len(data)):
        bad = bytearray(data)
        bad[i] ^= 0x5A
        with pytest.raises(StorageError):
            decode_component(bytes(bad))


def test_bad_magic_and_version(tmp_path):
    write_component(tmp_path / "c", [])
    data = bytearray((tmp_path / "c").read_bytes())
    data[0:4] = b"XXXX"
    with pytest.raises(ComponentFormatError):
        decode_component(bytes(data))


def test_write_rejects_unsorted(tmp_path):
    recs = _sorted([R(10, 10, 1, 1), R(-100, 50, 2, 2), R(120, -60, 3, 3)])
    with pytest.raises(ValueError):
        write_component(tmp_path / "c", recs[::-1])
    assert not (tmp_path / "c").exists()


@given(st.lists(st.tuples(st.floats(-180, 180), st.floats(-90, 90)), max_size=300), st.sampled_from(list(Curve)),
       st.tuples(st.floats(-200, 200), st.floats(-100, 100), st.floats(0, 150), st.floats(0, 90)))
def test_pruned_scan_equals_full_scan(pts, curve, q):
    run = RecordRun.sorted_from(
        range(len(pts)), [1] * len(pts), [p[0] for p in pts], [p[1] for p in pts], curve, DEFAULT_WORLD
    )
    win = Rect.of(q[0], q[1], q[0] + q[2], q[1] + q[3])
    got, scanned = run.prune_scan(win)
    want = run.full_scan(win)
    assert sorted(got) == sorted(want)
    assert len(want) <= scanned <= len(run)


# -- key files -------------------------------------------------------------------------


def test_key_file_round_trip(tmp_path):
    write_key_file(tmp_path / "k", [5, 1, 3])
    assert read_key_file(tmp_path / "k") == ([1, 3, 5], None)
    write_key_file(tmp_path / "kv", [5, 1, 3], [50, 10, 2**63 + 30])
    assert read_key_file(tmp_path / "kv") == ([1, 3, 5], [10, 2**63 + 30, 50])


def test_key_file_corruption(tmp_path):
    write_key_file(tmp_path / "k", [1, 2, 3])
    data = bytearray((tmp_path / "k").read_bytes())
    data[20] ^= 1
    (tmp_path / "k").write_bytes(bytes(data))
    with pytest.raises(ComponentCorruptError):
        read_key_file(tmp_path / "k")
    (tmp_path / "k").write_bytes(b"LR")
    with pytest.raises(ComponentFormatError):
        read_key_file(tmp_path / "k")
