"""Curve keys and the on-disk component format.

Component file layout (little-endian)::

    magic     4s   b"LRUM"
    version   u16
    count     u64
    min_ts    u64
    max_ts    u64
    curve     u8   (0 = Hilbert, 1 = Z-order)
    reserved  13x
    records   count * (oid u64, ts u64, x f64, y f64)
    crc32     u32  over every preceding byte

Records are sorted ascending by curve key. No tree directory is stored; a
component is searched by mapping the query window onto curve-key intervals
and binary-searching the sorted keys.
"""

from __future__ import annotations

import enum
import functools
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from lsmrum.core import Location, ObjectRecord, Rect

MAGIC = b"LRUM"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHQQQB13x")
HEADER_SIZE = HEADER.size  # 44
RECORD_DTYPE = np.dtype([("oid", "<u8"), ("ts", "<u8"), ("x", "<f8"), ("y", "<f8")])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 32
CRC_SIZE = 4

CURVE_ORDER = 16
GRID = 1 << CURVE_ORDER
MAX_INTERVALS = 64

DEFAULT_WORLD = Rect(Location(-180.0, -90.0), Location(180.0, 90.0))


class Curve(enum.IntEnum):
    HILBERT = 0
    ZORDER = 1

    @classmethod
    def parse(cls, value) -> "Curve":
        if isinstance(value, Curve):
            return value
        name = str(value).strip().lower().replace("-", "").replace("_", "")
        if name == "hilbert":
            return cls.HILBERT
        if name in ("zorder", "z", "morton"):
            return cls.ZORDER
        raise ValueError(f"unknown curve {value!r}")


class StorageError(Exception):
    pass


class ComponentFormatError(StorageError):
    pass


class ComponentCorruptError(StorageError):
    pass


# -- curve keys -----------------------------------------------------------------


def quantize(xs, ys, world: Rect = DEFAULT_WORLD) -> Tuple[np.ndarray, np.ndarray]:
    """Map coordinates onto the 2^16 x 2^16 grid, clamping outside the box."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    (x0, y0), (x1, y1) = world
    fx = (xs - x0) / (x1 - x0) * GRID
    fy = (ys - y0) / (y1 - y0) * GRID
    ix = np.clip(np.floor(fx), 0, GRID - 1).astype(np.int64)
    iy = np.clip(np.floor(fy), 0, GRID - 1).astype(np.int64)
    return ix, iy


def _part1by1(n: np.ndarray) -> np.ndarray:
    n = n & 0x0000FFFF
    n = (n | (n << 8)) & 0x00FF00FF
    n = (n | (n << 4)) & 0x0F0F0F0F
    n = (n | (n << 2)) & 0x33333333
    n = (n | (n << 1)) & 0x55555555
    return n


def zorder_index(ix, iy) -> np.ndarray:
    """Morton key: x bits on even positions, y bits on odd positions."""
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    return _part1by1(ix) | (_part1by1(iy) << 1)


def hilbert_index(ix, iy, order: int = CURVE_ORDER) -> np.ndarray:
    """Distance along the Hilbert curve filling a 2^order grid."""
    x = np.array(ix, dtype=np.int64, copy=True)
    y = np.array(iy, dtype=np.int64, copy=True)
    n = 1 << order
    d = np.zeros_like(x)
    s = n >> 1
    while s > 0:
        rx = (x & s) > 0
        ry = (y & s) > 0
        d += s * s * ((3 * rx.astype(np.int64)) ^ ry.astype(np.int64))
        # rotate the quadrant so the sub-curve has canonical orientation
        flip = (~ry) & rx
        x = np.where(flip, n - 1 - x, x)
        y = np.where(flip, n - 1 - y, y)
        swap = ~ry
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        s >>= 1
    return d


def cell_keys(ix, iy, curve: Curve) -> np.ndarray:
    if curve is Curve.HILBERT:
        return hilbert_index(ix, iy)
    return zorder_index(ix, iy)


def curve_keys(xs, ys, curve: Curve = Curve.HILBERT, world: Rect = DEFAULT_WORLD) -> np.ndarray:
    ix, iy = quantize(xs, ys, world)
    return cell_keys(ix, iy, Curve(curve)).astype(np.uint64)


def curve_key(loc: Location, curve: Curve = Curve.HILBERT, world: Rect = DEFAULT_WORLD) -> int:
    return int(curve_keys([loc.x], [loc.y], curve, world)[0])


@functools.lru_cache(maxsize=4096)
def window_intervals(
    window: Rect,
    curve: Curve = Curve.HILBERT,
    world: Rect = DEFAULT_WORLD,
    max_intervals: int = MAX_INTERVALS,
) -> Tuple[Tuple[int, int], ...]:
    """Cover ``window`` with at most ``max_intervals`` inclusive key ranges.

    Quadtree cells of both curves occupy contiguous, aligned key ranges, so
    the window is decomposed breadth-first into cells; cells that are only
    partly covered when the budget runs out are kept whole. The cover is
    conservative: it may include keys outside the window, never the reverse.
    Covers are memoized because one window is probed against every component.
    """
    (qx0, qy0), (qx1, qy1) = window
    # out-of-box corners clamp onto border cells, exactly like stored points
    ix, iy = quantize([qx0, qx1], [qy0, qy1], world)
    cx0, cx1 = int(ix[0]), int(ix[1])
    cy0, cy1 = int(iy[0]), int(iy[1])

    full: List[Tuple[int, int, int]] = []
    partial: List[Tuple[int, int, int]] = [(0, 0, GRID)]
    while partial:
        expanded: List[Tuple[int, int, int]] = []
        new_full: List[Tuple[int, int, int]] = []
        for px, py, size in partial:
            half = size >> 1
            for sx, sy in ((px, py), (px + half, py), (px, py + half), (px + half, py + half)):
                ex, ey = sx + half - 1, sy + half - 1
                if ex < cx0 or sx > cx1 or ey < cy0 or sy > cy1:
                    continue
                if sx >= cx0 and ex <= cx1 and sy >= cy0 and ey <= cy1:
                    new_full.append((sx, sy, half))
                else:
                    expanded.append((sx, sy, half))
        if len(full) + len(new_full) + len(expanded) > max_intervals:
            break
        full.extend(new_full)
        partial = expanded
    cells = full + partial

    if not cells:
        return ()
    xs = np.array([c[0] for c in cells], dtype=np.int64)
    ys = np.array([c[1] for c in cells], dtype=np.int64)
    spans = np.array([c[2] * c[2] for c in cells], dtype=np.int64)
    keys = cell_keys(xs, ys, curve)
    lows = keys - (keys % spans)
    ranges = sorted(zip(lows.tolist(), (lows + spans - 1).tolist()))
    merged = [list(ranges[0])]
    for lo, hi in ranges[1:]:
        if lo <= merged[-1][1] + 1:
            if hi > merged[-1][1]:
                merged[-1][1] = hi
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


# -- component files --------------------------------------------------------------


def encode_component(
    oids: Sequence[int],
    tss: Sequence[int],
    xs: Sequence[float],
    ys: Sequence[float],
    curve: Curve = Curve.HILBERT,
) -> bytes:
    """Serialise records (already in curve order) into component file bytes."""
    n = len(oids)
    body = np.empty(n, dtype=RECORD_DTYPE)
    body["oid"] = np.asarray(oids, dtype=np.uint64)
    body["ts"] = np.asarray(tss, dtype=np.uint64)
    body["x"] = np.asarray(xs, dtype=np.float64)
    body["y"] = np.asarray(ys, dtype=np.float64)
    if n:
        min_ts = int(body["ts"].min())
        max_ts = int(body["ts"].max())
    else:
        min_ts = max_ts = 0
    head = HEADER.pack(MAGIC, FORMAT_VERSION, n, min_ts, max_ts, int(curve))
    payload = head + body.tobytes()
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


@dataclass(frozen=True)
class ComponentHeader:
    version: int
    record_count: int
    min_ts: int
    max_ts: int
    curve: Curve


def decode_component(data: bytes) -> Tuple[ComponentHeader, np.ndarray]:
    if len(data) < HEADER_SIZE + CRC_SIZE:
        raise ComponentFormatError(f"component too short ({len(data)} bytes)")
    magic, version, count, min_ts, max_ts, curve = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ComponentFormatError(f"bad magic {magic!r}")
    expected = HEADER_SIZE + count * RECORD_SIZE + CRC_SIZE
    if len(data) != expected:
        raise ComponentFormatError(
            f"component length {len(data)} does not match {count} records ({expected} bytes)"
        )
    (crc,) = struct.unpack_from("<I", data, len(data) - CRC_SIZE)
    if zlib.crc32(data[:-CRC_SIZE]) & 0xFFFFFFFF != crc:
        raise ComponentCorruptError("checksum mismatch")
    if version != FORMAT_VERSION:
        raise ComponentFormatError(f"unsupported format version {version}")
    try:
        curve = Curve(curve)
    except ValueError:
        raise ComponentFormatError(f"unknown curve id {curve}") from None
    body = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER_SIZE).copy()
    return ComponentHeader(version, count, min_ts, max_ts, curve), body


def atomic_write(path: Path, data: bytes) -> None:
    """Write to a temporary sibling, fsync-free, then rename into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_component(
    path: Path,
    records: Sequence[ObjectRecord],
    curve: Curve = Curve.HILBERT,
    world: Rect = DEFAULT_WORLD,
) -> ComponentHeader:
    """Write records, which must already be in curve-key order."""
    xs = [r.loc.x for r in records]
    ys = [r.loc.y for r in records]
    if len(records) > 1 and np.any(np.diff(curve_keys(xs, ys, curve, world).astype(np.int64)) < 0):
        raise ValueError("records are not in curve-key order")
    data = encode_component([r.oid for r in records], [r.ts for r in records], xs, ys, curve)
    atomic_write(path, data)
    header, _ = decode_component(data)
    return header


def read_component(path: Path) -> List[ObjectRecord]:
    """Read and verify a component file; returns its records in file order."""
    with open(path, "rb") as fh:
        data = fh.read()
    _, body = decode_component(data)
    return _records_from_columns(
        body["oid"].tolist(), body["ts"].tolist(), body["x"].tolist(), body["y"].tolist()
    )


def _records_from_columns(oids, tss, xs, ys) -> List[ObjectRecord]:
    return [ObjectRecord(Location(x, y), oid, ts) for oid, ts, x, y in zip(oids, tss, xs, ys)]


class RecordRun:
    """Column arrays of one immutable, curve-ordered run of records."""

    __slots__ = ("keys", "oids", "tss", "xs", "ys", "curve", "world")

    def __init__(self, keys, oids, tss, xs, ys, curve: Curve, world: Rect) -> None:
        self.keys = keys
        self.oids = oids
        self.tss = tss
        self.xs = xs
        self.ys = ys
        self.curve = curve
        self.world = world

    def __len__(self) -> int:
        return len(self.oids)

    @classmethod
    def empty(cls, curve: Curve, world: Rect) -> "RecordRun":
        u = np.empty(0, dtype=np.uint64)
        f = np.empty(0, dtype=np.float64)
        return cls(u, u, u, f, f, curve, world)

    @classmethod
    def from_body(cls, body: np.ndarray, curve: Curve, world: Rect) -> "RecordRun":
        xs = np.ascontiguousarray(body["x"])
        ys = np.ascontiguousarray(body["y"])
        keys = curve_keys(xs, ys, curve, world)
        return cls(
            keys,
            np.ascontiguousarray(body["oid"]),
            np.ascontiguousarray(body["ts"]),
            xs,
            ys,
            curve,
            world,
        )

    @classmethod
    def sorted_from(cls, oids, tss, xs, ys, curve: Curve, world: Rect) -> "RecordRun":
        """Build a run from unordered columns, sorting by (key, oid, ts)."""
        oids = np.asarray(oids, dtype=np.uint64)
        tss = np.asarray(tss, dtype=np.uint64)
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        keys = curve_keys(xs, ys, curve, world)
        order = np.lexsort((tss, oids, keys))
        return cls(keys[order], oids[order], tss[order], xs[order], ys[order], curve, world)

    def take(self, mask: np.ndarray) -> "RecordRun":
        return RecordRun(
            self.keys[mask], self.oids[mask], self.tss[mask], self.xs[mask], self.ys[mask], self.curve, self.world
        )

    def encode(self) -> bytes:
        return encode_component(self.oids, self.tss, self.xs, self.ys, self.curve)

    def records(self) -> List[ObjectRecord]:
        return _records_from_columns(self.oids.tolist(), self.tss.tolist(), self.xs.tolist(), self.ys.tolist())

    def prune_scan(
        self, window: Rect, intervals: Optional[Sequence[Tuple[int, int]]] = None
    ) -> Tuple[List[ObjectRecord], int]:
        """Records inside ``window`` plus the number of records examined.

        ``intervals`` may carry a precomputed key cover of the window so one
        query can reuse it across components sharing a curve and world box.
        """
        if not len(self.oids):
            return [], 0
        if intervals is None:
            intervals = window_intervals(window, self.curve, self.world)
        if not intervals:
            return [], 0
        bounds = np.array(intervals, dtype=np.uint64)
        starts = np.searchsorted(self.keys, bounds[:, 0], side="left")
        stops = np.searchsorted(self.keys, bounds[:, 1], side="right")
        lengths = stops - starts
        scanned = int(lengths.sum())
        if not scanned:
            return [], 0
        if len(starts) == 1:
            idx = np.arange(starts[0], stops[0])
        else:
            idx = np.concatenate([np.arange(a, b) for a, b in zip(starts.tolist(), stops.tolist()) if b > a])
        (qx0, qy0), (qx1, qy1) = window
        xs = self.xs[idx]
        ys = self.ys[idx]
        hit = (xs >= qx0) & (xs <= qx1) & (ys >= qy0) & (ys <= qy1)
        sel = idx[hit]
        if not len(sel):
            return [], scanned
        recs = _records_from_columns(
            self.oids[sel].tolist(), self.tss[sel].tolist(), self.xs[sel].tolist(), self.ys[sel].tolist()
        )
        return recs, scanned

    def full_scan(self, window: Rect) -> List[ObjectRecord]:
        (qx0, qy0), (qx1, qy1) = window
        hit = (self.xs >= qx0) & (self.xs <= qx1) & (self.ys >= qy0) & (self.ys <= qy1)
        sel = np.nonzero(hit)[0]
        return _records_from_columns(
            self.oids[sel].tolist(), self.tss[sel].tolist(), self.xs[sel].tolist(), self.ys[sel].tolist()
        )


def load_run(path: Path, world: Rect = DEFAULT_WORLD) -> Tuple[ComponentHeader, RecordRun]:
    with open(path, "rb") as fh:
        data = fh.read()
    header, body = decode_component(data)
    return header, RecordRun.from_body(body, header.curve, world)


# -- flat sorted key files (baseline side structures) --------------------------------

KEYS_MAGIC = b"LRKY"
_KEYS_HEADER = struct.Struct("<4sQB3x")


def write_key_file(path: Path, keys: Sequence[int], values: Optional[Sequence[int]] = None) -> None:
    """Persist sorted u64 keys (and optional u64 values) with a trailing CRC."""
    k = np.asarray(keys, dtype=np.uint64)
    order = np.argsort(k, kind="stable")
    cols = [k[order]]
    if values is not None:
        cols.append(np.asarray(values, dtype=np.uint64)[order])
    head = _KEYS_HEADER.pack(KEYS_MAGIC, len(k), len(cols) - 1)
    payload = head + b"".join(c.astype("<u8").tobytes() for c in cols)
    atomic_write(path, payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_key_file(path: Path) -> Tuple[List[int], Optional[List[int]]]:
    """Inverse of :func:`write_key_file`: sorted keys and their values (or None)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _KEYS_HEADER.size + CRC_SIZE:
        raise ComponentFormatError("key file too short")
    (crc,) = struct.unpack_from("<I", data, len(data) - CRC_SIZE)
    if zlib.crc32(data[:-CRC_SIZE]) & 0xFFFFFFFF != crc:
        raise ComponentCorruptError("key file checksum mismatch")
    magic, n, has_values = _KEYS_HEADER.unpack_from(data, 0)
    if magic != KEYS_MAGIC:
        raise ComponentFormatError("bad key file magic")
    if len(data) != _KEYS_HEADER.size + n * 8 * (1 + has_values) + CRC_SIZE:
        raise ComponentFormatError("key file length does not match its header")
    keys = np.frombuffer(data, dtype="<u8", count=n, offset=_KEYS_HEADER.size).tolist()
    values = None
    if has_values:
        values = np.frombuffer(data, dtype="<u8", count=n, offset=_KEYS_HEADER.size + 8 * n).tolist()
    return keys, values
