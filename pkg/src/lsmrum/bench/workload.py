"""Synthetic trace generation and the CSV trace format."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Union

import numpy as np

from lsmrum.core import Location, OpKind, Rect, WorkloadOp
from lsmrum.storage import DEFAULT_WORLD

KINDS = ("checkin", "moving", "pickup")

#: Query windows as a fraction of the world area, smallest to largest.
SELECTIVITY_LADDER = (0.0001, 0.0007, 0.0041, 0.0156, 0.0467, 0.1176)

#: Default window area for mixed runs, as a fraction of the world area.
MIXED_QUERY_AREA = 0.0001

TRACE_HEADER = ("op", "oid", "x", "y", "old_x", "old_y", "qx1", "qy1", "qx2", "qy2")


class TraceError(ValueError):
    """A trace file could not be parsed; ``line`` is 1-based."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def window_for_area(center: Location, fraction: float, world: Rect = DEFAULT_WORLD) -> Rect:
    """Window centered at ``center`` covering ``fraction`` of the world area.

    The window keeps the world's aspect ratio and is shifted (not shrunk)
    to stay inside the world box.
    """
    if not 0 < fraction <= 1:
        raise ValueError("window fraction must be in (0, 1]")
    ww = world.max.x - world.min.x
    wh = world.max.y - world.min.y
    s = math.sqrt(fraction)
    w, h = ww * s, wh * s
    x0 = _clamp(center.x - w / 2, world.min.x, world.max.x - w)
    y0 = _clamp(center.y - h / 2, world.min.y, world.max.y - h)
    return Rect(Location(x0, y0), Location(x0 + w, y0 + h))


class _PositionModel:
    def __init__(self, kind: str, rng: np.random.Generator, world: Rect) -> None:
        self.kind = kind
        self.rng = rng
        self.world = world
        self.w = world.max.x - world.min.x
        self.h = world.max.y - world.min.y
        if kind == "checkin":
            # venues cluster around a few hotspots
            n = 32
            self.hot_x = world.min.x + rng.random(n) * self.w
            self.hot_y = world.min.y + rng.random(n) * self.h
            self.hot_p = rng.dirichlet(np.full(n, 0.7))
            # same draw as rng.choice(n, p=hot_p), without its per-call checks
            cdf = self.hot_p.cumsum()
            self.hot_cdf = cdf / cdf[-1]
            self.spread = 0.01 * self.w

    def fresh(self) -> Location:
        rng, world = self.rng, self.world
        if self.kind == "checkin":
            i = int(self.hot_cdf.searchsorted(rng.random(), side="right"))
            x = _clamp(self.hot_x[i] + rng.normal(0, self.spread), world.min.x, world.max.x)
            y = _clamp(self.hot_y[i] + rng.normal(0, self.spread), world.min.y, world.max.y)
            return Location(float(x), float(y))
        return Location(float(world.min.x + rng.random() * self.w), float(world.min.y + rng.random() * self.h))

    def step(self, prev: Location, sigma: float) -> Location:
        if self.kind != "moving":
            return self.fresh()
        rng, world = self.rng, self.world
        x = _clamp(prev.x + rng.normal(0, sigma * self.w), world.min.x, world.max.x)
        y = _clamp(prev.y + rng.normal(0, sigma * self.h), world.min.y, world.max.y)
        return Location(float(x), float(y))


def gen_workload(
    kind: str,
    n_ops: int,
    n_oids: int,
    seed: int = 0,
    delete_fraction: float = 0.0,
    query_fraction: float = 0.0,
    query_area: Union[float, Sequence[float]] = MIXED_QUERY_AREA,
    world: Rect = DEFAULT_WORLD,
    step_sigma: float = 1e-4,
) -> List[WorkloadOp]:
    """Generate ``n_ops`` trace events over a pool of ``n_oids`` live objects.

    Each step picks a pool slot at random. An empty slot gets an insert;
    otherwise the object is updated, or deleted with ``delete_fraction``
    probability. A deleted object's slot is refilled later by a brand-new
    oid, so ids are never reused. Queries are centered on the location of
    a random live object. ``query_area`` is a fixed window fraction or a
    sequence (such as the selectivity ladder) to cycle through.
    ``step_sigma`` is the per-update displacement of the moving kind, as a
    fraction of the world extent.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown workload kind {kind!r}; expected one of {KINDS}")
    if n_oids < 1 or n_ops < 1:
        raise ValueError("n_ops and n_oids must be positive")
    if n_oids > n_ops:
        raise ValueError("n_oids must not exceed n_ops")
    if not (0 <= delete_fraction < 1 and 0 <= query_fraction < 1):
        raise ValueError("fractions must lie in [0, 1)")
    areas = [query_area] if isinstance(query_area, (int, float)) else list(query_area)
    if not areas:
        raise ValueError("query_area must not be empty")

    rng = np.random.default_rng(seed)
    model = _PositionModel(kind, rng, world)
    slots: List[Optional[int]] = [None] * n_oids
    where: dict = {}
    live: List[int] = []  # slot indices holding a live object
    live_pos = [-1] * n_oids
    next_oid = 0
    ops: List[WorkloadOp] = []
    n_queries = 0

    for _ in range(n_ops):
        u = rng.random()
        if live and u < query_fraction:
            slot = live[int(rng.integers(len(live)))]
            frac = areas[n_queries % len(areas)]
            n_queries += 1
            ops.append(WorkloadOp(OpKind.QUERY, window=window_for_area(where[slots[slot]], frac, world)))
            continue
        slot = int(rng.integers(n_oids))
        oid = slots[slot]
        if oid is None:
            oid = next_oid
            next_oid += 1
            slots[slot] = oid
            loc = model.fresh()
            where[oid] = loc
            live_pos[slot] = len(live)
            live.append(slot)
            ops.append(WorkloadOp(OpKind.INSERT, oid, loc))
            continue
        old = where[oid]
        if rng.random() < delete_fraction:
            del where[oid]
            slots[slot] = None
            # swap-remove from the live list
            i = live_pos[slot]
            last = live[-1]
            live[i] = last
            live_pos[last] = i
            live.pop()
            live_pos[slot] = -1
            ops.append(WorkloadOp(OpKind.DELETE, oid, old_loc=old))
        else:
            loc = model.step(old, step_sigma)
            where[oid] = loc
            ops.append(WorkloadOp(OpKind.UPDATE, oid, loc, old_loc=old))
    return ops


# -- CSV trace I/O -------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trace(ops: Iterable[WorkloadOp], out: Union[str, Path, TextIO]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_trace(ops, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for op in ops:
        k = op.kind
        if k is OpKind.QUERY:
            (x1, y1), (x2, y2) = op.window
            w.writerow(("Q", "", "", "", "", "", _fmt(x1), _fmt(y1), _fmt(x2), _fmt(y2)))
            continue
        loc = ("", "") if op.loc is None else (_fmt(op.loc.x), _fmt(op.loc.y))
        old = ("", "") if op.old_loc is None else (_fmt(op.old_loc.x), _fmt(op.old_loc.y))
        w.writerow((k.value, op.oid, *loc, *old, "", "", "", ""))


def trace_text(ops: Iterable[WorkloadOp]) -> str:
    buf = io.StringIO()
    write_trace(ops, buf)
    return buf.getvalue()


def _num(row: List[str], i: int, line: int) -> float:
    try:
        v = float(row[i])
    except ValueError:
        raise TraceError(line, f"column {TRACE_HEADER[i]} is not a number: {row[i]!r}") from None
    if not math.isfinite(v):
        raise TraceError(line, f"column {TRACE_HEADER[i]} is not finite")
    return v


def _opt_loc(row: List[str], i: int, line: int) -> Optional[Location]:
    a, b = row[i], row[i + 1]
    if not a and not b:
        return None
    if not a or not b:
        raise TraceError(line, f"{TRACE_HEADER[i]}/{TRACE_HEADER[i + 1]} must both be set or both empty")
    return Location(_num(row, i, line), _num(row, i + 1, line))


def _require_empty(row: List[str], cols: range, line: int, what: str) -> None:
    for i in cols:
        if row[i]:
            raise TraceError(line, f"{what} must not set column {TRACE_HEADER[i]}")


def read_trace(src: Union[str, Path, TextIO]) -> List[WorkloadOp]:
    """Parse a trace, reporting the first malformed line by number."""
    if isinstance(src, (str, Path)):
        with open(src, newline="") as fh:
            return read_trace(fh)
    reader = csv.reader(src)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceError(1, "missing header row") from None
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise TraceError(1, f"header must be {','.join(TRACE_HEADER)}")
    ops: List[WorkloadOp] = []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(TRACE_HEADER):
            raise TraceError(line, f"expected {len(TRACE_HEADER)} columns, got {len(row)}")
        row = [c.strip() for c in row]
        code = row[0].upper()
        if code == "Q":
            _require_empty(row, range(1, 6), line, "a query")
            x1, y1, x2, y2 = (_num(row, i, line) for i in range(6, 10))
            ops.append(WorkloadOp(OpKind.QUERY, window=Rect.of(x1, y1, x2, y2)))
            continue
        if code not in ("I", "D", "U"):
            raise TraceError(line, f"unknown op {row[0]!r}")
        _require_empty(row, range(6, 10), line, f"op {code}")
        try:
            oid = int(row[1])
        except ValueError:
            raise TraceError(line, f"oid is not an integer: {row[1]!r}") from None
        if not 0 <= oid < 2**64:
            raise TraceError(line, "oid out of unsigned 64-bit range")
        loc = _opt_loc(row, 2, line)
        old = _opt_loc(row, 4, line)
        if code == "D":
            if loc is not None:
                raise TraceError(line, "a delete carries no new location")
            ops.append(WorkloadOp(OpKind.DELETE, oid, old_loc=old))
        else:
            if loc is None:
                raise TraceError(line, f"op {code} needs x and y")
            if code == "I" and old is not None:
                raise TraceError(line, "an insert carries no old location")
            kind = OpKind.INSERT if code == "I" else OpKind.UPDATE
            ops.append(WorkloadOp(kind, oid, loc, old_loc=old))
    return ops
