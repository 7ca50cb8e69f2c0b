"""Brute-force replay oracle: latest location per live object."""

from __future__ import annotations

from typing import Dict, List, Tuple

from lsmrum.core import Location, ObjectRecord, OpKind, Rect, WorkloadOp


class ReplayOracle:
    """Applies a trace sequentially with the same clock rule as the indexes.

    Inserts, deletes and updates each take the next timestamp; queries take
    none. So in a single-threaded replay the oracle's records carry exactly
    the timestamps every index assigns.
    """

    __slots__ = ("state", "clock")

    def __init__(self) -> None:
        self.state: Dict[int, Tuple[Location, int]] = {}
        self.clock = 0

    def apply(self, op: WorkloadOp) -> int:
        k = op.kind
        if k is OpKind.QUERY:
            return 0
        self.clock += 1
        if k is OpKind.DELETE:
            self.state.pop(op.oid, None)
        else:
            self.state[op.oid] = (op.loc, self.clock)
        return self.clock

    def query(self, window: Rect) -> List[ObjectRecord]:
        (x0, y0), (x1, y1) = window
        out = [
            ObjectRecord(loc, oid, ts)
            for oid, (loc, ts) in self.state.items()
            if x0 <= loc.x <= x1 and y0 <= loc.y <= y1
        ]
        out.sort(key=record_key)
        return out

    def live(self) -> Dict[int, Tuple[Location, int]]:
        return dict(self.state)


def record_key(r: ObjectRecord) -> tuple:
    return (r.oid, r.ts, r.loc.x, r.loc.y)


def canonical(records) -> List[tuple]:
    """Order-insensitive comparable form of a result list (duplicates kept)."""
    return sorted((r.oid, r.ts, float(r.loc.x), float(r.loc.y)) for r in records)


def diff(expected, actual) -> str:
    """Human-readable difference between two result lists."""
    e = canonical(expected)
    a = canonical(actual)
    missing = [r for r in e if r not in a]
    extra = [r for r in a if r not in e]
    if len(a) != len(set(a)):
        extra.append(("duplicates", len(a) - len(set(a))))
    return f"missing={missing[:10]} extra={extra[:10]}"
