"""Domain types, geometry primitives and the engine timestamp counter."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from lsmrum.atomic import AtomicInt

#: Timestamp value meaning "never"; real timestamps start at 1.
NEVER = 0


class Location(NamedTuple):
    x: float
    y: float

    @classmethod
    def checked(cls, x: float, y: float) -> "Location":
        x = float(x)
        y = float(y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"non-finite coordinates ({x}, {y})")
        return cls(x, y)


class Rect(NamedTuple):
    """Axis-aligned rectangle with closed bounds on all four edges."""

    min: Location
    max: Location

    @classmethod
    def of(cls, x1: float, y1: float, x2: float, y2: float) -> "Rect":
        """Build a rectangle from two corners given in any order."""
        lo = Location.checked(min(x1, x2), min(y1, y2))
        hi = Location.checked(max(x1, x2), max(y1, y2))
        return cls(lo, hi)

    def contains_point(self, p: Location) -> bool:
        return (self.min.x <= p.x <= self.max.x) and (self.min.y <= p.y <= self.max.y)

    def contains_rect(self, other: "Rect") -> bool:
        return (
            self.min.x <= other.min.x
            and self.min.y <= other.min.y
            and other.max.x <= self.max.x
            and other.max.y <= self.max.y
        )

    def intersects(self, other: "Rect") -> bool:
        return not (
            other.max.x < self.min.x
            or other.min.x > self.max.x
            or other.max.y < self.min.y
            or other.min.y > self.max.y
        )

    def area(self) -> float:
        return (self.max.x - self.min.x) * (self.max.y - self.min.y)


class ObjectRecord(NamedTuple):
    """An indexed entry: secondary key (location), primary key and timestamp."""

    loc: Location
    oid: int
    ts: int


class OpKind(enum.Enum):
    INSERT = "I"
    DELETE = "D"
    UPDATE = "U"
    QUERY = "Q"


@dataclass(frozen=True)
class WorkloadOp:
    """One trace event.

    ``old_loc`` is only meaningful for deletes and updates; it is what the
    Eager strategy needs to find the stale entry in its memory tree.
    """

    kind: OpKind
    oid: Optional[int] = None
    loc: Optional[Location] = None
    window: Optional[Rect] = None
    old_loc: Optional[Location] = None

    def __post_init__(self) -> None:
        k = self.kind
        if k is OpKind.QUERY:
            if self.window is None or self.oid is not None or self.loc is not None:
                raise ValueError("query ops carry a window and nothing else")
            return
        if self.oid is None or self.oid < 0:
            raise ValueError(f"{k.name} op needs a non-negative oid")
        if self.window is not None:
            raise ValueError(f"{k.name} op cannot carry a window")
        if k is OpKind.DELETE:
            if self.loc is not None:
                raise ValueError("delete ops carry no new location")
        elif self.loc is None:
            raise ValueError(f"{k.name} op needs a location")


class TimestampCounter:
    """Engine-local logical clock. The first timestamp handed out is 1."""

    _LIMIT = 2**64 - 1

    def __init__(self) -> None:
        self._value = AtomicInt(NEVER)

    def next_timestamp(self) -> int:
        ts = self._value.increment_and_get()
        if ts > self._LIMIT:
            raise OverflowError("timestamp counter exhausted")
        return ts

    def current(self) -> int:
        return self._value.get()
