"""In-memory R-tree used as the LSM memory component.

Guttman-style tree with quadratic split. Leaves carry an update counter for
buffered cleaning and are threaded on a doubly linked list so the vacuum
cursor can walk them round-robin without re-traversing the tree.
"""

from __future__ import annotations

import math
from itertools import chain
from operator import attrgetter
from typing import Iterator, List, Optional, Protocol

import numpy as np

from lsmrum._split_kernel import quadratic_partition as _partition_kernel
from lsmrum.core import Location, ObjectRecord, Rect

_INF = math.inf

DEFAULT_NODE_CAPACITY = 32
DEFAULT_MIN_FILL = 0.4


class MemoView(Protocol):
    """What node cleaning needs from the update memo."""

    def latest_ts(self, oid: int) -> Optional[int]: ...

    def stale_flags(self, oids: List[int], tss: List[int]) -> List[bool]: ...

    def clean_one(self, oid: int) -> int: ...


class RtreeNode:
    __slots__ = (
        "is_leaf",
        "entries",
        "parent",
        "minx",
        "miny",
        "maxx",
        "maxy",
        "area",
        "update_counter",
        "last_cleaned",
        "prev_leaf",
        "next_leaf",
        "alive",
    )

    def __init__(self, is_leaf: bool) -> None:
        self.is_leaf = is_leaf
        self.entries: list = []
        self.parent: Optional[RtreeNode] = None
        self.minx = _INF
        self.miny = _INF
        self.maxx = -_INF
        self.maxy = -_INF
        self.area = _INF
        self.update_counter = 0
        # update sequence number of the last clean; -1 means never cleaned
        self.last_cleaned = -1
        self.prev_leaf: Optional[RtreeNode] = None
        self.next_leaf: Optional[RtreeNode] = None
        self.alive = True

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else "node"
        return f"<{kind} n={len(self.entries)} mbr=({self.minx},{self.miny},{self.maxx},{self.maxy})>"

    @property
    def mbr(self) -> Optional[Rect]:
        if not self.entries:
            return None
        return Rect(Location(self.minx, self.miny), Location(self.maxx, self.maxy))

    def recompute_mbr(self) -> bool:
        """Recompute the bounds from the entries; report whether they changed."""
        minx = miny = _INF
        maxx = maxy = -_INF
        if self.is_leaf:
            for rec in self.entries:
                x, y = rec.loc
                if x < minx:
                    minx = x
                if x > maxx:
                    maxx = x
                if y < miny:
                    miny = y
                if y > maxy:
                    maxy = y
        else:
            for c in self.entries:
                if c.minx < minx:
                    minx = c.minx
                if c.maxx > maxx:
                    maxx = c.maxx
                if c.miny < miny:
                    miny = c.miny
                if c.maxy > maxy:
                    maxy = c.maxy
        changed = (minx, miny, maxx, maxy) != (self.minx, self.miny, self.maxx, self.maxy)
        self.minx, self.miny, self.maxx, self.maxy = minx, miny, maxx, maxy
        self.area = (maxx - minx) * (maxy - miny) if self.entries else _INF
        return changed


_loc = attrgetter("loc")
_box = attrgetter("minx", "miny", "maxx", "maxy")


def _bounds_array(node: RtreeNode) -> np.ndarray:
    """Leaf points as n x 2 rows, child bounds as n x 4 rows."""
    entries = node.entries
    if node.is_leaf:
        return np.fromiter(chain.from_iterable(map(_loc, entries)), np.float64, 2 * len(entries)).reshape(-1, 2)
    return np.fromiter(chain.from_iterable(map(_box, entries)), np.float64, 4 * len(entries)).reshape(-1, 4)


def _quadratic_partition(bounds: list, min_entries: int) -> tuple:
    """Guttman's quadratic split over entry bounds; returns two index lists."""
    n = len(bounds)
    x0s = [b[0] for b in bounds]
    y0s = [b[1] for b in bounds]
    x1s = [b[2] for b in bounds]
    y1s = [b[3] for b in bounds]
    areas = [(x1s[i] - x0s[i]) * (y1s[i] - y0s[i]) for i in range(n)]

    # PickSeeds: the pair wasting the most area if grouped together
    worst = -_INF
    s1 = 0
    s2 = 1
    for i in range(n - 1):
        ax0 = x0s[i]
        ay0 = y0s[i]
        ax1 = x1s[i]
        ay1 = y1s[i]
        ai = areas[i]
        for j in range(i + 1, n):
            bx0 = x0s[j]
            by0 = y0s[j]
            bx1 = x1s[j]
            by1 = y1s[j]
            w = (ax1 if ax1 > bx1 else bx1) - (ax0 if ax0 < bx0 else bx0)
            h = (ay1 if ay1 > by1 else by1) - (ay0 if ay0 < by0 else by0)
            d = w * h - ai - areas[j]
            if d > worst:
                worst = d
                s1 = i
                s2 = j

    g1 = [s1]
    g2 = [s2]
    r1 = [x0s[s1], y0s[s1], x1s[s1], y1s[s1]]
    r2 = [x0s[s2], y0s[s2], x1s[s2], y1s[s2]]
    a1 = areas[s1]
    a2 = areas[s2]
    rest = [k for k in range(n) if k != s1 and k != s2]

    def enlargements(r: list, area: float, ks: list, out: list) -> None:
        rx0, ry0, rx1, ry1 = r
        for k in ks:
            bx0 = x0s[k]
            by0 = y0s[k]
            bx1 = x1s[k]
            by1 = y1s[k]
            w = (rx1 if rx1 > bx1 else bx1) - (rx0 if rx0 < bx0 else bx0)
            h = (ry1 if ry1 > by1 else by1) - (ry0 if ry0 < by0 else by0)
            out[k] = w * h - area

    d1 = [0.0] * n
    d2 = [0.0] * n
    enlargements(r1, a1, rest, d1)
    enlargements(r2, a2, rest, d2)

    while rest:
        if len(g1) + len(rest) == min_entries:
            g1.extend(rest)
            break
        if len(g2) + len(rest) == min_entries:
            g2.extend(rest)
            break
        # PickNext: the entry with the strongest preference for one group
        best = -1.0
        pick_pos = 0
        for pos, k in enumerate(rest):
            diff = d1[k] - d2[k]
            if diff < 0.0:
                diff = -diff
            if diff > best:
                best = diff
                pick_pos = pos
        k = rest.pop(pick_pos)
        e1 = d1[k]
        e2 = d2[k]
        if e1 < e2:
            to_first = True
        elif e2 < e1:
            to_first = False
        elif a1 != a2:
            to_first = a1 < a2
        else:
            to_first = len(g1) <= len(g2)
        if to_first:
            g1.append(k)
            r1 = [min(r1[0], x0s[k]), min(r1[1], y0s[k]), max(r1[2], x1s[k]), max(r1[3], y1s[k])]
            a1 = (r1[2] - r1[0]) * (r1[3] - r1[1])
            enlargements(r1, a1, rest, d1)
        else:
            g2.append(k)
            r2 = [min(r2[0], x0s[k]), min(r2[1], y0s[k]), max(r2[2], x1s[k]), max(r2[3], y1s[k])]
            a2 = (r2[2] - r2[0]) * (r2[3] - r2[1])
            enlargements(r2, a2, rest, d2)
    return g1, g2


class Rtree:
    """Point R-tree over :class:`ObjectRecord` entries.

    A single instance is not thread-safe; the engine serialises writers.
    """

    def __init__(self, node_capacity: int = DEFAULT_NODE_CAPACITY, min_fill: float = DEFAULT_MIN_FILL) -> None:
        if node_capacity < 2:
            raise ValueError("node_capacity must be at least 2")
        if not 0.0 < min_fill <= 0.5:
            raise ValueError("min_fill must be in (0, 0.5]")
        self.node_capacity = node_capacity
        self.min_entries = max(1, int(node_capacity * min_fill))
        self.size = 0
        self.splits = 0
        self.root = RtreeNode(is_leaf=True)
        self.first_leaf: RtreeNode = self.root

    def __len__(self) -> int:
        return self.size

    # -- leaf list ----------------------------------------------------------

    def _link_after(self, leaf: RtreeNode, new: RtreeNode) -> None:
        new.prev_leaf = leaf
        new.next_leaf = leaf.next_leaf
        if leaf.next_leaf is not None:
            leaf.next_leaf.prev_leaf = new
        leaf.next_leaf = new

    def _unlink(self, leaf: RtreeNode) -> None:
        # the dead leaf keeps its next pointer so a cursor parked on it can resume
        leaf.alive = False
        if leaf.prev_leaf is not None:
            leaf.prev_leaf.next_leaf = leaf.next_leaf
        else:
            self.first_leaf = leaf.next_leaf
        if leaf.next_leaf is not None:
            leaf.next_leaf.prev_leaf = leaf.prev_leaf

    def _unlink_subtree(self, node: RtreeNode, sink: list) -> None:
        stack = [node]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                sink.extend(n.entries)
                self._unlink(n)
            else:
                stack.extend(n.entries)

    def _reset(self) -> None:
        self.root = RtreeNode(is_leaf=True)
        self.first_leaf = self.root

    def leaves(self) -> List[RtreeNode]:
        out = []
        node = self.first_leaf
        while node is not None:
            out.append(node)
            node = node.next_leaf
        return out

    def height(self) -> int:
        h = 1
        node = self.root
        while not node.is_leaf:
            node = node.entries[0]
            h += 1
        return h

    # -- insertion ----------------------------------------------------------

    def insert(self, rec: ObjectRecord) -> RtreeNode:
        """Insert ``rec`` and return the leaf it landed in."""
        x, y = rec.loc
        node = self.root
        while not node.is_leaf:
            best = None
            best_enl = _INF
            best_area = _INF
            for c in node.entries:
                cx0 = c.minx
                cy0 = c.miny
                cx1 = c.maxx
                cy1 = c.maxy
                area = c.area
                if cx0 <= x <= cx1 and cy0 <= y <= cy1:
                    enl = 0.0
                else:
                    enl = (
                        ((cx1 if cx1 > x else x) - (cx0 if cx0 < x else x))
                        * ((cy1 if cy1 > y else y) - (cy0 if cy0 < y else y))
                        - area
                    )
                if enl < best_enl or (enl == best_enl and area < best_area):
                    best = c
                    best_enl = enl
                    best_area = area
            node = best
        leaf = node
        leaf.entries.append(rec)
        self.size += 1

        n = leaf
        while n is not None:
            grown = False
            if x < n.minx:
                n.minx = x
                grown = True
            if x > n.maxx:
                n.maxx = x
                grown = True
            if y < n.miny:
                n.miny = y
                grown = True
            if y > n.maxy:
                n.maxy = y
                grown = True
            if not grown:
                break
            n.area = (n.maxx - n.minx) * (n.maxy - n.miny)
            n = n.parent

        if len(leaf.entries) > self.node_capacity:
            return self._split_upwards(leaf, rec)
        return leaf

    def _split(self, node: RtreeNode) -> RtreeNode:
        order, n1, box = _partition_kernel(_bounds_array(node), self.min_entries)
        entries = node.entries
        picked = [entries[i] for i in order.tolist()]
        sibling = RtreeNode(node.is_leaf)
        node.entries = picked[:n1]
        sibling.entries = picked[n1:]
        if not node.is_leaf:
            for c in node.entries:
                c.parent = node
            for c in sibling.entries:
                c.parent = sibling
        else:
            self._link_after(node, sibling)
        x0, y0, x1, y1, sx0, sy0, sx1, sy1 = box.tolist()
        node.minx, node.miny, node.maxx, node.maxy = x0, y0, x1, y1
        node.area = (x1 - x0) * (y1 - y0)
        sibling.minx, sibling.miny, sibling.maxx, sibling.maxy = sx0, sy0, sx1, sy1
        sibling.area = (sx1 - sx0) * (sy1 - sy0)
        # both halves count as new nodes for buffered cleaning
        node.update_counter = 0
        sibling.update_counter = 0
        sibling.last_cleaned = node.last_cleaned
        self.splits += 1
        return sibling

    def _split_upwards(self, leaf: RtreeNode, rec: ObjectRecord) -> RtreeNode:
        sibling = self._split(leaf)
        home = sibling if any(r is rec for r in sibling.entries) else leaf
        node = leaf
        while True:
            parent = node.parent
            if parent is None:
                root = RtreeNode(is_leaf=False)
                root.entries = [node, sibling]
                node.parent = root
                sibling.parent = root
                root.recompute_mbr()
                self.root = root
                break
            parent.entries.append(sibling)
            sibling.parent = parent
            if len(parent.entries) <= self.node_capacity:
                break
            node = parent
            sibling = self._split(parent)
        return home

    # -- removal ------------------------------------------------------------

    def _find_leaf(self, loc: Location, oid: int) -> tuple:
        x, y = loc
        stack = [self.root]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                for i, r in enumerate(n.entries):
                    if r.oid == oid and r.loc == loc:
                        return n, i
            else:
                for c in n.entries:
                    if c.minx <= x <= c.maxx and c.miny <= y <= c.maxy:
                        stack.append(c)
        return None, -1

    def remove_exact(self, loc: Location, oid: int) -> bool:
        """Remove one record matching ``(loc, oid)``, ignoring its timestamp."""
        leaf, i = self._find_leaf(loc, oid)
        if leaf is None:
            return False
        del leaf.entries[i]
        self.size -= 1
        x, y = loc
        if (leaf.parent is None or len(leaf.entries) >= self.min_entries) and leaf.minx < x < leaf.maxx and leaf.miny < y < leaf.maxy:
            # an interior point never defines the bounds
            return True
        self._condense(leaf)
        return True

    def _condense(self, leaf: RtreeNode) -> None:
        orphans: list = []
        node = leaf
        while node.parent is not None:
            parent = node.parent
            if len(node.entries) < self.min_entries:
                parent.entries.remove(node)
                node.parent = None
                self._unlink_subtree(node, orphans)
            elif not node.recompute_mbr():
                # nothing above this point changed
                break
            node = parent
        else:
            self._shrink_root()
        self.size -= len(orphans)
        for rec in orphans:
            self.insert(rec)

    def _shrink_root(self) -> None:
        root = self.root
        root.recompute_mbr()
        while not root.is_leaf and len(root.entries) == 1:
            root = root.entries[0]
            root.parent = None
            self.root = root
        if not root.is_leaf and not root.entries:
            self._reset()

    def _detach_empty(self, node: RtreeNode) -> None:
        """Drop an empty node and any ancestors it leaves empty."""
        while node.parent is not None and not node.entries:
            parent = node.parent
            parent.entries.remove(node)
            node.parent = None
            if node.is_leaf:
                self._unlink(node)
            node = parent
        self._tighten_from(node)
        if not self.root.entries and not self.root.is_leaf:
            self._reset()
        else:
            self._shrink_root()

    def _tighten_from(self, node: Optional[RtreeNode]) -> None:
        while node is not None:
            if not node.recompute_mbr():
                break
            node = node.parent

    # -- queries ------------------------------------------------------------

    def range_search(self, window: Rect) -> List[ObjectRecord]:
        """All records inside ``window`` (closed bounds), unvalidated."""
        (qx0, qy0), (qx1, qy1) = window
        out: List[ObjectRecord] = []
        stack = [self.root]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                for r in n.entries:
                    x, y = r.loc
                    if qx0 <= x <= qx1 and qy0 <= y <= qy1:
                        out.append(r)
            else:
                for c in n.entries:
                    if c.minx <= qx1 and c.maxx >= qx0 and c.miny <= qy1 and c.maxy >= qy0:
                        stack.append(c)
        return out

    def records(self) -> Iterator[ObjectRecord]:
        node = self.first_leaf
        while node is not None:
            yield from node.entries
            node = node.next_leaf

    # -- cleaning -----------------------------------------------------------

    def clean_node(self, leaf: RtreeNode, memo: MemoView, seq: int = 0) -> int:
        """Drop records of ``leaf`` that the memo marks obsolete.

        Each removal gives one count back to the memo. ``seq`` is the caller's
        update sequence number, stored so vacuum cleaning can skip leaves that
        were cleaned recently. Returns the number of records removed.
        """
        if not leaf.is_leaf:
            raise ValueError("clean_node works on leaves only")
        entries = leaf.entries
        stale = memo.stale_flags([r.oid for r in entries], [r.ts for r in entries])
        removed = 0
        on_edge = False
        if True in stale:
            survivors = []
            clean_one = memo.clean_one
            x0, y0, x1, y1 = leaf.minx, leaf.miny, leaf.maxx, leaf.maxy
            for rec, dead in zip(entries, stale):
                if dead:
                    clean_one(rec.oid)
                    removed += 1
                    x, y = rec.loc
                    if x == x0 or x == x1 or y == y0 or y == y1:
                        on_edge = True
                else:
                    survivors.append(rec)
        leaf.update_counter = 0
        leaf.last_cleaned = seq
        if removed:
            leaf.entries = survivors
            self.size -= removed
            if survivors:
                # bounds only move when a dropped record sat on the edge
                if on_edge:
                    self._tighten_from(leaf)
            elif leaf is not self.root:
                self._detach_empty(leaf)
            else:
                leaf.recompute_mbr()
        return removed

    def leaf_iter(self) -> "LeafCursor":
        return LeafCursor(self)

    # -- diagnostics ----------------------------------------------------------

    def check_invariants(self) -> None:
        """Raise AssertionError if the structure is inconsistent."""
        depths = set()
        count = 0
        leaves_seen = []
        stack = [(self.root, 1)]
        assert self.root.parent is None
        while stack:
            n, d = stack.pop()
            assert len(n.entries) <= self.node_capacity, "node over capacity"
            if n is not self.root:
                assert n.entries, "empty non-root node"
            if n.entries:
                before = (n.minx, n.miny, n.maxx, n.maxy, n.area)
                n.recompute_mbr()
                assert before == (n.minx, n.miny, n.maxx, n.maxy, n.area), "loose MBR"
            if n.is_leaf:
                depths.add(d)
                count += len(n.entries)
                leaves_seen.append(n)
                assert all(isinstance(r, ObjectRecord) for r in n.entries)
            else:
                for c in n.entries:
                    assert isinstance(c, RtreeNode) and c.parent is n
                    stack.append((c, d + 1))
        assert len(depths) == 1, "unbalanced tree"
        assert count == self.size, "size counter drift"
        linked = self.leaves()
        assert all(leaf.alive for leaf in linked)
        assert {id(x) for x in linked} == {id(x) for x in leaves_seen}, "leaf list drift"


class LeafCursor:
    """Round-robin cursor over the leaves of one tree."""

    def __init__(self, tree: Rtree) -> None:
        self.tree = tree
        self._next: Optional[RtreeNode] = None

    def peek(self) -> RtreeNode:
        node = self._next
        while node is not None and not node.alive:
            node = node.next_leaf
        if node is None:
            node = self.tree.first_leaf
        self._next = node
        return node

    def next(self) -> RtreeNode:
        node = self.peek()
        self._next = node.next_leaf
        return node
