"""In-memory cleaning hooks fired after every update.

Buffered cleaning reacts to update pressure on one leaf; vacuum cleaning
walks all leaves round-robin so cold leaves whose records were obsoleted by
updates landing elsewhere still get purged.
"""

from __future__ import annotations

from lsmrum.rtree import MemoView, Rtree, RtreeNode


class BufferedCleaner:
    def __init__(self, threshold: int = 4) -> None:
        if threshold < 1:
            raise ValueError("buffered threshold must be >= 1")
        self.threshold = threshold
        self.removed = 0
        self.runs = 0

    def on_update(self, tree: Rtree, leaf: RtreeNode, memo: MemoView, seq: int = 0) -> int:
        """Count one update against ``leaf``; clean it once the count hits the threshold."""
        leaf.update_counter += 1
        if leaf.update_counter < self.threshold:
            return 0
        n = tree.clean_node(leaf, memo, seq)
        self.runs += 1
        self.removed += n
        return n


class VacuumCleaner:
    """Global update counter plus a cursor naming the next leaf to clean.

    With ``skip_recent`` on, a leaf cleaned (by either strategy) within the
    last ``threshold`` updates is passed over, at most one full lap.
    """

    def __init__(self, tree: Rtree, threshold: int = 8, skip_recent: bool = True) -> None:
        if threshold < 1:
            raise ValueError("vacuum threshold must be >= 1")
        self.threshold = threshold
        self.skip_recent = skip_recent
        self.global_counter = 0
        self.removed = 0
        self.runs = 0
        self.cursor = tree.leaf_iter()

    def reset(self, tree: Rtree) -> None:
        """Point the cursor at a freshly installed memory tree."""
        self.cursor = tree.leaf_iter()
        self.global_counter = 0

    def on_update(self, tree: Rtree, memo: MemoView, seq: int = 0) -> int:
        self.global_counter += 1
        if self.global_counter < self.threshold:
            return 0
        self.global_counter = 0
        leaf = self.cursor.next()
        if self.skip_recent:
            first = leaf
            while leaf.last_cleaned >= 0 and seq - leaf.last_cleaned < self.threshold:
                leaf = self.cursor.next()
                if leaf is first:
                    break
        n = tree.clean_node(leaf, memo, seq)
        self.runs += 1
        self.removed += n
        return n
