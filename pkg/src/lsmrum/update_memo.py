"""The Update Memo: a concurrent map from object id to ``(ts, cnt)``.

``ts`` is the timestamp of the most recent delete/update of the object and
``cnt`` the number of obsolete copies of it still sitting in some index
component. Both fields are atomic cells. The map itself is striped: every
structural change (create, conditional remove) and every ``cnt`` increment
happens under the stripe lock of the key, while reads are lock-free.
"""

from __future__ import annotations

from threading import Lock
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from lsmrum.atomic import AtomicInt
from lsmrum.core import ObjectRecord

DEFAULT_STRIPES = 64


class MemoInvariantError(RuntimeError):
    """A candidate was fresher than the memo says any copy can be."""


class MemoContractError(RuntimeError):
    """An operation was called on an entry that does not exist."""


class UMEntry:
    __slots__ = ("ts", "cnt")

    def __init__(self, ts: int, cnt: int = 1) -> None:
        # the two cells of one entry share a lock
        lock = Lock()
        self.ts = AtomicInt(ts, lock)
        self.cnt = AtomicInt(cnt, lock)

    def __repr__(self) -> str:
        return f"UMEntry(ts={self.ts.get()}, cnt={self.cnt.get()})"


class UpdateMemo:
    """Thread-safe update memo.

    ``step_hook`` is called with a short label right before every atomic
    step. Production code leaves it unset; tests install a scheduler
    there to force specific interleavings.
    """

    def __init__(self, stripes: int = DEFAULT_STRIPES, step_hook: Optional[Callable[[str], None]] = None) -> None:
        if stripes <= 0 or stripes & (stripes - 1):
            raise ValueError("stripes must be a positive power of two")
        self._mask = stripes - 1
        self._maps: List[dict] = [{} for _ in range(stripes)]
        self._locks = [Lock() for _ in range(stripes)]
        self._size = AtomicInt(0)
        self._max_size = AtomicInt(0)
        self.cils_retries = AtomicInt(0)
        self.step = step_hook

    # -- map primitives -------------------------------------------------------

    def _put_if_absent(self, oid: int, ts: int) -> Optional[UMEntry]:
        """Create ``<ts, 1>`` unless an entry exists; return the existing one."""
        if self.step is not None:
            self.step("putIfAbsent")
        i = oid & self._mask
        with self._locks[i]:
            m = self._maps[i]
            e = m.get(oid)
            if e is not None:
                return e
            m[oid] = UMEntry(ts, 1)
        self._max_size.update_max(self._size.increment_and_get())
        return None

    def _inc_if_current(self, oid: int, e: UMEntry) -> bool:
        if self.step is not None:
            self.step("atomicIncCnt")
        i = oid & self._mask
        with self._locks[i]:
            if self._maps[i].get(oid) is not e:
                return False
            e.cnt.increment_and_get()
            return True

    def _remove_if_zero(self, oid: int, e: UMEntry) -> bool:
        if self.step is not None:
            self.step("remove")
        i = oid & self._mask
        with self._locks[i]:
            m = self._maps[i]
            if m.get(oid) is not e or e.cnt.get() != 0:
                return False
            del m[oid]
        self._size.decrement_and_get()
        return True

    def _entry(self, oid: int) -> Optional[UMEntry]:
        return self._maps[oid & self._mask].get(oid)

    # -- protocol -------------------------------------------------------------

    def _cils_entry(self, e: UMEntry, val: int) -> int:
        ts = e.ts
        while True:
            if self.step is not None:
                self.step("cils.get")
            curr = ts.get()
            if curr >= val:
                return curr
            if self.step is not None:
                self.step("cils.cas")
            if ts.compare_and_set(curr, val):
                return val
            self.cils_retries.increment_and_get()

    def cils(self, oid: int, val: int) -> int:
        """Compare-and-if-less-then-swap on the entry's timestamp.

        Installs ``val`` only if it is larger than the stored timestamp and
        returns whatever the field holds once the operation resolves.
        """
        e = self._entry(oid)
        if e is None:
            raise MemoContractError(f"no memo entry for oid {oid}")
        return self._cils_entry(e, val)

    def record_obsolete(self, oid: int, ts: int) -> None:
        """Note that one more copy of ``oid`` became obsolete at time ``ts``.

        putIfAbsent, CILS, putIfAbsent-again and increment, as in the memo
        update protocol. The increment only lands if the entry it targets is
        still the mapped one; if a cleaner removed it in between, the loop
        re-creates the entry with the resolved timestamp.
        """
        val = ts
        while True:
            e = self._put_if_absent(oid, val)
            if e is None:
                return
            val = self._cils_entry(e, val)
            if self._inc_if_current(oid, e):
                return

    def clean_one(self, oid: int) -> int:
        """Give back one obsolete copy; drop the entry when none are left."""
        e = self._entry(oid)
        if e is None:
            raise MemoContractError(f"clean_one on absent oid {oid}")
        if self.step is not None:
            self.step("atomicDecCnt")
        ret = e.cnt.decrement_and_get()
        if ret < 0:
            raise MemoContractError(f"obsolete count of oid {oid} went negative")
        if ret == 0:
            self._remove_if_zero(oid, e)
        return ret

    def latest_ts(self, oid: int) -> Optional[int]:
        e = self._maps[oid & self._mask].get(oid)
        return None if e is None else e.ts.get()

    def stale_flags(self, oids: Sequence[int], tss: Sequence[int]) -> List[bool]:
        """Per record: True when the memo holds a newer timestamp for its oid."""
        maps = self._maps
        mask = self._mask
        # plain read of the cell, as AtomicInt.get does
        return [(e := maps[oid & mask].get(oid)) is not None and ts < e.ts._value for oid, ts in zip(oids, tss)]

    def is_obsolete(self, rec: ObjectRecord) -> bool:
        e = self._maps[rec.oid & self._mask].get(rec.oid)
        return e is not None and rec.ts < e.ts.get()

    def validate(self, candidates: Iterable[ObjectRecord]) -> List[ObjectRecord]:
        """Keep candidates with no memo entry or with the entry's exact timestamp."""
        maps = self._maps
        mask = self._mask
        out = []
        for c in candidates:
            oid = c.oid
            e = maps[oid & mask].get(oid)
            if e is None:
                out.append(c)
                continue
            ets = e.ts.get()
            if c.ts == ets:
                out.append(c)
            elif c.ts > ets:
                raise MemoInvariantError(
                    f"candidate {c} is newer than its memo timestamp {ets}"
                )
        return out

    # -- inspection -------------------------------------------------------------

    def lookup(self, oid: int) -> Optional[Tuple[int, int]]:
        e = self._entry(oid)
        if e is None:
            return None
        return e.ts.get(), e.cnt.get()

    def size(self) -> int:
        return self._size.get()

    def __len__(self) -> int:
        return self._size.get()

    def max_size(self) -> int:
        return self._max_size.get()

    def snapshot(self) -> List[Tuple[int, int, int]]:
        """``(oid, ts, cnt)`` for every entry; not atomic across stripes."""
        out = []
        for m in self._maps:
            for oid, e in list(m.items()):
                out.append((oid, e.ts.get(), e.cnt.get()))
        out.sort()
        return out
