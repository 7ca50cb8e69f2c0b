"""Lock-emulated atomic integers.

CPython has no user-level CAS instruction, so read-modify-write operations
are guarded by a per-cell lock. Plain reads skip the lock: loading a single
attribute is atomic under the interpreter lock.
"""

from __future__ import annotations

from contextlib import contextmanager
from threading import Condition, Lock
from typing import Optional


class AtomicInt:
    __slots__ = ("_value", "_lock")

    def __init__(self, initial_value: int = 0, lock: Optional[Lock] = None) -> None:
        self._value = initial_value
        # sharing a lock is safe: no operation holds one cell while touching another
        self._lock = Lock() if lock is None else lock

    def __repr__(self) -> str:
        return f"AtomicInt({self._value})"

    def get(self) -> int:
        return self._value

    def set(self, value: int) -> None:
        with self._lock:
            self._value = value

    def increment_and_get(self) -> int:
        with self._lock:
            self._value += 1
            return self._value

    def decrement_and_get(self) -> int:
        with self._lock:
            self._value -= 1
            return self._value

    def add_and_get(self, delta: int) -> int:
        with self._lock:
            self._value += delta
            return self._value

    def compare_and_set(self, expected: int, new: int) -> bool:
        with self._lock:
            if self._value == expected:
                self._value = new
                return True
            return False

    def update_max(self, candidate: int) -> int:
        """Raise the value to ``candidate`` if it is larger; return the result."""
        while True:
            curr = self._value
            if curr >= candidate:
                return curr
            if self.compare_and_set(curr, candidate):
                return candidate


class RWLock:
    """Readers-writer lock; readers share, a writer excludes everyone.

    A writer holds ``_w`` for its whole critical section and then waits for
    in-flight readers to drain. Readers pass through ``_w`` to register, so
    a waiting writer also holds off new readers.
    """

    def __init__(self) -> None:
        self._w = Lock()
        self._cond = Condition(Lock())
        self._readers = 0

    def acquire_read(self) -> None:
        with self._w:
            with self._cond:
                self._readers += 1

    def release_read(self) -> None:
        with self._cond:
            self._readers -= 1
            if not self._readers:
                self._cond.notify_all()

    def acquire_write(self) -> None:
        self._w.acquire()
        if self._readers:
            with self._cond:
                while self._readers:
                    self._cond.wait()

    def release_write(self) -> None:
        self._w.release()

    @contextmanager
    def read(self):
        self.acquire_read()
        try:
            yield
        finally:
            self.release_read()

    @contextmanager
    def write(self):
        self.acquire_write()
        try:
            yield
        finally:
            self.release_write()
