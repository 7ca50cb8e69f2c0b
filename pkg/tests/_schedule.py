"""Deterministic interleaving of memo operations through the step hook.

Each operation runs on its own thread but only one thread moves at a time:
a thread parks at every hook call until the controller picks it. Running
every schedule depth-first covers all interleavings of the atomic steps.
"""

from __future__ import annotations

import threading
from typing import Callable, List, Sequence, Tuple


class _Run:
    def __init__(self, ops: Sequence[Callable[[], object]], schedule: Sequence[int]) -> None:
        self.ops = ops
        self.schedule = list(schedule)
        self.cond = threading.Condition()
        self.parked = [False] * len(ops)
        self.done = [False] * len(ops)
        self.go = [False] * len(ops)
        self.labels: List[Tuple[int, str]] = []
        self.choices: List[Tuple[int, Tuple[int, ...]]] = []
        self.errors: List[BaseException] = []
        self.local = threading.local()

    def hook(self, label: str) -> None:
        me = getattr(self.local, "me", None)
        if me is None:
            return
        with self.cond:
            self.parked[me] = True
            self.labels.append((me, label))
            self.cond.notify_all()
            while not self.go[me]:
                self.cond.wait()
            self.go[me] = False
            self.parked[me] = False

    def _body(self, i: int) -> None:
        self.local.me = i
        try:
            self.hook("start")
            self.ops[i]()
        except BaseException as exc:  # surfaced by the controller
            self.errors.append(exc)
        finally:
            with self.cond:
                self.done[i] = True
                self.cond.notify_all()

    def run(self) -> None:
        threads = [threading.Thread(target=self._body, args=(i,), daemon=True) for i in range(len(self.ops))]
        for t in threads:
            t.start()
        step = 0
        with self.cond:
            while True:
                if not self.cond.wait_for(
                    lambda: all(p or d for p, d in zip(self.parked, self.done)) and not any(self.go), timeout=10
                ):
                    raise RuntimeError("scheduler stalled")
                enabled = tuple(i for i, p in enumerate(self.parked) if p)
                if not enabled:
                    break
                if step < len(self.schedule) and self.schedule[step] in enabled:
                    pick = self.schedule[step]
                else:
                    pick = enabled[0]
                self.choices.append((pick, enabled))
                step += 1
                self.go[pick] = True
                self.cond.notify_all()
        for t in threads:
            t.join(5)
        if self.errors:
            raise self.errors[0]


def explore(make: Callable[[Callable[[str], None]], Tuple[Sequence[Callable[[], object]], Callable[[], object]]]):
    """Run every interleaving; return the list of final observations.

    ``make(hook)`` builds fresh state wired to ``hook`` and returns the
    operations plus a function observing the final state.
    """
    results = []
    pending: List[List[int]] = [[]]
    while pending:
        prefix = pending.pop()
        holder = {}

        def hook(label, holder=holder):
            holder["run"].hook(label)

        ops, observe = make(hook)
        run = _Run(ops, prefix)
        holder["run"] = run
        run.run()
        results.append(observe())
        for pos in range(len(prefix), len(run.choices)):
            chosen, enabled = run.choices[pos]
            taken = [c for c, _ in run.choices[:pos]]
            for alt in enabled:
                if alt != chosen:
                    pending.append(taken + [alt])
    return results
