"""End-to-end delay accounting for delivered packets."""

from __future__ import annotations

import math
from collections import deque
from typing import Iterable, NamedTuple, Optional


class DelayStats(NamedTuple):
    count: int
    mean: float        # nan when nothing was delivered
    violation: float   # fraction with delay > deadline; nan when undefined


def delay_statistics(log: Iterable, flow: int, deadline: Optional[float] = None) -> DelayStats:
    """Statistics of one flow from (flow, birth_slot, delivery_slot) triples."""
    delays = [d - b for c, b, d in log if c == flow]
    if not delays:
        return DelayStats(0, math.nan, math.nan)
    mean = math.fsum(delays) / len(delays)
    violation = math.nan if deadline is None else sum(x > deadline for x in delays) / len(delays)
    return DelayStats(len(delays), mean, violation)


class DelayTracker:
    """Running delay statistics, cumulative or over the last ``window`` packets."""

    def __init__(self, deadline: Optional[float] = None, window: int = 0):
        self.deadline = deadline
        self.window = window
        self.reset()

    def reset(self) -> None:
        self.count = 0
        self.total = 0
        self.late = 0
        self._recent = deque()

    def add(self, delay: int) -> None:
        late = self.deadline is not None and delay > self.deadline
        self.count += 1
        self.total += delay
        self.late += late
        if self.window:
            self._recent.append((delay, late))
            if len(self._recent) > self.window:
                old, old_late = self._recent.popleft()
                self.count -= 1
                self.total -= old
                self.late -= old_late

    def extend(self, delays: Iterable[int]) -> None:
        for d in delays:
            self.add(d)

    def stats(self) -> DelayStats:
        if self.count == 0:
            return DelayStats(0, math.nan, math.nan)
        violation = math.nan if self.deadline is None else self.late / self.count
        return DelayStats(self.count, self.total / self.count, violation)

