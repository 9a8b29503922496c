"""Hybrid time trajectories: the time skeletons of executions.

A trajectory is a nondecreasing sequence of times 0 = t_0 <= ... <= t_N
cut into consecutive intervals; interval j runs [t_j, t_{j+1}], all closed
except possibly the last, whose right end may be open (and must be open when
t_N is infinite, and closed when the last interval is degenerate). Interior
boundaries are jump times.

Zeno behavior (infinitely many jumps before a finite time) cannot be stored
literally; a truncated trajectory carries zeno=True instead, and the stated
endpoint rules apply to the truncation.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

__all__ = ["TimeTrajectory", "TrajectoryError", "refine_trajectory", "time_t_intervals"]


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class TimeTrajectory:
    times: tuple
    endpoint: str = "closed"  # 'open' | 'closed'
    zeno: bool = False

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        if len(ts) < 2:
            raise TrajectoryError("need at least one interval (two times)")
        if ts[0] != 0.0:
            raise TrajectoryError("trajectories start at time 0")
        for a, b in zip(ts, ts[1:]):
            if b < a:
                raise TrajectoryError("times must be nondecreasing")
        for t in ts[:-1]:
            if math.isinf(t):
                raise TrajectoryError("only the final time may be infinite")
        if self.endpoint not in ("open", "closed"):
            raise TrajectoryError("endpoint must be 'open' or 'closed'")
        if math.isinf(ts[-1]) and self.endpoint == "closed":
            raise TrajectoryError("an unbounded final interval cannot be closed")
        if ts[-1] == ts[-2] and not math.isinf(ts[-1]) and self.endpoint == "open":
            raise TrajectoryError("a degenerate final interval must be closed")

    # -- queries -------------------------------------------------------------

    @property
    def num_intervals(self) -> int:
        return len(self.times) - 1

    def jump_times(self) -> tuple:
        return self.times[1:-1]

    def stop_time(self) -> float:
        return self.times[-1]

    def classification(self) -> str:
        if self.zeno:
            return "zeno"
        return "infinite" if math.isinf(self.times[-1]) else "finite"

    def interval(self, j: int) -> tuple:
        """(lo, hi, closed_right) for interval j."""
        lo, hi = self.times[j], self.times[j + 1]
        closed = True if j < self.num_intervals - 1 else self.endpoint == "closed"
        return lo, hi, closed

    def contains(self, j: int, t: float) -> bool:
        lo, hi, closed = self.interval(j)
        return lo <= t <= hi if closed else lo <= t < hi


def time_t_intervals(traj: TimeTrajectory, t: float) -> list:
    """Indices of every interval containing time t (multiplicity at jumps)."""
    return [j for j in range(traj.num_intervals) if traj.contains(j, t)]


def refine_trajectory(traj: TimeTrajectory, extra: Sequence[float]):
    """Insert extra jump times; returns (refined, index map k).

    k is the strictly increasing tuple with refined.times[k[j]] ==
    traj.times[j]; extras already present as times of traj are dropped, so
    the refinement adds exactly the genuinely new times. Interval j of the
    original is the union of refined intervals k[j] .. k[j+1]-1, which is
    what makes time-t point sets agree across the refinement.
    """
    stop = traj.stop_time()
    extras = sorted(set(float(t) for t in extra) - set(traj.times))
    for t in extras:
        if t < 0.0 or t > stop:
            raise TrajectoryError(f"extra time {t} outside [0, {stop}]")
        if math.isinf(t):
            raise TrajectoryError("cannot insert an infinite time")
    merged = []
    k = []
    ei = 0
    for j, t in enumerate(traj.times):
        while ei < len(extras) and extras[ei] < t:
            merged.append(extras[ei])
            ei += 1
        k.append(len(merged))
        merged.append(t)
    while ei < len(extras):  # extras inside the final unbounded interval
        merged.append(extras[ei])
        ei += 1
    refined = TimeTrajectory(tuple(merged), traj.endpoint, traj.zeno)
    return refined, tuple(k)


def segment_of_time(traj: TimeTrajectory, t: float) -> int:
    """Index of the last interval containing t (post-jump convention)."""
    idx = bisect_right(traj.times, t) - 1
    idx = min(max(idx, 0), traj.num_intervals - 1)
    while idx > 0 and not traj.contains(idx, t) and traj.contains(idx - 1, t):
        idx -= 1
    if not traj.contains(idx, t):
        raise TrajectoryError(f"time {t} outside the trajectory")
    return idx
