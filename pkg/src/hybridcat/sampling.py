"""Sampling points from predicate-described sets.

Strategy, in order of preference:

1. A caller-supplied hook (used where a set is measure-zero but has a known
   parameterization, like the unit circle).
2. Equality pinning: conjunctive `xi == c` atoms fix coordinates exactly, so
   guard surfaces like {x0 == 0, x1 >= 0} are hit on the nose instead of
   never.
3. Rejection sampling over the mode's box (default [-4, 4] per coordinate).

Finding nothing is "starvation", reported as its own outcome: the set may be
empty, or merely thin. Callers must not read starvation as a violation.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import expr as E

__all__ = ["SamplingStarved", "equality_pins", "sample_predicate", "sample_box",
           "DEFAULT_BOX_HALF_WIDTH"]

DEFAULT_BOX_HALF_WIDTH = 4.0


class SamplingStarved(RuntimeError):
    """Rejection sampling found no points of the requested set."""

    def __init__(self, what: str, tries: int):
        self.what = what
        self.tries = tries
        super().__init__(f"no sample of {what} found in {tries} tries")


def _const_value(e: E.Expr, params: Mapping[str, float]) -> Optional[float]:
    if E.var_indices(e):
        return None
    return E.eval_expr(e, (), params)


def equality_pins(p: E.Predicate, params: Mapping[str, float]) -> dict:
    """Coordinates forced by conjunctively-placed `xi == c` atoms."""
    pins: dict = {}

    def walk(q: E.Predicate):
        if isinstance(q, E.And):
            walk(q.lhs)
            walk(q.rhs)
            return
        if isinstance(q, E.Cmp) and q.op == "==":
            for a, b in ((q.lhs, q.rhs), (q.rhs, q.lhs)):
                if isinstance(a, E.Var):
                    c = _const_value(b, params)
                    if c is not None:
                        pins[a.index] = c
                        return

    walk(p)
    return pins


def _resolve_box(dim: int, box) -> np.ndarray:
    if box is None:
        w = DEFAULT_BOX_HALF_WIDTH
        return np.array([[-w, w]] * dim, dtype=float)
    arr = np.array(box, dtype=float)
    if arr.shape != (dim, 2):
        raise ValueError(f"box must be {dim} (lo, hi) pairs")
    return arr


def sample_box(dim: int, box, rng: np.random.Generator, count: int) -> np.ndarray:
    b = _resolve_box(dim, box)
    return rng.uniform(b[:, 0], b[:, 1], size=(count, dim))


def sample_predicate(p: E.Predicate, dim: int, params: Mapping[str, float],
                     rng: np.random.Generator, count: int, *,
                     eq_tol: float = 1e-9, box=None,
                     hook: Optional[Callable] = None,
                     max_tries: Optional[int] = None) -> np.ndarray:
    """Up to `count` points satisfying p; raises SamplingStarved on none.

    May return fewer than `count` points for thin sets; callers treat the
    returned batch as the sample population.
    """
    test = E.compile_predicate(p, params)

    if dim == 0:
        pt = np.zeros((1, 0))
        if test(pt[0], eq_tol):
            return pt
        raise SamplingStarved(E.format_predicate(p), 1)

    found = []
    if hook is not None:
        cand = np.atleast_2d(np.asarray(hook(rng, count), dtype=float))
        for x in cand:
            if test(x, eq_tol):
                found.append(x)
        if len(found) >= count:
            return np.array(found[:count])

    pins = equality_pins(p, params)
    budget = max_tries if max_tries is not None else max(4000, 400 * count)
    b = _resolve_box(dim, box)
    tried = 0
    chunk = max(64, count)
    while len(found) < count and tried < budget:
        n = min(chunk, budget - tried)
        batch = rng.uniform(b[:, 0], b[:, 1], size=(n, dim))
        for i, v in pins.items():
            batch[:, i] = v
        for x in batch:
            if test(x, eq_tol):
                found.append(x)
                if len(found) >= count:
                    break
        tried += n
    if not found:
        raise SamplingStarved(E.format_predicate(p), tried)
    return np.array(found)
