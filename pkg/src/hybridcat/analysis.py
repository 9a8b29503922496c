"""Chains, directedness certificates, and trapping-region checks.

An (eps, T)-chain generalizes an execution: flow segments may be stitched
together by reset links (a guard fires and the next segment starts within
eps of the reset image) or by teleport links (the state is displaced by at
most eps inside the same mode). Teleports are rationed in time: counting
t = 0 as the zeroth teleport, consecutive teleport times must differ by at
least T. Distances use the per-mode extended metric that is Euclidean
inside a mode and infinite across modes, so a link never crosses modes
except through a reset edge.

chain_search looks for a chain into a target set by best-first expansion
over (point, time-since-teleport) states. It is sound but not complete:
every chain it returns passes validate_chain, while a not_found result is
inconclusive and is reported as "not certified", never as "not directed".
Branching displacements come from a fixed ball design (see
perturbation_grid) so that searches are reproducible and results at one
(eps, T) can be compared meaningfully against re-runs at looser settings.

Trapping-region checks replace topological interior/closure with a margin
function w: the candidate region is {w >= 0}, its interior proxy {w > delta}
and closure proxy {w >= -delta}. All verdicts are sampled evidence, not
proofs.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import expr as E
from .compose import DirectedSystem
from .morphism import Semiconjugacy
from .report import CheckReport
from .sampling import SamplingStarved, sample_predicate
from .simulate import (
    CompiledSystem,
    ExecutionTrace,
    SimConfig,
    _dp45_single,
    _err_norm,
    _rk4_single,
    flow_until_event,
    simulate,
)
from .system import DEFAULT_EQ_TOL, HybridPoint, HybridSystem, SystemError
from .util import rng_from_seed

__all__ = [
    "ChainSegment",
    "ChainLink",
    "Chain",
    "SearchResult",
    "DirectednessReport",
    "trace_to_chain",
    "validate_chain",
    "perturbation_grid",
    "chain_search",
    "certify_directed",
    "push_chain",
    "check_trapping_region",
    "estimate_attracting_set",
    "pull_back_isolating_neighborhood",
]


# -- chain data ----------------------------------------------------------------


@dataclass(frozen=True)
class ChainSegment:
    """One flow piece of a chain: sampled integral curve inside a mode.

    Times are absolute chain times with ts[0] == t_start and ts[-1] == t_end.
    A zero-duration segment (t_start == t_end) carries a single sample and
    places no flow-set demands on it; its endpoint is constrained only by
    the adjacent links.
    """

    mode: str
    t_start: float
    t_end: float
    ts: np.ndarray
    xs: np.ndarray  # shape (len(ts), dim)

    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class ChainLink:
    """Instantaneous connection between consecutive segments.

    kind 'reset': pre lies in the guard of ``edge`` and gap is the distance
    from post to the reset image of pre. kind 'teleport': pre lies in the
    flow set, both points share a mode, and gap is their distance.
    """

    kind: str  # 'reset' | 'teleport'
    edge: Optional[str]
    t: float
    pre: HybridPoint
    post: HybridPoint
    gap: float


@dataclass(frozen=True)
class Chain:
    """A sampled (eps, T)-chain: segments joined by reset/teleport links."""

    segments: tuple
    links: tuple
    epsilon: float
    T: float

    def start_point(self) -> HybridPoint:
        seg = self.segments[0]
        return HybridPoint(seg.mode, tuple(float(v) for v in seg.xs[0]))

    def end_point(self) -> HybridPoint:
        seg = self.segments[-1]
        return HybridPoint(seg.mode, tuple(float(v) for v in seg.xs[-1]))

    def duration(self) -> float:
        return self.segments[-1].t_end - self.segments[0].t_start

    def teleport_times(self) -> list:
        return [self.segments[i].t_end for i, ln in enumerate(self.links)
                if ln.kind == "teleport"]

    def n_teleports(self) -> int:
        return sum(1 for ln in self.links if ln.kind == "teleport")


def _gap(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0 and b.size == 0:
        return 0.0
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


def _link_from_jump(h: HybridSystem, jump) -> ChainLink:
    pre = HybridPoint(jump.pre_mode, jump.pre_state)
    post = HybridPoint(jump.post_mode, jump.post_state)
    if jump.edge is not None:
        image = h.apply_reset(jump.edge, pre.vec())
        return ChainLink("reset", jump.edge, jump.t, pre, post,
                         _gap(post.vec(), image))
    if jump.pre_mode != jump.post_mode:
        return ChainLink("teleport", None, jump.t, pre, post, math.inf)
    return ChainLink("teleport", None, jump.t, pre, post,
                     _gap(post.vec(), pre.vec()))


def _segment_of(seg) -> ChainSegment:
    ts = np.asarray(seg.ts, dtype=float)
    xs = np.asarray(seg.xs, dtype=float)
    return ChainSegment(seg.mode, float(ts[0]), float(ts[-1]), ts, xs)


def trace_to_chain(trace: ExecutionTrace, *, epsilon: float = 0.0,
                   T: float = 0.0) -> Chain:
    """View an execution trace as a chain.

    Proper executions become (0, 0)-chains: every jump rides a reset edge
    with zero gap. Trivial jumps (edge None, as produced by pushforwards
    that collapse edges) become zero-gap teleports, so a trace containing
    them is only a valid chain for finite T.
    """
    segments = tuple(_segment_of(s) for s in trace.segments)
    links = tuple(_link_from_jump(trace.system, j) for j in trace.jumps)
    return Chain(segments, links, float(epsilon), T)


# -- validation ----------------------------------------------------------------


def _integrate_span(f: Callable, x: np.ndarray, span: float, cfg: SimConfig):
    """Integrate the field for ``span`` time units; None on breakdown."""
    adaptive = cfg.integrator == "rk45"
    x = np.asarray(x, dtype=float)
    remaining = float(span)
    dt = min(cfg.dt_max, remaining)
    while remaining > 1e-15 * max(1.0, span):
        dt = min(dt, remaining)
        try:
            if adaptive:
                x_new, err = _dp45_single(f, x, dt)
            else:
                x_new, err = _rk4_single(f, x, dt), None
        except E.EvalDomainError:
            return None
        if not np.all(np.isfinite(x_new)):
            return None
        if adaptive:
            en = _err_norm(err, x, x_new, cfg.atol, cfg.rtol)
            if en > 1.0:
                dt *= max(0.2, 0.9 * en ** -0.2)
                if dt <= 1e-15 * max(1.0, span):
                    return None
                continue
            fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            remaining -= dt
            dt = min(cfg.dt_max, dt * fac)
        else:
            remaining -= dt
        x = x_new
    return x


def validate_chain(h: HybridSystem, c: Chain, tol: float = 1e-6, *,
                   cfg: Optional[SimConfig] = None) -> CheckReport:
    """Re-verify every defining condition of a chain against its system.

    Checks, all sampled: segment flow-set membership on [t_start, t_end)
    (the endpoint is exempt, since it may sit on a guard), integral-curve
    residual against a fresh integration from each segment's first sample,
    link gaps <= epsilon + tol with reset pres in their guards and teleport
    pres in their flow sets, per-mode metric discipline (a teleport across
    modes is an infinite gap), and teleport separation >= T - tol counting
    t = 0 as the zeroth teleport. epsilon = 0 makes the chain execution-like
    and T = inf forbids teleports outright. Report-valued; never raises on
    a bad chain.
    """
    cfg = cfg or SimConfig()
    rep = CheckReport("chain")
    rep.stats["epsilon"] = c.epsilon
    rep.stats["T"] = c.T
    if not c.segments:
        rep.fail("structure", detail="a chain needs at least one segment")
        return rep
    if len(c.links) != len(c.segments) - 1:
        rep.fail("structure", segments=len(c.segments), links=len(c.links),
                 detail="need exactly one link between consecutive segments")
        return rep

    cs = CompiledSystem(h, cfg.eq_tol)
    for i, seg in enumerate(c.segments):
        if seg.mode not in h.modes:
            rep.fail("unknown_mode", segment=i, mode=seg.mode)
            continue
        dim = h.modes[seg.mode].dim
        ts = np.asarray(seg.ts, dtype=float)
        xs = np.asarray(seg.xs, dtype=float).reshape(len(ts), dim)
        if len(ts) == 0 or abs(ts[0] - seg.t_start) > 1e-9 \
                or abs(ts[-1] - seg.t_end) > 1e-9 or np.any(np.diff(ts) < 0):
            rep.fail("sample_times", segment=i, mode=seg.mode)
            continue
        if i + 1 < len(c.segments):
            if abs(c.segments[i + 1].t_start - seg.t_end) > 1e-9:
                rep.fail("time_gap", segment=i, t_end=seg.t_end,
                         next_start=c.segments[i + 1].t_start)
        for k in range(len(ts)):
            if ts[k] >= seg.t_end:
                break
            if not cs.flow[seg.mode](xs[k]):
                rep.fail("flow_membership", segment=i, mode=seg.mode,
                         t=float(ts[k]), state=xs[k].tolist())
                break
        if dim > 0 and seg.t_end > seg.t_start:
            worst = 0.0
            x = xs[0].copy()
            for k in range(1, len(ts)):
                x = _integrate_span(cs.field[seg.mode], x, float(ts[k] - ts[k - 1]), cfg)
                if x is None:
                    rep.fail("integral_residual", segment=i, mode=seg.mode,
                             t=float(ts[k]), detail="re-integration broke down")
                    break
                worst = max(worst, float(np.max(np.abs(x - xs[k]))))
            else:
                rep.bump_residual(worst)
                if worst > tol:
                    rep.fail("integral_residual", segment=i, mode=seg.mode,
                             residual=worst)

    for i, ln in enumerate(c.links):
        pre_seg, post_seg = c.segments[i], c.segments[i + 1]
        if pre_seg.mode not in h.modes or post_seg.mode not in h.modes:
            continue
        if ln.pre.mode != pre_seg.mode or ln.post.mode != post_seg.mode:
            rep.fail("link_modes", link=i, pre=ln.pre.mode, post=ln.post.mode)
            continue
        if _gap(ln.pre.vec(), np.asarray(pre_seg.xs[-1], float)) > 1e-7 \
                or _gap(ln.post.vec(), np.asarray(post_seg.xs[0], float)) > 1e-7:
            rep.fail("link_endpoints", link=i,
                     detail="link points must be the adjacent segment endpoints")
            continue
        if ln.kind == "reset":
            if ln.edge not in h.resets:
                rep.fail("unknown_edge", link=i, edge=ln.edge)
                continue
            if h.graph.src(ln.edge) != pre_seg.mode or h.graph.tgt(ln.edge) != post_seg.mode:
                rep.fail("link_modes", link=i, edge=ln.edge,
                         detail="edge endpoints disagree with the segments")
                continue
            if not h.in_guard(ln.edge, ln.pre.vec(), cfg.eq_tol):
                rep.fail("guard_membership", link=i, edge=ln.edge,
                         state=list(ln.pre.x))
                continue
            gap = _gap(ln.post.vec(), h.apply_reset(ln.edge, ln.pre.vec()))
        elif ln.kind == "teleport":
            if ln.pre.mode != ln.post.mode:
                rep.fail("cross_mode_teleport", link=i, pre=ln.pre.mode,
                         post=ln.post.mode)
                continue
            if math.isinf(c.T):
                rep.fail("teleport_forbidden", link=i,
                         detail="T = inf leaves no room for teleports")
                continue
            if not h.in_flow(ln.pre.mode, ln.pre.vec(), cfg.eq_tol):
                rep.fail("flow_membership", link=i, mode=ln.pre.mode,
                         state=list(ln.pre.x),
                         detail="teleports must start in the flow set")
                continue
            gap = _gap(ln.post.vec(), ln.pre.vec())
        else:
            rep.fail("unknown_link_kind", link=i, kind=ln.kind)
            continue
        rep.bump_residual(gap if math.isfinite(gap) else 0.0)
        if gap > c.epsilon + tol:
            rep.fail("gap", link=i, link_kind=ln.kind, gap=gap,
                     epsilon=c.epsilon)

    if not math.isinf(c.T):
        marks = [c.segments[0].t_start] + c.teleport_times()
        for k in range(1, len(marks)):
            if marks[k] - marks[k - 1] < c.T - tol:
                rep.fail("teleport_separation", index=k,
                         separation=marks[k] - marks[k - 1], T=c.T)

    rep.stats["segments"] = len(c.segments)
    rep.stats["links"] = len(c.links)
    rep.stats["teleports"] = c.n_teleports()
    rep.stats["duration"] = c.duration()
    return rep


# -- search --------------------------------------------------------------------


def perturbation_grid(dim: int, epsilon: float) -> np.ndarray:
    """Deterministic displacement design used for chain branching.

    Dimension 1 uses both directions, dimension 2 the eight compass
    directions, and higher dimensions the cross-polytope vertices plus the
    normalized pairwise midpoints; each direction is taken at radii epsilon
    and epsilon/2. A fixed design keeps searches reproducible and makes
    re-runs at enlarged epsilon comparable with the original.
    """
    if dim <= 0 or epsilon <= 0.0:
        return np.zeros((0, max(dim, 0)))
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif dim == 2:
        ang = np.arange(8) * (math.pi / 4.0)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        rows = []
        eye = np.eye(dim)
        for i in range(dim):
            rows.append(eye[i])
            rows.append(-eye[i])
        for i in range(dim):
            for j in range(i + 1, dim):
                for si in (1.0, -1.0):
                    for sj in (1.0, -1.0):
                        rows.append((si * eye[i] + sj * eye[j]) / math.sqrt(2.0))
        dirs = np.asarray(rows)
    return np.vstack([epsilon * dirs, 0.5 * epsilon * dirs])


@dataclass
class SearchResult:
    """Outcome of chain_search: the chain if one was found, plus statistics.

    A missing chain is inconclusive: the search is sound (anything returned
    has passed validate_chain, see ``validation``) but not complete.
    """

    chain: Optional[Chain]
    nodes: int
    reason: str  # 'found' | 'budget_exhausted' | 'frontier_exhausted'
    validation: Optional[CheckReport] = None

    @property
    def found(self) -> bool:
        return self.chain is not None


def _normalize_target(h: HybridSystem, target, eq_tol: float) -> dict:
    if isinstance(target, Mapping):
        items = dict(target)
    else:
        modes, pred = target
        items = {v: pred for v in modes}
    if not items:
        raise SystemError("target needs at least one mode")
    checkers = {}
    for v, pred in items.items():
        if v not in h.modes:
            raise SystemError(f"target mode {v!r} is not in the system")
        fn = E.compile_predicate(pred, h.params)

        def run(x, _f=fn):
            try:
                return bool(_f(np.asarray(x, dtype=float), eq_tol))
            except E.EvalDomainError:
                return False

        checkers[v] = run
    return checkers


@dataclass
class _Node:
    mode: str
    x: np.ndarray
    t: float
    tst: float  # time since the last teleport (t = 0 counts as one)
    parent: Optional[int]
    seg: Optional[ChainSegment]
    link: Optional[ChainLink]


def _state_key(mode: str, x: np.ndarray, tst: float) -> tuple:
    return (mode, (np.round(np.asarray(x, float), 12) + 0.0).tobytes(),
            round(tst, 9))


def chain_search(h: HybridSystem, start: HybridPoint, target, epsilon: float,
                 T: float, budget: int = 10_000, *,
                 cfg: Optional[SimConfig] = None,
                 validate_tol: float = 1e-6) -> SearchResult:
    """Best-first search for an (epsilon, T)-chain from start into a target.

    target is either (modes, predicate) or a mapping mode -> predicate; the
    search succeeds at the first expanded state satisfying it. Nodes are
    (point, time-since-teleport) pairs ordered by elapsed time with ties
    broken on (mode, serialized state), so runs are deterministic. Each
    expansion flows until the next confirmed guard event or until teleport
    eligibility, then branches on the reset image (and its ball-design
    perturbations) or on teleport displacements; a zero displacement is
    always included, so waiting in place costs one teleport. cfg.horizon
    bounds the total chain duration and budget bounds node expansions.

    Sound but incomplete: a returned chain has passed validate_chain with
    the same (epsilon, T); a None chain means the search was exhausted or
    ran out of budget, not that no chain exists.
    """
    if epsilon < 0:
        raise SystemError("epsilon must be nonnegative")
    if not (T > 0):
        raise SystemError("T must be positive")
    cfg = cfg or SimConfig()
    if start.mode not in h.modes:
        raise SystemError(f"unknown mode {start.mode!r}")
    checkers = _normalize_target(h, target, cfg.eq_tol)
    cs = CompiledSystem(h, cfg.eq_tol)

    def on_target(mode: str, x) -> bool:
        fn = checkers.get(mode)
        return fn is not None and fn(x)

    def finish(idx: int, final_seg: ChainSegment, expansions: int) -> SearchResult:
        segs, links = [], []
        i = idx
        while nodes[i].parent is not None:
            segs.append(nodes[i].seg)
            links.append(nodes[i].link)
            i = nodes[i].parent
        segs.reverse()
        links.reverse()
        segs.append(final_seg)
        chain = Chain(tuple(segs), tuple(links), float(epsilon), T)
        report = validate_chain(h, chain, validate_tol, cfg=cfg)
        if not report.ok:
            raise RuntimeError(
                f"search produced an invalid chain: {report.violations[:1]}")
        return SearchResult(chain, expansions, "found", report)

    x0 = np.asarray(start.x, dtype=float)
    nodes = [_Node(start.mode, x0, 0.0, 0.0, None, None, None)]
    counter = itertools.count()
    heap = [(0.0, start.mode, _state_key(start.mode, x0, 0.0)[1],
             next(counter), 0)]
    visited = set()
    expansions = 0

    while heap:
        _, _, _, _, idx = heapq.heappop(heap)
        node = nodes[idx]
        key = _state_key(node.mode, node.x, node.tst)
        if key in visited:
            continue
        visited.add(key)
        if expansions >= budget:
            return SearchResult(None, expansions, "budget_exhausted")
        expansions += 1

        mode, x, t, tst = node.mode, node.x, node.t, node.tst
        if on_target(mode, x):
            final = ChainSegment(mode, t, t, np.array([t]),
                                 np.asarray(x, float).reshape(1, -1))
            return finish(idx, final, expansions)

        remaining = cfg.horizon - t
        if remaining <= 0:
            continue
        tp_remaining = math.inf if math.isinf(T) else max(T - tst, 0.0)
        t_limit = t + min(remaining, tp_remaining)
        fr = flow_until_event(cs, mode, x, t, t_limit, cfg)

        hit = None
        for k in range(1, len(fr.ts)):
            if on_target(mode, fr.xs[k]):
                hit = k
                break
        if hit is not None:
            seg = ChainSegment(mode, t, float(fr.ts[hit]),
                               fr.ts[:hit + 1], fr.xs[:hit + 1])
            return finish(idx, seg, expansions)

        seg = ChainSegment(mode, t, float(fr.t_end), fr.ts, fr.xs)
        tst_end = tst + (fr.t_end - t)

        def push_child(child_mode, child_x, child_tst, link):
            child_x = np.asarray(child_x, dtype=float)
            if _state_key(child_mode, child_x, child_tst) in visited:
                return
            nodes.append(_Node(child_mode, child_x, fr.t_end, child_tst,
                               idx, seg, link))
            heapq.heappush(heap, (fr.t_end, child_mode,
                                  _state_key(child_mode, child_x, child_tst)[1],
                                  next(counter), len(nodes) - 1))

        if fr.outcome in ("event", "tie"):
            edges = fr.tied_edges if fr.outcome == "tie" else (fr.edge,)
            pre = HybridPoint(mode, tuple(float(v) for v in fr.x_end))
            for e_ in edges:
                tgt = h.graph.tgt(e_)
                exact = np.asarray(cs.reset[e_](fr.x_end), dtype=float)
                cands = [exact]
                grid = perturbation_grid(cs.dim[tgt], epsilon)
                cands.extend(exact + row for row in grid)
                seen = set()
                for cand in cands:
                    bkey = (np.round(cand, 12) + 0.0).tobytes()
                    if bkey in seen or not cs.active[tgt](cand):
                        continue
                    seen.add(bkey)
                    post = HybridPoint(tgt, tuple(float(v) for v in cand))
                    push_child(tgt, cand, tst_end,
                               ChainLink("reset", e_, float(fr.t_end), pre,
                                         post, _gap(cand, exact)))
        elif fr.outcome == "limit":
            eligible = (not math.isinf(T)) and tst_end >= T - 1e-9 \
                and fr.t_end < cfg.horizon - 1e-12
            if eligible:
                pre = HybridPoint(mode, tuple(float(v) for v in fr.x_end))
                cands = [np.asarray(fr.x_end, dtype=float)]
                cands.extend(fr.x_end + row
                             for row in perturbation_grid(cs.dim[mode], epsilon))
                seen = set()
                for cand in cands:
                    bkey = (np.round(cand, 12) + 0.0).tobytes()
                    if bkey in seen or not cs.active[mode](cand):
                        continue
                    seen.add(bkey)
                    post = HybridPoint(mode, tuple(float(v) for v in cand))
                    push_child(mode, cand, 0.0,
                               ChainLink("teleport", None, float(fr.t_end),
                                         pre, post, _gap(cand, fr.x_end)))
        # blocked/escaped ends: nothing to branch on

    return SearchResult(None, expansions, "frontier_exhausted")


# -- directedness --------------------------------------------------------------


@dataclass
class DirectednessReport:
    """Sampled evidence that a directed system's chains reach its exit.

    results holds one entry per sampled start with the method that reached
    the final image ('simulation' for a plain execution, 'chain' when
    teleports were needed) and the evidence chain itself; a start the search
    could not connect is recorded as not certified. coverage is the reached
    fraction.
    """

    epsilon: float
    T: float
    seed: int
    starts: tuple
    results: tuple
    coverage: float
    budget_used: int
    report: CheckReport

    @property
    def ok(self) -> bool:
        return self.report.ok


def _final_image_target(d: DirectedSystem, target_tol: float) -> dict:
    """Membership predicates for the image of the final embedding.

    For each final component with map m and declared inverse n, a carrier
    point y is near the image when n(y) satisfies the component's active
    predicate and the round trip m(n(y)) returns to within target_tol of y.
    """
    target = {}
    for w in d.final.dom.graph.vertices:
        u = d.final.g.v_map[w]
        m = d.final.maps[w]
        inv = d.final.inverses[w]
        active = E.substitute_predicate(d.final.dom.modes[w].active,
                                        inv.components)
        round_trip = [E.substitute(comp, inv.components) for comp in m.components]
        sq = None
        for i, comp in enumerate(round_trip):
            diff = E.Bin("-", comp, E.Var(i))
            term = E.Bin("*", diff, diff)
            sq = term if sq is None else E.Bin("+", sq, term)
        if sq is None:
            target[u] = active
        else:
            target[u] = E.conj(active, E.Cmp("<=", sq, E.Num(target_tol ** 2)))
    return target


def _chain_from_trace_until(trace: ExecutionTrace, stop: Callable,
                            epsilon: float, T: float) -> Optional[Chain]:
    """Truncate a trace at the first sample satisfying ``stop``; None if none."""
    segs = []
    for k, seg in enumerate(trace.segments):
        for i in range(len(seg.ts)):
            if stop(seg.mode, seg.xs[i]):
                ts = np.asarray(seg.ts[:i + 1], dtype=float)
                xs = np.asarray(seg.xs[:i + 1], dtype=float)
                segs.append(ChainSegment(seg.mode, float(ts[0]), float(ts[-1]),
                                         ts, xs))
                links = tuple(_link_from_jump(trace.system, j)
                              for j in trace.jumps[:k])
                return Chain(tuple(segs), links, float(epsilon), T)
        segs.append(_segment_of(seg))
    return None


def certify_directed(d: DirectedSystem, epsilon: float, T: float,
                     samples: int = 20, budget: int = 10_000, seed: int = 0, *,
                     cfg: Optional[SimConfig] = None,
                     target_tol: float = 1e-6) -> DirectednessReport:
    """Sampled (epsilon, T)-chain certificate for a directed system.

    Draws starts across the carrier's modes and tries to connect each to
    the image of the final embedding: first by plain simulation (the
    sufficient check, since an execution into the exit is a chain with no
    teleports), then by chain_search. Full coverage records the certificate
    on d.certified; anything less leaves it untouched and reports the
    missed starts as not certified - search failure is never evidence of
    non-directedness.
    """
    cfg = cfg or SimConfig()
    rng = rng_from_seed(seed)
    rep = CheckReport("directedness")
    target = _final_image_target(d, target_tol)
    checkers = _normalize_target(d.carrier, target, cfg.eq_tol)

    def on_target(mode: str, x) -> bool:
        fn = checkers.get(mode)
        return fn is not None and fn(x)

    starts = []
    per_mode = max(1, samples // max(1, len(d.carrier.modes)))
    for v in sorted(d.carrier.modes):
        m = d.carrier.modes[v]
        if m.declared_empty:
            continue
        if m.dim == 0:
            starts.append(HybridPoint(v, ()))
            continue
        try:
            pts = d.carrier.sample_mode(v, "active", rng, per_mode,
                                        eq_tol=cfg.eq_tol)
        except SamplingStarved as exc:
            rep.starve(f"mode {v}", detail=str(exc))
            continue
        starts.extend(HybridPoint(v, tuple(float(c) for c in row))
                      for row in pts)

    results = []
    budget_used = 0
    reached = 0
    for pt in starts:
        trace = simulate(d.carrier, pt, cfg)
        chain = _chain_from_trace_until(trace, on_target, epsilon, T)
        if chain is not None:
            results.append({"start": pt, "method": "simulation",
                            "chain": chain, "nodes": 0})
            reached += 1
            continue
        res = chain_search(d.carrier, pt, target, epsilon, T, budget, cfg=cfg)
        budget_used += res.nodes
        if res.found:
            results.append({"start": pt, "method": "chain",
                            "chain": res.chain, "nodes": res.nodes})
            reached += 1
        else:
            results.append({"start": pt, "method": None, "chain": None,
                            "nodes": res.nodes, "reason": res.reason})
            rep.fail("not_certified", start=(pt.mode, list(pt.x)),
                     reason=res.reason,
                     detail="no chain found within budget; inconclusive")

    coverage = reached / len(starts) if starts else 0.0
    if not starts:
        rep.fail("no_starts", detail="sampling produced no start points")
    rep.stats.update({
        "coverage": coverage,
        "budget_used": budget_used,
        "samples": len(starts),
        "by_simulation": sum(1 for r in results if r["method"] == "simulation"),
        "by_chain": sum(1 for r in results if r["method"] == "chain"),
        "teleports_needed": sum(1 for r in results if r["chain"] is not None
                                and r["chain"].n_teleports() > 0),
    })
    out = DirectednessReport(float(epsilon), T, seed, tuple(starts),
                             tuple(results), coverage, budget_used, rep)
    if starts and coverage == 1.0:
        d.certified = {"epsilon": float(epsilon), "T": T, "seed": seed,
                       "samples": len(starts), "evidence": out}
    return out


# -- pushforward ---------------------------------------------------------------


def push_chain(alpha: Semiconjugacy, c: Chain, *,
               merge_tol: float = 1e-9) -> Chain:
    """Image of a chain under a semiconjugacy, with recomputed gaps.

    Segments map through the per-mode components; reset links follow the
    graph morphism, turning into teleports when their edge collapses onto a
    vertex. Teleports whose image gap is below merge_tol fuse the adjacent
    segments back into one integral curve. The image epsilon is the largest
    observed gap (an empirical stand-in for a modulus of continuity) and
    the image T is the smallest observed teleport separation, so the result
    revalidates as-is.
    """
    params = alpha.merged_params()
    fns = {v: alpha.maps[v].compiled(params) for v in alpha.dom.graph.vertices}
    vmap = alpha.g.v_map

    segs = []
    for seg in c.segments:
        f = fns[seg.mode]
        dim = alpha.cod.modes[vmap[seg.mode]].dim
        xs = np.array([f(np.asarray(row, float)) for row in seg.xs],
                      dtype=float).reshape(len(seg.ts), dim)
        segs.append(ChainSegment(vmap[seg.mode], seg.t_start, seg.t_end,
                                 np.asarray(seg.ts, float).copy(), xs))

    links = []
    for ln in c.links:
        pre = np.asarray(fns[ln.pre.mode](ln.pre.vec()), dtype=float)
        post = np.asarray(fns[ln.post.mode](ln.post.vec()), dtype=float)
        pre_pt = HybridPoint(vmap[ln.pre.mode], tuple(float(v) for v in pre))
        post_pt = HybridPoint(vmap[ln.post.mode], tuple(float(v) for v in post))
        if ln.kind == "reset":
            ref = alpha.g.e_map[ln.edge]
            if ref.is_vertex():
                links.append(ChainLink("teleport", None, ln.t, pre_pt, post_pt,
                                       _gap(post, pre)))
            else:
                image = alpha.cod.apply_reset(ref.id, pre)
                links.append(ChainLink("reset", ref.id, ln.t, pre_pt, post_pt,
                                       _gap(post, image)))
        else:
            links.append(ChainLink("teleport", None, ln.t, pre_pt, post_pt,
                                   _gap(post, pre)))

    merged_segs = [segs[0]]
    merged_links = []
    for i, ln in enumerate(links):
        nxt = segs[i + 1]
        prev = merged_segs[-1]
        if ln.kind == "teleport" and ln.gap <= merge_tol \
                and prev.mode == nxt.mode:
            merged_segs[-1] = ChainSegment(
                prev.mode, prev.t_start, nxt.t_end,
                np.concatenate([prev.ts, nxt.ts[1:]]),
                np.vstack([prev.xs, nxt.xs[1:]]))
            continue
        merged_links.append(ln)
        merged_segs.append(nxt)

    eps_image = max((ln.gap for ln in merged_links), default=0.0)
    marks = [merged_segs[0].t_start]
    marks += [merged_segs[i].t_end for i, ln in enumerate(merged_links)
              if ln.kind == "teleport"]
    if len(marks) > 1:
        t_image = float(min(np.diff(marks)))
    else:
        t_image = c.T
    return Chain(tuple(merged_segs), tuple(merged_links), float(eps_image),
                 float(t_image))


# -- trapping regions and attracting sets ----------------------------------------


def _margin_exprs(h: HybridSystem, margins: Mapping) -> dict:
    out = {}
    for v, w in margins.items():
        if v not in h.modes:
            raise SystemError(f"margin given for unknown mode {v!r}")
        out[v] = E.parse_expr(w, h.modes[v].dim) if isinstance(w, str) else w
    return out


def _margin_fn(expr: E.Expr, params: Mapping) -> Callable:
    fn = E.compile_expr(expr, params)

    def run(x):
        try:
            return float(fn(np.asarray(x, dtype=float)))
        except E.EvalDomainError:
            return -math.inf

    return run


def _sample_region(h: HybridSystem, v: str, expr: E.Expr, offset: float,
                   rng, count: int, eq_tol: float) -> np.ndarray:
    m = h.modes[v]
    pred = E.conj(m.active, E.Cmp(">=", expr, E.Num(-offset)))
    return sample_predicate(pred, m.dim, h.params, rng, count,
                            eq_tol=eq_tol, box=m.box, hook=m.active_sampler)


def check_trapping_region(h: HybridSystem, margins: Mapping, t_bound: float,
                          samples: int = 100, horizon: float = 50.0,
                          cfg: Optional[SimConfig] = None, seed: int = 0, *,
                          delta: Optional[float] = None) -> CheckReport:
    """Sampled trapping-region check for W = {w >= 0} given per-mode margins.

    Three conditions, each evidenced on sampled starts: simulations from W
    must reach the horizon; no trajectory from W may leave {w >= 0} (a mode
    without a margin entry counts as outside W); and trajectories started
    in the closure proxy {w >= -delta} must satisfy w > delta for all
    t in [t_bound, horizon], the margin rendering of "the closure flows
    into the interior in bounded time". delta defaults to 1e-6 times the
    largest sampled margin magnitude. Worst margins and witnesses are
    recorded; verdicts are evidence, not proof.
    """
    cfg = replace(cfg or SimConfig(), horizon=float(horizon))
    rng = rng_from_seed(seed)
    rep = CheckReport("trapping_region")
    exprs = _margin_exprs(h, margins)
    wfns = {v: _margin_fn(e_, h.params) for v, e_ in exprs.items()}
    per_mode = max(1, samples // max(1, len(exprs)))

    region, closure = [], []
    scale = 1.0
    for v, e_ in sorted(exprs.items()):
        if h.modes[v].dim == 0:
            region.append(HybridPoint(v, ()))
            continue
        try:
            pts = _sample_region(h, v, e_, 0.0, rng, per_mode, cfg.eq_tol)
        except SamplingStarved as exc:
            rep.starve(f"mode {v}", detail=str(exc))
            continue
        region.extend(HybridPoint(v, tuple(float(c) for c in row))
                      for row in pts)
        scale = max(scale, max(abs(wfns[v](row)) for row in pts))
    offset = float(delta) if delta is not None else 1e-6 * scale
    rep.stats["delta"] = offset

    for v, e_ in sorted(exprs.items()):
        if h.modes[v].dim == 0:
            closure.append(HybridPoint(v, ()))
            continue
        try:
            pts = _sample_region(h, v, e_, offset, rng, per_mode, cfg.eq_tol)
        except SamplingStarved:
            continue  # already reported above for the region itself
        closure.extend(HybridPoint(v, tuple(float(c) for c in row))
                       for row in pts)

    worst_invariance = math.inf
    worst_settling = math.inf

    def margin_course(trace):
        for seg in trace.segments:
            fn = wfns.get(seg.mode)
            for k in range(len(seg.ts)):
                yield seg.mode, float(seg.ts[k]), seg.xs[k], \
                    (-math.inf if fn is None else fn(seg.xs[k]))

    for pt in region:
        trace = simulate(h, pt, cfg)
        if trace.classification != "horizon_truncated":
            rep.fail("blocked", start=(pt.mode, list(pt.x)),
                     classification=trace.classification,
                     t=trace.stop_time())
            continue
        for mode, t, x, w in margin_course(trace):
            worst_invariance = min(worst_invariance, w)
            if w < -1e-9:
                rep.fail("invariance", start=(pt.mode, list(pt.x)), mode=mode,
                         t=t, state=np.asarray(x).tolist(), margin=w)
                break

    for pt in closure:
        trace = simulate(h, pt, cfg)
        if trace.classification != "horizon_truncated":
            rep.fail("blocked", start=(pt.mode, list(pt.x)),
                     classification=trace.classification,
                     t=trace.stop_time())
            continue
        for mode, t, x, w in margin_course(trace):
            if t < t_bound:
                continue
            worst_settling = min(worst_settling, w)
            if w <= offset:
                rep.fail("settling", start=(pt.mode, list(pt.x)), mode=mode,
                         t=t, state=np.asarray(x).tolist(), margin=w,
                         t_bound=t_bound)
                break

    rep.stats.update({
        "region_samples": len(region),
        "closure_samples": len(closure),
        "worst_invariance_margin": worst_invariance,
        "worst_settling_margin": worst_settling,
        "horizon": horizon,
        "t_bound": t_bound,
    })
    return rep


def estimate_attracting_set(h: HybridSystem, margins: Mapping, horizon: float,
                            resolution: int = 9,
                            cfg: Optional[SimConfig] = None, *,
                            candidate: Optional[Mapping] = None):
    """Forward image of a grid over W = {w >= 0} at the horizon.

    Grids each margin-bearing mode's box (falling back to [-4, 4] per axis),
    keeps the points inside the mode's active set with nonnegative margin,
    and simulates each to the horizon; the surviving endpoints form a point
    cloud standing in for the attracting set trapped by W. When candidate
    maps modes to distance-like expressions, the report records the largest
    |candidate| over the cloud as a one-sided Hausdorff proxy. Returns
    (cloud, report).
    """
    cfg = replace(cfg or SimConfig(), horizon=float(horizon))
    rep = CheckReport("attracting_set")
    exprs = _margin_exprs(h, margins)
    wfns = {v: _margin_fn(e_, h.params) for v, e_ in exprs.items()}

    seeds = []
    for v in sorted(exprs):
        m = h.modes[v]
        if m.dim == 0:
            seeds.append(HybridPoint(v, ()))
            continue
        box = np.asarray(m.box if m.box is not None else [(-4.0, 4.0)] * m.dim,
                         dtype=float).reshape(m.dim, 2)
        axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
        for combo in itertools.product(*axes):
            x = np.asarray(combo, dtype=float)
            if wfns[v](x) >= 0.0 and h.in_active(v, x, cfg.eq_tol):
                seeds.append(HybridPoint(v, tuple(float(c) for c in x)))

    cloud = []
    skipped = 0
    for pt in seeds:
        trace = simulate(h, pt, cfg)
        if trace.classification == "horizon_truncated":
            cloud.append(trace.final_point())
        else:
            skipped += 1
    rep.stats.update({"grid_points": len(seeds), "cloud_size": len(cloud),
                      "skipped": skipped, "horizon": horizon,
                      "resolution": resolution})

    if candidate is not None and cloud:
        cand_exprs = _margin_exprs(h, candidate)
        cand_fns = {v: _margin_fn(e_, h.params) for v, e_ in cand_exprs.items()}
        worst = 0.0
        unscored = 0
        for pt in cloud:
            fn = cand_fns.get(pt.mode)
            if fn is None:
                unscored += 1
                worst = math.inf
                continue
            worst = max(worst, abs(fn(pt.vec())))
        if unscored:
            rep.note(f"{unscored} cloud points in modes without a candidate "
                     "expression")
        rep.stats["max_candidate_distance"] = worst
    return cloud, rep


def pull_back_isolating_neighborhood(p: Semiconjugacy, w: Mapping) -> dict:
    """Pull a per-mode predicate or margin back along a semiconjugacy.

    Entries of w are keyed by codomain vertices and may be predicates or
    margin expressions; each domain vertex whose image carries an entry
    receives the syntactic composition with p's component map. Pulling back
    along a composition equals composing pullbacks, since both are plain
    substitution.
    """
    out = {}
    for u in p.dom.graph.vertices:
        img = p.g.v_map[u]
        if img not in w:
            continue
        val = w[img]
        comps = p.maps[u].components
        if isinstance(val, (E.Cmp, E.And, E.Or, E.Not)):
            out[u] = E.substitute_predicate(val, comps)
        else:
            out[u] = E.substitute(val, comps)
    return out
