"""Hybrid systems over Euclidean charts.

A system is a graph whose vertices carry continuous modes (ambient dimension,
vector field, active set, flow set) and whose edges carry resets (guard set,
scalar event function, reset map). Sets are predicate-described subsets of
R^n. The extended metric is Euclidean within a mode and infinite across
modes unless a caller supplies something else.

This module owns the data model plus the sampled structural checks:
containments, determinism, nonblocking-up-to-horizon, pullback along a graph
morphism, and pruning of declared-empty parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np

from . import expr as E
from .graphs import Graph, GraphMorphism, GraphError, vref
from .report import CheckReport
from .sampling import SamplingStarved, sample_predicate

__all__ = [
    "Mode", "ResetEdge", "HybridSystem", "HybridPoint", "SystemError",
    "validate_system", "check_determinism", "check_nonblocking",
    "pullback_along_graph_morphism", "prune", "point_system",
    "DEFAULT_EQ_TOL",
]

DEFAULT_EQ_TOL = 1e-9


class SystemError(ValueError):
    pass


@dataclass
class Mode:
    """One continuous regime: where states live and how they move.

    box and sampler are sampling hints (rectangle to draw from, or a direct
    point generator for thin sets); they never affect dynamics and are
    excluded from structural equality.
    """

    id: str
    dim: int
    field: E.VectorExpr
    active: E.Predicate
    flow: E.Predicate
    declared_empty: bool = False
    box: Optional[list] = None
    active_sampler: Optional[Callable] = None
    flow_sampler: Optional[Callable] = None

    def __post_init__(self):
        if self.dim < 0:
            raise SystemError(f"mode {self.id!r}: negative dimension")
        if self.field.dim_in != self.dim or self.field.dim_out != self.dim:
            raise SystemError(f"mode {self.id!r}: field must be {self.dim}->{self.dim}")

    def core(self) -> tuple:
        return (self.id, self.dim, self.field, self.active, self.flow,
                self.declared_empty)

    def __eq__(self, other):
        if not isinstance(other, Mode):
            return NotImplemented
        return self.core() == other.core()


@dataclass
class ResetEdge:
    """A discrete transition: guard set, event function, reset map.

    The guard is hit when the event function crosses zero from strictly
    positive while the guard predicate holds.
    """

    id: str
    guard: E.Predicate
    event: E.Expr
    reset: E.VectorExpr
    declared_empty: bool = False
    guard_sampler: Optional[Callable] = None

    def core(self) -> tuple:
        return (self.id, self.guard, self.event, self.reset, self.declared_empty)

    def __eq__(self, other):
        if not isinstance(other, ResetEdge):
            return NotImplemented
        return self.core() == other.core()


@dataclass(frozen=True)
class HybridPoint:
    mode: str
    x: tuple

    def vec(self) -> np.ndarray:
        return np.array(self.x, dtype=float)


class HybridSystem:
    def __init__(self, graph: Graph, modes: Mapping[str, Mode],
                 resets: Mapping[str, ResetEdge], params: Optional[Mapping] = None):
        self.graph = graph
        self.modes = dict(modes)
        self.resets = dict(resets)
        self.params = {k: float(v) for k, v in (params or {}).items()}
        if set(self.modes) != set(graph.vertices):
            raise SystemError("modes must be keyed exactly by graph vertices")
        if set(self.resets) != set(graph.edges):
            raise SystemError("resets must be keyed exactly by graph edges")
        for v, m in self.modes.items():
            if m.id != v:
                raise SystemError(f"mode key {v!r} does not match mode id {m.id!r}")
        for e, r in self.resets.items():
            if r.id != e:
                raise SystemError(f"reset key {e!r} does not match edge id {r.id!r}")
            src_dim = self.modes[graph.src(e)].dim
            tgt_dim = self.modes[graph.tgt(e)].dim
            if r.reset.dim_in != src_dim or r.reset.dim_out != tgt_dim:
                raise SystemError(
                    f"edge {e!r}: reset must map dim {src_dim} -> {tgt_dim}, "
                    f"got {r.reset.dim_in} -> {r.reset.dim_out}")

    # -- points --------------------------------------------------------------

    def point(self, mode: str, x, eq_tol: float = DEFAULT_EQ_TOL) -> HybridPoint:
        """Checked constructor: x must satisfy the mode's active predicate."""
        m = self.modes[mode]
        vec = np.asarray(x, dtype=float).reshape(m.dim)
        if not E.eval_predicate(m.active, vec, self.params, eq_tol):
            raise SystemError(f"point {vec.tolist()} is not in the active set of "
                              f"mode {mode!r}")
        return HybridPoint(mode, tuple(float(c) for c in vec))

    def in_active(self, mode: str, x, eq_tol: float = DEFAULT_EQ_TOL) -> bool:
        return E.eval_predicate(self.modes[mode].active, x, self.params, eq_tol)

    def in_flow(self, mode: str, x, eq_tol: float = DEFAULT_EQ_TOL) -> bool:
        return E.eval_predicate(self.modes[mode].flow, x, self.params, eq_tol)

    def in_guard(self, edge: str, x, eq_tol: float = DEFAULT_EQ_TOL) -> bool:
        return E.eval_predicate(self.resets[edge].guard, x, self.params, eq_tol)

    def apply_reset(self, edge: str, x) -> np.ndarray:
        return self.resets[edge].reset(x, self.params)

    def out_edges(self, mode: str) -> list:
        return self.graph.edges_from(mode)

    # -- structure -----------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, HybridSystem):
            return NotImplemented
        return (self.graph == other.graph
                and self.modes == other.modes
                and self.resets == other.resets
                and self.params == other.params)

    def __repr__(self):
        return (f"HybridSystem({len(self.modes)} modes, {len(self.resets)} edges, "
                f"params={self.params})")

    def sample_mode(self, mode: str, which: str, rng, count: int, *,
                    eq_tol: float = DEFAULT_EQ_TOL) -> np.ndarray:
        """Sample the active ('active'), flow ('flow') set of a mode."""
        m = self.modes[mode]
        pred = m.active if which == "active" else m.flow
        hook = m.active_sampler if which == "active" else m.flow_sampler
        if hook is None and which == "flow":
            hook = m.active_sampler  # active hook often covers the flow set
        return sample_predicate(pred, m.dim, self.params, rng, count,
                                eq_tol=eq_tol, box=m.box, hook=hook)

    def sample_guard(self, edge: str, rng, count: int, *,
                     eq_tol: float = DEFAULT_EQ_TOL) -> np.ndarray:
        r = self.resets[edge]
        m = self.modes[self.graph.src(edge)]
        return sample_predicate(r.guard, m.dim, self.params, rng, count,
                                eq_tol=eq_tol, box=m.box, hook=r.guard_sampler)


def point_system(mode_id: str = "pt") -> HybridSystem:
    """The one-point system: a single dimension-zero mode, no edges.

    Terminal among systems; its lone state is the empty vector.
    """
    truth = E.parse_predicate("0 <= 1")
    m = Mode(mode_id, 0, E.VectorExpr(0, ()), truth, truth)
    return HybridSystem(Graph([mode_id], []), {mode_id: m}, {})


# ---------------------------------------------------------------------------
# Sampled checks
# ---------------------------------------------------------------------------

def validate_system(h: HybridSystem, samples: int = 1000, seed: int = 0, *,
                    eq_tol: float = DEFAULT_EQ_TOL) -> CheckReport:
    """Sampled containments: flow within active, guards within their source
    active set, reset images within the target active set. Starved sets are
    reported as emptiness suspicions, not violations."""
    from .util import rng_from_seed
    rng = rng_from_seed(seed)
    rep = CheckReport("validate_system")
    rep.stats["samples"] = samples
    rep.stats["seed"] = seed
    for v, m in h.modes.items():
        try:
            pts_a = h.sample_mode(v, "active", rng, samples, eq_tol=eq_tol)
            rep.stats[f"active_samples.{v}"] = len(pts_a)
        except SamplingStarved as s:
            if not m.declared_empty:
                rep.starve(f"active({v})", tries=s.tries,
                           suspicion="active set may be empty")
            continue
        try:
            pts_f = h.sample_mode(v, "flow", rng, samples, eq_tol=eq_tol)
        except SamplingStarved as s:
            rep.starve(f"flow({v})", tries=s.tries)
            pts_f = np.zeros((0, m.dim))
        for x in pts_f:
            if not h.in_active(v, x, eq_tol):
                rep.fail("flow_not_in_active", mode=v, x=x)
                break
    for e in h.graph.edges:
        src, tgt = h.graph.src(e), h.graph.tgt(e)
        try:
            pts_z = h.sample_guard(e, rng, samples, eq_tol=eq_tol)
        except SamplingStarved as s:
            if not h.resets[e].declared_empty:
                rep.starve(f"guard({e})", tries=s.tries)
            continue
        rep.stats[f"guard_samples.{e}"] = len(pts_z)
        for x in pts_z:
            if not h.in_active(src, x, eq_tol):
                rep.fail("guard_not_in_source_active", edge=e, x=x)
                break
        for x in pts_z:
            try:
                y = h.apply_reset(e, x)
            except E.EvalDomainError as err:
                rep.fail("reset_domain_error", edge=e, x=x, error=str(err))
                break
            if not h.in_active(tgt, y, eq_tol):
                rep.fail("reset_image_not_in_target_active", edge=e, x=x, image=y)
                break
    return rep


def check_determinism(h: HybridSystem, samples: int = 1000, seed: int = 0, *,
                      eq_tol: float = DEFAULT_EQ_TOL) -> CheckReport:
    """Sampled pairwise disjointness of each mode's flow set and guards.

    The sample pool per mode is drawn from the active set AND from each of
    the thin sets themselves (flow, every guard), so equality-pinned guard
    points like {x == 0} participate. ODE uniqueness is assumed from
    expression smoothness, not checked.
    """
    from .util import rng_from_seed
    rng = rng_from_seed(seed)
    rep = CheckReport("check_determinism")
    rep.stats["samples"] = samples
    rep.stats["seed"] = seed
    rep.note("ODE uniqueness assumed from expression smoothness; not checked")
    for v, m in h.modes.items():
        pool = []
        for which in ("active", "flow"):
            try:
                pool.append(h.sample_mode(v, which, rng, samples, eq_tol=eq_tol))
            except SamplingStarved:
                pass
        out = h.out_edges(v)
        for e in out:
            try:
                pool.append(h.sample_guard(e, rng, max(8, samples // 4), eq_tol=eq_tol))
            except SamplingStarved:
                pass
        if not pool:
            rep.starve(f"mode({v})")
            continue
        pts = np.vstack(pool)
        tests = [("flow", E.compile_predicate(m.flow, h.params))]
        tests += [(f"guard:{e}", E.compile_predicate(h.resets[e].guard, h.params))
                  for e in out]
        for x in pts:
            members = [name for name, t in tests if t(x, eq_tol)]
            if len(members) > 1:
                rep.fail("overlap", mode=v, x=x, sets=members)
                break
    return rep


def check_nonblocking(h: HybridSystem, samples: int = 100, horizon: float = 10.0,
                      seed: int = 0, *, cfg=None,
                      eq_tol: float = DEFAULT_EQ_TOL) -> CheckReport:
    """Simulate sampled starts; flag any that halt before the horizon."""
    from .util import rng_from_seed
    from .simulate import SimConfig, simulate
    rng = rng_from_seed(seed)
    cfg = cfg or SimConfig(horizon=horizon)
    cfg = replace(cfg, horizon=horizon)
    rep = CheckReport("check_nonblocking")
    rep.stats["samples"] = samples
    rep.stats["seed"] = seed
    rep.stats["horizon"] = horizon
    per_mode = max(1, samples // max(1, len(h.modes)))
    for v in h.modes:
        try:
            pts = h.sample_mode(v, "active", rng, per_mode, eq_tol=eq_tol)
        except SamplingStarved as s:
            rep.starve(f"active({v})", tries=s.tries)
            continue
        for x in pts:
            trace = simulate(h, h.point(v, x, eq_tol), cfg)
            if trace.classification == "finite_blocked":
                rep.fail("blocked", mode=v, x=x, stop_time=trace.stop_time())
            elif trace.classification == "model_error":
                rep.fail("model_error", mode=v, x=x, detail=trace.error or "")
    if rep.ok:
        rep.note(f"nonblocking up to horizon {horizon} on sampled starts")
    return rep


# ---------------------------------------------------------------------------
# Pullback and pruning
# ---------------------------------------------------------------------------

def pullback_along_graph_morphism(h: HybridSystem, phi: GraphMorphism):
    """Pull the dynamics of h back along a graph morphism into G(h).

    Vertices copy (active, flow, field) from their images. An edge mapping
    to an edge copies that reset; an edge collapsed to a vertex w gets guard
    = flow(w), identity reset, and a never-crossing event (such jumps fire
    through the start-in-guard rule). Returns (system, cartesian lift).
    """
    from .morphism import Semiconjugacy
    if phi.cod != h.graph:
        raise SystemError("morphism must land in the system's graph")
    modes = {}
    for v in phi.dom.vertices:
        src = h.modes[phi.v_map[v]]
        modes[v] = Mode(v, src.dim, src.field, src.active, src.flow,
                        declared_empty=src.declared_empty, box=src.box,
                        active_sampler=src.active_sampler,
                        flow_sampler=src.flow_sampler)
    resets = {}
    for e in phi.dom.edges:
        img = phi.e_map[e]
        if img.is_vertex():
            w = h.modes[img.id]
            resets[e] = ResetEdge(e, w.flow, E.Neg(E.Num(1.0)),
                                  E.identity_vector(w.dim),
                                  guard_sampler=w.flow_sampler or w.active_sampler)
        else:
            r = h.resets[img.id]
            resets[e] = ResetEdge(e, r.guard, r.event, r.reset,
                                  declared_empty=r.declared_empty,
                                  guard_sampler=r.guard_sampler)
    k = HybridSystem(phi.dom, modes, resets, h.params)
    maps = {v: E.identity_vector(modes[v].dim) for v in phi.dom.vertices}
    lift = Semiconjugacy(k, h, phi, maps, inverses=dict(maps))
    return k, lift


def prune(h: HybridSystem, *, sampled_empty_modes=(), sampled_empty_edges=(),
          confirm: bool = False) -> HybridSystem:
    """Remove declared-empty modes/edges (and edges touching removed modes).

    Sampled-empty candidates are honored only with confirm=True; emptiness
    is undecidable from predicates, so sampling alone never prunes.
    """
    sampled_empty_modes = set(sampled_empty_modes)
    sampled_empty_edges = set(sampled_empty_edges)
    if (sampled_empty_modes or sampled_empty_edges) and not confirm:
        raise SystemError("sampled emptiness needs confirm=True to prune")
    dead_modes = {v for v, m in h.modes.items() if m.declared_empty}
    dead_modes |= sampled_empty_modes
    dead_edges = {e for e, r in h.resets.items() if r.declared_empty}
    dead_edges |= sampled_empty_edges
    dead_edges |= {e for e in h.graph.edges
                   if h.graph.src(e) in dead_modes or h.graph.tgt(e) in dead_modes}
    verts = [v for v in h.graph.vertices if v not in dead_modes]
    edges = [(e, s, t) for e, s, t in h.graph.edge_items() if e not in dead_edges]
    g = Graph(verts, edges)
    return HybridSystem(g, {v: h.modes[v] for v in verts},
                        {e: h.resets[e] for e, _, _ in edges}, h.params)
