"""Maps between hybrid systems and their numerical classification.

A semiconjugacy is a graph morphism together with one smooth map per domain
mode, required to send flow sets into flow sets, commute with the fields on
flow sets, send guards into guards (or into the flow set, when the edge is
collapsed onto a vertex), and commute with resets. Everything here is
checked by sampling: verdicts are "consistent with", never proofs, and every
report records the seed and sample counts that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from . import expr as E
from .graphs import GraphMorphism, compose_graph_morphisms, identity_morphism
from .report import CheckReport
from .sampling import SamplingStarved
from .system import HybridPoint, HybridSystem, SystemError
from .util import rng_from_seed

__all__ = [
    "Semiconjugacy", "SubdivisionHandle",
    "identity_semiconjugacy", "compose_semiconjugacies",
    "validate_semiconjugacy", "classify_embedding", "classify_submersion",
    "check_subdivision_necessary",
]


class Semiconjugacy:
    """A structure-respecting map between hybrid systems.

    maps: one VectorExpr per domain vertex (domain mode dim -> image mode
    dim). inverses: optional per-vertex VectorExpr for maps declared
    diffeomorphic onto their image; never computed numerically here, only
    validated, because downstream composition needs them exact.
    """

    def __init__(self, dom: HybridSystem, cod: HybridSystem, g: GraphMorphism,
                 maps: Mapping[str, E.VectorExpr],
                 inverses: Optional[Mapping[str, E.VectorExpr]] = None):
        if g.dom != dom.graph or g.cod != cod.graph:
            raise SystemError("graph morphism endpoints do not match the systems")
        self.dom = dom
        self.cod = cod
        self.g = g
        self.maps = dict(maps)
        self.inverses = dict(inverses) if inverses else {}
        self.handle: Optional["SubdivisionHandle"] = None
        if set(self.maps) != set(dom.graph.vertices):
            raise SystemError("need exactly one map per domain vertex")
        for v, f in self.maps.items():
            dv = dom.modes[v].dim
            cv = cod.modes[g.v_map[v]].dim
            if f.dim_in != dv or f.dim_out != cv:
                raise SystemError(f"map at {v!r} must be {dv}->{cv}, "
                                  f"got {f.dim_in}->{f.dim_out}")
        for v, f in self.inverses.items():
            if v not in self.maps:
                raise SystemError(f"inverse at unknown vertex {v!r}")
            fwd = self.maps[v]
            if f.dim_in != fwd.dim_out or f.dim_out != fwd.dim_in:
                raise SystemError(f"inverse at {v!r} has wrong dimensions")

    def merged_params(self) -> dict:
        """Parameter environment for the component maps: both systems'
        parameters, which must agree on shared names."""
        merged = dict(self.cod.params)
        merged.update(self.dom.params)
        return merged

    def apply(self, v: str, x) -> np.ndarray:
        return self.maps[v](x, self.merged_params())

    def apply_point(self, p: HybridPoint, eq_tol: float = 1e-9) -> HybridPoint:
        return self.cod.point(self.g.v_map[p.mode], self.apply(p.mode, p.vec()),
                              eq_tol)

    def vertex_image(self, v: str) -> str:
        return self.g.v_map[v]

    def __repr__(self):
        return f"Semiconjugacy({self.g.v_map!r})"


@dataclass
class SubdivisionHandle:
    """Attached by the subdivision constructors so executions can be pulled
    back: fibers(cod_mode, x) lists the (dom_mode, x) points over a state.

    data holds the constructor-specific ids and compiled maps the execution
    pullback dispatches on (slice sides and lifted edge tables, or the split
    edge's pieces and first factor)."""

    semi: "Semiconjugacy"
    fibers: Callable
    kind: str
    data: dict = field(default_factory=dict)


def identity_semiconjugacy(h: HybridSystem) -> Semiconjugacy:
    maps = {v: E.identity_vector(h.modes[v].dim) for v in h.graph.vertices}
    return Semiconjugacy(h, h, identity_morphism(h.graph), maps, inverses=dict(maps))


def compose_semiconjugacies(beta: Semiconjugacy, alpha: Semiconjugacy) -> Semiconjugacy:
    """beta after alpha; per-vertex maps compose by substitution."""
    if alpha.cod is not beta.dom and alpha.cod != beta.dom:
        raise SystemError("composition mismatch: cod(alpha) != dom(beta)")
    g = compose_graph_morphisms(beta.g, alpha.g)
    maps = {}
    invs = {}
    for v in alpha.dom.graph.vertices:
        mid = alpha.g.v_map[v]
        maps[v] = beta.maps[mid].compose(alpha.maps[v])
        if v in alpha.inverses and mid in beta.inverses:
            invs[v] = alpha.inverses[v].compose(beta.inverses[mid])
    return Semiconjugacy(alpha.dom, beta.cod, g, maps, inverses=invs or None)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def validate_semiconjugacy(alpha: Semiconjugacy, samples: int = 200,
                           tol: float = 1e-9, seed: int = 0, *,
                           eq_tol: float = 1e-9) -> CheckReport:
    """Sampled check of the defining conditions.

    Per vertex: flow-set preservation and field commutation on flow samples.
    Per edge: guard preservation (into the image guard, or the image flow
    set for a collapsed edge) and the reset square. Declared inverses are
    round-tripped on image points.
    """
    rng = rng_from_seed(seed)
    dom, cod = alpha.dom, alpha.cod
    env = alpha.merged_params()
    rep = CheckReport("validate_semiconjugacy")
    rep.stats["samples"] = samples
    rep.stats["seed"] = seed
    rep.bump_residual(0.0)
    for v in dom.graph.vertices:
        w = alpha.vertex_image(v)
        f = alpha.maps[v]
        try:
            pts = dom.sample_mode(v, "flow", rng, samples, eq_tol=eq_tol)
        except SamplingStarved as s:
            rep.starve(f"flow({v})", tries=s.tries)
            pts = np.zeros((0, dom.modes[v].dim))
        for x in pts:
            y = f(x, env)
            if not cod.in_flow(w, y, eq_tol):
                rep.fail("flow_not_preserved", vertex=v, x=x, image=y)
                break
        # field commutation: X_cod(f(x)) = Jf(x) . X_dom(x) on flow samples
        worst = 0.0
        for x in pts:
            y = f(x, env)
            lhs = cod.modes[w].field(y, cod.params)
            rhs = f.jacobian(x, env) @ dom.modes[v].field(x, dom.params)
            r = _norm(lhs - rhs)
            worst = max(worst, r)
            if r > tol:
                rep.fail("field_commutation", vertex=v, x=x, residual=r)
                break
        rep.bump_residual(worst)
        if v in alpha.inverses and len(pts):
            inv = alpha.inverses[v]
            worst = 0.0
            for x in pts:
                y = f(x, env)
                r = _norm(f(inv(y, env), env) - y)
                worst = max(worst, r)
            rep.bump_residual(worst)
            if worst > max(tol, 1e-7):
                rep.fail("inverse_roundtrip", vertex=v, residual=worst)
    for e in dom.graph.edges:
        src = dom.graph.src(e)
        tgt = dom.graph.tgt(e)
        img = alpha.g.e_map[e]
        f_src = alpha.maps[src]
        f_tgt = alpha.maps[tgt]
        try:
            pts = dom.sample_guard(e, rng, samples, eq_tol=eq_tol)
        except SamplingStarved as s:
            rep.starve(f"guard({e})", tries=s.tries)
            continue
        for x in pts:
            y = f_src(x, env)
            if img.is_vertex():
                ok = cod.in_flow(img.id, y, eq_tol)
            else:
                ok = cod.in_guard(img.id, y, eq_tol)
            if not ok:
                rep.fail("guard_not_preserved", edge=e, x=x, image=y)
                break
        worst = 0.0
        for x in pts:
            lhs = f_tgt(dom.apply_reset(e, x), env)
            if img.is_vertex():
                rhs = f_src(x, env)  # image reset is the inclusion
            else:
                rhs = cod.apply_reset(img.id, f_src(x, env))
            r = _norm(lhs - rhs)
            worst = max(worst, r)
            if r > tol:
                rep.fail("reset_square", edge=e, x=x, residual=r)
                break
        rep.bump_residual(worst)
    return rep


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def _min_singular_value(J: np.ndarray) -> float:
    if J.size == 0:
        return np.inf
    return float(np.linalg.svd(J, compute_uv=False)[-1])


def classify_embedding(alpha: Semiconjugacy, samples: int = 100,
                       tol: float = 1e-9, seed: int = 0, *,
                       eq_tol: float = 1e-9) -> CheckReport:
    """Sampled embedding verdict: graph monic, Jacobians of full column
    rank, and no coarse injectivity failures (points further apart than
    10*tol may not map within tol of each other)."""
    rng = rng_from_seed(seed)
    rep = CheckReport("classify_embedding")
    rep.stats.update(samples=samples, seed=seed)
    env = alpha.merged_params()
    if not alpha.g.is_monic():
        rep.fail("graph_not_monic")
    rank_floor = max(100.0 * tol, 1e-7)
    for v in alpha.dom.graph.vertices:
        f = alpha.maps[v]
        dim = alpha.dom.modes[v].dim
        if f.dim_out < f.dim_in:
            rep.fail("dimension_drop", vertex=v)
            continue
        if dim == 0:
            continue
        try:
            pts = alpha.dom.sample_mode(v, "active", rng, samples, eq_tol=eq_tol)
        except SamplingStarved as s:
            rep.starve(f"active({v})", tries=s.tries)
            continue
        for x in pts:
            sv = _min_singular_value(f.jacobian(x, env))
            if sv < rank_floor:
                rep.fail("column_rank", vertex=v, x=x, min_singular_value=sv)
                break
        images = np.array([f(x, env) for x in pts])
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if (_norm(images[i] - images[j]) <= tol
                        and _norm(pts[i] - pts[j]) > 10.0 * tol):
                    rep.fail("injectivity", vertex=v, x=pts[i], y=pts[j])
                    break
            else:
                continue
            break
    if rep.ok:
        rep.note("consistent with embedding (sampled verdict, not a proof)")
    return rep


def classify_submersion(alpha: Semiconjugacy, samples: int = 100,
                        tol: float = 1e-9, seed: int = 0, *,
                        surjective: bool = False, coverage_radius: float = 0.5,
                        eq_tol: float = 1e-9) -> CheckReport:
    """Sampled submersion verdict: full row rank Jacobians; with
    surjective=True also graph epic plus active-set coverage (every sampled
    codomain point has a sampled image nearby; the max gap is reported)."""
    rng = rng_from_seed(seed)
    rep = CheckReport("classify_submersion")
    rep.stats.update(samples=samples, seed=seed)
    env = alpha.merged_params()
    rank_floor = max(100.0 * tol, 1e-7)
    for v in alpha.dom.graph.vertices:
        f = alpha.maps[v]
        if f.dim_out > f.dim_in:
            rep.fail("dimension_gain", vertex=v)
            continue
        if f.dim_out == 0:
            continue
        try:
            pts = alpha.dom.sample_mode(v, "active", rng, samples, eq_tol=eq_tol)
        except SamplingStarved as s:
            rep.starve(f"active({v})", tries=s.tries)
            continue
        for x in pts:
            J = f.jacobian(x, env)
            sv = _min_singular_value(J @ J.T)
            if sv < rank_floor ** 2:
                rep.fail("row_rank", vertex=v, x=x, min_singular_value=np.sqrt(max(sv, 0.0)))
                break
    if surjective:
        if not alpha.g.is_epic():
            rep.fail("graph_not_epic")
        preimage = {u: [] for u in alpha.cod.graph.vertices}
        for v in alpha.dom.graph.vertices:
            u = alpha.vertex_image(v)
            try:
                pts = alpha.dom.sample_mode(v, "active", rng, samples, eq_tol=eq_tol)
            except SamplingStarved:
                continue
            preimage[u].extend(alpha.maps[v](x, env) for x in pts)
        worst_gap = 0.0
        for u in alpha.cod.graph.vertices:
            if alpha.cod.modes[u].dim == 0:
                if not preimage[u]:
                    rep.fail("coverage", vertex=u, gap=np.inf)
                continue
            try:
                targets = alpha.cod.sample_mode(u, "active", rng, samples, eq_tol=eq_tol)
            except SamplingStarved as s:
                rep.starve(f"cod_active({u})", tries=s.tries)
                continue
            if not preimage[u]:
                rep.fail("coverage", vertex=u, gap=np.inf)
                continue
            cloud = np.array(preimage[u])
            for y in targets:
                gap = float(np.min(np.linalg.norm(cloud - y, axis=1)))
                worst_gap = max(worst_gap, gap)
                if gap > coverage_radius:
                    rep.fail("coverage", vertex=u, y=y, gap=gap)
                    break
        rep.stats["coverage_max_gap"] = worst_gap
    if rep.ok:
        kind = "surjective submersion" if surjective else "submersion"
        rep.note(f"consistent with {kind} (sampled verdict, not a proof)")
    return rep


def _sampled_fibers(p: Semiconjugacy, u: str, x: np.ndarray, rng, samples: int,
                    eq_tol: float, match_tol: float) -> list:
    """Fiber points over x: exact via declared inverses when available,
    otherwise nearest sampled preimages."""
    out = []
    env = p.merged_params()
    for v in p.dom.graph.vertices:
        if p.vertex_image(v) != u:
            continue
        if v in p.inverses:
            cand = p.inverses[v](x, env)
            if (p.dom.in_active(v, cand, eq_tol)
                    and _norm(p.apply(v, cand) - x) <= match_tol):
                out.append((v, cand))
            continue
        try:
            pts = p.dom.sample_mode(v, "active", rng, samples, eq_tol=eq_tol)
        except SamplingStarved:
            continue
        imgs = np.array([p.apply(v, q) for q in pts])
        d = np.max(np.abs(imgs - x), axis=1) if len(pts) else np.array([])
        if len(d) and np.min(d) <= match_tol:
            out.append((v, pts[int(np.argmin(d))]))
    return out


def check_subdivision_necessary(p: Semiconjugacy, samples: int = 100,
                                tol: float = 1e-9, seed: int = 0, *,
                                eq_tol: float = 1e-9,
                                coverage_radius: float = 0.5) -> CheckReport:
    """Necessary conditions for a subdivision: graph epic; active-set
    surjectivity (sampled); each p_v injective with invertible square
    Jacobian; sampled fibers linked by resets."""
    rng = rng_from_seed(seed)
    rep = CheckReport("check_subdivision_necessary")
    rep.stats.update(samples=samples, seed=seed)
    env = p.merged_params()
    if not p.g.is_epic():
        rep.fail("graph_not_epic")
    sub = classify_submersion(p, samples, tol, seed, surjective=True,
                              coverage_radius=coverage_radius, eq_tol=eq_tol)
    if not sub.ok:
        rep.merge(sub)
    rank_floor = max(100.0 * tol, 1e-7)
    for v in p.dom.graph.vertices:
        f = p.maps[v]
        if f.dim_in != f.dim_out:
            rep.fail("not_square", vertex=v)
            continue
        if f.dim_in == 0:
            continue
        try:
            pts = p.dom.sample_mode(v, "active", rng, samples, eq_tol=eq_tol)
        except SamplingStarved as s:
            rep.starve(f"active({v})", tries=s.tries)
            continue
        for x in pts:
            J = f.jacobian(x, env)
            if abs(np.linalg.det(J)) < rank_floor ** J.shape[0]:
                rep.fail("jacobian_singular", vertex=v, x=x)
                break
        imgs = np.array([f(x, env) for x in pts])
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if (_norm(imgs[i] - imgs[j]) <= tol
                        and _norm(pts[i] - pts[j]) > 10.0 * tol):
                    rep.fail("injectivity", vertex=v, x=pts[i], y=pts[j])
                    break
            else:
                continue
            break
    # fiber linkage: points over one state must be connected through resets
    match_tol = max(1e-6, 10.0 * tol)
    linked_checked = 0
    for u in p.cod.graph.vertices:
        if p.cod.modes[u].dim == 0:
            continue
        try:
            targets = p.cod.sample_mode(u, "active", rng, max(8, samples // 8),
                                        eq_tol=eq_tol)
        except SamplingStarved:
            continue
        for x in targets:
            fiber = _sampled_fibers(p, u, x, rng, samples, eq_tol, match_tol)
            if len(fiber) <= 1:
                continue
            linked_checked += 1
            n = len(fiber)
            adj = [[False] * n for _ in range(n)]
            for i, (vi, xi) in enumerate(fiber):
                for j, (vj, xj) in enumerate(fiber):
                    if i == j:
                        continue
                    for e in p.dom.graph.edges_from(vi):
                        if p.dom.graph.tgt(e) != vj:
                            continue
                        if not p.dom.in_guard(e, xi, eq_tol):
                            continue
                        if _norm(p.dom.apply_reset(e, xi) - xj) <= match_tol:
                            adj[i][j] = adj[j][i] = True
            seen = {0}
            stack = [0]
            while stack:
                i = stack.pop()
                for j in range(n):
                    if adj[i][j] and j not in seen:
                        seen.add(j)
                        stack.append(j)
            if len(seen) != n:
                rep.fail("fiber_not_reset_linked", cod_vertex=u, x=x,
                         fiber=[(v, list(map(float, q))) for v, q in fiber])
    rep.stats["multi_point_fibers_checked"] = linked_checked
    if rep.ok:
        rep.note("necessary subdivision conditions hold on samples")
    return rep
