"""Building new hybrid systems from old ones.

Parallel product and coproduct, fiber products along submersions, the two
subdivision constructors (mode slicing and reset factorization), sequential
composition of directed systems, and template-anchor spans.

Construction conventions shared by everything here:

* pair ids follow the graph layer ("(a,b)"); product coordinates are the
  concatenation with the second factor's variables shifted up;
* sampling hooks and boxes are combined per factor so thin sets stay
  reachable after composition;
* declared-empty parts propagate and are pruned from the results.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional

import numpy as np

from . import expr as E
from .graphs import (
    Graph,
    GraphMorphism,
    compose_graph_morphisms,
    coproduct_mediator,
    eref,
    graph_coproduct,
    graph_fiber_product,
    graph_product,
    graph_pushout,
    product_mediator,
    vref,
)
from .morphism import (
    Semiconjugacy,
    SubdivisionHandle,
    check_subdivision_necessary,
    classify_embedding,
    classify_submersion,
    identity_semiconjugacy,
    compose_semiconjugacies,
)
from .report import CheckReport
from .sampling import SamplingStarved, sample_box, sample_predicate
from .system import HybridSystem, Mode, ResetEdge, SystemError, prune
from .util import rng_from_seed

__all__ = [
    "product", "coproduct", "fiber_product",
    "slice_mode", "factor_reset",
    "DirectedSystem", "unit_directed", "sequential_compose",
    "directed_product", "directed_coproduct",
    "TemplateAnchorPair", "verify_template_anchor", "compose_template_anchor",
]


# ---------------------------------------------------------------------------
# expression plumbing
# ---------------------------------------------------------------------------

def _shift_subs(offset: int, d: int) -> list:
    return [E.Var(offset + i) for i in range(d)]


def _shift_predicate(p: E.Predicate, offset: int, d: int) -> E.Predicate:
    if offset == 0:
        return p
    return E.substitute_predicate(p, _shift_subs(offset, d))


def _shift_expr(e: E.Expr, offset: int, d: int) -> E.Expr:
    if offset == 0:
        return e
    return E.substitute(e, _shift_subs(offset, d))


def _concat_vectors(a: E.VectorExpr, b: E.VectorExpr, dim_in: int,
                    offset: int) -> E.VectorExpr:
    """a on the leading block, b reading its inputs offset coordinates up."""
    shifted = tuple(E.substitute(c, _shift_subs(offset, b.dim_in))
                    for c in b.components)
    return E.VectorExpr(dim_in, tuple(a.components) + shifted)


def _block_projection(dim_in: int, start: int, count: int) -> E.VectorExpr:
    return E.VectorExpr(dim_in, tuple(E.Var(start + i) for i in range(count)))


def _min_expr(a: E.Expr, b: E.Expr) -> E.Expr:
    """min(a, b) as (a + b - abs(a - b)) / 2, a single smooth-ish expression."""
    total = E.Bin("+", a, b)
    gap = E.Call("abs", (E.Bin("-", a, b),))
    return E.Bin("/", E.Bin("-", total, gap), E.Num(2.0))


def _merge_params(*dicts: Mapping) -> dict:
    out: dict = {}
    for d in dicts:
        for k, v in d.items():
            if k in out and out[k] != v:
                raise SystemError(
                    f"parameter {k!r} has conflicting values {out[k]} and {v}")
            out[k] = float(v)
    return out


def _fresh(base: str, used) -> str:
    cand = base
    while cand in used:
        cand += "'"
    return cand


def _pair_hook(h1: Optional[Callable], box1, d1: int,
               h2: Optional[Callable], box2, d2: int) -> Optional[Callable]:
    """Joint proposal generator for a product block: each side comes from its
    own hook when present, otherwise from its box. None when neither side has
    a hook (plain box rejection already covers that case)."""
    if h1 is None and h2 is None:
        return None

    def hook(rng, n):
        a = (np.atleast_2d(np.asarray(h1(rng, n), dtype=float)) if h1
             else sample_box(d1, box1, rng, n))
        b = (np.atleast_2d(np.asarray(h2(rng, n), dtype=float)) if h2
             else sample_box(d2, box2, rng, n))
        m = min(len(a), len(b))
        return np.hstack([a[:m].reshape(m, d1), b[:m].reshape(m, d2)])

    return hook


def _pair_box(m1: Mode, m2: Mode):
    if m1.box is None and m2.box is None:
        return None
    b1 = m1.box if m1.box is not None else [[-4.0, 4.0]] * m1.dim
    b2 = m2.box if m2.box is not None else [[-4.0, 4.0]] * m2.dim
    return [list(map(float, r)) for r in list(b1) + list(b2)]


# ---------------------------------------------------------------------------
# product and coproduct
# ---------------------------------------------------------------------------

def _pair_mode(vid: str, m1: Mode, m2: Mode) -> Mode:
    d1, d2 = m1.dim, m2.dim
    dim = d1 + d2
    field_ = E.VectorExpr(dim, tuple(m1.field.components)
                          + tuple(E.substitute(c, _shift_subs(d1, d2))
                                  for c in m2.field.components))
    active = E.conj(m1.active, _shift_predicate(m2.active, d1, d2))
    flow = E.conj(m1.flow, _shift_predicate(m2.flow, d1, d2))
    return Mode(vid, dim, field_, active, flow,
                declared_empty=m1.declared_empty or m2.declared_empty,
                box=_pair_box(m1, m2),
                active_sampler=_pair_hook(m1.active_sampler, m1.box, d1,
                                          m2.active_sampler, m2.box, d2),
                flow_sampler=_pair_hook(m1.flow_sampler or m1.active_sampler,
                                        m1.box, d1,
                                        m2.flow_sampler or m2.active_sampler,
                                        m2.box, d2))


def _edge_component(h: HybridSystem, ref, src_mode: Mode):
    """Guard/event/reset data for one side of a generalized-edge pair.

    A vertex side contributes its flow set as the guard ("keep flowing"), no
    event, and the identity inclusion as the reset.
    """
    if ref.is_vertex():
        m = h.modes[ref.id]
        return (m.flow, None, E.identity_vector(m.dim), m.declared_empty,
                m.active_sampler, m.box, m.dim)
    r = h.resets[ref.id]
    return (r.guard, r.event, r.reset, r.declared_empty,
            r.guard_sampler, src_mode.box, src_mode.dim)


def _pair_edge(eid: str, h1: HybridSystem, ref1, h2: HybridSystem, ref2,
               src1: Mode, src2: Mode) -> ResetEdge:
    g1, ev1, r1, de1, hk1, bx1, d1s = _edge_component(h1, ref1, src1)
    g2, ev2, r2, de2, hk2, bx2, d2s = _edge_component(h2, ref2, src2)
    guard = E.conj(g1, _shift_predicate(g2, d1s, d2s))
    if ev1 is not None and ev2 is not None:
        event = _min_expr(ev1, _shift_expr(ev2, d1s, d2s))
    elif ev1 is not None:
        event = ev1
    else:
        event = _shift_expr(ev2, d1s, d2s)
    reset = _concat_vectors(r1, r2, d1s + d2s, d1s)
    return ResetEdge(eid, guard, event, reset,
                     declared_empty=de1 or de2,
                     guard_sampler=_pair_hook(hk1, bx1, d1s, hk2, bx2, d2s))


def _restricted_projection(sys_: HybridSystem, target: HybridSystem,
                           g: GraphMorphism, which: int,
                           first_dims: Mapping[str, int]) -> Semiconjugacy:
    """Coordinate-block projection from a (possibly pruned) pair system."""
    pg = GraphMorphism(sys_.graph, target.graph,
                       {v: g.v_map[v] for v in sys_.graph.vertices},
                       {e: g.e_map[e] for e in sys_.graph.edges})
    maps = {}
    for v in sys_.graph.vertices:
        dim = sys_.modes[v].dim
        d1 = first_dims[v]
        if which == 1:
            maps[v] = _block_projection(dim, 0, d1)
        else:
            maps[v] = _block_projection(dim, d1, dim - d1)
    return Semiconjugacy(sys_, target, pg, maps)


def product(h1: HybridSystem, h2: HybridSystem):
    """Parallel composition. Returns (system, projection1, projection2).

    Modes pair up with concatenated coordinates and conjoined predicates.
    Every generalized-edge pair that is not vertex-vertex becomes an edge:
    the vertex side keeps flowing (guard = its flow set, identity reset) and
    the partner's event drives detection; for two true edges the event is
    the min-combination so a crossing of both registers.
    """
    g, pr1, pr2 = graph_product(h1.graph, h2.graph)
    params = _merge_params(h1.params, h2.params)

    modes = {}
    first_dims = {}
    for vid in g.vertices:
        a, b = pr1.v_map[vid], pr2.v_map[vid]
        modes[vid] = _pair_mode(vid, h1.modes[a], h2.modes[b])
        first_dims[vid] = h1.modes[a].dim
    resets = {}
    for eid in g.edges:
        src = g.src(eid)
        resets[eid] = _pair_edge(eid, h1, pr1.e_map[eid], h2, pr2.e_map[eid],
                                 h1.modes[pr1.v_map[src]],
                                 h2.modes[pr2.v_map[src]])

    sys_ = prune(HybridSystem(g, modes, resets, params))
    proj1 = _restricted_projection(sys_, h1, pr1, 1, first_dims)
    proj2 = _restricted_projection(sys_, h2, pr2, 2, first_dims)
    return sys_, proj1, proj2


def coproduct(h1: HybridSystem, h2: HybridSystem):
    """Disjoint union; shared ids get L./R. prefixes. Returns
    (system, injection1, injection2)."""
    g, inl, inr = graph_coproduct(h1.graph, h2.graph)
    params = _merge_params(h1.params, h2.params)
    modes = {}
    resets = {}
    for v in h1.graph.vertices:
        nid = inl.v_map[v]
        modes[nid] = replace(h1.modes[v], id=nid)
    for v in h2.graph.vertices:
        nid = inr.v_map[v]
        modes[nid] = replace(h2.modes[v], id=nid)
    for e in h1.graph.edges:
        nid = inl.e_map[e].id
        resets[nid] = replace(h1.resets[e], id=nid)
    for e in h2.graph.edges:
        nid = inr.e_map[e].id
        resets[nid] = replace(h2.resets[e], id=nid)
    sys_ = HybridSystem(g, modes, resets, params)

    def _injection(src: HybridSystem, leg: GraphMorphism) -> Semiconjugacy:
        idmaps = {v: E.identity_vector(src.modes[v].dim)
                  for v in src.graph.vertices}
        return Semiconjugacy(src, sys_, leg, idmaps, inverses=dict(idmaps))

    return sys_, _injection(h1, inl), _injection(h2, inr)


# ---------------------------------------------------------------------------
# fiber product
# ---------------------------------------------------------------------------

def _band_predicate(pa: E.VectorExpr, fb: E.VectorExpr, d1: int,
                    tol: float) -> Optional[E.Predicate]:
    """Componentwise |pa(x) - fb(y)| <= tol with y the shifted second block."""
    comps = []
    shifted = tuple(E.substitute(c, _shift_subs(d1, fb.dim_in))
                    for c in fb.components)
    for ca, cb in zip(pa.components, shifted):
        comps.append(E.Cmp("<=", E.Call("abs", (E.Bin("-", ca, cb),)),
                           E.Num(tol)))
    if not comps:
        return None
    band = comps[0]
    for c in comps[1:]:
        band = E.conj(band, c)
    return band


def fiber_product(p: Semiconjugacy, f: Semiconjugacy, *,
                  constraint_tol: float = 1e-9, samples: int = 60,
                  seed: int = 0, check_samples: int = 8):
    """Pullback of p along f, for p a (sampled) submersion.

    The result lives in product coordinates; agreement of the two legs is a
    tolerance band conjoined into every active, flow, and guard predicate.
    Where f declares inverses, fiber modes get a sampler that lands on the
    band exactly. Returns (system, projection_to_dom(p), projection_to_dom(f)).
    """
    if p.cod != f.cod:
        raise SystemError("fiber product legs must share a codomain system")
    verdict = classify_submersion(p, samples=samples, seed=seed)
    if not verdict.ok:
        raise SystemError(
            f"fiber product needs a submersion first leg; found {verdict.violations[:3]}")

    h1, h2 = p.dom, f.dom
    g, q1, q2 = graph_fiber_product(p.g, f.g)
    params = _merge_params(h1.params, h2.params, p.cod.params)

    modes = {}
    first_dims = {}
    for vid in g.vertices:
        a, b = q1.v_map[vid], q2.v_map[vid]
        m1, m2 = h1.modes[a], h2.modes[b]
        m = _pair_mode(vid, m1, m2)
        band = _band_predicate(p.maps[a], f.maps[b], m1.dim, constraint_tol)
        if band is not None:
            m.active = E.conj(m.active, band)
            m.flow = E.conj(m.flow, band)
        hook = _fiber_hook(p, f, a, b, params) or m.active_sampler
        m.active_sampler = hook
        m.flow_sampler = hook
        modes[vid] = m
        first_dims[vid] = m1.dim
    resets = {}
    for eid in g.edges:
        src = g.src(eid)
        a_src, b_src = q1.v_map[src], q2.v_map[src]
        edge = _pair_edge(eid, h1, q1.e_map[eid], h2, q2.e_map[eid],
                          h1.modes[a_src], h2.modes[b_src])
        band = _band_predicate(p.maps[a_src], f.maps[b_src],
                               h1.modes[a_src].dim, constraint_tol)
        if band is not None:
            edge.guard = E.conj(edge.guard, band)
        edge.guard_sampler = modes[src].active_sampler
        resets[eid] = edge

    sys_ = prune(HybridSystem(g, modes, resets, params))
    rng = rng_from_seed(seed)
    for vid in sys_.graph.vertices:
        try:
            sys_.sample_mode(vid, "active", rng, check_samples)
        except SamplingStarved:
            warnings.warn(f"fiber product mode {vid!r}: no points found on "
                          f"the constraint band", RuntimeWarning)
    proj1 = _restricted_projection(sys_, h1, q1, 1, first_dims)
    proj2 = _restricted_projection(sys_, h2, q2, 2, first_dims)
    return sys_, proj1, proj2


def _fiber_hook(p: Semiconjugacy, f: Semiconjugacy, a: str, b: str,
                params: Mapping) -> Optional[Callable]:
    """Band-exact proposal generator: sample one leg's mode and carry the
    point across through the other leg's declared inverse. Both directions
    propose when both inverses exist; off-band rows are filtered later."""
    da, db = p.dom.modes[a].dim, f.dom.modes[b].dim
    directions = []
    finv = f.inverses.get(b)
    if finv is not None:
        pa = p.maps[a].compiled(params)
        fi = finv.compiled(params)

        def via_finv(rng, n, _dom=p.dom):
            try:
                xs = _dom.sample_mode(a, "active", rng, n)
            except SamplingStarved:
                return np.zeros((0, da + db))
            ys = np.array([fi(pa(np.asarray(x, dtype=float))) for x in xs])
            return np.hstack([np.asarray(xs).reshape(len(xs), da),
                              ys.reshape(len(xs), db)])

        directions.append(via_finv)
    pinv = p.inverses.get(a)
    if pinv is not None:
        fb = f.maps[b].compiled(params)
        pi = pinv.compiled(params)

        def via_pinv(rng, n, _dom=f.dom):
            try:
                ys = _dom.sample_mode(b, "active", rng, n)
            except SamplingStarved:
                return np.zeros((0, da + db))
            xs = np.array([pi(fb(np.asarray(y, dtype=float))) for y in ys])
            return np.hstack([xs.reshape(len(ys), da),
                              np.asarray(ys).reshape(len(ys), db)])

        directions.append(via_pinv)
    if not directions:
        return None

    def hook(rng, n):
        share = max(1, -(-n // len(directions)))
        return np.vstack([d(rng, share) for d in directions])

    return hook


# ---------------------------------------------------------------------------
# subdivisions
# ---------------------------------------------------------------------------

def _lie_derivative(h: E.Expr, field_: E.VectorExpr) -> E.Expr:
    terms = [E.Bin("*", E.derivative(h, i), field_.components[i])
             for i in range(field_.dim_in)]
    out = terms[0]
    for t in terms[1:]:
        out = E.Bin("+", out, t)
    return out


def slice_mode(h_sys: HybridSystem, v: str, h, *,
               samples: int = 100, seed: int = 0,
               transversality_tol: float = 1e-6):
    """Split mode v along the zero set of the scalar h into a minus side
    (h <= 0) and a plus side (h >= 0), joined by crossing edges with
    identity resets where the flow pierces the surface.

    Returns (system, subdivision) where the subdivision is identity on
    points and carries the handle used by execution pullback. Aborts when a
    sampled point of {h = 0} has flow tangent to the surface; a side whose
    active set yields no samples is declared empty and pruned (with a
    warning, since thin sets without sampler hooks can starve too).
    """
    if v not in h_sys.modes:
        raise SystemError(f"no mode {v!r} to slice")
    m = h_sys.modes[v]
    if m.dim == 0:
        raise SystemError("cannot slice a dimension-zero mode")
    if isinstance(h, str):
        h = E.parse_expr(h, m.dim)
    lh = _lie_derivative(h, m.field)
    params = h_sys.params

    on_surface = E.conj(E.Cmp("==", h, E.Num(0.0)), m.active)
    rng = rng_from_seed(seed)
    try:
        pts = sample_predicate(on_surface, m.dim, params, rng, samples,
                               box=m.box, hook=m.active_sampler)
    except SamplingStarved:
        pts = np.zeros((0, m.dim))
    bad = [x.tolist() for x in pts
           if abs(E.eval_expr(lh, x, params)) <= transversality_tol]
    if bad:
        raise SystemError(
            f"slice of {v!r} is not transverse to the flow at sampled points "
            f"{bad[:5]} (|grad h . field| <= {transversality_tol})")
    lh_values = [E.eval_expr(lh, x, params) for x in pts]
    # with surface samples in hand, a crossing direction no sample exhibits
    # is declared empty so the exit-side guard is the only one kept
    mp_empty = bool(len(pts)) and not any(val > 0.0 for val in lh_values)
    pm_empty = bool(len(pts)) and not any(val < 0.0 for val in lh_values)

    used_v = set(h_sys.graph.vertices)
    used_e = set(h_sys.graph.edges)
    minus_id = _fresh(f"{v}-", used_v)
    used_v.add(minus_id)
    plus_id = _fresh(f"{v}+", used_v)
    used_v.add(plus_id)

    h_le = E.Cmp("<=", h, E.Num(0.0))
    h_ge = E.Cmp(">=", h, E.Num(0.0))
    h_lt = E.Cmp("<", h, E.Num(0.0))
    h_gt = E.Cmp(">", h, E.Num(0.0))
    on_h = E.Cmp("==", h, E.Num(0.0))
    lh_neg = E.Cmp("<", lh, E.Num(0.0))
    lh_pos = E.Cmp(">", lh, E.Num(0.0))

    side_specs = {
        "-": (minus_id, h_le, E.conj(m.flow, E.disj(h_lt, E.conj(on_h, lh_neg)))),
        "+": (plus_id, h_ge, E.conj(m.flow, E.disj(h_gt, E.conj(on_h, lh_pos)))),
    }

    modes = {w: mm for w, mm in h_sys.modes.items() if w != v}
    empty_sides = set()
    for tag, (sid, side_pred, side_flow) in side_specs.items():
        active = E.conj(m.active, side_pred)
        declared = m.declared_empty
        if not declared:
            try:
                sample_predicate(active, m.dim, params, rng_from_seed(seed + 1),
                                 max(8, samples // 4), box=m.box,
                                 hook=m.active_sampler)
            except SamplingStarved:
                declared = True
                empty_sides.add(tag)
                warnings.warn(f"slice side {sid!r} produced no samples and "
                              f"is declared empty; pass a sampler hook if the "
                              f"side is thin rather than empty", RuntimeWarning)
        modes[sid] = Mode(sid, m.dim, m.field, active, side_flow,
                          declared_empty=declared, box=m.box,
                          active_sampler=m.active_sampler,
                          flow_sampler=m.flow_sampler)

    ident = E.identity_vector(m.dim)
    emp_id = _fresh(f"{v}-+", used_e)
    used_e.add(emp_id)
    epm_id = _fresh(f"{v}+-", used_e)
    used_e.add(epm_id)

    edge_rows = []
    resets = {}
    edge_rows.append((emp_id, minus_id, plus_id))
    resets[emp_id] = ResetEdge(emp_id, E.conj(on_h, lh_pos), E.Neg(h), ident,
                               declared_empty=mp_empty,
                               guard_sampler=m.active_sampler)
    edge_rows.append((epm_id, plus_id, minus_id))
    resets[epm_id] = ResetEdge(epm_id, E.conj(on_h, lh_neg), h, ident,
                               declared_empty=pm_empty,
                               guard_sampler=m.active_sampler)

    sides = ("-", "+")
    side_id = {"-": minus_id, "+": plus_id}
    side_out = {"-": h_le, "+": h_gt}
    out_edges: dict = {}
    in_edges: dict = {}
    self_edges: dict = {}
    for e, s, t in h_sys.graph.edge_items():
        r = h_sys.resets[e]
        if s != v and t != v:
            edge_rows.append((e, s, t))
            resets[e] = r
            continue
        h_after_reset = E.substitute(h, r.reset.components) if t == v else None
        side_in = (None if t != v
                   else {"-": E.Cmp("<=", h_after_reset, E.Num(0.0)),
                         "+": E.Cmp(">", h_after_reset, E.Num(0.0))})
        if s == v and t == v:
            table = {}
            for a in sides:
                for b in sides:
                    nid = _fresh(f"{e}@{a}{b}", used_e)
                    used_e.add(nid)
                    table[a + b] = nid
                    edge_rows.append((nid, side_id[a], side_id[b]))
                    resets[nid] = ResetEdge(
                        nid, E.conj(r.guard, E.conj(side_out[a], side_in[b])),
                        r.event, r.reset, declared_empty=r.declared_empty,
                        guard_sampler=r.guard_sampler)
            self_edges[e] = table
        elif s == v:
            table = {}
            for a in sides:
                nid = _fresh(f"{e}@{a}", used_e)
                used_e.add(nid)
                table[a] = nid
                edge_rows.append((nid, side_id[a], t))
                resets[nid] = ResetEdge(
                    nid, E.conj(r.guard, side_out[a]), r.event, r.reset,
                    declared_empty=r.declared_empty,
                    guard_sampler=r.guard_sampler)
            out_edges[e] = table
        else:
            table = {}
            for b in sides:
                nid = _fresh(f"{e}@{b}", used_e)
                used_e.add(nid)
                table[b] = nid
                edge_rows.append((nid, s, side_id[b]))
                resets[nid] = ResetEdge(
                    nid, E.conj(r.guard, side_in[b]), r.event, r.reset,
                    declared_empty=r.declared_empty,
                    guard_sampler=r.guard_sampler)
            in_edges[e] = table

    full = HybridSystem(Graph(list(modes), edge_rows), modes, resets, params)
    sys_ = prune(full)

    v_map = {}
    e_map = {}
    maps = {}
    for w in sys_.graph.vertices:
        orig = v if w in (minus_id, plus_id) else w
        v_map[w] = orig
        maps[w] = E.identity_vector(sys_.modes[w].dim)
    crossing = {emp_id, epm_id}
    lifted = ({nid: e for e, tb in out_edges.items() for nid in tb.values()}
              | {nid: e for e, tb in in_edges.items() for nid in tb.values()}
              | {nid: e for e, tb in self_edges.items() for nid in tb.values()})
    for e in sys_.graph.edges:
        if e in crossing:
            e_map[e] = vref(v)
        elif e in lifted:
            e_map[e] = eref(lifted[e])
        else:
            e_map[e] = eref(e)
    sub = Semiconjugacy(sys_, h_sys,
                        GraphMorphism(sys_.graph, h_sys.graph, v_map, e_map),
                        maps, inverses=dict(maps))

    hc = E.compile_expr(h, params)

    def fibers(cod_mode: str, x):
        x = np.asarray(x, dtype=float)
        if cod_mode != v:
            return [(cod_mode, x)]
        val = hc(x)
        out = []
        if val <= 0.0 and minus_id in sys_.modes:
            out.append((minus_id, x))
        if val >= 0.0 and plus_id in sys_.modes:
            out.append((plus_id, x))
        return out

    alive = set(sys_.graph.edges)

    def _prune_table(tables):
        return {e: {k: nid for k, nid in tb.items() if nid in alive}
                for e, tb in tables.items()}

    sub.handle = SubdivisionHandle(sub, fibers, "slice", {
        "mode": v,
        "minus": minus_id,
        "plus": plus_id,
        "h": hc,
        "edge_mp": emp_id,
        "edge_pm": epm_id,
        "out_edges": _prune_table(out_edges),
        "in_edges": _prune_table(in_edges),
        "self_edges": _prune_table(self_edges),
    })
    return sys_, sub


def factor_reset(h_sys: HybridSystem, e: str, f: E.VectorExpr,
                 g: E.VectorExpr, a_active: E.Predicate, a_dim: int, *,
                 tol: float = 1e-9, samples: int = 100, seed: int = 0,
                 a_sampler: Optional[Callable] = None):
    """Split the reset of edge e as r = g after f through an intermediate
    mode with zero field and empty flow set, so every transit jumps straight
    through it.

    f maps the source mode into the intermediate chart (dimension a_dim,
    active set a_active) and g maps onward to the target. Both legs are
    verified against the original reset on sampled guard points. Returns
    (system, subdivision); the subdivision carries the handle used by
    execution pullback, and its component at the new mode is g.
    """
    if e not in h_sys.resets:
        raise SystemError(f"no edge {e!r} to factor")
    r = h_sys.resets[e]
    src, tgt = h_sys.graph.src(e), h_sys.graph.tgt(e)
    dv, dw = h_sys.modes[src].dim, h_sys.modes[tgt].dim
    if f.dim_in != dv or f.dim_out != a_dim:
        raise SystemError(f"first factor must map dim {dv} -> {a_dim}, "
                          f"got {f.dim_in} -> {f.dim_out}")
    if g.dim_in != a_dim or g.dim_out != dw:
        raise SystemError(f"second factor must map dim {a_dim} -> {dw}, "
                          f"got {g.dim_in} -> {g.dim_out}")

    params = h_sys.params
    rng = rng_from_seed(seed)
    try:
        pts = h_sys.sample_guard(e, rng, samples)
    except SamplingStarved:
        pts = np.zeros((0, dv))
        warnings.warn(f"guard of {e!r} yielded no samples; the factorization "
                      f"is unverified", RuntimeWarning)
    worst = 0.0
    for x in pts:
        mid = f(x, params)
        direct = r.reset(x, params)
        worst = max(worst, float(np.max(np.abs(g(mid, params) - direct)))
                    if dw else 0.0)
        if not E.eval_predicate(a_active, mid, params, 1e-9):
            raise SystemError(
                f"first factor sends guard point {x.tolist()} to "
                f"{mid.tolist()}, outside the intermediate active set")
    if worst > tol:
        raise SystemError(
            f"factorization residual {worst:.3e} exceeds {tol:.1e}: "
            f"g(f(x)) does not reproduce the reset of {e!r}")

    used_v = set(h_sys.graph.vertices)
    used_e = set(h_sys.graph.edges)
    uid = _fresh(f"{e}_mid", used_v)
    pre_id = _fresh(f"{e}_f", used_e)
    used_e.add(pre_id)
    post_id = _fresh(f"{e}_g", used_e)

    zero_field = E.VectorExpr(a_dim, tuple(E.Num(0.0) for _ in range(a_dim)))
    falsum = E.parse_predicate("0 < 0")
    mid_mode = Mode(uid, a_dim, zero_field, a_active, falsum,
                    active_sampler=a_sampler)

    modes = dict(h_sys.modes)
    modes[uid] = mid_mode
    edge_rows = [(x, s, t) for x, s, t in h_sys.graph.edge_items() if x != e]
    edge_rows.append((pre_id, src, uid))
    edge_rows.append((post_id, uid, tgt))
    resets = {x: rr for x, rr in h_sys.resets.items() if x != e}
    resets[pre_id] = ResetEdge(pre_id, r.guard, r.event, f,
                               guard_sampler=r.guard_sampler)
    resets[post_id] = ResetEdge(post_id, a_active, E.Num(-1.0), g,
                                guard_sampler=a_sampler)
    sys_ = HybridSystem(Graph(list(modes), edge_rows), modes, resets, params)

    v_map = {w: w for w in h_sys.graph.vertices}
    v_map[uid] = tgt
    e_map = {x: eref(x) for x in h_sys.graph.edges if x != e}
    e_map[pre_id] = eref(e)
    e_map[post_id] = vref(tgt)
    maps = {w: E.identity_vector(h_sys.modes[w].dim)
            for w in h_sys.graph.vertices}
    invs = dict(maps)
    maps[uid] = g
    sub = Semiconjugacy(sys_, h_sys,
                        GraphMorphism(sys_.graph, h_sys.graph, v_map, e_map),
                        maps, inverses=invs)

    def fibers(cod_mode: str, x):
        # the transit mode's g-preimages are not computable from g alone;
        # points of the original system lift to themselves
        return [(cod_mode, np.asarray(x, dtype=float))]

    sub.handle = SubdivisionHandle(sub, fibers, "factor", {
        "edge": e,
        "mid": uid,
        "pre_edge": pre_id,
        "post_edge": post_id,
        "f": f.compiled(params),
    })
    return sys_, sub


# ---------------------------------------------------------------------------
# directed systems and sequential composition
# ---------------------------------------------------------------------------

@dataclass
class DirectedSystem:
    """A system with designated entry and exit subsystems.

    init and final are embeddings into the carrier; the final image must be
    a sink (no carrier edge leaves it) and every final component must carry
    a declared inverse, since sequential composition transports data through
    it. certified holds (eps, T, evidence) once the analysis module has
    established chain directedness; constructors clear it.
    """

    carrier: HybridSystem
    init: Semiconjugacy
    final: Semiconjugacy
    certified: Optional[dict] = None

    def __post_init__(self):
        for name, emb in (("init", self.init), ("final", self.final)):
            if emb.cod != self.carrier:
                raise SystemError(f"{name} must land in the carrier system")
            if not emb.g.is_monic():
                raise SystemError(f"{name} must be a graph embedding")
        image = set(self.final.g.v_map.values())
        for e_, s, t in self.carrier.graph.edge_items():
            if s in image and t not in image:
                raise SystemError(
                    f"final image is not a sink: edge {e_!r} leaves it")
        for w in self.final.dom.graph.vertices:
            if w not in self.final.inverses:
                raise SystemError(
                    f"final component at {w!r} needs a declared inverse")


def unit_directed(k: HybridSystem) -> DirectedSystem:
    """K as a directed system from itself to itself (identity embeddings)."""
    return DirectedSystem(k, identity_semiconjugacy(k),
                          identity_semiconjugacy(k))


def sequential_compose(h: DirectedSystem, hp: DirectedSystem) -> DirectedSystem:
    """Glue two directed systems along H.final = Hp.init, prioritizing Hp.

    The carriers are pushed out over the shared boundary system K; merged
    modes keep Hp's data, with beta_w = init_w o final_w^{-1} transporting
    H-side data into Hp coordinates. H-edges that enter the overlap get
    their resets post-composed with beta; H-edges that start inside it are
    rewritten through beta^{-1} and their guards lose any points claimed by
    an Hp guard at the same mode. Certification does not survive: the
    composite must be re-checked by the analysis module.
    """
    fin, ini = h.final, hp.init
    if fin.dom != ini.dom:
        raise SystemError("sequential composition needs H.final and Hp.init "
                          "to embed the same boundary system")
    k = fin.dom
    a_sys, b_sys = h.carrier, hp.carrier
    po, leg_a, leg_b = graph_pushout(fin.g, ini.g)
    params = _merge_params(a_sys.params, b_sys.params, k.params)

    w_of_a = {fin.g.v_map[w]: w for w in k.graph.vertices}
    overlap_edges_a = {fin.g.e_map[ek].id for ek in k.graph.edges}

    beta = {}
    beta_inv = {}
    for w in k.graph.vertices:
        beta[w] = ini.maps[w].compose(fin.inverses[w])
        if w in ini.inverses:
            beta_inv[w] = fin.maps[w].compose(ini.inverses[w])

    modes = {}
    for b in b_sys.graph.vertices:
        nid = leg_b.v_map[b]
        modes[nid] = replace(b_sys.modes[b], id=nid)
    for a in a_sys.graph.vertices:
        if a in w_of_a:
            continue
        nid = leg_a.v_map[a]
        modes[nid] = replace(a_sys.modes[a], id=nid)

    resets = {}
    for eb in b_sys.graph.edges:
        nid = leg_b.e_map[eb].id
        resets[nid] = replace(b_sys.resets[eb], id=nid)
    for ea in a_sys.graph.edges:
        if ea in overlap_edges_a:
            continue
        nid = leg_a.e_map[ea].id
        r = a_sys.resets[ea]
        sa, ta = a_sys.graph.src(ea), a_sys.graph.tgt(ea)
        guard, event, rst, hook = r.guard, r.event, r.reset, r.guard_sampler
        if sa in w_of_a:
            w = w_of_a[sa]
            if w not in beta_inv:
                raise SystemError(
                    f"missing inverse: edge {ea!r} starts in the overlap, so "
                    f"Hp.init needs an inverse at {w!r}")
            bi = beta_inv[w]
            guard = E.substitute_predicate(guard, bi.components)
            event = E.substitute(event, bi.components)
            rst = rst.compose(bi)
            b_mode = ini.g.v_map[w]
            hp_guards = [b_sys.resets[e2].guard
                         for e2 in b_sys.graph.edges_from(b_mode)]
            if hp_guards:
                union = hp_guards[0]
                for q in hp_guards[1:]:
                    union = E.disj(union, q)
                guard = E.conj(guard, E.negate(union))
            if hook is not None:
                bfn = beta[w].compiled(params)
                hook = (lambda rng, n, _o=hook, _b=bfn:
                        np.array([_b(np.asarray(x, dtype=float))
                                  for x in np.atleast_2d(_o(rng, n))]))
        if ta in w_of_a:
            rst = beta[w_of_a[ta]].compose(rst)
        resets[nid] = ResetEdge(nid, guard, event, rst,
                                declared_empty=r.declared_empty,
                                guard_sampler=hook)

    composite = HybridSystem(po, modes, resets, params)

    x_sys = h.init.dom
    maps = {}
    invs = {}
    for xv in x_sys.graph.vertices:
        a = h.init.g.v_map[xv]
        mp = h.init.maps[xv]
        iv = h.init.inverses.get(xv)
        if a in w_of_a:
            w = w_of_a[a]
            mp = beta[w].compose(mp)
            iv = (iv.compose(beta_inv[w])
                  if iv is not None and w in beta_inv else None)
        maps[xv] = mp
        if iv is not None:
            invs[xv] = iv
    init_new = Semiconjugacy(x_sys, composite,
                             compose_graph_morphisms(leg_a, h.init.g),
                             maps, inverses=invs or None)
    final_new = Semiconjugacy(hp.final.dom, composite,
                              compose_graph_morphisms(leg_b, hp.final.g),
                              dict(hp.final.maps),
                              inverses=dict(hp.final.inverses))
    return DirectedSystem(composite, init_new, final_new, certified=None)


def _paired_embedding(a1: Semiconjugacy, a2: Semiconjugacy,
                      carrier: HybridSystem) -> Semiconjugacy:
    dom, q1, q2 = product(a1.dom, a2.dom)
    f1 = compose_graph_morphisms(a1.g, q1.g)
    f2 = compose_graph_morphisms(a2.g, q2.g)
    g = product_mediator(carrier.graph, f1, f2)
    maps = {}
    invs = {}
    for vid in dom.graph.vertices:
        va, vb = q1.g.v_map[vid], q2.g.v_map[vid]
        m1, m2 = a1.maps[va], a2.maps[vb]
        maps[vid] = _concat_vectors(m1, m2, m1.dim_in + m2.dim_in, m1.dim_in)
        i1, i2 = a1.inverses.get(va), a2.inverses.get(vb)
        if i1 is not None and i2 is not None:
            invs[vid] = _concat_vectors(i1, i2, i1.dim_in + i2.dim_in,
                                        i1.dim_in)
    return Semiconjugacy(dom, carrier, g, maps, inverses=invs or None)


def directed_product(d1: DirectedSystem, d2: DirectedSystem) -> DirectedSystem:
    """Parallel composition of directed systems: the carrier is the product
    and the entry/exit embeddings pair up componentwise."""
    carrier, _, _ = product(d1.carrier, d2.carrier)
    init = _paired_embedding(d1.init, d2.init, carrier)
    final = _paired_embedding(d1.final, d2.final, carrier)
    return DirectedSystem(carrier, init, final, certified=None)


def directed_coproduct(d1: DirectedSystem, d2: DirectedSystem) -> DirectedSystem:
    """Either-or composition: the carrier is the coproduct and entry/exit
    embed side by side."""
    carrier, j1, j2 = coproduct(d1.carrier, d2.carrier)

    def _summed(a1: Semiconjugacy, a2: Semiconjugacy) -> Semiconjugacy:
        dom, i1, i2 = coproduct(a1.dom, a2.dom)
        f1 = compose_graph_morphisms(j1.g, a1.g)
        f2 = compose_graph_morphisms(j2.g, a2.g)
        g = coproduct_mediator(i1.g, i2.g, f1, f2)
        maps = {}
        invs = {}
        for xv in a1.dom.graph.vertices:
            nid = i1.g.v_map[xv]
            maps[nid] = a1.maps[xv]
            if xv in a1.inverses:
                invs[nid] = a1.inverses[xv]
        for xv in a2.dom.graph.vertices:
            nid = i2.g.v_map[xv]
            maps[nid] = a2.maps[xv]
            if xv in a2.inverses:
                invs[nid] = a2.inverses[xv]
        return Semiconjugacy(dom, carrier, g, maps, inverses=invs or None)

    return DirectedSystem(carrier, _summed(d1.init, d2.init),
                          _summed(d1.final, d2.final), certified=None)


# ---------------------------------------------------------------------------
# template-anchor spans
# ---------------------------------------------------------------------------

@dataclass
class TemplateAnchorPair:
    """A span T <- S -> A: the roof subdivides the template (p) and embeds
    into the anchor (i).

    Verdicts about p and i are sampled, produced by verify_template_anchor
    or recorded by compose_template_anchor; attracting evidence for i(S)
    inside the anchor comes from the analysis module and is never inherited
    through composition.
    """

    template: HybridSystem
    roof: HybridSystem
    p: Semiconjugacy
    i: Semiconjugacy
    anchor: HybridSystem
    attracting_evidence: Optional[CheckReport] = None
    p_report: Optional[CheckReport] = None
    i_report: Optional[CheckReport] = None

    def __post_init__(self):
        if self.p.dom != self.roof or self.i.dom != self.roof:
            raise SystemError("both legs must start at the roof system")
        if self.p.cod != self.template:
            raise SystemError("p must land in the template")
        if self.i.cod != self.anchor:
            raise SystemError("i must land in the anchor")


def verify_template_anchor(pair: TemplateAnchorPair, *, samples: int = 100,
                           seed: int = 0) -> CheckReport:
    """Run the span's necessary conditions and record them on the pair."""
    rep = CheckReport("verify_template_anchor")
    pair.p_report = check_subdivision_necessary(pair.p, samples=samples,
                                                seed=seed)
    pair.i_report = classify_embedding(pair.i, samples=samples, seed=seed)
    rep.merge(pair.p_report)
    rep.merge(pair.i_report)
    return rep


def compose_template_anchor(p1: TemplateAnchorPair, p2: TemplateAnchorPair, *,
                            samples: int = 60, seed: int = 0,
                            constraint_tol: float = 1e-9) -> TemplateAnchorPair:
    """Stack two spans whose middle systems agree: the new roof is the fiber
    product of P2's subdivision with P1's embedding over the shared system,
    and the outer legs compose with its projections.

    Necessary-condition checks are re-run on the composed legs and recorded;
    attracting evidence must be re-established by the analysis module.
    """
    if p1.anchor != p2.template:
        raise SystemError("first pair's anchor must equal second pair's "
                          "template")
    roof, to_s2, to_s1 = fiber_product(p2.p, p1.i, samples=samples, seed=seed,
                                       constraint_tol=constraint_tol)
    if not roof.graph.vertices:
        raise SystemError("composition produced an empty fiber product")
    new_p = compose_semiconjugacies(p1.p, to_s1)
    new_i = compose_semiconjugacies(p2.i, to_s2)
    out = TemplateAnchorPair(p1.template, roof, new_p, new_i, p2.anchor)
    out.p_report = check_subdivision_necessary(new_p, samples=samples,
                                               seed=seed)
    out.i_report = classify_embedding(new_i, samples=samples, seed=seed)
    return out
