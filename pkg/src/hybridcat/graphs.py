"""Directed graphs whose morphisms may send edges to vertices.

A graph here is a finite set of vertices and edges with source and target
maps; every vertex also acts implicitly as a generalized edge (its own
self-loop), which is what lets a morphism collapse an edge onto a vertex.
This file carries the category: composition, monic/epic classification,
products, coproducts, pushouts along monic legs, fiber products, and the
mediating-morphism constructions their universal properties promise.

Identifiers are plain strings. Within one graph the vertex and edge id
namespaces are disjoint, so a pair id like "(a,b)" in a composite graph
decodes unambiguously.
"""

from __future__ import annotations

from typing import Iterable, Mapping, NamedTuple

__all__ = [
    "GRef", "Graph", "GraphMorphism", "GraphError",
    "identity_morphism", "compose_graph_morphisms",
    "graph_product", "graph_coproduct", "graph_pushout", "graph_fiber_product",
    "enumerate_morphisms",
    "product_mediator", "coproduct_mediator", "pushout_mediator", "fiber_mediator",
    "pair_id",
]


class GraphError(ValueError):
    pass


class GRef(NamedTuple):
    """A generalized edge: kind 'v' for a vertex acting as its self-loop,
    kind 'e' for a genuine edge."""

    kind: str
    id: str

    def is_vertex(self) -> bool:
        return self.kind == "v"


def vref(v: str) -> GRef:
    return GRef("v", v)


def eref(e: str) -> GRef:
    return GRef("e", e)


class Graph:
    """Finite directed multigraph with implicit vertex self-loops."""

    def __init__(self, vertices: Iterable[str], edges: Iterable[tuple]):
        """edges: iterable of (id, src, tgt) triples."""
        self.vertices = tuple(vertices)
        self._edges = {}
        seen = set(self.vertices)
        if len(seen) != len(self.vertices):
            raise GraphError("duplicate vertex id")
        for eid, src, tgt in edges:
            if eid in seen or eid in self._edges:
                raise GraphError(f"duplicate or vertex-colliding edge id {eid!r}")
            if src not in seen or tgt not in seen:
                raise GraphError(f"edge {eid!r} endpoints {src!r}->{tgt!r} not in vertex set")
            self._edges[eid] = (src, tgt)

    # -- queries -----------------------------------------------------------

    @property
    def edges(self) -> tuple:
        return tuple(self._edges)

    def src(self, eid: str) -> str:
        return self._edges[eid][0]

    def tgt(self, eid: str) -> str:
        return self._edges[eid][1]

    def has_vertex(self, v: str) -> bool:
        return v in set(self.vertices)

    def has_edge(self, e: str) -> bool:
        return e in self._edges

    def has_ref(self, r: GRef) -> bool:
        return self.has_vertex(r.id) if r.is_vertex() else self.has_edge(r.id)

    def ref_src(self, r: GRef) -> str:
        return r.id if r.is_vertex() else self.src(r.id)

    def ref_tgt(self, r: GRef) -> str:
        return r.id if r.is_vertex() else self.tgt(r.id)

    def generalized(self) -> list:
        """All generalized edges, vertices first, in declaration order."""
        return [vref(v) for v in self.vertices] + [eref(e) for e in self._edges]

    def edges_from(self, v: str) -> list:
        return [e for e, (s, _) in self._edges.items() if s == v]

    def edge_items(self) -> list:
        return [(e, s, t) for e, (s, t) in self._edges.items()]

    # -- structure ----------------------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (set(self.vertices) == set(other.vertices)
                and self._edges == other._edges)

    def __ne__(self, other) -> bool:
        eq = self.__eq__(other)
        return NotImplemented if eq is NotImplemented else not eq

    def __repr__(self) -> str:
        return f"Graph({len(self.vertices)} vertices, {len(self._edges)} edges)"

    def to_obj(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [{"id": e, "src": s, "tgt": t} for e, (s, t) in self._edges.items()],
        }

    @classmethod
    def from_obj(cls, obj: Mapping) -> "Graph":
        return cls(obj["vertices"],
                   [(e["id"], e["src"], e["tgt"]) for e in obj.get("edges", [])])


class GraphMorphism:
    """A pair of maps (on vertices, on edges); edges may land on vertices."""

    def __init__(self, dom: Graph, cod: Graph, v_map: Mapping[str, str],
                 e_map: Mapping[str, GRef]):
        self.dom = dom
        self.cod = cod
        self.v_map = dict(v_map)
        self.e_map = {e: (r if isinstance(r, GRef) else GRef(*r)) for e, r in e_map.items()}
        self._validate()

    def _validate(self):
        if set(self.v_map) != set(self.dom.vertices):
            raise GraphError("vertex map domain mismatch")
        if set(self.e_map) != set(self.dom.edges):
            raise GraphError("edge map domain mismatch")
        for v, w in self.v_map.items():
            if not self.cod.has_vertex(w):
                raise GraphError(f"vertex {v!r} maps to unknown vertex {w!r}")
        for e, r in self.e_map.items():
            if not self.cod.has_ref(r):
                raise GraphError(f"edge {e!r} maps to unknown target {r!r}")
            if self.cod.ref_src(r) != self.v_map[self.dom.src(e)]:
                raise GraphError(f"edge {e!r}: source not preserved")
            if self.cod.ref_tgt(r) != self.v_map[self.dom.tgt(e)]:
                raise GraphError(f"edge {e!r}: target not preserved")

    def apply_ref(self, r: GRef) -> GRef:
        return vref(self.v_map[r.id]) if r.is_vertex() else self.e_map[r.id]

    def classify(self) -> dict:
        v_inj = len(set(self.v_map.values())) == len(self.v_map)
        images = list(self.e_map.values())
        e_inj = len(set(images)) == len(images)
        lands_on_edges = all(not r.is_vertex() for r in images)
        monic = v_inj and e_inj and lands_on_edges
        v_surj = set(self.v_map.values()) == set(self.cod.vertices)
        e_cover = set(self.cod.edges) <= {r.id for r in images if not r.is_vertex()}
        return {"monic": monic, "epic": v_surj and e_cover}

    def is_monic(self) -> bool:
        return self.classify()["monic"]

    def is_epic(self) -> bool:
        return self.classify()["epic"]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphMorphism):
            return NotImplemented
        return (self.dom == other.dom and self.cod == other.cod
                and self.v_map == other.v_map and self.e_map == other.e_map)

    def __ne__(self, other) -> bool:
        eq = self.__eq__(other)
        return NotImplemented if eq is NotImplemented else not eq

    def __repr__(self) -> str:
        return f"GraphMorphism({self.v_map!r}, {self.e_map!r})"


def identity_morphism(g: Graph) -> GraphMorphism:
    return GraphMorphism(g, g, {v: v for v in g.vertices},
                         {e: eref(e) for e in g.edges})


def compose_graph_morphisms(g: GraphMorphism, f: GraphMorphism) -> GraphMorphism:
    """g after f. An edge collapsed by f continues through g's vertex map."""
    if f.cod != g.dom:
        raise GraphError("composition mismatch: cod(f) != dom(g)")
    v_map = {v: g.v_map[w] for v, w in f.v_map.items()}
    e_map = {}
    for e, r in f.e_map.items():
        e_map[e] = vref(g.v_map[r.id]) if r.is_vertex() else g.e_map[r.id]
    return GraphMorphism(f.dom, g.cod, v_map, e_map)


# ---------------------------------------------------------------------------
# Limits and colimits
# ---------------------------------------------------------------------------

def pair_id(a: str, b: str) -> str:
    return f"({a},{b})"


def graph_product(g: Graph, h: Graph):
    """Box product: vertex pairs, plus every generalized-edge pair that is
    not a vertex pair. Returns (product, projection1, projection2)."""
    verts = [pair_id(a, b) for a in g.vertices for b in h.vertices]
    edges = []
    p1_v, p2_v = {}, {}
    for a in g.vertices:
        for b in h.vertices:
            p1_v[pair_id(a, b)] = a
            p2_v[pair_id(a, b)] = b
    p1_e, p2_e = {}, {}
    for p in g.generalized():
        for q in h.generalized():
            if p.is_vertex() and q.is_vertex():
                continue
            eid = pair_id(p.id, q.id)
            edges.append((eid,
                          pair_id(g.ref_src(p), h.ref_src(q)),
                          pair_id(g.ref_tgt(p), h.ref_tgt(q))))
            p1_e[eid] = p
            p2_e[eid] = q
    prod = Graph(verts, edges)
    return (prod,
            GraphMorphism(prod, g, p1_v, p1_e),
            GraphMorphism(prod, h, p2_v, p2_e))


def _disambiguate(g_ids: set, h_ids: set):
    """Renaming maps for a disjoint union; shared ids get L./R. prefixes."""
    shared = g_ids & h_ids
    used = (g_ids | h_ids) - shared

    def fresh(prefix, name):
        cand = prefix + name
        while cand in used:
            cand = prefix + cand
        used.add(cand)
        return cand

    left = {i: (fresh("L.", i) if i in shared else i) for i in sorted(g_ids)}
    right = {i: (fresh("R.", i) if i in shared else i) for i in sorted(h_ids)}
    return left, right


def graph_coproduct(g: Graph, h: Graph):
    """Disjoint union. Ids shared between the two inputs are prefixed
    "L." / "R."; everything else keeps its name. Returns (sum, inl, inr)."""
    g_ids = set(g.vertices) | set(g.edges)
    h_ids = set(h.vertices) | set(h.edges)
    left, right = _disambiguate(g_ids, h_ids)
    verts = [left[v] for v in g.vertices] + [right[v] for v in h.vertices]
    edges = ([(left[e], left[s], left[t]) for e, s, t in g.edge_items()]
             + [(right[e], right[s], right[t]) for e, s, t in h.edge_items()])
    total = Graph(verts, edges)
    inl = GraphMorphism(g, total, {v: left[v] for v in g.vertices},
                        {e: eref(left[e]) for e in g.edges})
    inr = GraphMorphism(h, total, {v: right[v] for v in h.vertices},
                        {e: eref(right[e]) for e in h.edges})
    return total, inl, inr


def graph_pushout(f: GraphMorphism, g: GraphMorphism):
    """Glue cod(f) and cod(g) along their common monic images of dom(f).

    Identified vertices and edges take the id of g's image (the second leg
    wins naming). Returns (pushout, leg_from_cod_f, leg_from_cod_g).
    """
    if f.dom != g.dom:
        raise GraphError("pushout legs must share a domain")
    if not f.is_monic() or not g.is_monic():
        raise GraphError("pushout requires monic legs")
    gf, gg = f.cod, g.cod

    # id of the glued copy, keyed by (side, original id)
    v_f = {f.v_map[k]: g.v_map[k] for k in f.dom.vertices}
    e_f = {f.e_map[k].id: g.e_map[k].id for k in f.dom.edges}

    g_ids = ({v for v in gf.vertices if v not in v_f}
             | {e for e in gf.edges if e not in e_f})
    h_ids = set(gg.vertices) | set(gg.edges)
    left, right = _disambiguate(g_ids, h_ids)

    def name_f(i: str) -> str:
        if i in v_f:
            return right[v_f[i]]
        if i in e_f:
            return right[e_f[i]]
        return left[i]

    verts = [name_f(v) for v in gf.vertices if v not in v_f] \
        + [right[v] for v in gg.vertices]
    edges = [(name_f(e), name_f(s), name_f(t))
             for e, s, t in gf.edge_items() if e not in e_f] \
        + [(right[e], right[s], right[t]) for e, s, t in gg.edge_items()]
    po = Graph(verts, edges)
    leg_f = GraphMorphism(gf, po, {v: name_f(v) for v in gf.vertices},
                          {e: eref(name_f(e)) for e in gf.edges})
    leg_g = GraphMorphism(gg, po, {v: right[v] for v in gg.vertices},
                          {e: eref(right[e]) for e in gg.edges})
    return po, leg_f, leg_g


def graph_fiber_product(f: GraphMorphism, g: GraphMorphism):
    """Sub-graph of dom(f) ⊠ dom(g) on which the two legs agree in the
    common codomain. Returns (fiber, projection1, projection2)."""
    if f.cod != g.cod:
        raise GraphError("fiber product legs must share a codomain")
    df, dg = f.dom, g.dom
    verts, edges = [], []
    p1_v, p2_v, p1_e, p2_e = {}, {}, {}, {}
    for a in df.vertices:
        for b in dg.vertices:
            if f.v_map[a] == g.v_map[b]:
                vid = pair_id(a, b)
                verts.append(vid)
                p1_v[vid] = a
                p2_v[vid] = b
    kept = set(verts)
    for p in df.generalized():
        for q in dg.generalized():
            if p.is_vertex() and q.is_vertex():
                continue
            if f.apply_ref(p) != g.apply_ref(q):
                continue
            s = pair_id(df.ref_src(p), dg.ref_src(q))
            t = pair_id(df.ref_tgt(p), dg.ref_tgt(q))
            if s not in kept or t not in kept:
                continue
            eid = pair_id(p.id, q.id)
            edges.append((eid, s, t))
            p1_e[eid] = p
            p2_e[eid] = q
    fp = Graph(verts, edges)
    return (fp,
            GraphMorphism(fp, df, p1_v, p1_e),
            GraphMorphism(fp, dg, p2_v, p2_e))


# ---------------------------------------------------------------------------
# Mediating morphisms (universal-property witnesses)
# ---------------------------------------------------------------------------

def product_mediator(prod: Graph, f1: GraphMorphism, f2: GraphMorphism) -> GraphMorphism:
    """The unique morphism K -> G ⊠ H with the given components."""
    if f1.dom != f2.dom:
        raise GraphError("cone legs must share a domain")
    k = f1.dom
    v_map = {v: pair_id(f1.v_map[v], f2.v_map[v]) for v in k.vertices}
    e_map = {}
    for e in k.edges:
        r1, r2 = f1.e_map[e], f2.e_map[e]
        tid = pair_id(r1.id, r2.id)
        e_map[e] = vref(tid) if (r1.is_vertex() and r2.is_vertex()) else eref(tid)
    return GraphMorphism(k, prod, v_map, e_map)


def coproduct_mediator(inl: GraphMorphism, inr: GraphMorphism,
                       f1: GraphMorphism, f2: GraphMorphism) -> GraphMorphism:
    """The unique morphism G ⊔ H -> X restricting to f1 and f2."""
    if f1.cod != f2.cod:
        raise GraphError("cocone legs must share a codomain")
    total = inl.cod
    v_map, e_map = {}, {}
    inv_v = {w: v for v, w in inl.v_map.items()}
    inv_e = {r.id: e for e, r in inl.e_map.items()}
    inv_v2 = {w: v for v, w in inr.v_map.items()}
    inv_e2 = {r.id: e for e, r in inr.e_map.items()}
    for v in total.vertices:
        if v in inv_v:
            v_map[v] = f1.v_map[inv_v[v]]
        else:
            v_map[v] = f2.v_map[inv_v2[v]]
    for e in total.edges:
        if e in inv_e:
            e_map[e] = f1.e_map[inv_e[e]]
        else:
            e_map[e] = f2.e_map[inv_e2[e]]
    return GraphMorphism(total, f1.cod, v_map, e_map)


def pushout_mediator(leg_f: GraphMorphism, leg_g: GraphMorphism,
                     m1: GraphMorphism, m2: GraphMorphism) -> GraphMorphism:
    """The unique morphism out of the pushout agreeing with m1, m2."""
    if m1.cod != m2.cod:
        raise GraphError("cocone legs must share a codomain")
    po = leg_f.cod
    v_map, e_map = {}, {}
    for v, w in leg_g.v_map.items():
        v_map[w] = m2.v_map[v]
    for e, r in leg_g.e_map.items():
        e_map[r.id] = m2.e_map[e]
    for v, w in leg_f.v_map.items():
        expected = m1.v_map[v]
        if w in v_map and v_map[w] != expected:
            raise GraphError("cocone does not commute on identified vertices")
        v_map[w] = expected
    for e, r in leg_f.e_map.items():
        expected = m1.e_map[e]
        if r.id in e_map and e_map[r.id] != expected:
            raise GraphError("cocone does not commute on identified edges")
        e_map[r.id] = expected
    return GraphMorphism(po, m1.cod, v_map, e_map)


def fiber_mediator(fiber: Graph, f1: GraphMorphism, f2: GraphMorphism) -> GraphMorphism:
    """The unique morphism K -> G ×_B H induced by a commuting cone."""
    if f1.dom != f2.dom:
        raise GraphError("cone legs must share a domain")
    k = f1.dom
    v_map = {}
    for v in k.vertices:
        vid = pair_id(f1.v_map[v], f2.v_map[v])
        if not fiber.has_vertex(vid):
            raise GraphError(f"cone does not factor: vertex {vid!r} absent from the fiber")
        v_map[v] = vid
    e_map = {}
    for e in k.edges:
        r1, r2 = f1.e_map[e], f2.e_map[e]
        tid = pair_id(r1.id, r2.id)
        r = vref(tid) if (r1.is_vertex() and r2.is_vertex()) else eref(tid)
        if not fiber.has_ref(r):
            raise GraphError(f"cone does not factor: edge image {tid!r} absent from the fiber")
        e_map[e] = r
    return GraphMorphism(k, fiber, v_map, e_map)


# ---------------------------------------------------------------------------
# Enumeration (exhaustive checks on small graphs)
# ---------------------------------------------------------------------------

def enumerate_morphisms(dom: Graph, cod: Graph) -> list:
    """Every graph morphism dom -> cod. Exponential; meant for tiny graphs."""
    out = []
    dv = list(dom.vertices)
    cv = list(cod.vertices)
    if dv and not cv:
        return out
    de = list(dom.edges)

    def extend_edges(v_map, idx, e_map):
        if idx == len(de):
            out.append(GraphMorphism(dom, cod, dict(v_map), dict(e_map)))
            return
        e = de[idx]
        s, t = v_map[dom.src(e)], v_map[dom.tgt(e)]
        cands = []
        if s == t:
            cands.append(vref(s))
        for e2 in cod.edges:
            if cod.src(e2) == s and cod.tgt(e2) == t:
                cands.append(eref(e2))
        for r in cands:
            e_map[e] = r
            extend_edges(v_map, idx + 1, e_map)
            del e_map[e]

    def extend_vertices(idx, v_map):
        if idx == len(dv):
            extend_edges(v_map, 0, {})
            return
        for w in cv:
            v_map[dv[idx]] = w
            extend_vertices(idx + 1, v_map)
        del v_map[dv[idx]]

    if not dv:
        out.append(GraphMorphism(dom, cod, {}, {}))
        return out
    extend_vertices(0, {})
    return out
