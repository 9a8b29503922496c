"""Semiconjugacy validation and the sampled embedding / submersion /
subdivision verdicts."""

import numpy as np
import pytest

import hybridcat.expr as E
from hybridcat.graphs import Graph, GraphMorphism, identity_morphism
from hybridcat.morphism import (
    Semiconjugacy,
    check_subdivision_necessary,
    classify_embedding,
    classify_submersion,
    compose_semiconjugacies,
    identity_semiconjugacy,
    validate_semiconjugacy,
)
from hybridcat.system import HybridSystem, Mode, ResetEdge, SystemError


def _mode(mid, dim, field, active, flow, **kw):
    return Mode(mid, dim, E.parse_vector(field, dim),
                E.parse_predicate(active, dim), E.parse_predicate(flow, dim), **kw)


def _edge(eid, guard, event, reset, dim):
    return ResetEdge(eid, E.parse_predicate(guard, dim), E.parse_expr(event, dim),
                     E.parse_vector(reset, dim))


def line(mid="u", lo=-1.0, hi=1.0):
    """1-d system with field x' = x on [lo, hi]."""
    g = Graph([mid], [])
    box = f"{lo} <= x0 and x0 <= {hi}"
    return HybridSystem(g, {mid: _mode(mid, 1, ["x0"], box, box)}, {}, {})


def plane(mid="w"):
    """2-d system with the product field (x0, x1) on the unit square."""
    g = Graph([mid], [])
    act = "-1 <= x0 and x0 <= 1 and -1 <= x1 and x1 <= 1"
    return HybridSystem(g, {mid: _mode(mid, 2, ["x0", "x1"], act, act)}, {}, {})


def vec(texts, dim):
    return E.parse_vector(texts, dim)


class TestConstruction:
    def test_dimension_mismatch_rejected(self):
        dom, cod = line("u"), plane("w")
        g = GraphMorphism(dom.graph, cod.graph, {"u": "w"}, {})
        with pytest.raises(SystemError):
            Semiconjugacy(dom, cod, g, {"u": vec(["x0"], 1)})  # needs dim 2 image

    def test_every_vertex_needs_a_map(self):
        dom = line("u")
        g = identity_morphism(dom.graph)
        with pytest.raises(SystemError):
            Semiconjugacy(dom, dom, g, {})

    def test_identity_and_composition(self):
        h = line("u")
        ident = identity_semiconjugacy(h)
        both = compose_semiconjugacies(ident, ident)
        assert both.maps["u"] == ident.maps["u"]
        assert validate_semiconjugacy(both, samples=50).ok


class TestValidate:
    def test_axis_embedding_commutes(self):
        dom, cod = line("u"), plane("w")
        g = GraphMorphism(dom.graph, cod.graph, {"u": "w"}, {})
        alpha = Semiconjugacy(dom, cod, g, {"u": vec(["x0", "0"], 1)})
        rep = validate_semiconjugacy(alpha, samples=100)
        assert rep.ok
        assert rep.max_residual <= 1e-12

    def test_field_commutation_failure_detected(self):
        dom, cod = line("u"), plane("w")
        # swap the codomain field so the axis embedding no longer commutes
        bad_cod = HybridSystem(
            cod.graph,
            {"w": _mode("w", 2, ["x1", "x0"],
                        "-1 <= x0 and x0 <= 1 and -1 <= x1 and x1 <= 1",
                        "-1 <= x0 and x0 <= 1 and -1 <= x1 and x1 <= 1")},
            {}, {})
        g = GraphMorphism(dom.graph, bad_cod.graph, {"u": "w"}, {})
        alpha = Semiconjugacy(dom, bad_cod, g, {"u": vec(["x0", "0"], 1)})
        rep = validate_semiconjugacy(alpha, samples=100)
        assert not rep.ok
        assert any(v["kind"] == "field_commutation" for v in rep.violations)

    def test_flow_preservation_failure_detected(self):
        dom = line("u", -1.0, 1.0)
        cod = line("v", -0.5, 0.5)  # image of [-1,1] leaves [-0.5,0.5]
        g = GraphMorphism(dom.graph, cod.graph, {"u": "v"}, {})
        alpha = Semiconjugacy(dom, cod, g, {"u": E.identity_vector(1)})
        rep = validate_semiconjugacy(alpha, samples=100)
        assert any(v["kind"] == "flow_not_preserved" for v in rep.violations)

    def test_reset_square_checked(self):
        g = Graph(["a"], [("e", "a", "a")])
        m = _mode("a", 1, ["-1"], "x0 >= 0 and x0 <= 2", "x0 > 0")
        dom = HybridSystem(g, {"a": m}, {"e": _edge("e", "x0 == 0", "x0", ["1"], 1)}, {})
        cod = HybridSystem(g, {"a": m}, {"e": _edge("e", "x0 == 0", "x0", ["2"], 1)}, {})
        phi = GraphMorphism(dom.graph, cod.graph, {"a": "a"}, {"e": ("e", "e")})
        alpha = Semiconjugacy(dom, cod, phi, {"a": E.identity_vector(1)})
        rep = validate_semiconjugacy(alpha, samples=50)
        assert any(v["kind"] == "reset_square" for v in rep.violations)

    def test_guard_preservation_failure_detected(self):
        g = Graph(["a"], [("e", "a", "a")])
        m = _mode("a", 1, ["-1"], "x0 >= 0 and x0 <= 2", "x0 > 0")
        dom = HybridSystem(g, {"a": m}, {"e": _edge("e", "x0 == 0", "x0", ["1"], 1)}, {})
        cod = HybridSystem(g, {"a": m}, {"e": _edge("e", "x0 == 1", "1 - x0", ["2"], 1)}, {})
        phi = GraphMorphism(dom.graph, cod.graph, {"a": "a"}, {"e": ("e", "e")})
        alpha = Semiconjugacy(dom, cod, phi, {"a": E.identity_vector(1)})
        rep = validate_semiconjugacy(alpha, samples=50)
        assert any(v["kind"] == "guard_not_preserved" for v in rep.violations)

    def test_inverse_roundtrip_validated(self):
        dom, cod = line("u"), line("v")
        g = GraphMorphism(dom.graph, cod.graph, {"u": "v"}, {})
        good = Semiconjugacy(dom, cod, g, {"u": vec(["x0"], 1)},
                             inverses={"u": vec(["x0"], 1)})
        assert validate_semiconjugacy(good, samples=50).ok
        bad = Semiconjugacy(dom, cod, g, {"u": vec(["x0"], 1)},
                            inverses={"u": vec(["x0 + 0.5"], 1)})
        rep = validate_semiconjugacy(bad, samples=50)
        assert any(v["kind"] == "inverse_roundtrip" for v in rep.violations)


class TestClassify:
    def _axis(self):
        dom, cod = line("u"), plane("w")
        g = GraphMorphism(dom.graph, cod.graph, {"u": "w"}, {})
        return Semiconjugacy(dom, cod, g, {"u": vec(["x0", "0"], 1)})

    def test_axis_embedding_classifies(self):
        rep = classify_embedding(self._axis(), samples=60)
        assert rep.ok
        assert any("sampled verdict" in n for n in rep.notes)

    def test_square_map_fails_injectivity(self):
        # Random draws almost never produce the exact +-x collision pairs of
        # x0^2, so feed the verdict a sampler that includes them.
        def mirrored(rng, n):
            pairs = np.array([[0.5], [-0.5], [0.25], [-0.25]])
            rest = rng.uniform(-1.0, 1.0, size=(max(n - len(pairs), 0), 1))
            return np.vstack([pairs, rest])[:n]

        dom, cod = line("u"), line("v")
        dom.modes["u"].active_sampler = mirrored
        g = GraphMorphism(dom.graph, cod.graph, {"u": "v"}, {})
        alpha = Semiconjugacy(dom, cod, g, {"u": vec(["x0^2"], 1)})
        rep = classify_embedding(alpha, samples=80)
        assert not rep.ok
        assert any(v["kind"] == "injectivity" for v in rep.violations)

    def test_rank_deficiency_detected(self):
        dom, cod = plane("u"), plane("w")
        g = GraphMorphism(dom.graph, cod.graph, {"u": "w"}, {})
        alpha = Semiconjugacy(dom, cod, g, {"u": vec(["x0", "x0"], 2)})
        rep = classify_embedding(alpha, samples=40)
        assert any(v["kind"] == "column_rank" for v in rep.violations)

    def test_dimension_drop_is_not_an_embedding(self):
        dom, cod = plane("u"), line("v")
        g = GraphMorphism(dom.graph, cod.graph, {"u": "v"}, {})
        alpha = Semiconjugacy(dom, cod, g, {"u": vec(["x0"], 2)})
        rep = classify_embedding(alpha, samples=20)
        assert any(v["kind"] == "dimension_drop" for v in rep.violations)

    def test_projection_is_a_surjective_submersion(self):
        dom, cod = plane("u"), line("v")
        g = GraphMorphism(dom.graph, cod.graph, {"u": "v"}, {})
        alpha = Semiconjugacy(dom, cod, g, {"u": vec(["x0"], 2)})
        rep = classify_submersion(alpha, samples=80, surjective=True)
        assert rep.ok
        assert rep.stats["coverage_max_gap"] < 0.5

    def test_coverage_gap_fails_surjectivity(self):
        dom = plane("u")
        cod = line("v", -3.0, 3.0)  # [-1,1] projection cannot cover [-3,3]
        g = GraphMorphism(dom.graph, cod.graph, {"u": "v"}, {})
        alpha = Semiconjugacy(dom, cod, g, {"u": vec(["x0"], 2)})
        rep = classify_submersion(alpha, samples=80, surjective=True)
        assert any(v["kind"] == "coverage" for v in rep.violations)


def _interval_split():
    """[-1,1] with field 1 split at 0 into two modes glued by an identity
    crossing, projecting onto the unsplit interval. The base mode carries a
    sampler hook that includes the cut point, so the two-point fiber over 0
    actually gets inspected."""
    g = Graph(["m", "p"], [("mp", "m", "p")])
    mm = _mode("m", 1, ["1"], "-1 <= x0 and x0 <= 0", "-1 <= x0 and x0 < 0")
    mp = _mode("p", 1, ["1"], "0 <= x0 and x0 <= 1", "0 <= x0 and x0 <= 1")
    e_mp = _edge("mp", "x0 == 0", "-x0", ["x0"], 1)
    dom = HybridSystem(g, {"m": mm, "p": mp}, {"mp": e_mp}, {})

    def with_cut(rng, n):
        pts = rng.uniform(-1.0, 1.0, size=(n, 1))
        pts[0] = 0.0
        return pts

    bg = Graph(["b"], [])
    act = "-1 <= x0 and x0 <= 1"
    base_mode = Mode("b", 1, E.parse_vector(["1"], 1), E.parse_predicate(act, 1),
                     E.parse_predicate(act, 1), active_sampler=with_cut)
    base = HybridSystem(bg, {"b": base_mode}, {}, {})
    phi = GraphMorphism(dom.graph, base.graph, {"m": "b", "p": "b"},
                        {"mp": ("v", "b")})
    p = Semiconjugacy(dom, base, phi,
                      {"m": E.identity_vector(1), "p": E.identity_vector(1)},
                      inverses={"m": E.identity_vector(1),
                                "p": E.identity_vector(1)})
    return p


class TestSubdivision:
    def test_interval_split_passes_necessary_conditions(self):
        p = _interval_split()
        rep = check_subdivision_necessary(p, samples=120)
        assert rep.ok, rep.to_obj()
        assert rep.stats["multi_point_fibers_checked"] >= 1

    def test_double_cover_fibers_are_not_linked(self):
        # two copies of an interval over one: fibers have two points with no
        # reset connecting them, so the linkage condition must fail
        g = Graph(["u", "v"], [])
        mu = _mode("u", 1, ["x0"], "-1 <= x0 and x0 <= 1", "-1 <= x0 and x0 <= 1")
        mv = _mode("v", 1, ["x0"], "-1 <= x0 and x0 <= 1", "-1 <= x0 and x0 <= 1")
        dom = HybridSystem(g, {"u": mu, "v": mv}, {}, {})
        base = line("b")
        phi = GraphMorphism(dom.graph, base.graph, {"u": "b", "v": "b"}, {})
        p = Semiconjugacy(dom, base, phi,
                          {"u": E.identity_vector(1), "v": E.identity_vector(1)},
                          inverses={"u": E.identity_vector(1),
                                    "v": E.identity_vector(1)})
        rep = check_subdivision_necessary(p, samples=60)
        assert not rep.ok
        assert any(v["kind"] == "fiber_not_reset_linked" for v in rep.violations)

    def test_non_epic_graph_fails(self):
        dom, cod = line("u"), line("v")
        g2 = Graph(["v", "w"], [])
        act = "-1 <= x0 and x0 <= 1"
        cod2 = HybridSystem(g2, {"v": _mode("v", 1, ["x0"], act, act),
                                 "w": _mode("w", 1, ["x0"], act, act)}, {}, {})
        phi = GraphMorphism(dom.graph, cod2.graph, {"u": "v"}, {})
        p = Semiconjugacy(dom, cod2, phi, {"u": E.identity_vector(1)})
        rep = check_subdivision_necessary(p, samples=30)
        assert any(v["kind"] == "graph_not_epic" for v in rep.violations)
