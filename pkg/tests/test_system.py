"""Hybrid system data model, sampling, and the sampled well-formedness checks."""

import numpy as np
import pytest

import hybridcat.expr as E
from hybridcat.graphs import Graph, GraphMorphism
from hybridcat.sampling import SamplingStarved, equality_pins, sample_predicate
from hybridcat.simulate import SimConfig, simulate
from hybridcat.system import (
    HybridPoint,
    HybridSystem,
    Mode,
    ResetEdge,
    SystemError,
    check_determinism,
    check_nonblocking,
    point_system,
    prune,
    pullback_along_graph_morphism,
    validate_system,
)
from hybridcat.util import rng_from_seed


def _mode(mid, dim, field, active, flow, **kw):
    return Mode(mid, dim, E.parse_vector(field, dim),
                E.parse_predicate(active, dim), E.parse_predicate(flow, dim), **kw)


def _edge(eid, guard, event, reset, dim, **kw):
    return ResetEdge(eid, E.parse_predicate(guard, dim), E.parse_expr(event, dim),
                     E.parse_vector(reset, dim), **kw)


def sawtooth():
    g = Graph(["a"], [("loop", "a", "a")])
    return HybridSystem(
        g,
        {"a": _mode("a", 1, ["-1"], "x0 >= 0 and x0 <= 2", "x0 > 0 and x0 <= 2")},
        {"loop": _edge("loop", "x0 == 0", "x0", ["1"], 1)},
        {},
    )


class TestDataModel:
    def test_field_dimension_checked(self):
        with pytest.raises(SystemError):
            Mode("m", 2, E.parse_vector(["x0"], 2), E.parse_predicate("0 <= 1", 2),
                 E.parse_predicate("0 <= 1", 2))

    def test_modes_must_match_vertices(self):
        g = Graph(["a", "b"], [])
        m = _mode("a", 1, ["0"], "0 <= 1", "0 <= 1")
        with pytest.raises(SystemError):
            HybridSystem(g, {"a": m}, {}, {})

    def test_reset_dimensions_checked(self):
        g = Graph(["a", "b"], [("e", "a", "b")])
        ma = _mode("a", 1, ["0"], "0 <= 1", "0 <= 1")
        mb = _mode("b", 2, ["0", "0"], "0 <= 1", "0 <= 1")
        bad = _edge("e", "0 <= 1", "-1", ["x0"], 1)  # lands in dim 1, not 2
        with pytest.raises(SystemError):
            HybridSystem(g, {"a": ma, "b": mb}, {"e": bad}, {})

    def test_point_constructor_checks_active(self):
        h = sawtooth()
        p = h.point("a", [1.0])
        assert p == HybridPoint("a", (1.0,))
        with pytest.raises(SystemError):
            h.point("a", [5.0])

    def test_structural_equality_ignores_samplers(self):
        h1 = sawtooth()
        g = Graph(["a"], [("loop", "a", "a")])
        hooked = Mode("a", 1, E.parse_vector(["-1"], 1),
                      E.parse_predicate("x0 >= 0 and x0 <= 2", 1),
                      E.parse_predicate("x0 > 0 and x0 <= 2", 1),
                      active_sampler=lambda rng, n: np.ones((n, 1)))
        h2 = HybridSystem(g, {"a": hooked},
                          {"loop": _edge("loop", "x0 == 0", "x0", ["1"], 1)}, {})
        assert h1 == h2

    def test_point_system(self):
        pt = point_system()
        assert pt.modes["pt"].dim == 0
        assert pt.graph.edges == ()


class TestSampling:
    def test_equality_pins_found_through_conjunction(self):
        p = E.parse_predicate("x0 == 0 and x1 >= 0", 2)
        assert equality_pins(p, {}) == {0: 0.0}

    def test_pinned_guard_samples_are_exact(self):
        p = E.parse_predicate("x0 == 0 and x1 >= 0", 2)
        pts = sample_predicate(p, 2, {}, rng_from_seed(1), 50)
        assert len(pts) > 0
        assert np.all(pts[:, 0] == 0.0)
        assert np.all(pts[:, 1] >= 0)

    def test_starvation_raises(self):
        p = E.parse_predicate("0 < 0", 1)
        with pytest.raises(SamplingStarved):
            sample_predicate(p, 1, {}, rng_from_seed(0), 10, max_tries=500)

    def test_mode_box_respected(self):
        g = Graph(["a"], [])
        m = Mode("a", 1, E.parse_vector(["0"], 1), E.parse_predicate("0 <= 1", 1),
                 E.parse_predicate("0 <= 1", 1), box=((10.0, 11.0),))
        h = HybridSystem(g, {"a": m}, {}, {})
        pts = h.sample_mode("a", "active", rng_from_seed(0), 20)
        assert np.all((pts >= 10.0) & (pts <= 11.0))

    def test_sampler_hook_wins(self):
        g = Graph(["a"], [])
        m = Mode("a", 1, E.parse_vector(["0"], 1),
                 E.parse_predicate("x0 == 0.5", 1), E.parse_predicate("0 <= 1", 1),
                 active_sampler=lambda rng, n: np.full((n, 1), 0.5))
        h = HybridSystem(g, {"a": m}, {}, {})
        pts = h.sample_mode("a", "active", rng_from_seed(0), 9)
        assert np.all(pts == 0.5)


class TestValidateSystem:
    def test_wellformed_passes(self):
        rep = validate_system(sawtooth(), samples=200)
        assert rep.ok

    def test_flow_outside_active_flagged(self):
        g = Graph(["a"], [])
        m = _mode("a", 1, ["0"], "x0 <= 1", "x0 < 5")
        h = HybridSystem(g, {"a": m}, {}, {})
        rep = validate_system(h, samples=300)
        assert not rep.ok
        assert any(v["kind"] == "flow_not_in_active" for v in rep.violations)

    def test_guard_outside_source_flagged(self):
        g = Graph(["a"], [("e", "a", "a")])
        m = _mode("a", 1, ["0"], "x0 <= 1", "x0 < 1")
        e = _edge("e", "x0 == 2", "-1", ["x0"], 1)
        h = HybridSystem(g, {"a": m}, {"e": e}, {})
        rep = validate_system(h, samples=100)
        assert any(v["kind"] == "guard_not_in_source_active" for v in rep.violations)

    def test_reset_image_outside_target_flagged(self):
        g = Graph(["a"], [("e", "a", "a")])
        m = _mode("a", 1, ["-1"], "x0 >= 0 and x0 <= 2", "x0 > 0 and x0 <= 2")
        e = _edge("e", "x0 == 0", "x0", ["7"], 1)
        h = HybridSystem(g, {"a": m}, {"e": e}, {})
        rep = validate_system(h, samples=100)
        assert any(v["kind"] == "reset_image_not_in_target_active"
                   for v in rep.violations)

    def test_empty_active_is_starvation_unless_declared(self):
        g = Graph(["a"], [])
        m = _mode("a", 1, ["0"], "0 < 0", "0 < 0")
        h = HybridSystem(g, {"a": m}, {}, {})
        rep = validate_system(h, samples=50)
        assert rep.ok and rep.starvations  # suspicion, not a violation
        m2 = _mode("a", 1, ["0"], "0 < 0", "0 < 0", declared_empty=True)
        h2 = HybridSystem(g, {"a": m2}, {}, {})
        rep2 = validate_system(h2, samples=50)
        assert rep2.ok and not rep2.starvations


class TestDeterminism:
    def test_disjoint_flow_and_guard_pass(self):
        rep = check_determinism(sawtooth(), samples=300)
        assert rep.ok

    def test_measure_zero_overlap_is_found(self):
        # guard {x0 == 0} meets flow {x0 <= 0} only at the origin; pinned
        # sampling must still produce the witness, and exactly at zero
        g = Graph(["a"], [("e", "a", "a")])
        m = _mode("a", 1, ["1"], "0 <= 1", "x0 <= 0")
        e = _edge("e", "x0 == 0", "-x0", ["-1"], 1)
        h = HybridSystem(g, {"a": m}, {"e": e}, {})
        rep = check_determinism(h, samples=200)
        assert not rep.ok
        witness = rep.violations[0]
        assert witness["kind"] == "overlap"
        assert abs(witness["x"][0]) <= 1e-9

    def test_two_overlapping_guards(self):
        g = Graph(["a"], [("e1", "a", "a"), ("e2", "a", "a")])
        m = _mode("a", 1, ["1"], "0 <= 1", "x0 < 0")
        e1 = _edge("e1", "x0 >= 0", "-x0", ["-1"], 1)
        e2 = _edge("e2", "x0 >= 1", "1-x0", ["-1"], 1)
        h = HybridSystem(g, {"a": m}, {"e1": e1, "e2": e2}, {})
        rep = check_determinism(h, samples=200)
        assert not rep.ok


class TestNonblocking:
    def test_sawtooth_never_blocks(self):
        rep = check_nonblocking(sawtooth(), samples=20, horizon=5.0)
        assert rep.ok

    def test_blocking_system_flagged(self):
        g = Graph(["c"], [])
        m = _mode("c", 1, ["1"], "x0 <= 1", "x0 < 1")
        h = HybridSystem(g, {"c": m}, {}, {})
        rep = check_nonblocking(h, samples=10, horizon=5.0)
        assert not rep.ok
        assert any(v["kind"] == "blocked" for v in rep.violations)


class TestPullback:
    def _decay(self):
        g = Graph(["d"], [])
        return HybridSystem(
            g, {"d": _mode("d", 1, ["-x0"], "0 <= 1", "0 <= 1")}, {}, {})

    def test_collapsed_edge_gets_flow_guard_and_identity_reset(self):
        base = self._decay()
        kg = Graph(["u", "v"], [("e", "u", "v")])
        phi = GraphMorphism(kg, base.graph, {"u": "d", "v": "d"},
                            {"e": ("v", "d")})
        lifted, lift = pullback_along_graph_morphism(base, phi)
        assert lifted.modes["u"].field == base.modes["d"].field
        assert lifted.resets["e"].guard == base.modes["d"].flow
        assert lifted.resets["e"].reset == E.identity_vector(1)
        from hybridcat.morphism import validate_semiconjugacy
        rep = validate_semiconjugacy(lift, samples=60)
        assert rep.ok and rep.max_residual == 0.0

    def test_collapsed_edge_fires_immediately_then_flows(self):
        base = self._decay()
        kg = Graph(["u", "v"], [("e", "u", "v")])
        phi = GraphMorphism(kg, base.graph, {"u": "d", "v": "d"},
                            {"e": ("v", "d")})
        lifted, _ = pullback_along_graph_morphism(base, phi)
        tr = simulate(lifted, HybridPoint("u", (1.0,)), SimConfig(horizon=2.0))
        assert tr.classification == "horizon_truncated"
        assert [s.mode for s in tr.segments] == ["u", "v"]
        assert tr.jumps[0].t == 0.0
        assert abs(tr.final_point().x[0] - np.exp(-2.0)) < 1e-7

    def test_edge_to_edge_copies_reset(self):
        base = sawtooth()
        kg = Graph(["u"], [("l2", "u", "u")])
        phi = GraphMorphism(kg, base.graph, {"u": "a"}, {"l2": ("e", "loop")})
        lifted, _ = pullback_along_graph_morphism(base, phi)
        assert lifted.resets["l2"].reset == base.resets["loop"].reset
        assert lifted.resets["l2"].guard == base.resets["loop"].guard


class TestPrune:
    def _sys(self, declare):
        g = Graph(["a", "b"], [("e", "a", "b")])
        ma = _mode("a", 1, ["0"], "0 <= 1", "0 <= 1")
        mb = _mode("b", 1, ["0"], "0 < 0", "0 < 0", declared_empty=declare)
        e = _edge("e", "0 < 0", "-1", ["x0"], 1, declared_empty=declare)
        return HybridSystem(g, {"a": ma, "b": mb}, {"e": e}, {})

    def test_declared_empty_removed_with_incident_edges(self):
        h = prune(self._sys(True))
        assert h.graph.vertices == ("a",)
        assert h.graph.edges == ()

    def test_sampled_empty_needs_confirmation(self):
        h = self._sys(False)
        with pytest.raises(SystemError):
            prune(h, sampled_empty_modes=["b"])
        out = prune(h, sampled_empty_modes=["b"], confirm=True)
        assert out.graph.vertices == ("a",)
