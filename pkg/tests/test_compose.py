"""Composition constructors.

The fixtures are small enough that every expected outcome is computable by
hand. Two sawtooths with offset phases interleave their jumps at known
times; an identity fiber product is the exact diagonal; slicing a constant
rightward flow at the origin yields one crossing edge whose jump lands at
t = -x0; an immediate-transfer stage glued onto a flow stage produces the
path v -> y -> z whose entry reset collapses to the constant 0.
"""

import warnings

import numpy as np
import pytest

import hybridcat.expr as E
from hybridcat.compose import (
    DirectedSystem,
    TemplateAnchorPair,
    compose_template_anchor,
    coproduct,
    directed_coproduct,
    directed_product,
    factor_reset,
    fiber_product,
    product,
    sequential_compose,
    slice_mode,
    unit_directed,
    verify_template_anchor,
)
from hybridcat.graphs import Graph, GraphMorphism
from hybridcat.morphism import (
    Semiconjugacy,
    classify_embedding,
    identity_semiconjugacy,
    validate_semiconjugacy,
)
from hybridcat.morphism import check_subdivision_necessary
from hybridcat.simulate import (
    SimConfig,
    compare_traces,
    fundamentalize,
    pullback_execution,
    push_trace,
    simulate,
)
from hybridcat.system import (
    HybridSystem,
    Mode,
    ResetEdge,
    SystemError,
    check_determinism,
    point_system,
    validate_system,
)


def _mode(mid, dim, field, active, flow, **kw):
    return Mode(mid, dim, E.parse_vector(field, dim),
                E.parse_predicate(active, dim), E.parse_predicate(flow, dim),
                **kw)


def _edge(eid, guard, event, reset, dim):
    return ResetEdge(eid, E.parse_predicate(guard, dim),
                     E.parse_expr(event, dim), E.parse_vector(reset, dim))


def sawtooth(mid="a", eid="loop"):
    g = Graph([mid], [(eid, mid, mid)])
    m = _mode(mid, 1, ["-1"], "x0 >= 0 and x0 <= 2", "x0 > 0 and x0 <= 2")
    e = _edge(eid, "x0 == 0", "x0", ["1"], 1)
    return HybridSystem(g, {mid: m}, {eid: e}, {})


def decay(mid="d"):
    g = Graph([mid], [])
    m = _mode(mid, 1, ["-x0"], "0 <= 1", "0 <= 1")
    return HybridSystem(g, {mid: m}, {}, {})


def closed_line(mid="v", field="1"):
    g = Graph([mid], [])
    m = _mode(mid, 1, [field], "x0 >= -1 and x0 <= 1", "x0 >= -1 and x0 <= 1")
    return HybridSystem(g, {mid: m}, {}, {})


class TestProduct:
    def test_pairing_with_the_point_system_changes_nothing(self):
        saw = sawtooth()
        prod, p1, p2 = product(saw, point_system())
        assert set(prod.graph.vertices) == {"(a,pt)"}
        assert set(prod.graph.edges) == {"(loop,pt)"}
        assert prod.modes["(a,pt)"].dim == 1

        cfg = SimConfig(horizon=3.0)
        direct = simulate(saw, saw.point("a", [1.5]), cfg)
        lifted = simulate(prod, prod.point("(a,pt)", [1.5]), cfg)
        gap, bad = compare_traces(push_trace(p1, lifted), direct)
        assert bad is None
        assert gap <= 1e-12
        assert [j.edge for j in lifted.jumps] == ["(loop,pt)", "(loop,pt)"]

    def test_offset_sawtooths_interleave_jumps(self):
        # factor jumps at x0+k and y0+k; with phases 1.5 and 0.7 the first
        # five composite jumps land at 0.7, 1.5, 1.7, 2.5, 2.7
        prod, p1, p2 = product(sawtooth("a", "loop"), sawtooth("b", "tick"))
        assert set(prod.graph.edges) == {"(loop,b)", "(a,tick)", "(loop,tick)"}

        tr = simulate(prod, prod.point("(a,b)", [1.5, 0.7]),
                      SimConfig(horizon=3.0))
        assert tr.classification == "horizon_truncated"
        assert [j.edge for j in tr.jumps] == [
            "(a,tick)", "(loop,b)", "(a,tick)", "(loop,b)", "(a,tick)"]
        assert np.allclose([j.t for j in tr.jumps],
                           [0.7, 1.5, 1.7, 2.5, 2.7], atol=1e-6)

    def test_synchronized_phases_jump_through_the_pair_edge(self):
        prod, _, _ = product(sawtooth("a", "loop"), sawtooth("b", "tick"))
        tr = simulate(prod, prod.point("(a,b)", [1.5, 1.5]),
                      SimConfig(horizon=2.0))
        assert [j.edge for j in tr.jumps] == ["(loop,tick)"]
        assert tr.jumps[0].post_state == (1.0, 1.0)

    def test_pair_edge_event_is_the_min_of_the_factor_events(self):
        prod, _, _ = product(sawtooth("a", "loop"), sawtooth("b", "tick"))
        ev = prod.resets["(loop,tick)"].event
        assert E.eval_expr(ev, [0.3, 0.7], {}) == pytest.approx(0.3)
        assert E.eval_expr(ev, [0.7, 0.3], {}) == pytest.approx(0.3)

    def test_projections_are_semiconjugacies(self):
        prod, p1, p2 = product(sawtooth("a", "loop"), sawtooth("b", "tick"))
        for proj in (p1, p2):
            rep = validate_semiconjugacy(proj, samples=60)
            assert rep.ok
            assert (rep.max_residual or 0.0) <= 1e-9

    def test_product_stays_deterministic(self):
        prod, _, _ = product(sawtooth("a", "loop"), sawtooth("b", "tick"))
        assert check_determinism(prod, samples=200).ok

    def test_conflicting_parameters_are_rejected(self):
        s1, s2 = sawtooth(), sawtooth("b", "tick")
        s1.params["k"] = 1.0
        s2.params["k"] = 2.0
        with pytest.raises(SystemError, match="parameter"):
            product(s1, s2)


class TestCoproduct:
    def test_counts_add_and_shared_ids_get_prefixes(self):
        both, i1, i2 = coproduct(sawtooth(), sawtooth())
        assert set(both.graph.vertices) == {"L.a", "R.a"}
        assert set(both.graph.edges) == {"L.loop", "R.loop"}
        assert i1.g.v_map == {"a": "L.a"}
        assert i2.g.v_map == {"a": "R.a"}

    def test_each_component_runs_unchanged(self):
        saw = sawtooth()
        both, i1, _ = coproduct(saw, decay())
        cfg = SimConfig(horizon=2.0)
        direct = simulate(saw, saw.point("a", [1.5]), cfg)
        inside = simulate(both, both.point("a", [1.5]), cfg)
        gap, bad = compare_traces(push_trace(i1, direct), inside)
        assert bad is None and gap <= 1e-12

    def test_injections_validate(self):
        both, i1, i2 = coproduct(sawtooth(), decay())
        assert validate_semiconjugacy(i1, samples=60).ok
        assert validate_semiconjugacy(i2, samples=60).ok


class TestFiberProduct:
    def test_identity_legs_give_the_exact_diagonal(self):
        d = decay()
        fib, q1, q2 = fiber_product(identity_semiconjugacy(d),
                                    identity_semiconjugacy(d))
        assert set(fib.graph.vertices) == {"(d,d)"}
        assert fib.modes["(d,d)"].dim == 2

        from hybridcat.util import rng_from_seed
        pts = fib.sample_mode("(d,d)", "active", rng_from_seed(3), 20)
        assert np.max(np.abs(pts[:, 0] - pts[:, 1])) <= 1e-9

    def test_diagonal_flow_never_drifts_off_the_band(self):
        d = decay()
        fib, _, _ = fiber_product(identity_semiconjugacy(d),
                                  identity_semiconjugacy(d))
        tr = simulate(fib, fib.point("(d,d)", [0.8, 0.8]),
                      SimConfig(horizon=5.0))
        assert tr.classification == "horizon_truncated"
        worst = max(float(np.max(np.abs(seg.xs[:, 0] - seg.xs[:, 1])))
                    for seg in tr.segments)
        assert worst == 0.0

    def test_first_leg_must_be_a_submersion(self):
        line = closed_line()
        g = GraphMorphism(line.graph, line.graph, {"v": "v"}, {})
        squash = Semiconjugacy(line, line, g, {"v": E.parse_vector(["0"], 1)})
        with pytest.raises(SystemError, match="submersion"):
            fiber_product(squash, identity_semiconjugacy(line))

    def test_inverse_free_thin_band_warns(self):
        plane = HybridSystem(
            Graph(["P"], []),
            {"P": _mode("P", 2, ["0", "0"], "0 <= 1", "0 <= 1")}, {}, {})
        line = decay("L")
        p = Semiconjugacy(plane, line,
                          GraphMorphism(plane.graph, line.graph, {"P": "L"}, {}),
                          {"P": E.parse_vector(["x0"], 2)})
        f = Semiconjugacy(line, line,
                          GraphMorphism(line.graph, line.graph, {"L": "L"}, {}),
                          {"L": E.parse_vector(["x0"], 1)})
        with pytest.warns(RuntimeWarning, match="constraint band"):
            fiber_product(p, f)


class TestSliceMode:
    def test_one_way_flow_keeps_one_crossing_edge(self):
        sliced, sub = slice_mode(closed_line(), "v", "x0")
        assert set(sliced.graph.vertices) == {"v-", "v+"}
        assert set(sliced.graph.edges) == {"v-+"}
        assert sliced.graph.src("v-+") == "v-"
        assert sliced.graph.tgt("v-+") == "v+"
        assert validate_semiconjugacy(sub, samples=60).ok

    def test_crossing_fires_where_the_interpolant_hits_zero(self):
        sliced, _ = slice_mode(closed_line(), "v", "x0")
        tr = simulate(sliced, sliced.point("v-", [-0.5]), SimConfig(horizon=2.0))
        assert [j.edge for j in tr.jumps] == ["v-+"]
        assert tr.jumps[0].t == pytest.approx(0.5, abs=1e-6)
        assert tr.classification == "finite_blocked"
        assert tr.final_point().x[0] == pytest.approx(1.0, abs=1e-6)

    def test_pullback_then_push_is_the_identity_on_traces(self):
        line = closed_line()
        sliced, sub = slice_mode(line, "v", "x0")
        direct = simulate(line, line.point("v", [-0.5]), SimConfig(horizon=2.0))
        lifted = pullback_execution(sub.handle, direct)
        assert [s.mode for s in lifted.segments] == ["v-", "v+"]
        assert [j.edge for j in lifted.jumps] == ["v-+"]
        back = fundamentalize(push_trace(sub, lifted))
        assert len(back.jumps) == 0
        gap, bad = compare_traces(back, direct)
        assert bad is None and gap <= 1e-12

    def test_split_passes_the_subdivision_check(self):
        def with_origin(rng, n):
            rows = rng.uniform(-1.0, 1.0, size=(n, 1))
            rows[0, 0] = 0.0
            return rows

        line = closed_line()
        line.modes["v"].active_sampler = with_origin
        sliced, sub = slice_mode(line, "v", "x0")
        rep = check_subdivision_necessary(sub, samples=40)
        assert rep.ok
        assert rep.stats["multi_point_fibers_checked"] >= 1

    def test_two_sided_crossings_survive_when_both_directions_occur(self):
        shear = HybridSystem(
            Graph(["P"], []),
            {"P": _mode("P", 2, ["x1", "0"],
                        "x0 >= -1 and x0 <= 1 and x1 >= -1 and x1 <= 1",
                        "x0 >= -1 and x0 <= 1 and x1 >= -1 and x1 <= 1")},
            {}, {})
        sliced, _ = slice_mode(shear, "P", "x0", transversality_tol=1e-9)
        assert set(sliced.graph.edges) == {"P-+", "P+-"}
        up = simulate(sliced, sliced.point("P-", [-0.5, 1.0]),
                      SimConfig(horizon=3.0))
        down = simulate(sliced, sliced.point("P+", [0.5, -1.0]),
                        SimConfig(horizon=3.0))
        assert [j.edge for j in up.jumps] == ["P-+"]
        assert [j.edge for j in down.jumps] == ["P+-"]

    def test_starved_side_is_declared_empty_and_pruned(self):
        g = Graph(["v"], [])
        m = _mode("v", 1, ["1"], "x0 >= 0.5 and x0 <= 1.5",
                  "x0 >= 0.5 and x0 <= 1.5")
        sys_ = HybridSystem(g, {"v": m}, {}, {})
        with pytest.warns(RuntimeWarning, match="declared empty"):
            sliced, _ = slice_mode(sys_, "v", "x0")
        assert set(sliced.graph.vertices) == {"v+"}
        assert not sliced.graph.edges

    def test_tangential_flow_aborts(self):
        with pytest.raises(SystemError, match="not transverse"):
            slice_mode(closed_line(field="x0"), "v", "x0")

    def test_incident_edges_are_copied_per_side(self):
        # self-loop on the sliced mode: four copies, filtered by the side
        # of the guard point and the side of the reset image
        saw = sawtooth()
        sliced, sub = slice_mode(saw, "a", "x0 - 0.5")
        assert set(sliced.graph.edges) == {
            "a-+", "a+-", "loop@--", "loop@-+", "loop@+-", "loop@++"}
        # the guard sits at x0 == 0 (minus side) and the reset lands at 1
        # (plus side), so only the -+ copy ever fires; the decay back down
        # re-crosses the cut through the plus-to-minus slice edge
        tr = simulate(sliced, sliced.point("a-", [0.3]), SimConfig(horizon=1.0))
        assert [j.edge for j in tr.jumps] == ["loop@-+", "a+-"]
        assert tr.jumps[0].t == pytest.approx(0.3, abs=1e-6)
        assert tr.jumps[1].t == pytest.approx(0.8, abs=1e-6)
        assert tr.jumps[1].pre_state[0] == pytest.approx(0.5, abs=1e-6)


class TestFactorReset:
    def test_transit_mode_passes_straight_through(self):
        saw = sawtooth()
        split, sub = factor_reset(
            saw, "loop", E.identity_vector(1), E.parse_vector(["1"], 1),
            E.parse_predicate("x0 == 0", 1), 1)
        assert set(split.graph.vertices) == {"a", "loop_mid"}
        assert set(split.graph.edges) == {"loop_f", "loop_g"}

        cfg = SimConfig(horizon=2.2)
        direct = simulate(saw, saw.point("a", [1.5]), cfg)
        routed = simulate(split, split.point("a", [1.5]), cfg)
        assert [j.edge for j in routed.jumps] == ["loop_f", "loop_g"]
        assert routed.jumps[0].t == routed.jumps[1].t

        back = fundamentalize(push_trace(sub, routed))
        gap, bad = compare_traces(back, fundamentalize(direct))
        assert bad is None and gap <= 1e-12
        assert [j.edge for j in back.jumps] == ["loop"]

    def test_pullback_inserts_the_transit(self):
        saw = sawtooth()
        split, sub = factor_reset(
            saw, "loop", E.identity_vector(1), E.parse_vector(["1"], 1),
            E.parse_predicate("x0 == 0", 1), 1)
        direct = simulate(saw, saw.point("a", [1.5]), SimConfig(horizon=2.2))
        lifted = pullback_execution(sub.handle, direct)
        assert [j.edge for j in lifted.jumps] == ["loop_f", "loop_g"]
        assert any(s.mode == "loop_mid" for s in lifted.segments)
        back = fundamentalize(push_trace(sub, lifted))
        gap, bad = compare_traces(back, fundamentalize(direct))
        assert bad is None and gap <= 1e-12

    def test_subdivision_validates(self):
        saw = sawtooth()
        _, sub = factor_reset(
            saw, "loop", E.identity_vector(1), E.parse_vector(["1"], 1),
            E.parse_predicate("x0 == 0", 1), 1)
        assert validate_semiconjugacy(sub, samples=60).ok

    def test_wrong_factorization_is_refused(self):
        with pytest.raises(SystemError, match="residual"):
            factor_reset(sawtooth(), "loop", E.identity_vector(1),
                         E.parse_vector(["2"], 1),
                         E.parse_predicate("x0 == 0", 1), 1)

    def test_first_factor_must_land_in_the_intermediate_set(self):
        with pytest.raises(SystemError, match="outside the intermediate"):
            factor_reset(sawtooth(), "loop", E.identity_vector(1),
                         E.parse_vector(["1"], 1),
                         E.parse_predicate("x0 >= 0.5", 1), 1)


def _point_mode(mid):
    truth = E.parse_predicate("0 <= 1")
    return Mode(mid, 0, E.VectorExpr(0, ()), truth, truth)


def _boundary_into(pt_id, carrier, vertex, const=0.0):
    """Point system embedded at a dim-1 carrier mode, state pinned to const."""
    p = point_system(pt_id)
    return p, Semiconjugacy(
        p, carrier, GraphMorphism(p.graph, carrier.graph, {pt_id: vertex}, {}),
        {pt_id: E.VectorExpr(0, (E.Num(const),))},
        inverses={pt_id: E.VectorExpr(1, ())})


def _point_boundary(pt_id, carrier, vertex):
    p = point_system(pt_id)
    ident = {pt_id: E.VectorExpr(0, ())}
    return Semiconjugacy(
        p, carrier, GraphMorphism(p.graph, carrier.graph, {pt_id: vertex}, {}),
        ident, inverses=dict(ident))


def transfer_stage(vid, wid, eid, in_pt, out_pt):
    """One dim-1 mode that immediately transfers to a terminal point mode."""
    truth = "0 <= 1"
    g = Graph([vid, wid], [(eid, vid, wid)])
    modes = {vid: _mode(vid, 1, ["0"], truth, truth), wid: _point_mode(wid)}
    resets = {eid: ResetEdge(eid, E.parse_predicate(truth, 1),
                             E.parse_expr("-1", 1), E.VectorExpr(1, ()))}
    carrier = HybridSystem(g, modes, resets, {})
    _, init = _boundary_into(in_pt, carrier, vid)
    final = _point_boundary(out_pt, carrier, wid)
    return DirectedSystem(carrier, init, final)


def flow_stage(in_pt, out_pt):
    """Climb from the entry state toward x0 == 1, then transfer out."""
    g = Graph(["y", "z"], [("fK", "y", "z")])
    modes = {"y": _mode("y", 1, ["x0"], "x0 >= 0 and x0 <= 1",
                        "x0 >= 0 and x0 < 1"),
             "z": _point_mode("z")}
    resets = {"fK": ResetEdge("fK", E.parse_predicate("x0 == 1", 1),
                              E.parse_expr("1 - x0", 1), E.VectorExpr(1, ()))}
    carrier = HybridSystem(g, modes, resets, {})
    _, init = _boundary_into(in_pt, carrier, "y")
    final = _point_boundary(out_pt, carrier, "z")
    return DirectedSystem(carrier, init, final)


class TestSequentialComposition:
    def test_gluing_produces_the_path_and_reroutes_the_reset(self):
        comp = sequential_compose(transfer_stage("v", "w", "e", "pt0", "pt1"),
                                  flow_stage("pt1", "pt2"))
        assert set(comp.carrier.graph.vertices) == {"v", "y", "z"}
        assert comp.carrier.graph.tgt("e") == "y"
        # entering the second stage lands at its designated entry state
        assert comp.carrier.resets["e"].reset.components == (E.Num(0.0),)

    def test_composite_run_can_stall_before_the_exit(self):
        # the transfer drops the state at the second stage's equilibrium, so
        # the composite never reaches z even though each stage alone exits
        comp = sequential_compose(transfer_stage("v", "w", "e", "pt0", "pt1"),
                                  flow_stage("pt1", "pt2"))
        tr = simulate(comp.carrier, comp.carrier.point("v", [3.7]),
                      SimConfig(horizon=50.0))
        assert tr.classification == "horizon_truncated"
        assert [j.edge for j in tr.jumps] == ["e"]
        assert all(seg.mode != "z" for seg in tr.segments)
        assert tr.final_point().mode == "y"
        assert abs(tr.final_point().x[0]) <= 1e-12

    def test_second_stage_alone_does_exit(self):
        stage = flow_stage("pt1", "pt2")
        tr = simulate(stage.carrier, stage.carrier.point("y", [0.5]),
                      SimConfig(horizon=5.0))
        assert [j.edge for j in tr.jumps] == ["fK"]
        assert tr.final_point().mode == "z"

    def test_left_unit(self):
        stage = flow_stage("pt1", "pt2")
        comp = sequential_compose(unit_directed(point_system("pt1")), stage)
        assert comp.carrier == stage.carrier
        assert comp.init.g.v_map == stage.init.g.v_map
        assert (comp.init.maps["pt1"].components
                == stage.init.maps["pt1"].components)
        assert comp.final.g.v_map == stage.final.g.v_map

    def test_right_unit_renames_only_the_boundary_mode(self):
        stage = transfer_stage("v", "w", "e", "pt0", "pt1")
        comp = sequential_compose(stage, unit_directed(point_system("pt1")))
        assert set(comp.carrier.graph.vertices) == {"v", "pt1"}
        assert comp.carrier.graph.tgt("e") == "pt1"
        assert comp.carrier.resets["e"].guard == stage.carrier.resets["e"].guard
        assert comp.final.g.v_map == {"pt1": "pt1"}

    def test_three_stage_associativity(self):
        def build():
            return (transfer_stage("v", "w", "e", "pt0", "pt1"),
                    flow_stage("pt1", "pt2"),
                    transfer_stage("u", "s", "eC", "pt2", "pt3"))

        a, b, c = build()
        left = sequential_compose(sequential_compose(a, b), c)
        a, b, c = build()
        right = sequential_compose(a, sequential_compose(b, c))
        assert left.carrier == right.carrier
        assert left.init.g.v_map == right.init.g.v_map
        assert left.final.g.v_map == right.final.g.v_map
        for pt in left.init.maps:
            assert (left.init.maps[pt].components
                    == right.init.maps[pt].components)

    def test_second_stage_guards_take_priority(self):
        # both stages could fire at x0 == 0; the overlap rewrite subtracts
        # the second stage's guard from the first stage's residual loop
        g1 = Graph(["a2"], [("l2", "a2", "a2")])
        h_carrier = HybridSystem(
            g1, {"a2": _mode("a2", 1, ["-1"], "x0 >= 0 and x0 <= 2",
                             "x0 > 0 and x0 <= 2")},
            {"l2": _edge("l2", "x0 == 0", "x0", ["1"], 1)}, {})
        k2 = HybridSystem(Graph(["k"], []),
                          {"k": _mode("k", 1, ["-1"], "x0 >= 0 and x0 <= 2",
                                      "x0 > 0 and x0 <= 2")}, {}, {})
        ident = {"k": E.identity_vector(1)}
        h_final = Semiconjugacy(
            k2, h_carrier,
            GraphMorphism(k2.graph, h_carrier.graph, {"k": "a2"}, {}),
            ident, inverses=dict(ident))
        _, h_init = _boundary_into("pt0", h_carrier, "a2", const=1.5)
        h_dir = DirectedSystem(h_carrier, h_init, h_final)

        g2 = Graph(["b2", "c2"], [("m2", "b2", "c2")])
        hp_carrier = HybridSystem(
            g2, {"b2": _mode("b2", 1, ["-1"], "x0 >= 0 and x0 <= 2",
                             "x0 > 0 and x0 <= 2"),
                 "c2": _point_mode("c2")},
            {"m2": ResetEdge("m2", E.parse_predicate("x0 == 0", 1),
                             E.parse_expr("x0", 1), E.VectorExpr(1, ()))}, {})
        hp_init = Semiconjugacy(
            k2, hp_carrier,
            GraphMorphism(k2.graph, hp_carrier.graph, {"k": "b2"}, {}),
            {"k": E.identity_vector(1)},
            inverses={"k": E.identity_vector(1)})
        hp_final = _point_boundary("pt9", hp_carrier, "c2")
        hp_dir = DirectedSystem(hp_carrier, hp_init, hp_final)

        comp = sequential_compose(h_dir, hp_dir)
        assert set(comp.carrier.graph.vertices) == {"b2", "c2"}
        assert not comp.carrier.in_guard("l2", [0.0])

        tr = simulate(comp.carrier, comp.carrier.point("b2", [1.5]),
                      SimConfig(horizon=3.0))
        assert tr.classification == "horizon_truncated"
        assert [j.edge for j in tr.jumps] == ["m2"]
        assert tr.jumps[0].t == pytest.approx(1.5, abs=1e-6)

        stripped = Semiconjugacy(
            k2, hp_carrier,
            GraphMorphism(k2.graph, hp_carrier.graph, {"k": "b2"}, {}),
            {"k": E.identity_vector(1)})
        hp_no_inverse = DirectedSystem(hp_carrier, stripped, hp_final)
        with pytest.raises(SystemError, match="missing inverse"):
            sequential_compose(h_dir, hp_no_inverse)

    def test_boundary_mismatch_is_rejected(self):
        with pytest.raises(SystemError, match="boundary"):
            sequential_compose(transfer_stage("v", "w", "e", "pt0", "ptX"),
                               flow_stage("pt1", "pt2"))


class TestDirectedProductCoproduct:
    def test_product_exit_is_the_paired_sink(self):
        d = directed_product(transfer_stage("v", "w", "e", "pt0", "pt1"),
                             transfer_stage("v2", "w2", "e2", "pt4", "pt5"))
        assert set(d.carrier.graph.vertices) == {
            "(v,v2)", "(v,w2)", "(w,v2)", "(w,w2)"}
        assert d.final.g.v_map == {"(pt1,pt5)": "(w,w2)"}
        assert len(d.carrier.graph.edges) == 5
        assert not d.carrier.graph.edges_from("(w,w2)")

    def test_unit_product_is_the_product_unit(self):
        a, b = sawtooth(), decay()
        left = directed_product(unit_directed(a), unit_directed(b))
        right = unit_directed(product(a, b)[0])
        assert left.carrier == right.carrier
        assert left.init.g.v_map == right.init.g.v_map
        for v in left.init.maps:
            assert left.init.maps[v].components == right.init.maps[v].components

    def test_coproduct_collects_both_exits(self):
        d = directed_coproduct(transfer_stage("v", "w", "e", "pt0", "pt1"),
                               flow_stage("pt6", "pt7"))
        assert set(d.carrier.graph.vertices) == {"v", "w", "y", "z"}
        assert d.final.g.v_map == {"pt1": "w", "pt7": "z"}
        assert d.init.g.v_map == {"pt0": "v", "pt6": "y"}


class TestTemplateAnchor:
    def _embedding_pair(self):
        line = decay("T")
        plane = HybridSystem(
            Graph(["P"], []),
            {"P": _mode("P", 2, ["-x0", "-x1"], "0 <= 1", "0 <= 1")}, {}, {})
        emb = Semiconjugacy(
            line, plane,
            GraphMorphism(line.graph, plane.graph, {"T": "P"}, {}),
            {"T": E.parse_vector(["x0", "0"], 1)},
            inverses={"T": E.parse_vector(["x0"], 2)})
        return TemplateAnchorPair(line, line, identity_semiconjugacy(line),
                                  emb, plane)

    def test_identity_span_verifies(self):
        d = decay()
        pair = TemplateAnchorPair(d, d, identity_semiconjugacy(d),
                                  identity_semiconjugacy(d), d)
        rep = verify_template_anchor(pair, samples=50)
        assert rep.ok
        assert pair.p_report is not None and pair.i_report is not None

    def test_composition_with_the_identity_pair_stacks_the_legs(self):
        p1 = self._embedding_pair()
        plane = p1.anchor
        p2 = TemplateAnchorPair(plane, plane, identity_semiconjugacy(plane),
                                identity_semiconjugacy(plane), plane)
        comp = compose_template_anchor(p1, p2, samples=30)
        assert comp.template == p1.template
        assert comp.anchor == plane
        assert set(comp.roof.graph.vertices) == {"(P,T)"}
        new_p = comp.p.maps["(P,T)"]
        new_i = comp.i.maps["(P,T)"]
        assert [E.format_expr(c) for c in new_p.components] == ["x2"]
        assert [E.format_expr(c) for c in new_i.components] == ["x0", "x1"]
        assert comp.p_report is not None and comp.i_report is not None
        assert comp.attracting_evidence is None

    def test_middle_systems_must_agree(self):
        p1 = self._embedding_pair()
        d = decay()
        other = TemplateAnchorPair(d, d, identity_semiconjugacy(d),
                                   identity_semiconjugacy(d), d)
        with pytest.raises(SystemError, match="anchor must equal"):
            compose_template_anchor(p1, other)

    def test_roof_legs_must_start_at_the_roof(self):
        d = decay()
        other = decay("Q")
        with pytest.raises(SystemError, match="roof"):
            TemplateAnchorPair(d, other, identity_semiconjugacy(d),
                               identity_semiconjugacy(d), d)
