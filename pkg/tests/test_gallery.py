"""Gallery example tests.

Hand-computed anchors used below:

* rocking block, alpha = 0.3, start (0.5, 0): energy along a swing is
  E = cos(alpha (1 - x0)) + (alpha x1)^2 / 2, so the first impact arrives
  at speed sqrt(2 (cos(0.15) - cos(0.3))) / 0.3 = 0.8619691782...; each
  impact scales velocity by -1/2, giving a geometric jump cascade that
  accumulates near t = 3.139.
* hopper, k_t = 2, beta = 0.5, omega = 1: radial speed is
  x1^2 (k_t / (omega |x|) - 2 beta omega) / |x|, vanishing on |x| = 2, so
  every execution settles onto the circle of radius k_t / (2 beta omega^2).
* the climb stage runs x' = x on [0, 1]: from the entry point 0 nothing
  moves, so reaching the exit needs chain teleports, while any start
  above 0 exits by plain simulation.
"""

import math

import numpy as np
import pytest

import hybridcat.expr as E
from hybridcat.analysis import certify_directed, chain_search, validate_chain
from hybridcat.compose import (
    DirectedSystem,
    sequential_compose,
    verify_template_anchor,
)
from hybridcat.gallery import (
    EXAMPLES,
    build_example,
    example_names,
    hopper_limit_radius,
    rocking_block,
    sequential_example_pair,
    vertical_hopper_suite,
)
from hybridcat.morphism import compose_semiconjugacies, validate_semiconjugacy
from hybridcat.simulate import SimConfig, simulate
from hybridcat.system import HybridPoint, SystemError, validate_system
from hybridcat.util import rng_from_seed

TRUTH = E.parse_predicate("0 <= 1")


@pytest.fixture(scope="module")
def suite():
    return vertical_hopper_suite()


@pytest.fixture(scope="module")
def block_trace():
    return simulate(rocking_block(), HybridPoint("L", (0.5, 0.0)),
                    SimConfig(horizon=20.0))


class TestRockingBlock:
    def test_validates_cleanly(self):
        rep = validate_system(rocking_block(), samples=400, seed=3)
        assert rep.ok and not rep.violations
        assert not rep.starvations

    def test_two_mode_cycle(self):
        g = rocking_block().graph
        assert set(g.vertices) == {"L", "R"}
        assert g.src("LR") == "L" and g.tgt("LR") == "R"
        assert g.src("RL") == "R" and g.tgt("RL") == "L"

    def test_parameter_ranges(self):
        with pytest.raises(SystemError):
            rocking_block(alpha=0.0)
        with pytest.raises(SystemError):
            rocking_block(alpha=math.pi / 2)
        with pytest.raises(SystemError):
            rocking_block(r=0.0)
        with pytest.raises(SystemError):
            rocking_block(r=1.2)
        rocking_block(r=1.0)  # lossless limit is allowed

    def test_impacts_reverse_and_scale_velocity(self, block_trace):
        assert len(block_trace.jumps) >= 10
        for j in block_trace.jumps:
            assert abs(j.pre_state[0]) <= 1e-9
            assert j.post_state[0] == 0.0
            assert j.post_state[1] == pytest.approx(-0.5 * j.pre_state[1],
                                                    rel=1e-12)
            assert j.pre_mode != j.post_mode

    def test_first_impact_speed_matches_energy(self, block_trace):
        v_fall = math.sqrt(2.0 * (math.cos(0.15) - math.cos(0.3))) / 0.3
        assert block_trace.jumps[0].pre_state[1] == pytest.approx(-v_fall,
                                                                  abs=1e-8)

    def test_energy_constant_along_first_swing(self, block_trace):
        seg = block_trace.segments[0]
        en = (np.cos(0.3 * (1.0 - seg.xs[:, 0]))
              + (0.3 * seg.xs[:, 1]) ** 2 / 2.0)
        assert np.max(np.abs(en - math.cos(0.15))) <= 1e-8

    def test_jump_cascade_accumulates(self, block_trace):
        assert block_trace.classification == "zeno_detected"
        times = [j.t for j in block_trace.jumps]
        assert times[-1] - times[-10] <= 1e-6
        assert times[-1] == pytest.approx(3.139, abs=5e-3)


class TestHopperSuite:
    def test_every_system_validates(self, suite):
        for name in ["hopper", "cover", "plane", "arcs", "fold", "circle",
                     "circle_double"]:
            rep = validate_system(suite[name], samples=200, seed=1)
            assert rep.ok, (name, rep.violations[:2])
            assert not rep.starvations, name

    def test_limit_radius(self, suite):
        assert suite["radius"] == 2.0
        assert hopper_limit_radius() == 2.0
        assert hopper_limit_radius(k_t=4.0) == 4.0
        assert hopper_limit_radius(omega=2.0) == 0.5

    def test_parameter_ranges(self):
        for bad in [{"k_t": 0.0}, {"beta": -1.0}, {"omega": 0.0}]:
            with pytest.raises(SystemError):
                vertical_hopper_suite(**bad)

    def test_executions_settle_on_the_limit_circle(self, suite):
        cfg = SimConfig(horizon=100.0, dt_max=0.5)
        rng = rng_from_seed(5)
        for _ in range(3):
            r0 = rng.uniform(0.5, 4.0)
            th = rng.uniform(math.pi / 2.0, 3.0 * math.pi / 2.0)
            start = HybridPoint("stance", (r0 * math.cos(th),
                                           r0 * math.sin(th)))
            tr = simulate(suite["hopper"], start, cfg)
            end = tr.segments[-1].xs[-1]
            assert abs(math.hypot(*end) - 2.0) <= 1e-6

    def test_flight_reset_reflects_velocity(self, suite):
        tr = simulate(suite["hopper"], HybridPoint("stance", (-3.0, 0.0)),
                      SimConfig(horizon=20.0, dt_max=0.5))
        assert tr.jumps
        for j in tr.jumps:
            assert abs(j.pre_state[0]) <= 1e-9
            assert j.post_state == (0.0, -j.pre_state[1])

    def test_all_eight_maps_validate(self, suite):
        assert len(suite["maps"]) == 8
        for key, sc in suite["maps"].items():
            rep = validate_semiconjugacy(sc, samples=200, seed=2)
            assert rep.ok, (key, rep.violations[:2])
            assert not rep.starvations, key
            assert rep.max_residual <= 1e-8, key

    def test_commuting_squares_agree(self, suite):
        rng = rng_from_seed(3)
        for name, ((outer_a, inner_a), (outer_b, inner_b)) in \
                suite["squares"].items():
            left = compose_semiconjugacies(outer_a, inner_a)
            right = compose_semiconjugacies(outer_b, inner_b)
            assert left.cod.graph.vertices == right.cod.graph.vertices
            for v in left.dom.graph.vertices:
                assert left.vertex_image(v) == right.vertex_image(v)
                pts = left.dom.sample_mode(v, "active", rng, 50)
                for x in pts:
                    gap = np.max(np.abs(left.apply(v, x) - right.apply(v, x)))
                    assert gap <= 1e-8, (name, v)

    def test_template_anchor_pairs_verify(self, suite):
        circle_pair, fold_pair = suite["pairs"]
        assert circle_pair.template is suite["circle"]
        assert circle_pair.anchor is suite["cover"]
        assert fold_pair.template is suite["circle_double"]
        assert fold_pair.anchor is suite["hopper"]
        for pair in (circle_pair, fold_pair):
            rep = verify_template_anchor(pair, samples=80, seed=4)
            assert rep.ok, rep.violations[:2]
            assert pair.p_report.ok and pair.i_report.ok

    def test_plane_field_is_odd(self, suite):
        mode = suite["plane"].modes["plane"]
        params = suite["plane"].params
        rng = rng_from_seed(7)
        for x in rng.uniform(-3.0, 3.0, size=(20, 2)):
            fwd = mode.field(x, params)
            bwd = mode.field(-x, params)
            assert np.max(np.abs(fwd + bwd)) <= 1e-12

    def test_circle_fields_rotate_tangentially(self, suite):
        rng = rng_from_seed(8)
        for name, rate in [("circle", 1.0), ("circle_double", 2.0)]:
            h = suite[name]
            pts = h.sample_mode("circle", "active", rng, 40)
            for x in pts:
                vel = h.modes["circle"].field(x, h.params)
                assert abs(float(np.dot(vel, x))) <= 1e-12
                assert float(np.hypot(*vel)) == pytest.approx(
                    rate * float(np.hypot(*x)), rel=1e-12)


class TestSequentialStages:
    def test_stages_validate(self):
        first, second = sequential_example_pair()
        assert validate_system(first.carrier, samples=100, seed=0).ok
        assert validate_system(second.carrier, samples=100, seed=0).ok
        assert first.carrier.graph.vertices == ("v", "w")
        assert second.carrier.graph.vertices == ("y", "z")

    def test_transfer_certifies_by_simulation(self):
        first, _ = sequential_example_pair()
        rep = certify_directed(first, epsilon=0.05, T=1.0, samples=20, seed=0)
        assert rep.ok and rep.coverage == 1.0
        assert rep.report.stats["by_chain"] == 0
        assert rep.report.stats["teleports_needed"] == 0

    def test_climb_certifies_but_its_entry_needs_teleports(self):
        _, second = sequential_example_pair()
        rep = certify_directed(second, epsilon=0.05, T=1.0, samples=20,
                               seed=0)
        assert rep.ok and rep.coverage == 1.0
        res = chain_search(second.carrier, HybridPoint("y", (0.0,)),
                           ({"z"}, TRUTH), 0.05, 1.0)
        assert res.found and res.chain.n_teleports() >= 1
        exact = chain_search(second.carrier, HybridPoint("y", (0.0,)),
                             ({"z"}, TRUTH), 0.0, 1.0)
        assert not exact.found

    def test_composite_path_and_stalling_execution(self):
        first, second = sequential_example_pair()
        comp = sequential_compose(first, second)
        g = comp.carrier.graph
        assert g.vertices == ("v", "y", "z")
        assert (g.src("e"), g.tgt("e")) == ("v", "y")
        assert (g.src("f"), g.tgt("f")) == ("y", "z")
        tr = simulate(comp.carrier, HybridPoint("v", (1.0,)),
                      SimConfig(horizon=50.0))
        assert tr.classification == "horizon_truncated"
        assert [j.edge for j in tr.jumps] == ["e"]
        assert tr.jumps[0].post_state == (0.0,)
        assert all(seg.mode != "z" for seg in tr.segments)

    def test_composite_chain_still_reaches_the_exit(self):
        first, second = sequential_example_pair()
        comp = sequential_compose(first, second)
        res = chain_search(comp.carrier, HybridPoint("v", (1.0,)),
                           ({"z"}, TRUTH), 0.05, 1.0, budget=10_000)
        assert res.found and res.nodes <= 10_000
        assert validate_chain(comp.carrier, res.chain).ok


class TestRegistry:
    def test_names(self):
        assert example_names() == sorted(EXAMPLES)
        assert set(example_names()) == {
            "rocking_block", "hopper", "hopper_cover", "hopper_plane",
            "hopper_arcs", "hopper_fold", "hopper_circle",
            "hopper_circle_double", "transfer_stage", "climb_stage"}

    def test_defaults_and_overrides(self):
        rb = build_example("rocking_block")
        assert rb.params == {"alpha": 0.3, "r": 0.5}
        assert build_example("rocking_block", alpha=0.4).params["alpha"] == 0.4
        assert build_example("hopper_circle").params == {"omega": 1.0}

    def test_directed_entries(self):
        stage = build_example("climb_stage")
        assert isinstance(stage, DirectedSystem)
        assert "f" in stage.carrier.graph.edges
        assert isinstance(build_example("transfer_stage"), DirectedSystem)

    def test_rejects_unknown_names_and_parameters(self):
        with pytest.raises(SystemError):
            build_example("pendulum")
        with pytest.raises(SystemError):
            build_example("hopper", alpha=0.5)
        with pytest.raises(SystemError):
            build_example("climb_stage", omega=1.0)

    def test_entries_documented(self):
        for name, entry in EXAMPLES.items():
            assert entry.summary, name
            assert entry.kind in {"system", "directed"}, name
