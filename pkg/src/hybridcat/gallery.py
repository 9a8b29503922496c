"""Worked example systems used by the test suite and the command line gallery.

Three families live here. ``rocking_block`` is a planar block tipping
between two pivot modes and losing a fixed fraction of angular velocity at
every impact, so its executions accumulate jumps. ``vertical_hopper_suite``
builds a one-legged hopper's stance-and-flight system together with the
scaffolding that relates it to a circle: a two-mode double cover, the
smooth punctured-plane system the cover glues into, the circle cut at its
takeoff points, a folded half circle, two circle templates, and the eight
maps between them that close two commuting squares.
``sequential_example_pair`` returns two directed stages whose glued
composite routes every reset onto an equilibrium, separating what
executions can reach from what chains can reach.

Constructors validate parameter ranges and attach sampling hooks to every
measure-zero active set (circles, arcs, point guards) so that the checking
layers can draw honest samples from them. The hooks are construction-time
hints only; they do not survive serialization.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

import hybridcat.expr as E
from hybridcat.compose import DirectedSystem, TemplateAnchorPair
from hybridcat.graphs import Graph, GraphMorphism, eref, vref
from hybridcat.morphism import Semiconjugacy
from hybridcat.system import (
    HybridSystem,
    Mode,
    ResetEdge,
    SystemError,
    point_system,
)

__all__ = ["rocking_block", "vertical_hopper_suite", "hopper_limit_radius",
           "sequential_example_pair", "GalleryEntry", "EXAMPLES",
           "example_names", "build_example"]

_TRUTH = "0 <= 1"


def _pred(src: str, dim: int) -> E.Predicate:
    return E.parse_predicate(src, dim)


def _arc_sampler(lo: float, hi: float) -> Callable:
    """Uniform draws from the unit-circle arc with angles in [lo, hi]."""
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        th = rng.uniform(lo, hi, size=n)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    return draw


def _point_sampler(*coords: float) -> Callable:
    pt = np.asarray(coords, dtype=float)

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return np.tile(pt, (n, 1))
    return draw


# -- rocking block ---------------------------------------------------------------


def rocking_block(alpha: float = 0.3, r: float = 0.5) -> HybridSystem:
    """A block rocking on its two bottom corners without slipping.

    State per mode: x0 is the tilt angle as a fraction of the critical
    angle alpha (0 at impact, 1 vertical), x1 the angular velocity up to
    sign. Both lean modes carry the same energy-bounded active set and the
    pendulum field (x1, -sin(alpha (1 - x0)) / alpha); hitting x0 = 0 with
    x1 <= 0 switches pivots and rescales velocity by -r. Energy is
    conserved along flows and shrinks by r^2 at every impact, so the block
    settles onto x = 0 through ever faster jumps.
    """
    if not 0.0 < alpha < math.pi / 2.0:
        raise SystemError("alpha must lie strictly between 0 and pi/2")
    if not 0.0 < r <= 1.0:
        raise SystemError("r must lie in (0, 1]")

    active = ("x0 >= 0 and x0 <= 1 and "
              "cos(alpha*(1 - x0)) + (alpha*x1)^2/2 <= 1")
    # only the energy clause joins the guard: the x0 window holds to
    # within event_tol on {x0 == 0} but fails exact float comparison there
    guard = ("x0 == 0 and x1 <= 0 and "
             "cos(alpha*(1 - x0)) + (alpha*x1)^2/2 <= 1")
    flow = active + " and not (x0 == 0 and x1 <= 0)"
    field_src = ["x1", "-sin(alpha*(1 - x0))/alpha"]
    # peak |x1| on the energy shell, padded for rejection sampling
    vmax = math.sqrt(2.0 * (1.0 - math.cos(alpha))) / alpha * 1.01
    box = [(0.0, 1.0), (-vmax, vmax)]

    def lean(mid: str) -> Mode:
        return Mode(mid, 2, E.parse_vector(field_src, 2), _pred(active, 2),
                    _pred(flow, 2), box=box)

    def pivot(eid: str) -> ResetEdge:
        return ResetEdge(eid, _pred(guard, 2), E.parse_expr("x0", 2),
                         E.parse_vector(["0", "-r*x1"], 2))

    g = Graph(["L", "R"], [("LR", "L", "R"), ("RL", "R", "L")])
    return HybridSystem(g, {"L": lean("L"), "R": lean("R")},
                        {"LR": pivot("LR"), "RL": pivot("RL")},
                        {"alpha": float(alpha), "r": float(r)})


# -- vertical hopper -------------------------------------------------------------


def hopper_limit_radius(k_t: float = 2.0, beta: float = 0.5,
                        omega: float = 1.0) -> float:
    """Radius of the stance limit cycle, k_t / (2 beta omega^2)."""
    return k_t / (2.0 * beta * omega ** 2)


def vertical_hopper_suite(k_t: float = 2.0, beta: float = 0.5,
                          omega: float = 1.0) -> dict:
    """The hopper, its covers and cuts, and the maps tying them together.

    State: x0 is the spring deflection (nonpositive during stance), x1 the
    deflection rate over omega. Liftoff happens at x0 = 0 with x1 >= 0 and
    the flight phase is compressed into the reset (0, x1) -> (0, -x1).

    Returns a dict with systems

      hopper         one stance mode, one flight reset (the anchor)
      cover          two alternating stance copies, flights crossing over
      plane          the punctured plane the cover glues into
      arcs           the unit circle cut at (0, 1) and (0, -1)
      fold           the left half circle with reset x -> -x
      circle         the unit circle rotating at rate omega
      circle_double  the unit circle rotating at rate 2 omega

    plus ``radius`` (the limit-cycle radius), ``maps`` (the eight
    semiconjugacies keyed by role), ``squares`` (two pairs of composable
    paths with equal composites), and ``pairs`` (the two template-anchor
    spans: circle <- arcs -> cover and circle_double <- fold -> hopper).

    Thin active sets (circle, arcs, half circle, point guards) carry
    sampling hooks; stance guards sample through their equality pin.
    """
    if min(k_t, beta, omega) <= 0.0:
        raise SystemError("hopper parameters must be positive")
    params = {"k_t": float(k_t), "beta": float(beta), "omega": float(omega)}
    rot = {"omega": float(omega)}
    rad = hopper_limit_radius(k_t, beta, omega)
    w = 2.0 * rad

    stance_active = "x0 <= 0 and x0^2 + x1^2 > 0"
    stance_flow = "x0 <= 0 and (x0 < 0 or x1 < 0) and x0^2 + x1^2 > 0"
    stance_field = ["omega*x1",
                    "k_t*x1/(omega*sqrt(x0^2 + x1^2)) - omega*x0"
                    " - 2*beta*omega*x1"]
    stance_box = [(-w, 0.0), (-w, w)]
    takeoff_guard = "x0 == 0 and x1 >= 0 and x0^2 + x1^2 > 0"

    def stance(mid: str) -> Mode:
        return Mode(mid, 2, E.parse_vector(stance_field, 2),
                    _pred(stance_active, 2), _pred(stance_flow, 2),
                    box=stance_box)

    def flight(eid: str) -> ResetEdge:
        return ResetEdge(eid, _pred(takeoff_guard, 2),
                         E.parse_expr("-x0", 2),
                         E.parse_vector(["0", "-x1"], 2))

    hopper = HybridSystem(Graph(["stance"], [("flight", "stance", "stance")]),
                          {"stance": stance("stance")},
                          {"flight": flight("flight")}, params)
    cover = HybridSystem(
        Graph(["even", "odd"], [("flight_even", "even", "odd"),
                                ("flight_odd", "odd", "even")]),
        {"even": stance("even"), "odd": stance("odd")},
        {"flight_even": flight("flight_even"),
         "flight_odd": flight("flight_odd")}, params)

    plane_pred = "x0^2 + x1^2 > 0"
    plane = HybridSystem(
        Graph(["plane"], []),
        {"plane": Mode("plane", 2, E.parse_vector(stance_field, 2),
                       _pred(plane_pred, 2), _pred(plane_pred, 2),
                       box=[(-w, w), (-w, w)])}, {}, params)

    band = "x0^2 + x1^2 == 1"
    circle_box = [(-1.0, 1.0), (-1.0, 1.0)]
    full_circle = _arc_sampler(0.0, 2.0 * math.pi)

    def template(rate: list) -> HybridSystem:
        m = Mode("circle", 2, E.parse_vector(rate, 2), _pred(band, 2),
                 _pred(band, 2), box=circle_box,
                 active_sampler=full_circle, flow_sampler=full_circle)
        return HybridSystem(Graph(["circle"], []), {"circle": m}, {}, rot)

    circle = template(["omega*x1", "-omega*x0"])
    circle_double = template(["2*omega*x1", "-2*omega*x0"])

    left = _arc_sampler(math.pi / 2.0, 3.0 * math.pi / 2.0)
    right = _arc_sampler(-math.pi / 2.0, math.pi / 2.0)
    top, bottom = _point_sampler(0.0, 1.0), _point_sampler(0.0, -1.0)

    def arc_mode(mid: str, side: str, cut: str, hook: Callable) -> Mode:
        active = f"{band} and {side}"
        return Mode(mid, 2, E.parse_vector(["omega*x1", "-omega*x0"], 2),
                    _pred(active, 2), _pred(f"{active} and not ({cut})", 2),
                    box=circle_box, active_sampler=hook, flow_sampler=hook)

    top_guard = f"x0 == 0 and x1 > 0 and {band}"
    bottom_guard = f"x0 == 0 and x1 < 0 and {band}"
    arcs = HybridSystem(
        Graph(["even", "odd"], [("flight_even", "even", "odd"),
                                ("flight_odd", "odd", "even")]),
        {"even": arc_mode("even", "x0 <= 0", "x0 == 0 and x1 > 0", left),
         "odd": arc_mode("odd", "x0 >= 0", "x0 == 0 and x1 < 0", right)},
        {"flight_even": ResetEdge("flight_even", _pred(top_guard, 2),
                                  E.parse_expr("-x0", 2),
                                  E.identity_vector(2), guard_sampler=top),
         "flight_odd": ResetEdge("flight_odd", _pred(bottom_guard, 2),
                                 E.parse_expr("x0", 2),
                                 E.identity_vector(2), guard_sampler=bottom)},
        rot)

    fold = HybridSystem(
        Graph(["arc"], [("flip", "arc", "arc")]),
        {"arc": arc_mode("arc", "x0 <= 0", "x0 == 0 and x1 > 0", left)},
        {"flip": ResetEdge("flip", _pred(top_guard, 2),
                           E.parse_expr("-x0", 2),
                           E.parse_vector(["-x0", "-x1"], 2),
                           guard_sampler=top)}, rot)

    scale = "k_t/(2*beta*omega^2)"
    grow = E.parse_vector([f"{scale}*x0", f"{scale}*x1"], 2)
    shrink = E.parse_vector([f"x0/({scale})", f"x1/({scale})"], 2)
    grow_neg = E.parse_vector([f"-{scale}*x0", f"-{scale}*x1"], 2)
    shrink_neg = E.parse_vector([f"-x0/({scale})", f"-x1/({scale})"], 2)
    ident = E.identity_vector(2)
    negate = E.parse_vector(["-x0", "-x1"], 2)

    def morph(dom, cod, v_map, e_map):
        return GraphMorphism(dom.graph, cod.graph, v_map, e_map)

    circle_into_plane = Semiconjugacy(
        circle, plane, morph(circle, plane, {"circle": "plane"}, {}),
        {"circle": grow}, inverses={"circle": shrink})
    cover_onto_plane = Semiconjugacy(
        cover, plane,
        morph(cover, plane, {"even": "plane", "odd": "plane"},
              {"flight_even": vref("plane"), "flight_odd": vref("plane")}),
        {"even": ident, "odd": negate})
    arcs_onto_circle = Semiconjugacy(
        arcs, circle,
        morph(arcs, circle, {"even": "circle", "odd": "circle"},
              {"flight_even": vref("circle"), "flight_odd": vref("circle")}),
        {"even": ident, "odd": ident})
    arcs_into_cover = Semiconjugacy(
        arcs, cover,
        morph(arcs, cover, {"even": "even", "odd": "odd"},
              {"flight_even": eref("flight_even"),
               "flight_odd": eref("flight_odd")}),
        {"even": grow, "odd": grow_neg},
        inverses={"even": shrink, "odd": shrink_neg})
    cover_onto_hopper = Semiconjugacy(
        cover, hopper,
        morph(cover, hopper, {"even": "stance", "odd": "stance"},
              {"flight_even": eref("flight"), "flight_odd": eref("flight")}),
        {"even": ident, "odd": ident})
    arcs_onto_fold = Semiconjugacy(
        arcs, fold,
        morph(arcs, fold, {"even": "arc", "odd": "arc"},
              {"flight_even": eref("flip"), "flight_odd": eref("flip")}),
        {"even": ident, "odd": negate})
    fold_into_hopper = Semiconjugacy(
        fold, hopper,
        morph(fold, hopper, {"arc": "stance"}, {"flip": eref("flight")}),
        {"arc": grow}, inverses={"arc": shrink})
    fold_onto_circle_double = Semiconjugacy(
        fold, circle_double,
        morph(fold, circle_double, {"arc": "circle"},
              {"flip": vref("circle")}),
        {"arc": E.parse_vector(["x0^2 - x1^2", "2*x0*x1"], 2)})

    maps = {
        "circle_into_plane": circle_into_plane,
        "cover_onto_plane": cover_onto_plane,
        "arcs_onto_circle": arcs_onto_circle,
        "arcs_into_cover": arcs_into_cover,
        "cover_onto_hopper": cover_onto_hopper,
        "arcs_onto_fold": arcs_onto_fold,
        "fold_into_hopper": fold_into_hopper,
        "fold_onto_circle_double": fold_onto_circle_double,
    }
    squares = {
        "hopper": ((fold_into_hopper, arcs_onto_fold),
                   (cover_onto_hopper, arcs_into_cover)),
        "plane": ((circle_into_plane, arcs_onto_circle),
                  (cover_onto_plane, arcs_into_cover)),
    }
    pairs = (
        TemplateAnchorPair(circle, arcs, arcs_onto_circle, arcs_into_cover,
                           cover),
        TemplateAnchorPair(circle_double, fold, fold_onto_circle_double,
                           fold_into_hopper, hopper),
    )
    return {"hopper": hopper, "cover": cover, "plane": plane, "arcs": arcs,
            "fold": fold, "circle": circle, "circle_double": circle_double,
            "radius": rad, "maps": maps, "squares": squares, "pairs": pairs}


# -- sequential stages -----------------------------------------------------------


def sequential_example_pair():
    """Two directed stages that compose into a chain-only corridor.

    The first stage is a line mode whose guard covers everything: every
    execution transfers at once to a terminal point, so it certifies
    directed by simulation alone. The second climbs x' = x across [0, 1]
    and exits at 1; its entry boundary sits on the equilibrium 0, from
    which executions never move but chains do. Gluing them routes the
    transfer reset onto that equilibrium: the composite has no execution
    from the line into the exit, yet chains with teleports get through.
    """
    line = Mode("v", 1, E.parse_vector(["0"], 1), _pred(_TRUTH, 1),
                _pred(_TRUTH, 1))
    stop = Mode("w", 0, E.VectorExpr(0, ()), _pred(_TRUTH, 0),
                _pred(_TRUTH, 0))
    transfer = HybridSystem(
        Graph(["v", "w"], [("e", "v", "w")]),
        {"v": line, "w": stop},
        {"e": ResetEdge("e", _pred(_TRUTH, 1), E.parse_expr("-1", 1),
                        E.VectorExpr(1, ()))}, {})
    line_only = HybridSystem(Graph(["v"], []), {"v": line}, {})
    ident1 = E.identity_vector(1)
    transfer_init = Semiconjugacy(
        line_only, transfer,
        GraphMorphism(line_only.graph, transfer.graph, {"v": "v"}, {}),
        {"v": ident1}, inverses={"v": ident1})
    mid = point_system("mid")
    transfer_final = Semiconjugacy(
        mid, transfer,
        GraphMorphism(mid.graph, transfer.graph, {"mid": "w"}, {}),
        {"mid": E.VectorExpr(0, ())}, inverses={"mid": E.VectorExpr(0, ())})
    first = DirectedSystem(transfer, transfer_init, transfer_final)

    climb = HybridSystem(
        Graph(["y", "z"], [("f", "y", "z")]),
        {"y": Mode("y", 1, E.parse_vector(["x0"], 1),
                   _pred("x0 >= 0 and x0 <= 1", 1),
                   _pred("x0 >= 0 and x0 < 1", 1), box=[(0.0, 1.0)]),
         "z": Mode("z", 0, E.VectorExpr(0, ()), _pred(_TRUTH, 0),
                   _pred(_TRUTH, 0))},
        {"f": ResetEdge("f", _pred("x0 == 1", 1), E.parse_expr("1 - x0", 1),
                        E.VectorExpr(1, ()))}, {})
    climb_init = Semiconjugacy(
        point_system("mid"), climb,
        GraphMorphism(mid.graph, climb.graph, {"mid": "y"}, {}),
        {"mid": E.VectorExpr(0, (E.Num(0.0),))},
        inverses={"mid": E.VectorExpr(1, ())})
    end = point_system("end")
    climb_final = Semiconjugacy(
        end, climb,
        GraphMorphism(end.graph, climb.graph, {"end": "z"}, {}),
        {"end": E.VectorExpr(0, ())}, inverses={"end": E.VectorExpr(0, ())})
    second = DirectedSystem(climb, climb_init, climb_final)
    return first, second


# -- registry for the command line gallery ---------------------------------------


@dataclass(frozen=True)
class GalleryEntry:
    """One exportable example: a builder plus its parameter defaults."""

    build: Callable
    kind: str = "system"  # 'system' | 'directed'
    defaults: Mapping[str, float] = field(default_factory=dict)
    summary: str = ""


def _suite_member(key: str) -> Callable:
    def build(**kw):
        return vertical_hopper_suite(**kw)[key]
    return build


def _stage(index: int) -> Callable:
    def build(**kw):
        return sequential_example_pair()[index]
    return build


_HOPPER_DEFAULTS = {"k_t": 2.0, "beta": 0.5, "omega": 1.0}

EXAMPLES: Mapping[str, GalleryEntry] = {
    "rocking_block": GalleryEntry(
        rocking_block, defaults={"alpha": 0.3, "r": 0.5},
        summary="block rocking between two pivots, velocity scaled by -r "
                "at each impact"),
    "hopper": GalleryEntry(
        _suite_member("hopper"), defaults=_HOPPER_DEFAULTS,
        summary="vertical hopper stance mode with the flight phase as a "
                "reset"),
    "hopper_cover": GalleryEntry(
        _suite_member("cover"), defaults=_HOPPER_DEFAULTS,
        summary="two-mode cover of the hopper with alternating stances"),
    "hopper_plane": GalleryEntry(
        _suite_member("plane"), defaults=_HOPPER_DEFAULTS,
        summary="smooth punctured-plane system the hopper cover glues "
                "into"),
    "hopper_arcs": GalleryEntry(
        _suite_member("arcs"), defaults=_HOPPER_DEFAULTS,
        summary="unit circle cut at the takeoff points into two arc "
                "modes"),
    "hopper_fold": GalleryEntry(
        _suite_member("fold"), defaults=_HOPPER_DEFAULTS,
        summary="left half circle with the antipodal reset x -> -x"),
    "hopper_circle": GalleryEntry(
        _suite_member("circle"), defaults=_HOPPER_DEFAULTS,
        summary="unit circle rotating at rate omega"),
    "hopper_circle_double": GalleryEntry(
        _suite_member("circle_double"), defaults=_HOPPER_DEFAULTS,
        summary="unit circle rotating at rate 2*omega"),
    "transfer_stage": GalleryEntry(
        _stage(0), kind="directed",
        summary="directed stage whose guard covers the whole line; "
                "transfers immediately to a point"),
    "climb_stage": GalleryEntry(
        _stage(1), kind="directed",
        summary="directed stage climbing x' = x across [0, 1] from an "
                "entry pinned at the equilibrium 0"),
}


def example_names() -> list:
    return sorted(EXAMPLES)


def build_example(name: str, **params):
    """Construct a gallery example by name, validating parameter names."""
    entry = EXAMPLES.get(name)
    if entry is None:
        raise SystemError(f"unknown gallery example {name!r}")
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise SystemError(
            f"{name} takes {sorted(entry.defaults) or 'no parameters'}, "
            f"not {sorted(unknown)}")
    merged = {**entry.defaults, **params}
    return entry.build(**merged)
