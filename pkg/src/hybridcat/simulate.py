"""Deterministic simulation of hybrid systems.

An execution alternates flow segments (numerical ODE solves inside a mode's
flow set) with jumps (reset maps fired when a guard's event function crosses
zero from strictly positive values). The simulator is event-driven:

* if the current state satisfies a guard predicate, the jump fires
  immediately and consumes no time;
* otherwise the state is integrated while the flow predicate holds, with
  event functions scanned across every accepted step and crossings located
  by bisection against a single fixed step of the active method, so a
  reported pre-jump state always satisfies |h| <= event_tol;
* more than one guard claiming the same instant is a determinism violation
  and aborts with a diagnostic trace.

Traces record dense solver output per segment plus a jump log, and classify
how the run ended: horizon_truncated, finite_blocked, zeno_detected, or
model_error. Zeno runs are truncated by a sliding-window heuristic (more
than max_jumps jumps inside a min_dwell window).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr as E
from .system import DEFAULT_EQ_TOL, HybridPoint, HybridSystem, SystemError
from .trajectory import TimeTrajectory

__all__ = [
    "SimConfig",
    "Segment",
    "Jump",
    "ExecutionTrace",
    "simulate",
    "flow_until_event",
    "CompiledSystem",
    "fundamentalize",
    "is_prefix",
    "push_trace",
    "pullback_execution",
    "compare_traces",
]


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 10.0
    dt_max: float = 0.05
    integrator: str = "rk45"  # 'rk4' fixed step or 'rk45' adaptive
    atol: float = 1e-10
    rtol: float = 1e-8
    event_tol: float = 1e-9
    eq_tol: float = DEFAULT_EQ_TOL
    max_jumps: int = 200
    min_dwell: float = 1e-4

    def __post_init__(self):
        if self.integrator not in ("rk4", "rk45"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.horizon <= 0 or math.isnan(self.horizon):
            raise ValueError("horizon must be positive")
        if self.dt_max <= 0:
            raise ValueError("dt_max must be positive")


@dataclass(frozen=True)
class Segment:
    mode: str
    ts: np.ndarray
    xs: np.ndarray  # shape (len(ts), dim)

    def interp(self, t: float) -> np.ndarray:
        """Linear interpolation of the stored samples at time t."""
        ts, xs = self.ts, self.xs
        if len(ts) == 1 or t <= ts[0]:
            return xs[0].copy()
        if t >= ts[-1]:
            return xs[-1].copy()
        i = int(np.searchsorted(ts, t, side="right")) - 1
        t0, t1 = ts[i], ts[i + 1]
        if t1 == t0:
            return xs[i + 1].copy()
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * xs[i] + w * xs[i + 1]


@dataclass(frozen=True)
class Jump:
    edge: Optional[str]  # None marks a trivial jump (no reset edge involved)
    t: float
    pre_mode: str
    pre_state: tuple
    post_mode: str
    post_state: tuple


@dataclass
class ExecutionTrace:
    system: HybridSystem
    trajectory: TimeTrajectory
    segments: tuple
    jumps: tuple
    classification: str  # horizon_truncated | finite_blocked | zeno_detected | model_error
    error: Optional[str] = None

    def stop_time(self) -> float:
        return self.trajectory.stop_time()

    def final_point(self) -> HybridPoint:
        seg = self.segments[-1]
        return HybridPoint(seg.mode, tuple(float(v) for v in seg.xs[-1]))

    def state_at(self, t: float, side: str = "post"):
        """(mode, state) at time t; at a jump time 'post' picks the later
        segment and 'pre' the earlier."""
        idxs = [j for j in range(len(self.segments)) if self.trajectory.contains(j, t)]
        if not idxs:
            raise ValueError(f"time {t} outside trace")
        j = idxs[-1] if side == "post" else idxs[0]
        seg = self.segments[j]
        return seg.mode, seg.interp(t)

    def sample_times(self) -> np.ndarray:
        return np.unique(np.concatenate([seg.ts for seg in self.segments]))


# -- compiled closures --------------------------------------------------------


class CompiledSystem:
    """Per-system closure cache so hot loops avoid expression interpretation."""

    def __init__(self, h: HybridSystem, eq_tol: float = DEFAULT_EQ_TOL):
        self.system = h
        self.eq_tol = eq_tol
        p = h.params
        self.field = {}
        self.flow = {}
        self.active = {}
        self.dim = {}
        def pred(compiled):
            # a predicate that cannot be evaluated is not satisfied
            def run(x, _f=compiled):
                try:
                    return _f(x, eq_tol)
                except E.EvalDomainError:
                    return False
            return run

        def ev_fn(compiled):
            # an unevaluable event function never crosses
            def run(x, _f=compiled):
                try:
                    return _f(x)
                except E.EvalDomainError:
                    return math.inf
            return run

        for v, m in h.modes.items():
            self.field[v] = m.field.compiled(p)
            self.flow[v] = pred(E.compile_predicate(m.flow, p))
            self.active[v] = pred(E.compile_predicate(m.active, p))
            self.dim[v] = m.dim
        self.event = {}
        self.guard = {}
        self.reset = {}
        for e, r in h.resets.items():
            self.event[e] = ev_fn(E.compile_expr(r.event, p))
            self.guard[e] = pred(E.compile_predicate(r.guard, p))
            self.reset[e] = r.reset.compiled(p)
        self.out_edges = {v: tuple(h.graph.edges_from(v)) for v in h.graph.vertices}


# -- integrators ---------------------------------------------------------------

_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


def _rk4_single(f: Callable, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _dp45_single(f: Callable, x: np.ndarray, dt: float):
    ks = []
    for row in _DP_A:
        xi = x
        for a, k in zip(row, ks):
            if a != 0.0:
                xi = xi + dt * a * k
        ks.append(f(xi))
    x5 = x
    x4 = x
    for b5, b4, k in zip(_DP_B5, _DP_B4, ks):
        if b5 != 0.0:
            x5 = x5 + dt * b5 * k
        if b4 != 0.0:
            x4 = x4 + dt * b4 * k
    return x5, x5 - x4


def _err_norm(err: np.ndarray, x0: np.ndarray, x1: np.ndarray, atol: float, rtol: float) -> float:
    if err.size == 0:
        return 0.0
    scale = atol + rtol * np.maximum(np.abs(x0), np.abs(x1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


# -- core flow primitive --------------------------------------------------------


@dataclass
class FlowResult:
    ts: np.ndarray
    xs: np.ndarray
    outcome: str  # limit | event | blocked | escaped | tie
    t_end: float
    x_end: np.ndarray
    edge: Optional[str] = None
    tied_edges: tuple = ()


def _active_guards(cs: CompiledSystem, mode: str, x: np.ndarray):
    return [e for e in cs.out_edges[mode] if cs.guard[e](x)]


def flow_until_event(
    cs: CompiledSystem, mode: str, x0: np.ndarray, t0: float, t_limit: float, cfg: SimConfig
) -> FlowResult:
    """Flow from (mode, x0) at t0 until a confirmed guard event, loss of the
    flow predicate, or t_limit. Start states already inside a guard yield a
    zero-length event segment."""
    x0 = np.asarray(x0, dtype=float)
    hits = _active_guards(cs, mode, x0)
    if len(hits) > 1:
        return FlowResult(np.array([t0]), x0[None, :], "tie", t0, x0, tied_edges=tuple(hits))
    if len(hits) == 1:
        return FlowResult(np.array([t0]), x0[None, :], "event", t0, x0, edge=hits[0])
    if not cs.flow[mode](x0):
        out = "blocked" if cs.active[mode](x0) else "escaped"
        return FlowResult(np.array([t0]), x0[None, :], out, t0, x0)
    if t_limit <= t0:
        return FlowResult(np.array([t0]), x0[None, :], "limit", t0, x0)

    f = cs.field[mode]
    edges = cs.out_edges[mode]
    adaptive = cfg.integrator == "rk45"
    single = _dp45_single if adaptive else (lambda g, x, dt: (_rk4_single(g, x, dt), None))

    ts = [t0]
    xs = [x0]
    t, x = t0, x0
    h_now = {e: cs.event[e](x) for e in edges}

    if cs.dim[mode] == 0:
        # constant state, constant events: nothing can fire mid-flight
        return FlowResult(
            np.array([t0, t_limit]), np.vstack([x0, x0]), "limit", t_limit, x0.copy()
        )

    dt = min(cfg.dt_max, t_limit - t0)
    max_steps = 20_000_000
    for _ in range(max_steps):
        dt = min(dt, t_limit - t)
        if dt <= 0:
            return FlowResult(np.array(ts), np.vstack(xs), "limit", t, x)
        # take one accepted step
        while True:
            try:
                x_new, err = single(f, x, dt)
            except E.EvalDomainError:
                # field left its domain inside the step; retreat
                if dt <= 1e-15 * max(1.0, abs(t)):
                    return FlowResult(np.array(ts), np.vstack(xs), "escaped", t, x)
                dt *= 0.25
                continue
            if not np.all(np.isfinite(x_new)):
                if dt <= 1e-15 * max(1.0, abs(t)):
                    return FlowResult(np.array(ts), np.vstack(xs), "escaped", t, x)
                dt *= 0.25
                continue
            if not adaptive:
                dt_next = cfg.dt_max
                break
            en = _err_norm(err, x, x_new, cfg.atol, cfg.rtol)
            if en <= 1.0:
                fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
                dt_next = min(cfg.dt_max, dt * fac)
                break
            dt = dt * max(0.2, 0.9 * en ** -0.2)
            if dt <= 1e-15 * max(1.0, abs(t)):
                return FlowResult(np.array(ts), np.vstack(xs), "escaped", t, x)

        step = dt

        def probe(d: float):
            if d <= 0.0:
                return x
            try:
                out = single(f, x, d)[0]
            except E.EvalDomainError:
                return None
            return out if np.all(np.isfinite(out)) else None

        # scan event functions for sign crossings across the step
        h_new = {e: cs.event[e](x_new) for e in edges}
        confirmed = []
        for e in edges:
            if h_now[e] > 0.0 and h_new[e] <= 0.0:
                d_hit, x_hit = _bisect_event(cs.event[e], probe, step, x_new, cfg.event_tol)
                if cs.guard[e](x_hit):
                    confirmed.append((d_hit, e, x_hit))
        if confirmed:
            confirmed.sort(key=lambda c: c[0])
            d_hit, e_hit, x_hit = confirmed[0]
            tied = [e for d, e, _ in confirmed if d == d_hit]
            ts.append(t + d_hit)
            xs.append(x_hit)
            if len(tied) > 1:
                return FlowResult(
                    np.array(ts), np.vstack(xs), "tie", t + d_hit, x_hit, tied_edges=tuple(tied)
                )
            return FlowResult(np.array(ts), np.vstack(xs), "event", t + d_hit, x_hit, edge=e_hit)

        flow_new = cs.flow[mode](x_new)
        active_new = cs.active[mode](x_new)
        if flow_new and active_new:
            t = t + step
            x = x_new
            h_now = h_new
            ts.append(t)
            xs.append(x)
            dt = dt_next
            if t >= t_limit:
                return FlowResult(np.array(ts), np.vstack(xs), "limit", t, x)
            continue

        # a predicate flipped inside the step: localize the earlier boundary
        pred = cs.active[mode] if not active_new else cs.flow[mode]
        lo, hi, x_lo, x_hi = _bisect_pred(pred, probe, step, x_new, cfg.event_tol, t)
        t_b = t + hi
        hits = _active_guards(cs, mode, x_hi)
        if len(hits) > 1:
            ts.append(t_b)
            xs.append(x_hi)
            return FlowResult(np.array(ts), np.vstack(xs), "tie", t_b, x_hi, tied_edges=tuple(hits))
        if len(hits) == 1:
            ts.append(t_b)
            xs.append(x_hi)
            return FlowResult(np.array(ts), np.vstack(xs), "event", t_b, x_hi, edge=hits[0])
        if cs.active[mode](x_hi):
            # left the flow set but still active: execution cannot extend
            ts.append(t_b)
            xs.append(x_hi)
            return FlowResult(np.array(ts), np.vstack(xs), "blocked", t_b, x_hi)
        if cs.flow[mode](x_hi):
            # robustly flowing out of the active set: a broken model
            ts.append(t + lo)
            xs.append(x_lo)
            return FlowResult(np.array(ts), np.vstack(xs), "escaped", t_b, x_hi)
        # flow and active boundaries are indistinguishable at this resolution;
        # read it as stopping on the boundary, at the last certainly-active state
        ts.append(t + lo)
        xs.append(x_lo)
        return FlowResult(np.array(ts), np.vstack(xs), "blocked", t + lo, x_lo)
    return FlowResult(np.array(ts), np.vstack(xs), "limit", t, x)  # pragma: no cover


def _bisect_pred(pred, probe, step: float, x_step_end, event_tol: float, t0: float):
    """First flip of pred from True to False along probe, to time resolution
    max(event_tol, float noise). pred(probe(0)) is True, pred at step end False."""
    lo, hi = 0.0, step
    x_lo, x_hi = probe(0.0), x_step_end
    for _ in range(128):
        if hi - lo <= max(event_tol, 1e-14 * max(1.0, abs(t0))):
            break
        mid = 0.5 * (lo + hi)
        x_mid = probe(mid)
        if x_mid is not None and pred(x_mid):
            lo = mid
            x_lo = x_mid
        else:
            hi = mid
            if x_mid is not None:
                x_hi = x_mid
    return lo, hi, x_lo, x_hi


def _bisect_event(h_fn, probe, step: float, x_step_end: np.ndarray, event_tol: float):
    """Earliest d in (0, step] with h(probe(d)) <= 0 refined until |h| <= event_tol."""
    lo, hi = 0.0, step
    x_hi = x_step_end
    h_hi = h_fn(x_hi)
    for _ in range(200):
        if -h_hi <= event_tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        x_mid = probe(mid)
        if x_mid is None:
            hi = mid
            continue
        try:
            h_mid = h_fn(x_mid)
        except E.EvalDomainError:
            hi = mid
            continue
        if h_mid > 0.0:
            lo = mid
        else:
            hi = mid
            x_hi = x_mid
            h_hi = h_mid
    return hi, x_hi


# -- simulate -------------------------------------------------------------------


def simulate(h: HybridSystem, start: HybridPoint, cfg: SimConfig = SimConfig()) -> ExecutionTrace:
    cs = CompiledSystem(h, cfg.eq_tol)
    mode = start.mode
    if mode not in h.modes:
        raise SystemError(f"unknown mode {mode!r}")
    x = np.asarray(start.x, dtype=float)
    horizon = cfg.horizon

    segments = []
    jumps = []
    times = [0.0]
    jump_log = []

    def finish(classification, endpoint, zeno=False, error=None):
        traj = TimeTrajectory(tuple(times), endpoint, zeno)
        return ExecutionTrace(h, traj, tuple(segments), tuple(jumps), classification, error)

    if not cs.active[mode](x):
        segments.append(Segment(mode, np.array([0.0]), x[None, :]))
        times.append(0.0)
        return finish("model_error", "closed", error=f"start outside active set of {mode!r}")

    t = 0.0
    while True:
        res = flow_until_event(cs, mode, x, t, horizon, cfg)
        segments.append(Segment(mode, res.ts, res.xs))
        times.append(res.t_end)
        if res.outcome == "limit":
            return finish("horizon_truncated", "closed")
        if res.outcome == "blocked":
            return finish("finite_blocked", "closed")
        if res.outcome == "escaped":
            return finish(
                "model_error",
                "closed",
                error=f"state escaped the active set of {mode!r} without a guard event",
            )
        if res.outcome == "tie":
            return finish(
                "model_error",
                "closed",
                error="determinism violation: simultaneous guards " + ", ".join(res.tied_edges),
            )

        # event: fire the reset
        e = res.edge
        pre = res.x_end
        tgt = h.graph.tgt(e)
        try:
            post = cs.reset[e](pre)
        except E.EvalDomainError as exc:
            return finish("model_error", "closed", error=f"reset {e!r} domain error: {exc}")
        jumps.append(
            Jump(e, res.t_end, mode, tuple(float(v) for v in pre), tgt, tuple(float(v) for v in post))
        )
        jump_log.append(res.t_end)
        if not cs.active[tgt](post):
            segments.append(Segment(tgt, np.array([res.t_end]), post[None, :]))
            times.append(res.t_end)
            return finish(
                "model_error", "closed", error=f"reset {e!r} landed outside the active set of {tgt!r}"
            )
        window = [tj for tj in jump_log if tj >= res.t_end - cfg.min_dwell]
        if len(window) > cfg.max_jumps:
            segments.append(Segment(tgt, np.array([res.t_end]), post[None, :]))
            times.append(res.t_end)
            return finish("zeno_detected", "closed", zeno=True)
        mode, x, t = tgt, post, res.t_end


# -- trace surgery --------------------------------------------------------------


def _rebuild_trajectory(segments, endpoint: str, zeno: bool) -> TimeTrajectory:
    times = [segments[0].ts[0]] + [float(seg.ts[-1]) for seg in segments]
    return TimeTrajectory(tuple(times), endpoint, zeno)


def fundamentalize(trace: ExecutionTrace, tol: float = 0.0) -> ExecutionTrace:
    """Remove trivial jumps (no edge, same mode, state unchanged within tol),
    merging the segments they separate."""
    segs = list(trace.segments)
    new_segs = [segs[0]]
    new_jumps = []
    for jp, seg in zip(trace.jumps, segs[1:]):
        trivial = (
            jp.edge is None
            and jp.pre_mode == jp.post_mode
            and (
                len(jp.pre_state) == 0
                or max(abs(a - b) for a, b in zip(jp.pre_state, jp.post_state)) <= tol
            )
        )
        if trivial:
            cur = new_segs[-1]
            drop = 1 if (len(seg.ts) and len(cur.ts) and seg.ts[0] == cur.ts[-1]) else 0
            new_segs[-1] = Segment(
                cur.mode,
                np.concatenate([cur.ts, seg.ts[drop:]]),
                np.vstack([cur.xs, seg.xs[drop:]]) if seg.xs[drop:].size or cur.xs.size else cur.xs,
            )
        else:
            new_jumps.append(jp)
            new_segs.append(seg)
    traj = _rebuild_trajectory(new_segs, trace.trajectory.endpoint, trace.trajectory.zeno)
    return ExecutionTrace(
        trace.system, traj, tuple(new_segs), tuple(new_jumps), trace.classification, trace.error
    )


def is_prefix(a: ExecutionTrace, b: ExecutionTrace, tol: float = 1e-9) -> bool:
    """True when a agrees with b up to a's stop time."""
    if len(a.segments) > len(b.segments):
        return False
    for j, seg in enumerate(a.segments):
        other = b.segments[j]
        if seg.mode != other.mode:
            return False
        if j < len(a.segments) - 1:
            if abs(seg.ts[-1] - other.ts[-1]) > tol:
                return False
        elif seg.ts[-1] > other.ts[-1] + tol:
            return False
        for t, row in zip(seg.ts, seg.xs):
            ref = other.interp(min(t, other.ts[-1]))
            if row.size and np.max(np.abs(row - ref)) > tol:
                return False
    for ja, jb in zip(a.jumps, b.jumps):
        if ja.edge != jb.edge or abs(ja.t - jb.t) > tol:
            return False
    return True


def push_trace(alpha, trace: ExecutionTrace) -> ExecutionTrace:
    """Image of an execution under a semiconjugacy; edges that collapse to a
    vertex become trivial jumps."""
    if trace.system is not alpha.dom and trace.system != alpha.dom:
        raise SystemError("trace does not live in the domain of the map")
    fns = {v: alpha.maps[v].compiled(alpha.merged_params()) for v in alpha.dom.graph.vertices}
    new_segs = []
    for seg in trace.segments:
        f = fns[seg.mode]
        rows = [f(row) for row in seg.xs]
        dim = alpha.cod.modes[alpha.g.v_map[seg.mode]].dim
        xs = np.array(rows, dtype=float).reshape(len(seg.ts), dim)
        new_segs.append(Segment(alpha.g.v_map[seg.mode], seg.ts.copy(), xs))
    new_jumps = []
    for jp in trace.jumps:
        if jp.edge is None:
            img = None
        else:
            ref = alpha.g.e_map[jp.edge]
            img = None if ref.is_vertex() else ref.id
        pre = fns[jp.pre_mode](np.array(jp.pre_state, dtype=float))
        post = fns[jp.post_mode](np.array(jp.post_state, dtype=float))
        new_jumps.append(
            Jump(
                img,
                jp.t,
                alpha.g.v_map[jp.pre_mode],
                tuple(float(v) for v in pre),
                alpha.g.v_map[jp.post_mode],
                tuple(float(v) for v in post),
            )
        )
    return ExecutionTrace(
        alpha.cod, trace.trajectory, tuple(new_segs), tuple(new_jumps),
        trace.classification, trace.error,
    )


def compare_traces(a: ExecutionTrace, b: ExecutionTrace, times: Optional[Sequence[float]] = None):
    """Sup-norm gap between two traces at shared probe times; modes must agree.

    Returns (max_gap, first_disagreement) where first_disagreement is None or
    a time at which the modes differ."""
    if times is None:
        hi = min(a.stop_time(), b.stop_time())
        merged = np.unique(np.concatenate([a.sample_times(), b.sample_times()]))
        times = [t for t in merged if t <= hi]
    gap = 0.0
    for t in times:
        ma, xa = a.state_at(t)
        mb, xb = b.state_at(t)
        if ma != mb:
            return math.inf, t
        if xa.size:
            gap = max(gap, float(np.max(np.abs(xa - xb))))
    return gap, None


# -- pullback along subdivisions --------------------------------------------------


def pullback_execution(handle, trace: ExecutionTrace, tol: float = 1e-9) -> ExecutionTrace:
    """Lift an execution through a subdivision handle produced by the compose
    module (mode slicing or reset factorization)."""
    kind = handle.kind
    if kind == "identity":
        return ExecutionTrace(
            handle.semi.dom, trace.trajectory, trace.segments, trace.jumps,
            trace.classification, trace.error,
        )
    if kind == "slice":
        return _pullback_slice(handle, trace)
    if kind == "factor":
        return _pullback_factor(handle, trace)
    raise SystemError(f"no pullback rule for subdivision kind {kind!r}")


def _pullback_slice(handle, trace: ExecutionTrace) -> ExecutionTrace:
    d = handle.data
    v, minus, plus = d["mode"], d["minus"], d["plus"]
    h_fn = d["h"]
    edge_mp, edge_pm = d["edge_mp"], d["edge_pm"]
    in_lift = d["in_edges"]   # cod edge id -> {'-': dom id, '+': dom id}
    out_lift = d["out_edges"]
    dom = handle.semi.dom

    def side_of(x) -> str:
        return "+" if h_fn(x) > 0.0 else "-"

    new_segs = []
    new_jumps = []

    def lift_segment(seg: Segment):
        if seg.mode != v:
            new_segs.append(seg)
            return
        hs = np.array([h_fn(row) for row in seg.xs])
        sides = np.where(hs > 0.0, 1, -1)
        cur_ts = [seg.ts[0]]
        cur_xs = [seg.xs[0]]
        cur_side = sides[0]
        for i in range(1, len(seg.ts)):
            if sides[i] == cur_side:
                cur_ts.append(seg.ts[i])
                cur_xs.append(seg.xs[i])
                continue
            h0, h1 = hs[i - 1], hs[i]
            if h1 == h0:
                tc, xc = seg.ts[i], seg.xs[i]
            else:
                w = h0 / (h0 - h1)
                tc = seg.ts[i - 1] + w * (seg.ts[i] - seg.ts[i - 1])
                xc = (1.0 - w) * seg.xs[i - 1] + w * seg.xs[i]
            if cur_ts[-1] != tc:
                cur_ts.append(tc)
                cur_xs.append(xc)
            mode_from = minus if cur_side < 0 else plus
            mode_to = plus if cur_side < 0 else minus
            edge = edge_mp if cur_side < 0 else edge_pm
            new_segs.append(Segment(mode_from, np.array(cur_ts), np.vstack(cur_xs)))
            state = tuple(float(u) for u in xc)
            new_jumps.append(Jump(edge, float(tc), mode_from, state, mode_to, state))
            cur_ts, cur_xs, cur_side = [tc], [xc], sides[i]
        new_segs.append(
            Segment(minus if cur_side < 0 else plus, np.array(cur_ts), np.vstack(cur_xs))
        )

    lift_segment(trace.segments[0])
    for jp, seg in zip(trace.jumps, trace.segments[1:]):
        pre_mode, post_mode, edge = jp.pre_mode, jp.post_mode, jp.edge
        if pre_mode == v:
            pre_mode = minus if side_of(np.array(jp.pre_state)) == "-" else plus
        if post_mode == v:
            post_mode = minus if side_of(np.array(jp.post_state)) == "-" else plus
        if edge is not None:
            src_is_v = trace.system.graph.src(edge) == v
            tgt_is_v = trace.system.graph.tgt(edge) == v
            if src_is_v and tgt_is_v:
                edge = d["self_edges"][edge][
                    ("-" if pre_mode == minus else "+") + ("-" if post_mode == minus else "+")
                ]
            elif src_is_v:
                edge = out_lift[edge]["-" if pre_mode == minus else "+"]
            elif tgt_is_v:
                edge = in_lift[edge]["-" if post_mode == minus else "+"]
        new_jumps.append(Jump(edge, jp.t, pre_mode, jp.pre_state, post_mode, jp.post_state))
        lift_segment(seg)

    traj = _rebuild_trajectory(new_segs, trace.trajectory.endpoint, trace.trajectory.zeno)
    return ExecutionTrace(
        dom, traj, tuple(new_segs), tuple(new_jumps), trace.classification, trace.error
    )


def _pullback_factor(handle, trace: ExecutionTrace) -> ExecutionTrace:
    d = handle.data
    e_split, mid_mode = d["edge"], d["mid"]
    pre_id, post_id = d["pre_edge"], d["post_edge"]
    f_map = d["f"]
    dom = handle.semi.dom
    new_segs = [trace.segments[0]]
    new_jumps = []
    for jp, seg in zip(trace.jumps, trace.segments[1:]):
        if jp.edge == e_split:
            mid = f_map(np.array(jp.pre_state, dtype=float))
            mid_t = tuple(float(u) for u in mid)
            new_jumps.append(Jump(pre_id, jp.t, jp.pre_mode, jp.pre_state, mid_mode, mid_t))
            new_segs.append(Segment(mid_mode, np.array([jp.t]), mid[None, :]))
            new_jumps.append(Jump(post_id, jp.t, mid_mode, mid_t, jp.post_mode, jp.post_state))
        else:
            new_jumps.append(jp)
        new_segs.append(seg)
    traj = _rebuild_trajectory(new_segs, trace.trajectory.endpoint, trace.trajectory.zeno)
    return ExecutionTrace(
        dom, traj, tuple(new_segs), tuple(new_jumps), trace.classification, trace.error
    )
