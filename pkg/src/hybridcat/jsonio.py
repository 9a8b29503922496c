"""Serialization for systems, maps, traces, and chains.

Every document carries ``"format": "hybridcat-v1"`` plus a ``"kind"`` tag
the loaders dispatch on. Expressions are stored as grammar strings, so a
document is exactly as expressive as the parser. Two caveats are part of
the contract:

* sampling hooks and box hints are construction-time objects and do not
  survive a round trip; reloaded systems sample by equality pins and
  rejection over default boxes, which can starve on measure-zero sets
  (reported as starvation, not failure);
* a trace document stores the sampled curve, not the system, so loading
  one returns a trace whose ``system`` field is whatever the caller
  supplies (``None`` by default).

``write_json`` emits sorted keys, two-space indentation, and a trailing
newline, making equal documents byte-identical.
"""

import csv
import io
import json
from pathlib import Path
from typing import Optional

import numpy as np

import hybridcat.expr as E
from hybridcat.analysis import Chain, ChainLink, ChainSegment, SearchResult
from hybridcat.compose import DirectedSystem, TemplateAnchorPair
from hybridcat.graphs import Graph, GraphMorphism, eref, vref
from hybridcat.morphism import Semiconjugacy
from hybridcat.simulate import ExecutionTrace, Jump, Segment
from hybridcat.system import (
    HybridPoint,
    HybridSystem,
    Mode,
    ResetEdge,
    SystemError,
)
from hybridcat.trajectory import TimeTrajectory

__all__ = [
    "FORMAT", "to_plain", "read_json", "write_json",
    "dump_graph", "load_graph", "dump_system", "load_system",
    "dump_semiconjugacy", "load_semiconjugacy",
    "dump_directed", "load_directed",
    "dump_trace", "load_trace", "trace_csv",
    "dump_chain", "load_chain",
    "dump_search_result", "dump_directedness",
    "dump_template_anchor", "load_template_anchor",
]

FORMAT = "hybridcat-v1"


def to_plain(value):
    if isinstance(value, HybridPoint):
        return {"mode": value.mode, "x": [float(v) for v in value.x]}
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, dict):
        return {k: to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def write_json(path, obj) -> None:
    text = json.dumps(to_plain(obj), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _expect(obj: dict, kind: str) -> dict:
    if not isinstance(obj, dict):
        raise SystemError(f"expected a {kind} document, got {type(obj).__name__}")
    fmt = obj.get("format")
    if fmt != FORMAT:
        raise SystemError(f"unsupported format {fmt!r} (expected {FORMAT!r})")
    if obj.get("kind") != kind:
        raise SystemError(f"expected kind {kind!r}, got {obj.get('kind')!r}")
    return obj


def _resolve(obj, base: Optional[Path]):
    """A sub-document may be inline or a path relative to its parent file."""
    if isinstance(obj, str):
        p = Path(obj)
        if base is not None and not p.is_absolute():
            p = Path(base) / p
        return read_json(p)
    return obj


# -- graphs ----------------------------------------------------------------------


def dump_graph(g: Graph) -> dict:
    return {"vertices": list(g.vertices),
            "edges": [{"id": e, "src": g.src(e), "tgt": g.tgt(e)}
                      for e in g.edges]}


def load_graph(obj: dict) -> Graph:
    return Graph(list(obj["vertices"]),
                 [(e["id"], e["src"], e["tgt"]) for e in obj["edges"]])


# -- systems ---------------------------------------------------------------------


def dump_system(h: HybridSystem) -> dict:
    vertices = []
    for v in h.graph.vertices:
        m = h.modes[v]
        vertices.append({
            "id": v,
            "dim": m.dim,
            "field": m.field.format(),
            "active": E.format_predicate(m.active),
            "flow": E.format_predicate(m.flow),
        })
    edges = []
    for e in h.graph.edges:
        r = h.resets[e]
        edges.append({
            "id": e,
            "src": h.graph.src(e),
            "tgt": h.graph.tgt(e),
            "guard": E.format_predicate(r.guard),
            "event": E.format_expr(r.event),
            "reset": r.reset.format(),
        })
    return {"format": FORMAT, "kind": "system",
            "params": {k: float(v) for k, v in h.params.items()},
            "vertices": vertices, "edges": edges}


def load_system(obj) -> HybridSystem:
    if isinstance(obj, (str, Path)):
        obj = read_json(obj)
    _expect(obj, "system")
    dims = {v["id"]: int(v["dim"]) for v in obj["vertices"]}
    modes = {}
    for v in obj["vertices"]:
        vid, dim = v["id"], int(v["dim"])
        if len(v["field"]) != dim:
            raise SystemError(f"mode {vid!r}: field needs {dim} components")
        modes[vid] = Mode(vid, dim, E.parse_vector(list(v["field"]), dim),
                          E.parse_predicate(v["active"], dim),
                          E.parse_predicate(v["flow"], dim))
    resets = {}
    triples = []
    for e in obj["edges"]:
        eid, src, tgt = e["id"], e["src"], e["tgt"]
        if src not in dims or tgt not in dims:
            raise SystemError(f"edge {eid!r} refers to unknown vertices")
        d_src, d_tgt = dims[src], dims[tgt]
        if len(e["reset"]) != d_tgt:
            raise SystemError(f"edge {eid!r}: reset needs {d_tgt} components")
        resets[eid] = ResetEdge(eid, E.parse_predicate(e["guard"], d_src),
                                E.parse_expr(e["event"], d_src),
                                E.parse_vector(list(e["reset"]), d_src))
        triples.append((eid, src, tgt))
    g = Graph([v["id"] for v in obj["vertices"]], triples)
    return HybridSystem(g, modes, resets, obj.get("params", {}))


# -- semiconjugacies -------------------------------------------------------------


def dump_semiconjugacy(a: Semiconjugacy, *, embed_dom: bool = True,
                       embed_cod: bool = True) -> dict:
    e_map = {}
    for e, ref in a.g.e_map.items():
        key = "vertex" if ref.is_vertex() else "edge"
        e_map[e] = {key: ref.id}
    out = {
        "format": FORMAT, "kind": "semiconjugacy",
        "dom": dump_system(a.dom) if embed_dom else None,
        "cod": dump_system(a.cod) if embed_cod else None,
        "graph_map": {"vertices": dict(a.g.v_map), "edges": e_map},
        "maps": {v: f.format() for v, f in a.maps.items()},
    }
    if a.inverses:
        out["inverses"] = {v: f.format() for v, f in a.inverses.items()}
    return out


def load_semiconjugacy(obj, *, dom: Optional[HybridSystem] = None,
                       cod: Optional[HybridSystem] = None,
                       base: Optional[Path] = None) -> Semiconjugacy:
    if isinstance(obj, (str, Path)):
        base = Path(obj).parent
        obj = read_json(obj)
    _expect(obj, "semiconjugacy")
    if obj.get("dom") is not None:
        dom = load_system(_resolve(obj["dom"], base))
    if obj.get("cod") is not None:
        cod = load_system(_resolve(obj["cod"], base))
    if dom is None or cod is None:
        raise SystemError("semiconjugacy document lacks dom or cod and none "
                          "was supplied")
    gm = obj["graph_map"]
    e_map = {}
    for e, ref in gm.get("edges", {}).items():
        if "vertex" in ref:
            e_map[e] = vref(ref["vertex"])
        else:
            e_map[e] = eref(ref["edge"])
    g = GraphMorphism(dom.graph, cod.graph, dict(gm["vertices"]), e_map)
    maps = {}
    for v, comps in obj["maps"].items():
        if v not in dom.modes:
            raise SystemError(f"map at unknown vertex {v!r}")
        maps[v] = E.parse_vector(list(comps), dom.modes[v].dim)
    inverses = None
    if obj.get("inverses"):
        inverses = {}
        for v, comps in obj["inverses"].items():
            w = g.v_map[v]
            inverses[v] = E.parse_vector(list(comps), cod.modes[w].dim)
    return Semiconjugacy(dom, cod, g, maps, inverses=inverses)


# -- directed systems ------------------------------------------------------------


def dump_directed(d: DirectedSystem) -> dict:
    return {
        "format": FORMAT, "kind": "directed",
        "carrier": dump_system(d.carrier),
        "init": dump_semiconjugacy(d.init, embed_cod=False),
        "final": dump_semiconjugacy(d.final, embed_cod=False),
        "certified": to_plain(d.certified),
    }


def load_directed(obj, *, base: Optional[Path] = None) -> DirectedSystem:
    if isinstance(obj, (str, Path)):
        base = Path(obj).parent
        obj = read_json(obj)
    _expect(obj, "directed")
    carrier = load_system(_resolve(obj["carrier"], base))
    init = load_semiconjugacy(_resolve(obj["init"], base), cod=carrier,
                              base=base)
    final = load_semiconjugacy(_resolve(obj["final"], base), cod=carrier,
                               base=base)
    d = DirectedSystem(carrier, init, final)
    d.certified = obj.get("certified")
    return d


# -- traces ----------------------------------------------------------------------


def dump_trace(tr: ExecutionTrace) -> dict:
    return {
        "format": FORMAT, "kind": "trace",
        "classification": tr.classification,
        "trajectory": {"times": [float(t) for t in tr.trajectory.times],
                       "endpoint": tr.trajectory.endpoint,
                       "zeno": tr.trajectory.zeno},
        "segments": [{"mode": s.mode, "ts": s.ts.tolist(),
                      "xs": s.xs.tolist()} for s in tr.segments],
        "jumps": [{"edge": j.edge, "t": float(j.t),
                   "pre_mode": j.pre_mode, "pre_state": list(j.pre_state),
                   "post_mode": j.post_mode, "post_state": list(j.post_state)}
                  for j in tr.jumps],
    }


def load_trace(obj, system: Optional[HybridSystem] = None) -> ExecutionTrace:
    if isinstance(obj, (str, Path)):
        obj = read_json(obj)
    _expect(obj, "trace")
    tj = obj["trajectory"]
    traj = TimeTrajectory(tuple(tj["times"]), tj["endpoint"], tj["zeno"])
    segments = tuple(
        Segment(s["mode"], np.asarray(s["ts"], dtype=float),
                np.asarray(s["xs"], dtype=float).reshape(len(s["ts"]), -1))
        for s in obj["segments"])
    jumps = tuple(
        Jump(j["edge"], float(j["t"]), j["pre_mode"],
             tuple(float(v) for v in j["pre_state"]), j["post_mode"],
             tuple(float(v) for v in j["post_state"]))
        for j in obj["jumps"])
    return ExecutionTrace(system, traj, segments, jumps,
                          obj["classification"])


def trace_csv(tr) -> str:
    """Render a trace (object or document) as CSV.

    One row per stored sample: t, mode, jump_index (the segment's ordinal),
    then coordinates padded to the widest mode. A jump therefore appears as
    two rows at the same t, closing one segment and opening the next.
    """
    if isinstance(tr, ExecutionTrace):
        tr = dump_trace(tr)
    _expect(tr, "trace")
    segs = tr["segments"]
    width = max((len(s["xs"][0]) if s["xs"] else 0 for s in segs), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "mode", "jump_index"] + [f"x{i}" for i in range(width)])
    for idx, s in enumerate(segs):
        for t, x in zip(s["ts"], s["xs"]):
            row = [repr(float(t)), s["mode"], idx]
            row += [repr(float(v)) for v in x]
            row += [""] * (width - len(x))
            w.writerow(row)
    return buf.getvalue()


# -- chains ----------------------------------------------------------------------


def dump_chain(c: Chain) -> dict:
    return {
        "format": FORMAT, "kind": "chain",
        "epsilon": float(c.epsilon), "T": float(c.T),
        "segments": [{"mode": s.mode, "t_start": float(s.t_start),
                      "t_end": float(s.t_end), "ts": s.ts.tolist(),
                      "xs": s.xs.tolist()} for s in c.segments],
        "links": [{"kind": ln.kind, "edge": ln.edge, "t": float(ln.t),
                   "pre": to_plain(ln.pre), "post": to_plain(ln.post),
                   "gap": float(ln.gap)} for ln in c.links],
    }


def _point(obj: dict) -> HybridPoint:
    return HybridPoint(obj["mode"], tuple(float(v) for v in obj["x"]))


def load_chain(obj) -> Chain:
    if isinstance(obj, (str, Path)):
        obj = read_json(obj)
    _expect(obj, "chain")
    segments = tuple(
        ChainSegment(s["mode"], float(s["t_start"]), float(s["t_end"]),
                     np.asarray(s["ts"], dtype=float),
                     np.asarray(s["xs"], dtype=float).reshape(len(s["ts"]), -1))
        for s in obj["segments"])
    links = tuple(
        ChainLink(ln["kind"], ln["edge"], float(ln["t"]), _point(ln["pre"]),
                  _point(ln["post"]), float(ln["gap"]))
        for ln in obj["links"])
    return Chain(segments, links, float(obj["epsilon"]), float(obj["T"]))


# -- analysis reports ------------------------------------------------------------


def dump_template_anchor(pair) -> dict:
    return {
        "format": FORMAT, "kind": "template_anchor",
        "template": dump_system(pair.template),
        "roof": dump_system(pair.roof),
        "anchor": dump_system(pair.anchor),
        "p": dump_semiconjugacy(pair.p, embed_dom=False, embed_cod=False),
        "i": dump_semiconjugacy(pair.i, embed_dom=False, embed_cod=False),
    }


def load_template_anchor(obj, *, base: Optional[Path] = None) -> TemplateAnchorPair:
    if isinstance(obj, (str, Path)):
        base = Path(obj).parent
        obj = read_json(obj)
    _expect(obj, "template_anchor")
    template = load_system(_resolve(obj["template"], base))
    roof = load_system(_resolve(obj["roof"], base))
    anchor = load_system(_resolve(obj["anchor"], base))
    p = load_semiconjugacy(obj["p"], dom=roof, cod=template, base=base)
    i = load_semiconjugacy(obj["i"], dom=roof, cod=anchor, base=base)
    return TemplateAnchorPair(template, roof, p, i, anchor)


def dump_search_result(res: SearchResult) -> dict:
    return {
        "format": FORMAT, "kind": "chain_search",
        "found": res.found, "nodes": res.nodes, "reason": res.reason,
        "chain": dump_chain(res.chain) if res.chain is not None else None,
        "validation": (res.validation.to_obj()
                       if res.validation is not None else None),
    }


def dump_directedness(rep) -> dict:
    results = []
    for row in rep.results:
        out = dict(row)
        out["start"] = to_plain(row["start"])
        if row.get("chain") is not None:
            out["chain"] = dump_chain(row["chain"])
        results.append(to_plain(out))
    return {
        "format": FORMAT, "kind": "directedness",
        "ok": rep.ok, "epsilon": float(rep.epsilon), "T": float(rep.T),
        "seed": rep.seed, "coverage": float(rep.coverage),
        "budget_used": rep.budget_used,
        "starts": [to_plain(s) for s in rep.starts],
        "results": results,
        "report": rep.report.to_obj(),
    }
