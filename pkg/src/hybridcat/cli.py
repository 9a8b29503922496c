"""Command line front end.

Usage shape: ``hybridcat <command> [...]``. Machine-readable JSON goes to
stdout, a one-line human summary to stderr. Exit codes: 0 on success, 1
when a check ran and failed (the report still lands on stdout), 2 on
usage or input errors. All randomness flows through ``--seed`` (default
0), so equal invocations produce byte-identical output.

Commands:

  validate FILE                 check a system / map / directed document
  simulate FILE                 integrate one execution, trace JSON out
  compose {product,coproduct,sequential,fiber,slice,factor-reset,
           template-anchor}     build new documents from old ones
  check {determinism,nonblocking,semiconjugacy,subdivision,trapping,
         directed}              run a numerical check, report JSON out
  chain FILE                    search for an (eps, T)-chain to a target
  gallery {list,export}         the built-in example systems
  trace-convert FILE            trace JSON to CSV

The environment variable HYBRIDCAT_THREADS caps BLAS/OpenMP threads; it
must be read before numpy loads, hence the import dance below.
"""

import os
import sys

if os.environ.get("HYBRIDCAT_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["HYBRIDCAT_THREADS"])

import argparse
import json
from pathlib import Path

import hybridcat.expr as E
import hybridcat.jsonio as J
from hybridcat.analysis import (
    certify_directed,
    chain_search,
    check_trapping_region,
)
from hybridcat.compose import (
    DirectedSystem,
    compose_template_anchor,
    coproduct,
    factor_reset,
    fiber_product,
    product,
    sequential_compose,
    slice_mode,
)
from hybridcat.expr import ExprError
from hybridcat.gallery import EXAMPLES, build_example
from hybridcat.morphism import (
    check_subdivision_necessary,
    validate_semiconjugacy,
)
from hybridcat.sampling import SamplingStarved
from hybridcat.simulate import SimConfig, simulate
from hybridcat.system import (
    HybridPoint,
    SystemError,
    check_determinism,
    check_nonblocking,
    validate_system,
)
from hybridcat.trajectory import TrajectoryError

__all__ = ["main"]


class UsageError(Exception):
    pass


def _print_json(obj) -> None:
    print(json.dumps(J.to_plain(obj), indent=2, sort_keys=True))


def _human(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit_doc(doc, out, human: str) -> None:
    """Write a document to --out if given, else to stdout."""
    if out:
        J.write_json(out, doc)
    else:
        _print_json(doc)
    _human(human)


def _read(path) -> dict:
    try:
        return J.read_json(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}")
    except json.JSONDecodeError as ex:
        raise UsageError(f"{path}: not valid JSON ({ex})")


def _load_system_doc(path):
    obj = _read(path)
    kind = obj.get("kind")
    if kind == "system":
        return J.load_system(obj)
    if kind == "directed":
        return J.load_directed(obj, base=Path(path).parent).carrier
    raise UsageError(f"{path}: expected a system document, got {kind!r}")


def _load_directed_doc(path) -> DirectedSystem:
    obj = _read(path)
    if obj.get("kind") != "directed":
        raise UsageError(f"{path}: expected a directed document")
    return J.load_directed(obj, base=Path(path).parent)


def _parse_init(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad --init value {text!r} (want 'x0,x1,...')")


def _parse_start(text: str) -> HybridPoint:
    if ":" not in text:
        raise UsageError(f"bad --start value {text!r} (want 'mode:x0,x1,...')")
    mode, _, rest = text.partition(":")
    return HybridPoint(mode, _parse_init(rest))


def _sim_config(args) -> SimConfig:
    base = SimConfig()
    return SimConfig(
        horizon=args.horizon,
        dt_max=getattr(args, "dt_max", None) or base.dt_max,
        event_tol=getattr(args, "event_tol", None) or base.event_tol,
        eq_tol=getattr(args, "eq_tol", None) or base.eq_tol,
        max_jumps=getattr(args, "max_jumps", None) or base.max_jumps,
        min_dwell=getattr(args, "min_dwell", None) or base.min_dwell,
    )


def _finish_check(rep, human_name: str) -> int:
    _print_json(rep.to_obj())
    state = "ok" if rep.ok else "FAILED"
    _human(f"{human_name}: {state} ({len(rep.violations)} violations, "
           f"{len(rep.starvations)} starved sets)")
    return 0 if rep.ok else 1


# -- command handlers ------------------------------------------------------------


def _cmd_validate(args) -> int:
    obj = _read(args.file)
    kind = obj.get("kind")
    base = Path(args.file).parent
    if kind == "system":
        rep = validate_system(J.load_system(obj), samples=args.samples,
                              seed=args.seed)
    elif kind == "semiconjugacy":
        rep = validate_semiconjugacy(J.load_semiconjugacy(obj, base=base),
                                     samples=args.samples, seed=args.seed)
    elif kind == "directed":
        d = J.load_directed(obj, base=base)
        rep = validate_system(d.carrier, samples=args.samples, seed=args.seed)
        rep.merge(validate_semiconjugacy(d.init, samples=args.samples,
                                         seed=args.seed))
        rep.merge(validate_semiconjugacy(d.final, samples=args.samples,
                                         seed=args.seed))
    else:
        raise UsageError(f"{args.file}: no validator for kind {kind!r}")
    return _finish_check(rep, f"validate {kind}")


def _cmd_simulate(args) -> int:
    h = _load_system_doc(args.file)
    start = HybridPoint(args.mode, _parse_init(args.init))
    if args.mode not in h.modes:
        raise UsageError(f"unknown mode {args.mode!r}")
    if len(start.x) != h.modes[args.mode].dim:
        raise UsageError(f"mode {args.mode!r} has dimension "
                         f"{h.modes[args.mode].dim}, --init gives "
                         f"{len(start.x)}")
    tr = simulate(h, start, _sim_config(args))
    doc = J.dump_trace(tr)
    _print_json(doc)
    if args.out:
        Path(args.out).write_text(J.trace_csv(doc))
    _human(f"simulate: {tr.classification} after {len(tr.jumps)} jumps, "
           f"t_end={tr.segments[-1].ts[-1]:g}")
    return 1 if tr.classification == "model_error" else 0


def _provenance(operation: str, inputs: dict, **options) -> dict:
    return {"operation": operation, "inputs": dict(inputs),
            "options": dict(options)}


def _cmd_compose(args) -> int:
    op = args.operation
    if op in ("product", "coproduct"):
        h1 = _load_system_doc(args.first)
        h2 = _load_system_doc(args.second)
        combined, m1, m2 = (product if op == "product" else coproduct)(h1, h2)
        doc = J.dump_system(combined)
        doc["maps"] = [J.dump_semiconjugacy(m, embed_dom=False,
                                            embed_cod=False) for m in (m1, m2)]
    elif op == "sequential":
        first = _directed_side(args.first, args.overlap, "first")
        second = _directed_side(args.second, args.overlap, "second")
        composed = sequential_compose(first, second)
        doc = J.dump_directed(composed)
    elif op == "fiber":
        p = J.load_semiconjugacy(args.left)
        f = J.load_semiconjugacy(args.right)
        combined, m1, m2 = fiber_product(p, f, samples=args.samples,
                                         seed=args.seed)
        doc = J.dump_system(combined)
        doc["maps"] = [J.dump_semiconjugacy(m, embed_dom=False,
                                            embed_cod=False) for m in (m1, m2)]
    elif op == "slice":
        h = _load_system_doc(args.system)
        if args.mode not in h.modes:
            raise UsageError(f"unknown mode {args.mode!r}")
        cut = E.parse_expr(args.at, h.modes[args.mode].dim)
        sliced, sub = slice_mode(h, args.mode, cut, samples=args.samples,
                                 seed=args.seed)
        doc = J.dump_system(sliced)
        doc["maps"] = [J.dump_semiconjugacy(sub, embed_dom=False,
                                            embed_cod=False)]
    elif op == "factor-reset":
        h = _load_system_doc(args.system)
        spec = _read(args.spec)
        if args.edge not in h.resets:
            raise UsageError(f"unknown edge {args.edge!r}")
        d_src = h.modes[h.graph.src(args.edge)].dim
        a_dim = int(spec["dim"])
        f = E.parse_vector(list(spec["f"]), d_src)
        g = E.parse_vector(list(spec["g"]), a_dim)
        a_active = E.parse_predicate(spec["active"], a_dim)
        factored, sub = factor_reset(h, args.edge, f, g, a_active, a_dim,
                                     samples=args.samples, seed=args.seed)
        doc = J.dump_system(factored)
        doc["maps"] = [J.dump_semiconjugacy(sub, embed_dom=False,
                                            embed_cod=False)]
    else:  # template-anchor
        p1 = J.load_template_anchor(args.first)
        p2 = J.load_template_anchor(args.second)
        pair = compose_template_anchor(p1, p2, samples=args.samples,
                                       seed=args.seed)
        doc = J.dump_template_anchor(pair)
    inputs = {k: getattr(args, k.replace("-", "_"), None)
              for k in ("first", "second", "left", "right", "system",
                        "overlap", "spec")}
    doc["provenance"] = _provenance(
        op, {k: v for k, v in inputs.items() if v},
        seed=getattr(args, "seed", 0))
    _emit_doc(doc, args.out, f"compose {op}: wrote "
              f"{args.out or 'document to stdout'}")
    return 0


def _directed_side(path: str, overlap_path, side: str) -> DirectedSystem:
    """Assemble one operand of a sequential composition: either a directed
    document, or a system document whose init/final come from the overlap
    file."""
    obj = _read(path)
    base = Path(path).parent
    over = {}
    if overlap_path:
        odoc = _read(overlap_path)
        if odoc.get("kind") != "overlap":
            raise UsageError(f"{overlap_path}: expected an overlap document")
        over = odoc.get(side) or {}
    if obj.get("kind") == "directed" and not over:
        return J.load_directed(obj, base=base)
    if obj.get("kind") == "directed":
        d = J.load_directed(obj, base=base)
        carrier, init, final = d.carrier, d.init, d.final
    else:
        carrier = J.load_system(obj)
        init = final = None
    obase = Path(overlap_path).parent if overlap_path else base
    if over.get("init") is not None:
        init = J.load_semiconjugacy(over["init"], cod=carrier, base=obase)
    if over.get("final") is not None:
        final = J.load_semiconjugacy(over["final"], cod=carrier, base=obase)
    if init is None or final is None:
        raise UsageError(f"the {side} system needs init and final maps "
                         f"(from the document or the overlap file)")
    return DirectedSystem(carrier, init, final)


def _cmd_check(args) -> int:
    prop = args.property
    if prop == "determinism":
        rep = check_determinism(_load_system_doc(args.file),
                                samples=args.samples, seed=args.seed)
    elif prop == "nonblocking":
        rep = check_nonblocking(_load_system_doc(args.file),
                                samples=args.samples, horizon=args.horizon,
                                seed=args.seed)
    elif prop == "semiconjugacy":
        rep = validate_semiconjugacy(
            J.load_semiconjugacy(args.file), samples=args.samples,
            tol=args.tol, seed=args.seed)
    elif prop == "subdivision":
        rep = check_subdivision_necessary(
            J.load_semiconjugacy(args.file), samples=args.samples,
            seed=args.seed)
    elif prop == "trapping":
        h = _load_system_doc(args.file)
        margins = _read_margins(args.margins)
        cfg = SimConfig(horizon=args.horizon,
                        dt_max=args.dt_max or SimConfig().dt_max)
        rep = check_trapping_region(h, margins, args.t_bound,
                                    samples=args.samples,
                                    horizon=args.horizon, cfg=cfg,
                                    seed=args.seed, delta=args.delta)
    else:  # directed
        d = _load_directed_doc(args.file)
        rep = certify_directed(d, epsilon=args.epsilon, T=args.T,
                               samples=args.samples, budget=args.budget,
                               seed=args.seed)
        _print_json(J.dump_directedness(rep))
        state = "ok" if rep.ok else "FAILED"
        _human(f"check directed: {state} (coverage {rep.coverage:.0%})")
        return 0 if rep.ok else 1
    return _finish_check(rep, f"check {prop}")


def _read_margins(path) -> dict:
    obj = _read(path)
    if not isinstance(obj, dict) or not obj:
        raise UsageError(f"{path}: margins must be a nonempty "
                         f"mode-to-expression object")
    return {k: v for k, v in obj.items() if k not in ("format", "kind")}


def _cmd_chain(args) -> int:
    obj = _read(args.file)
    if obj.get("kind") == "directed":
        h = J.load_directed(obj, base=Path(args.file).parent).carrier
    else:
        h = J.load_system(obj)
    start = _parse_start(args.start)
    if start.mode not in h.modes:
        raise UsageError(f"unknown start mode {start.mode!r}")
    if not args.target_mode:
        raise UsageError("at least one --target-mode is required")
    target = {}
    for m in args.target_mode:
        if m not in h.modes:
            raise UsageError(f"unknown target mode {m!r}")
        pred_src = args.target_pred or "0 <= 1"
        target[m] = E.parse_predicate(pred_src, h.modes[m].dim)
    res = chain_search(h, start, target, args.epsilon, args.T,
                       budget=args.budget,
                       cfg=SimConfig(horizon=args.horizon))
    doc = J.dump_search_result(res)
    _print_json(doc)
    if args.out and res.chain is not None:
        J.write_json(args.out, J.dump_chain(res.chain))
    _human(f"chain: {res.reason} after {res.nodes} nodes")
    return 0 if res.found else 1


def _cmd_gallery(args) -> int:
    if args.action == "list":
        rows = [{"name": name, "kind": entry.kind,
                 "defaults": dict(entry.defaults), "summary": entry.summary}
                for name, entry in sorted(EXAMPLES.items())]
        _print_json(rows)
        _human(f"gallery: {len(rows)} examples")
        return 0
    # export
    params = {k: v for k, v in vars(args).items()
              if k in _GALLERY_PARAMS and v is not None}
    built = build_example(args.name, **params)
    entry = EXAMPLES[args.name]
    doc = (J.dump_system(built) if entry.kind == "system"
           else J.dump_directed(built))
    _emit_doc(doc, args.out, f"gallery export {args.name}: "
              f"{args.out or 'document to stdout'}")
    return 0


def _cmd_trace_convert(args) -> int:
    obj = _read(args.file)
    text = J.trace_csv(obj)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    _human(f"trace-convert: {len(text.splitlines()) - 1} rows")
    return 0


# -- parser ----------------------------------------------------------------------

# union of gallery parameter names, so 'gallery export' can declare them
_GALLERY_PARAMS = sorted({p for e in EXAMPLES.values() for p in e.defaults})


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0,
                   help="RNG seed for all sampling (default 0)")


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="hybridcat",
        description="Build, compose, simulate, and check hybrid systems.")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a document")
    p.add_argument("file")
    p.add_argument("--samples", type=int, default=200)
    _add_seed(p)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("simulate", help="integrate one execution")
    p.add_argument("file")
    p.add_argument("--mode", required=True)
    p.add_argument("--init", required=True,
                   help="start state, comma-separated ('' for dimension 0)")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--dt-max", type=float, default=None)
    p.add_argument("--event-tol", type=float, default=None)
    p.add_argument("--eq-tol", type=float, default=None)
    p.add_argument("--max-jumps", type=int, default=None)
    p.add_argument("--min-dwell", type=float, default=None)
    p.add_argument("--out", help="also write the trace as CSV here")
    _add_seed(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("compose", help="combine documents")
    ops = p.add_subparsers(dest="operation", required=True)

    def compose_parser(name, *flags, samples=60):
        q = ops.add_parser(name)
        for flag in flags:
            q.add_argument(flag, required=True)
        q.add_argument("-o", "--out")
        q.add_argument("--samples", type=int, default=samples)
        _add_seed(q)
        q.set_defaults(fn=_cmd_compose)
        return q

    compose_parser("product", "--first", "--second")
    compose_parser("coproduct", "--first", "--second")
    q = compose_parser("sequential", "--first", "--second")
    q.add_argument("--overlap", help="overlap document with init/final maps")
    compose_parser("fiber", "--left", "--right")
    q = compose_parser("slice", "--system", "--mode", samples=100)
    q.add_argument("--at", required=True,
                   help="scalar expression whose zero set cuts the mode")
    q = compose_parser("factor-reset", "--system", "--edge", samples=100)
    q.add_argument("--spec", required=True,
                   help="JSON with dim, active, f, g for the middle mode")
    compose_parser("template-anchor", "--first", "--second")

    p = sub.add_parser("check", help="run a numerical check")
    props = p.add_subparsers(dest="property", required=True)

    def check_parser(name, samples):
        q = props.add_parser(name)
        q.add_argument("file")
        q.add_argument("--samples", type=int, default=samples)
        _add_seed(q)
        q.set_defaults(fn=_cmd_check)
        return q

    check_parser("determinism", 1000)
    q = check_parser("nonblocking", 100)
    q.add_argument("--horizon", type=float, default=10.0)
    q = check_parser("semiconjugacy", 200)
    q.add_argument("--tol", type=float, default=1e-9)
    check_parser("subdivision", 100)
    q = check_parser("trapping", 100)
    q.add_argument("--margins", required=True,
                   help="JSON file mapping mode ids to margin expressions")
    q.add_argument("--t-bound", type=float, required=True)
    q.add_argument("--horizon", type=float, default=50.0)
    q.add_argument("--dt-max", type=float, default=None)
    q.add_argument("--delta", type=float, default=None)
    q = check_parser("directed", 20)
    q.add_argument("--epsilon", type=float, required=True)
    q.add_argument("--T", type=float, required=True)
    q.add_argument("--budget", type=int, default=10_000)

    p = sub.add_parser("chain", help="search for an (eps, T)-chain")
    p.add_argument("file")
    p.add_argument("--start", required=True, help="'mode:x0,x1,...'")
    p.add_argument("--target-mode", action="append", default=[])
    p.add_argument("--target-pred", default=None,
                   help="predicate cutting the target inside those modes")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--out", help="write the found chain document here")
    _add_seed(p)
    p.set_defaults(fn=_cmd_chain)

    p = sub.add_parser("gallery", help="built-in examples")
    acts = p.add_subparsers(dest="action", required=True)
    q = acts.add_parser("list")
    q.set_defaults(fn=_cmd_gallery)
    q = acts.add_parser("export")
    q.add_argument("name")
    for pname in _GALLERY_PARAMS:
        q.add_argument(f"--{pname}", type=float, default=None)
    q.add_argument("-o", "--out")
    q.set_defaults(fn=_cmd_gallery)

    p = sub.add_parser("trace-convert", help="trace JSON to CSV")
    p.add_argument("file")
    p.add_argument("-o", "--out")
    p.set_defaults(fn=_cmd_trace_convert)

    return top


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return int(ex.code) if ex.code else 0
    try:
        return args.fn(args)
    except (UsageError, SystemError, ExprError, TrajectoryError,
            SamplingStarved, KeyError, OSError) as ex:
        _human(f"error: {ex}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
