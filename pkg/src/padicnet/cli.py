"""Command-line front end.

Exit codes: 0 on success, 2 when ``solve`` lands outside the contraction
regime or does not converge, 1 on usage, input or numerical errors.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import _parallel
from . import io as pio
from .errors import DomainError, PadicNetError
from .prior import Priors, mc_validate
from .recast import LayeredNet, recast, verify_equivalence
from .solver import NetworkParams, self_coupling_kernel, solve
from .toy import (
    ToyParams,
    check_partial_order,
    edge_detect,
    enumerate_states,
    hasse_edges,
    lattice_report,
    laplacian_kernel,
    level_for_pixels,
    minimal_elements,
)
from .tree import TreeFunction, TreeKernel, l2_norm


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _function(obj, p: int, level: int | None = None) -> TreeFunction:
    """A function from either ``{"p", "level", "coeffs"}`` or a bare list."""
    if isinstance(obj, dict):
        return TreeFunction.from_dict(obj)
    c = np.asarray(obj, dtype=float).reshape(-1)
    if level is None:
        level = round(math.log(c.size, p)) if c.size > 1 else 0
    return TreeFunction(p, level, c)


def _emit(obj) -> None:
    sys.stdout.write(pio.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    params = NetworkParams.from_dict(pio.read_json(args.network))
    x = h0 = None
    if args.input:
        inp = pio.read_json(args.input)
        if inp.get("x") is not None:
            x = _function(inp["x"], params.p)
        if inp.get("h") is not None:
            h0 = _function(inp["h"], params.p)
    rep = solve(params, x, tol=args.tol, max_iter=args.max_iter, h0=h0)
    if args.state_csv:
        rows = zip(range(rep.state.size), rep.state.coeffs, rep.output.coeffs)
        pio.write_csv(args.state_csv, ["index", "state", "output"], rows)
    if args.report:
        pio.write_json(args.report, rep.to_dict())
    _emit(rep.summary())
    return 0 if rep.stable and rep.converged else 2


def cmd_recast(args) -> int:
    net = LayeredNet.from_dict(pio.read_json(args.network))
    res = recast(net, args.p)
    rng = np.random.default_rng(args.seed)
    probes = [rng.normal(size=net.widths[0]) for _ in range(args.probes)]
    rep = verify_equivalence(net, res, probes)
    if args.out_network:
        pio.write_json(args.out_network, res.params.to_dict())
    if args.out_map:
        pio.write_json(args.out_map, res.neuron_map.to_dict())
    summary = {"p": res.params.p, "level": res.params.level, "probes": args.probes}
    summary.update(rep.to_dict())
    _emit(summary)
    return 0


def cmd_edges(args) -> int:
    img = pio.read_pgm(args.image)
    if args.a > 1:
        raise DomainError(f"a={args.a} > 1 has many states; use the 'states' subcommand")
    h, w = img.shape
    level = args.level if args.level is not None else level_for_pixels(args.p, img.size)
    if args.kernel == "laplacian":
        kern = laplacian_kernel(args.p, level, w, args.gain)
    else:
        kern = _function(pio.read_json(args.kernel), args.p)
    xi = TreeFunction.constant(args.p, level, args.xi)
    params = ToyParams(args.p, level, args.a, W_in=kern, xi=xi)
    out = edge_detect(img, params)
    pio.write_pgm(args.output, out, binary=not args.ascii)
    _emit({"width": w, "height": h, "p": args.p, "level": level, "a": args.a,
           "black": int(np.sum(out == 0)), "white": int(np.sum(out == 255))})
    return 0


def _label_char(v: int) -> str:
    return {-1: "-", 0: "0", 1: "+"}[int(v)]


def cmd_states(args) -> int:
    if args.drive_file:
        b = _function(pio.read_json(args.drive_file), args.p, args.level)
    else:
        b = TreeFunction.constant(args.p, args.level, args.drive)
    params = ToyParams(b.p, b.level, args.a, xi=b)
    poset = enumerate_states(params, b, cap=args.cap, seed=args.seed)
    summary = {"a": args.a, "p": b.p, "level": b.level, "count": poset.count,
               "returned": poset.n_states, "sampled": poset.sampled,
               "bistable": int(poset.bistable_indices().size)}
    if not poset.sampled:
        mins = minimal_elements(poset)
        chk = check_partial_order(poset.leq_matrix())
        summary["minimal"] = int(mins.size)
        summary["minimal_equals_bistable"] = bool(np.array_equal(mins, poset.bistable_indices()))
        summary["partial_order"] = chk.ok
        lat = lattice_report(poset)
        if lat is not None:
            summary["pairs"] = lat.pairs
            summary["pairs_with_meet"] = lat.pairs_with_meet
            summary["pairs_with_join"] = lat.pairs_with_join
        if args.dot:
            codes = ["".join(_label_char(v) for v in row) for row in poset.labels]
            Path(args.dot).write_text(pio.dot_digraph("states", codes, hasse_edges(poset)))
    if args.csv:
        rows = ((s, i, _label_char(poset.labels[s, i]), poset.values[s, i])
                for s in range(poset.n_states) for i in range(poset.labels.shape[1]))
        pio.write_csv(args.csv, ["state", "index", "label", "value"], rows)
    _emit(summary)
    return 0


def _sweep_params(base: NetworkParams, param: str, v: float) -> NetworkParams:
    if param == "a":
        return base.replace(W=self_coupling_kernel(base.p, base.level, v))
    if param == "W_scale":
        return base.replace(W=base.W.scaled(v))
    if param == "xi_scale":
        return base.replace(xi=base.xi * v)
    raise DomainError(f"unknown sweep parameter {param!r}")


def cmd_sweep(args) -> int:
    base = NetworkParams.from_dict(pio.read_json(args.network))
    x = None
    if args.input:
        inp = pio.read_json(args.input)
        if inp.get("x") is not None:
            x = _function(inp["x"], base.p)
    if args.steps < 1:
        raise DomainError("steps must be >= 1")
    values = [args.start] if args.start == args.stop else np.linspace(args.start, args.stop, args.steps)
    rows = []
    for v in values:
        rep = solve(_sweep_params(base, args.param, float(v)), x, tol=args.tol, max_iter=args.max_iter)
        rows.append([float(v), rep.contraction_q, rep.stable, rep.converged,
                     rep.iterations, rep.residual, l2_norm(rep.state)])
    header = ["param", "q", "stable", "converged", "iterations", "residual", "state_norm"]
    if args.out:
        pio.write_csv(args.out, header, rows)
        first = next((r[0] for r in rows if not r[2]), None)
        _emit({"param": args.param, "rows": len(rows), "first_unstable": first})
    else:
        sys.stdout.write(pio.csv_text(header, rows))
    return 0


def cmd_prior(args) -> int:
    cfg = pio.read_json(args.priors)
    priors = Priors.from_dict(cfg)
    inp = pio.read_json(args.inputs)
    p, lv = priors.p, priors.level
    h = _function(inp["h"], p) if inp.get("h") is not None else TreeFunction.zeros(p, lv)
    x = _function(inp["x"], p) if inp.get("x") is not None else None
    rep = mc_validate(priors, h, x, cfg.get("phi", "tanh"), cfg.get("varphi", "identity"),
                      N=args.N, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pio.write_matrix_csv(out / "hidden.csv", rep.analytic.hidden)
    pio.write_matrix_csv(out / "output.csv", rep.analytic.output)
    pio.write_matrix_csv(out / "empirical_hidden.csv", rep.empirical_hidden)
    pio.write_matrix_csv(out / "empirical_output.csv", rep.empirical_output)
    pio.write_json(out / "report.json", rep.summary())
    _emit(rep.summary())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads (results do not depend on it)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")

    ap = _Parser(prog="padicnet", parents=[common],
                 description="p-adic deep networks: states, recasting, toy model, priors")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", parents=[common], help="fixed-point state of a network")
    s.add_argument("network", help="network descriptor JSON")
    s.add_argument("--input", help="JSON with optional 'x' (input) and 'h' (initial state)")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=10_000)
    s.add_argument("--state-csv")
    s.add_argument("--report", help="full report JSON including state and output")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("recast", parents=[common], help="layered net to p-adic network")
    s.add_argument("network", help="layered network JSON")
    s.add_argument("--p", type=int, default=None, help="prime (default: smallest admissible)")
    s.add_argument("--probes", type=int, default=8, help="random inputs for the check")
    s.add_argument("--out-network")
    s.add_argument("--out-map")
    s.set_defaults(func=cmd_recast)

    s = sub.add_parser("edges", parents=[common], help="edge detection on a PGM image")
    s.add_argument("image")
    s.add_argument("output")
    s.add_argument("--a", type=float, default=0.5)
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--level", type=int, default=None, help="default: smallest fitting level")
    s.add_argument("--kernel", default="laplacian", help="'laplacian' or a function JSON")
    s.add_argument("--gain", type=float, default=1.0)
    s.add_argument("--xi", type=float, default=0.0)
    s.add_argument("--ascii", action="store_true", help="write P2 instead of P5")
    s.set_defaults(func=cmd_edges)

    s = sub.add_parser("states", parents=[common], help="enumerate toy states for a > 1")
    s.add_argument("--a", type=float, required=True)
    s.add_argument("--drive", type=float, default=0.0, help="constant drive b")
    s.add_argument("--drive-file", help="drive as function JSON (overrides --drive)")
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--level", type=int, default=1)
    s.add_argument("--cap", type=int, default=10**6)
    s.add_argument("--csv")
    s.add_argument("--dot")
    s.set_defaults(func=cmd_states)

    s = sub.add_parser("sweep", parents=[common], help="solve over a parameter range")
    s.add_argument("network", help="network descriptor JSON used as template")
    s.add_argument("--param", choices=["a", "W_scale", "xi_scale"], default="a")
    s.add_argument("--from", dest="start", type=float, required=True)
    s.add_argument("--to", dest="stop", type=float, required=True)
    s.add_argument("--steps", type=int, default=101)
    s.add_argument("--input")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=2_000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("prior", parents=[common], help="prior covariances and MC check")
    s.add_argument("priors", help="prior JSON")
    s.add_argument("inputs", help="JSON with 'h' and optional 'x'")
    s.add_argument("--N", type=int, default=100_000)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_prior)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.threads = getattr(args, "threads", 1)
    args.seed = getattr(args, "seed", 0)
    try:
        _parallel.set_threads(args.threads)
        return args.func(args)
    except (PadicNetError, ValueError, OSError, KeyError) as e:
        msg = f"missing field {e.args[0]!r}" if isinstance(e, KeyError) else str(e)
        sys.stderr.write(f"padicnet {args.command}: error: {msg}\n")
        return 1
    finally:
        _parallel.set_threads(1)


if __name__ == "__main__":
    sys.exit(main())
