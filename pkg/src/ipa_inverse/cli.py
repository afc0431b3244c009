"""Command-line entry point: ``ipa solve|analyze|oracle|bench``.

Exit codes: 0 success, 1 input error, 2 divergence, 3 condition not
certifiable (only when ``--require-certified`` is given).
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .harness import format_results, load_config, run_experiment
from .hilbert import DimensionError, LinearOperator, read_matrix, read_vector, spectral_norm_sq_estimate, write_vector
from .sets import parse_set
from .solver import ConstantEps, DivergenceError, SolverConfig, solve, write_trace

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_UNCERTIFIED = 0, 1, 2, 3


class InputError(Exception):
    pass


def _operator(path):
    return LinearOperator.dense(read_matrix(path))


def _mu(value, op):
    if value == "auto":
        beta_hat = spectral_norm_sq_estimate(op, iters=200)
        if beta_hat <= 0:
            raise InputError("operator is zero; pass --mu explicitly")
        return 0.99 / beta_hat
    try:
        mu = float(value)
    except ValueError:
        raise InputError(f"--mu must be a number or 'auto', got {value!r}") from None
    if not mu > 0:
        raise InputError("--mu must be positive")
    return mu


def _emit(rows, fmt, out=None):
    out = out or sys.stdout
    if fmt == "text":
        width = max(len(k) for k, _ in rows)
        for k, v in rows:
            out.write(f"{k:<{width}}  {_cell(v)}\n")
    else:
        w = csv.writer(out, lineterminator="\n")
        for k, v in rows:
            w.writerow([k, _cell(v)])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _estimate(op, cset, mode, trials, seed):
    if mode == "exact":
        return analysis.exact_bilipschitz(op, cset)
    return analysis.mc_bilipschitz(op, cset, trials, seed=seed)


def cmd_solve(args):
    op = _operator(args.operator)
    g = read_vector(args.measurement)
    if g.size != op.codomain_dim:
        raise InputError(f"{args.measurement}: length {g.size}, operator expects {op.codomain_dim}")
    cset = parse_set(args.set)
    mu = _mu(args.mu, op)
    reference = read_vector(args.reference) if args.reference else None
    rows = [("mu", mu)]
    if args.require_certified:
        est = _estimate(op, cset, args.mode, args.trials, args.seed)
        ok, margin = analysis.condition_check(est, mu)
        rows += [("alpha", est.alpha), ("beta", est.beta), ("condition_pass", ok), ("condition_margin", margin)]
        if not ok:
            _emit(rows, args.format)
            print("condition beta <= 1/mu < 1.5 alpha not certifiable", file=sys.stderr)
            return EXIT_UNCERTIFIED
    cfg = SolverConfig(mu, ConstantEps(args.eps), args.max_iter, args.tol, args.stagnation_tol)
    trace = solve(g, op, cset, cfg, reference=reference)
    if args.trace:
        write_trace(args.trace, trace)
    if args.out:
        write_vector(args.out, trace.final_iterate)
    rows += [("iters_used", trace.iters_used), ("final_residual", trace.records[-1].residual_norm),
             ("termination", trace.termination_reason)]
    if reference is not None:
        rows.append(("dist_to_reference", trace.records[-1].dist_to_reference))
    _emit(rows, args.format)
    return EXIT_OK


def cmd_analyze(args):
    op = _operator(args.operator)
    cset = parse_set(args.set)
    est = _estimate(op, cset, args.mode, args.trials, args.seed)
    mu = _mu(args.mu, op)
    ok, margin = analysis.condition_check(est, mu)
    rows = [("method", est.method), ("trials_or_supports", est.trials_or_supports),
            ("alpha", est.alpha), ("beta", est.beta), ("bilipschitz", est.is_bilipschitz),
            ("mu", mu), ("condition_pass", ok), ("condition_margin", margin)]
    if ok:
        rows += [("contraction", analysis.contraction_factor(est.alpha, mu)),
                 ("c", analysis.c_constant(est.alpha, mu))]
        denom = 3 * est.alpha - 2 * mu
        if mu != 1.0:
            rows.append(("c_statement", 4 / denom if denom > 0 else None))
    _emit(rows, args.format)
    if args.require_certified and not ok:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_oracle(args):
    op = _operator(args.operator)
    g = read_vector(args.measurement)
    if g.size != op.codomain_dim:
        raise InputError(f"{args.measurement}: length {g.size}, operator expects {op.codomain_dim}")
    res = analysis.brute_force_fopt(g, op, parse_set(args.set))
    if args.out:
        write_vector(args.out, res.f_opt)
    key = res.support_or_index
    key = " ".join(map(str, key)) if isinstance(key, tuple) else key
    _emit([("residual", res.residual), ("support_or_index", key), ("candidates", res.candidates)], args.format)
    return EXIT_OK


def cmd_bench(args):
    config = load_config(args.config)
    out = args.out or config.output_path
    if not out:
        raise InputError("no output path: pass --out or set output in the config")
    text = format_results(run_experiment(config, threads=args.threads))
    Path(out).write_text(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ipa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--format", choices=("csv", "text"), default="csv", help="report style on stdout")

    s = sub.add_parser("solve", help="run the iterative projection algorithm")
    s.add_argument("--operator", required=True)
    s.add_argument("--measurement", required=True)
    s.add_argument("--set", required=True, help="ksparse:K | uos:PATH | lowrank:RxC:r")
    s.add_argument("--mu", default="auto")
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--tol", type=float, default=0.0, help="residual tolerance")
    s.add_argument("--stagnation-tol", type=float, default=0.0)
    s.add_argument("--trace")
    s.add_argument("--reference")
    s.add_argument("--out", help="write the final iterate here")
    s.add_argument("--require-certified", action="store_true")
    s.add_argument("--mode", choices=("exact", "mc"), default="exact")
    s.add_argument("--trials", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    common(s)
    s.set_defaults(func=cmd_solve)

    a = sub.add_parser("analyze", help="bi-Lipschitz constants and the convergence condition")
    a.add_argument("--operator", required=True)
    a.add_argument("--set", required=True)
    a.add_argument("--mode", choices=("exact", "mc"), default="exact")
    a.add_argument("--trials", type=int, default=2000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--mu", default="auto")
    a.add_argument("--require-certified", action="store_true")
    common(a)
    a.set_defaults(func=cmd_analyze)

    o = sub.add_parser("oracle", help="exhaustive optimal estimate")
    o.add_argument("--operator", required=True)
    o.add_argument("--measurement", required=True)
    o.add_argument("--set", required=True)
    o.add_argument("--out")
    common(o)
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bench", help="batch experiment from a config file")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.add_argument("--threads", type=int, default=1)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InputError, DimensionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
