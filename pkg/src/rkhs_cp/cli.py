"""Command-line entry point: ``rkhs-cp {gen,solve,verify,bench}``.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import traceback
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .errors import SolverSuiteError, ValidationError
from .formats import fmt
from .kernel import FAMILIES, KernelSpec
from .operators import (
    build_dense_hessian,
    build_rhs,
    build_slice_grams,
    mvp_dense,
    mvp_onfly,
    mvp_preaggregated,
    observation_gradients,
)
from .preconditioners import build_block_jacobi, build_jacobi_diag
from .problemgen import GenSpec, generate, hand_instance, read_instance, write_instance
from .solvers import MVP_CHOICES, PRECOND_CHOICES, SOLVERS, SolveConfig, run_solver, solve_dense
from .tensor_index import unvec

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_NOCONV = 0, 1, 2, 3
REPORT_COLUMNS = (
    "solver",
    "n",
    "r",
    "q",
    "lambda",
    "iterations",
    "converged",
    "final_residual",
    "setup_flops",
    "iter_flops_total",
    "setup_s",
    "solve_s",
)
ITERATIVE = tuple(s for s in SOLVERS if s != "dense")


class UsageError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _add_gen_flags(p: argparse.ArgumentParser, dims="8,6,5", q=None, lam=0.1):
    p.add_argument("--dims", type=_int_list, default=_int_list(dims))
    p.add_argument("--mode", type=int, default=0)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--q", type=int, default=q, help="observation count (default 10*n*r)")
    p.add_argument("--kernel", choices=FAMILIES, default="rbf")
    p.add_argument("--lengthscale", type=float, default=0.3)
    p.add_argument("--jitter", type=float, default=1e-10)
    p.add_argument("--lambda", dest="lam", type=float, default=lam)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=42)


def _gen_spec(args) -> GenSpec:
    try:
        return GenSpec(
            dims=args.dims,
            mode=args.mode,
            rank=args.rank,
            q=args.q,
            kernel=KernelSpec(args.kernel, args.lengthscale, args.jitter),
            lam=args.lam,
            noise_sigma=args.noise,
            seed=args.seed,
        )
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rkhs-cp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance directory")
    _add_gen_flags(g)
    g.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("solve", help="solve an instance directory")
    s.add_argument("--in", dest="indir", type=Path, required=True)
    s.add_argument("--solver", choices=tuple(SOLVERS), required=True)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iters", type=int, default=None)
    s.add_argument("--refresh", type=int, default=50)
    s.add_argument("--report", type=Path, default=None)
    s.add_argument("--mvp", choices=MVP_CHOICES, default=None, help="expert override of the MVP pairing")
    s.add_argument("--precond", choices=PRECOND_CHOICES, default=None, help="expert override of the preconditioner")

    v = sub.add_parser("verify", help="run operator/preconditioner/solver equivalence checks")
    _add_gen_flags(v, q=60)
    v.add_argument("--instances", type=int, default=5)
    v.add_argument("--quick", action="store_true", help="only the 1x1 hand instance")
    v.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)

    b = sub.add_parser("bench", help="flop-count scaling sweep, CSV output")
    _add_gen_flags(b, dims="32,10,10", q=500)
    b.add_argument("--sweep", choices=("q", "n", "r"), default="q")
    b.add_argument("--values", type=_int_list, default=(500, 1000, 2000))
    b.add_argument("--configs", type=_str_list, default=ITERATIVE)
    b.add_argument("--iters", type=int, default=10)
    b.add_argument("--out", type=Path, default=None)
    return parser


def cmd_gen(args) -> int:
    spec = _gen_spec(args)
    p, W_true = generate(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    for path in write_instance(p, W_true, args.out):
        print(path)
    return EXIT_OK


def _report_row(rep, p) -> list:
    return [
        rep.solver,
        p.n,
        p.r,
        p.q,
        fmt(p.lam),
        rep.iterations,
        int(rep.converged),
        fmt(rep.final_residual),
        rep.setup_flops,
        rep.iter_flops,
        fmt(rep.wall_time.get("setup", 0.0)),
        fmt(rep.wall_time.get("solve", 0.0)),
    ]


def cmd_solve(args) -> int:
    if args.indir is None or not args.indir.is_dir():
        raise UsageError(f"instance directory not found: {args.indir}")
    if args.solver not in ("jacobi-onfly", "block-preagg") and (args.mvp or args.precond):
        raise UsageError("--mvp/--precond only apply to jacobi-onfly and block-preagg")
    try:
        cfg = SolveConfig(tol=args.tol, max_iters=args.max_iters, refresh_interval=args.refresh)
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc
    p, _ = read_instance(args.indir)
    rep = run_solver(p, args.solver, cfg, mvp=args.mvp, precond=args.precond)
    row = _report_row(rep, p)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerow(row)
    if args.report is not None:
        new = not args.report.exists() or args.report.stat().st_size == 0
        with open(args.report, "a", newline="") as fh:
            fw = csv.writer(fh, lineterminator="\n")
            if new:
                fw.writerow(REPORT_COLUMNS)
            fw.writerow(row)
    return EXIT_OK if rep.converged else EXIT_NOCONV


def _rel(a, b) -> float:
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


def _verify_checks(args):
    """Yield ``(name, max_error, tolerance)`` over generated instances."""
    base = _gen_spec(args)
    rng = np.random.default_rng(args.seed)
    worst: dict[str, tuple[float, float]] = {}

    def record(name, err, tol):
        prev = worst.get(name, (0.0, tol))[0]
        worst[name] = (max(prev, err), tol)

    for t in range(args.instances):
        spec = GenSpec(base.dims, base.mode, base.rank, base.q, base.kernel, base.lam, base.noise_sigma, base.seed + t)
        p, _ = generate(spec)
        H = build_dense_hessian(p)
        E = build_slice_grams(p.obs)
        V = rng.standard_normal((p.n, p.r))
        V2 = rng.standard_normal((p.n, p.r))
        onfly = mvp_onfly(p, V)
        if args.perturb:
            onfly = onfly + args.perturb * np.linalg.norm(onfly) * rng.standard_normal(onfly.shape)
        dense = mvp_dense(H, V)
        pre = mvp_preaggregated(p, E, V)
        record("mvp onfly vs dense", _rel(onfly, dense), 1e-12)
        record("mvp preaggregated vs dense", _rel(pre, dense), 1e-12)
        record("mvp onfly vs preaggregated", _rel(onfly, pre), 1e-12)
        for label, f in (("onfly", lambda X: mvp_onfly(p, X)), ("preaggregated", lambda X: mvp_preaggregated(p, E, X))):
            a, b = np.vdot(f(V), V2), np.vdot(V, f(V2))
            record(f"symmetry {label}", abs(a - b) / max(abs(a), abs(b), 1e-300), 1e-12)
        D = build_jacobi_diag(p).D
        record("jacobi diagonal exact", _rel(D, unvec(np.diag(H), p.n)), 1e-12)
        Bj = build_block_jacobi(p, E)
        blk = max(_rel(Bj.M[i], H[np.ix_(range(i, p.n * p.r, p.n), range(i, p.n * p.r, p.n))]) for i in range(p.n))
        record("block-jacobi blocks exact", blk, 1e-12)
        G = observation_gradients(p)
        record("rhs C = K B", _rel(build_rhs(p), unvec(G.T @ p.obs.values, p.n)), 1e-13)
        Wd = solve_dense(p).W
        # forward error is about tol * cond(H); 1e-10 leaves too little margin on stiff draws
        cfg = SolveConfig(tol=1e-12)
        for name in ITERATIVE:
            rep = run_solver(p, name, cfg)
            record(f"solver {name} vs dense", _rel(rep.W, Wd) if rep.converged else np.inf, 1e-6)
    return [(name, err, tol) for name, (err, tol) in worst.items()]


def cmd_verify(args) -> int:
    if args.quick:
        p = hand_instance()
        checks = []
        for name in SOLVERS:
            W = run_solver(p, name, SolveConfig()).W
            checks.append((f"hand instance {name} W = 3/19", abs(float(W[0, 0]) - 3 / 19), 1e-15))
    else:
        checks = _verify_checks(args)
    ok = True
    for name, err, tol in checks:
        passed = err <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: max error {err:.3e} (tol {tol:.0e})")
    return EXIT_OK if ok else EXIT_INTERNAL


def cmd_bench(args) -> int:
    from .diagnostics import sweep

    unknown = [c for c in args.configs if c not in ITERATIVE]
    if unknown:
        raise UsageError(f"unknown config(s) {unknown}; valid: {', '.join(ITERATIVE)}")
    if args.iters < 1:
        raise UsageError("--iters must be positive")
    base = _gen_spec(args)
    try:
        report = sweep(base, args.sweep, args.values, args.configs, iters=args.iters)
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc
    text = report.to_csv()
    if args.out is not None:
        args.out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "verify": cmd_verify, "bench": cmd_bench}


def _thread_limit():
    raw = os.environ.get("SOLVER_THREADS")
    if raw is None:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"SOLVER_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rkhs-cp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverSuiteError, OSError) as exc:
        print(f"rkhs-cp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
