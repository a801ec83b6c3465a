"""Command-line entry points: ``ere solve | verify | convergence``."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io, oracle
from .core import fro, refine
from .errors import EreError, MaxItersExceeded, ParseError, ValidationError
from .mollify import MollifierParams, smooth_coefficients
from .picard import SolveOptions, solve

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_MAXITER = 2
EXIT_INVALID = 3
EXIT_INCONCLUSIVE = 4

MIN_CONCLUSIVE_PATHS = 1000
MAX_RELATIVE_STDERR = 0.01
BIAS_PER_STEP = 0.05    # Volterra check allows 3*stderr + BIAS_PER_STEP*dt

log = logging.getLogger("eqriccati")


def _threads(args) -> int | None:
    env = os.environ.get("ERE_THREADS")
    if env:
        return int(env)
    return args.threads


def _load(path, mollify_override=None):
    pf = io.read_problem_file(path)
    params = pf.mollify
    if mollify_override:
        params = MollifierParams(mollify_override)
    spec = smooth_coefficients(pf.spec, params) if params else pf.spec
    return spec, params


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def cmd_solve(args) -> int:
    try:
        spec, params = _load(args.problem, args.mollify)
    except ValidationError as exc:
        _err(f"io.load_problem: {exc}")
        return EXIT_INVALID
    except ParseError as exc:
        _err(f"io.load_problem: {exc}")
        return EXIT_INVALID
    if params:
        print(f"mollified with n_moll={params.n_moll} (bandwidth {params.bandwidth:.6g})")
    opts = SolveOptions(mode=args.mode, tol_theta=args.tol, max_iters=args.max_iters)
    try:
        sol = solve(spec, opts)
    except MaxItersExceeded as exc:
        for k, r in enumerate(exc.residuals, 1):
            print(f"iter {k:4d}  residual {r:.6e}")
        _err(f"picard.solve_{args.mode}: {exc}")
        return EXIT_MAXITER
    except EreError as exc:
        _err(f"picard.solve_{args.mode}: {exc}")
        return EXIT_FAIL
    rep = sol.report
    for k, r in enumerate(rep.residuals, 1):
        print(f"iter {k:4d}  residual {r:.6e}")
    for w in rep.windows:
        print(f"window [{w.start:.6g}, {w.end:.6g}]  iters {w.iters}  "
              f"contraction {w.factor:.4g}  attempts {w.attempts}")
    print(f"apriori bound {rep.apriori_bound:.10g}  margin {rep.apriori_margin:.6g}")
    print(f"theta bound   {rep.theta_bound:.10g}  margin {rep.theta_margin:.6g}")
    print(f"min eigenvalue of P {rep.psd_min_eig:.6g}; iterates in trust region: {rep.in_delta0}")
    io.write_results(sol, args.out, full_dump=args.full_dump)
    print(f"wrote results to {args.out}")
    print(f"wall time {rep.wall_time:.3f} s", file=sys.stderr)
    return EXIT_OK


def _select_nodes(spec_text: str, N: int) -> list[int]:
    if spec_text.startswith("every:"):
        k = int(spec_text.split(":", 1)[1])
        if k < 1:
            raise ValueError("every:<k> needs k >= 1")
        return list(range(0, N + 1, k))
    nodes = sorted({int(x) for x in spec_text.split(",")})
    if nodes[0] < 0 or nodes[-1] > N:
        raise ValueError(f"nodes must lie in [0, {N}]")
    return nodes


def _snap_eps(eps, dt):
    """Round each spike width to a positive multiple of dt, dropping duplicates."""
    out = []
    for e in eps:
        if e <= 0:
            raise ValueError(f"eps must be positive, got {e}")
        k = max(1, round(e / dt))
        if abs(k * dt - e) > 1e-12 * max(1.0, e):
            print(f"note: eps {e:g} rounded to {k * dt:g} (grid step {dt:g})", file=sys.stderr)
        if not out or k * dt < out[-1]:
            out.append(k * dt)
    return out


def _vector(text, size, default):
    if text is None:
        return np.full(size, default)
    v = np.array([float(x) for x in text.split(",")])
    if v.size != size:
        raise ValueError(f"expected {size} comma-separated numbers, got {v.size}")
    return v


def cmd_verify(args) -> int:
    try:
        spec, _ = _load(args.problem, args.mollify)
        theta, diag, _ = io.read_results(args.solution)
    except (ValidationError, ParseError) as exc:
        _err(f"io: {exc}")
        return EXIT_INVALID
    if theta.gains.shape != (spec.N + 1, spec.m, spec.n):
        _err("solution does not match the problem dimensions")
        return EXIT_INVALID
    try:
        nodes = _select_nodes(args.nodes, spec.N)
        eps = _snap_eps([float(e) for e in args.eps.split(",")], spec.grid.dt)
        x = _vector(args.x, spec.n, 1.0)
        u0 = _vector(args.u0, spec.m, 0.0)
        cfg = oracle.McConfig(paths=args.paths, substeps=args.substeps, seed=args.seed,
                              antithetic=not args.no_antithetic,
                              extrapolate=not args.no_extrapolate, threads=_threads(args))
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    allowance = BIAS_PER_STEP * spec.grid.dt
    ok, noisy = True, args.paths < MIN_CONCLUSIVE_PATHS
    print(f"Volterra check: {cfg.paths} paths, substeps {cfg.substeps}, seed {cfg.seed}, "
          f"bias allowance {allowance:.3g}")
    for i in nodes:
        try:
            est = oracle.mc_diagonal(spec, theta, i, cfg)
        except EreError as exc:
            _err(f"oracle.mc_diagonal at node {i}: {exc}")
            return EXIT_FAIL
        claimed = diag.values[i]
        diff = np.abs(est.mean - claimed)
        z = diff / (est.stderr + allowance / 3.0)
        zmax = float(np.max(z))
        scale = max(1.0, float(fro(claimed)))
        if float(np.max(est.stderr)) > MAX_RELATIVE_STDERR * scale:
            noisy = True
        ok &= zmax <= 3.0
        print(f"node {i:5d}  solver {float(fro(claimed)):.8g}  mc {float(fro(est.mean)):.8g}  "
              f"max|diff| {float(np.max(diff)):.3e}  stderr {float(np.max(est.stderr)):.3e}  "
              f"z {zmax:.3f}")
    try:
        quotients = oracle.equilibrium_test(spec, theta, 0, x, u0, eps, cfg)
    except (EreError, ValueError) as exc:
        _err(f"oracle.equilibrium_test: {exc}")
        return EXIT_FAIL
    print(f"equilibrium test at t=0, x={x.tolist()}, u0={u0.tolist()}")
    for q in quotients:
        passed = q.value >= -3.0 * q.stderr
        ok &= passed
        print(f"eps {q.eps:<8.4g} quotient {q.value:.8g}  stderr {q.stderr:.3e}  "
              f"{'ok' if passed else 'NEGATIVE'}")
    if noisy:
        print(f"warning: Monte Carlo stderr too large to be conclusive (use >= "
              f"{MIN_CONCLUSIVE_PATHS} paths)", file=sys.stderr)
        print("verdict: INCONCLUSIVE")
        return EXIT_INCONCLUSIVE
    print(f"verdict: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _write_study(out, header, rows):
    if not out:
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    with (path / "convergence.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_convergence(args) -> int:
    if args.levels < 2:
        _err("convergence study: --levels must be >= 2")
        return EXIT_INVALID
    try:
        pf = io.read_problem_file(args.problem)
    except (ValidationError, ParseError) as exc:
        _err(f"io.load_problem: {exc}")
        return EXIT_INVALID
    opts = SolveOptions(mode=args.mode, tol_theta=args.tol, max_iters=args.max_iters)
    try:
        if args.study == "grid":
            return _grid_study(pf, opts, args)
        return _mollifier_study(pf, opts, args)
    except MaxItersExceeded as exc:
        _err(f"picard.solve: {exc}")
        return EXIT_MAXITER
    except EreError as exc:
        _err(str(exc))
        return EXIT_FAIL


def _grid_study(pf, opts, args) -> int:
    base = smooth_coefficients(pf.spec, pf.mollify) if pf.mollify else pf.spec
    diags = []
    for k in range(args.levels + 1):
        spec = refine(base, 2 ** k)
        diags.append(solve(spec, opts).diagonal.values[:: 2 ** k])
        print(f"N = {spec.N:6d} solved")
    errors = [float(np.max(fro(a - b))) for a, b in zip(diags, diags[1:])]
    orders = [math.log2(e0 / e1) if e1 > 0 and e0 > 0 else math.inf
              for e0, e1 in zip(errors, errors[1:])]
    rows = []
    for k, e in enumerate(errors):
        o = orders[k - 1] if k >= 1 else math.nan
        rows.append([base.N * 2 ** k, io.fmt(e), io.fmt(o)])
        print(f"N = {base.N * 2 ** k:6d} -> {base.N * 2 ** (k + 1):6d}  sup diff {e:.6e}"
              + (f"  observed order {o:.4f}" if k >= 1 else ""))
    _write_study(args.out, ["N", "sup_diff", "observed_order"], rows)
    observed = min(orders) if orders else math.nan
    print(f"observed order {observed:.4f}")
    if args.min_order is not None and not observed >= args.min_order:
        print(f"observed order below required {args.min_order}")
        return EXIT_FAIL
    return EXIT_OK


def _mollifier_study(pf, opts, args) -> int:
    quad = pf.mollify.quad_points if pf.mollify else 64
    diags, levels = [], []
    for k in range(args.levels):
        n_moll = args.n_moll_base * 2 ** k
        spec = smooth_coefficients(pf.spec, MollifierParams(n_moll, quad))
        diags.append(solve(spec, opts).diagonal)
        levels.append(n_moll)
        print(f"n_moll = {n_moll:5d} solved")
    dists = [a.sup_distance(b) for a, b in zip(diags, diags[1:])]
    rows = []
    for (n0, n1), d in zip(zip(levels, levels[1:]), dists):
        rows.append([n0, n1, io.fmt(d)])
        print(f"n_moll {n0:5d} -> {n1:5d}  sup distance {d:.6e}")
    _write_study(args.out, ["n_moll", "n_moll_next", "sup_distance"], rows)
    decreasing = all(b < a for a, b in zip(dists, dists[1:]))
    print(f"distances strictly decreasing: {decreasing}")
    return EXIT_OK if decreasing else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ere", description="Equilibrium Riccati solver "
                                "for time-inconsistent stochastic LQ problems")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for Monte Carlo sampling (default: all cores; "
                   "env ERE_THREADS wins)")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--mode", choices=["global", "windowed"], default="global")
        sp.add_argument("--tol", type=float, default=1e-10)
        sp.add_argument("--max-iters", type=int, default=100)

    s = sub.add_parser("solve", help="solve a problem file and write a result bundle")
    s.add_argument("--problem", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--full-dump", action="store_true")
    s.add_argument("--mollify", type=int, default=None, metavar="N_MOLL",
                   help="mollify coefficients and weights before solving")
    solver_flags(s)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="Monte Carlo check of a result bundle")
    v.add_argument("--problem", required=True)
    v.add_argument("--solution", required=True)
    v.add_argument("--paths", type=int, default=10_000)
    v.add_argument("--substeps", type=int, default=4)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--eps", default="0.2,0.1,0.05")
    v.add_argument("--nodes", default=None, help="every:<k> or a comma list (default: 0 and N/2)")
    v.add_argument("--x", default=None, help="initial state for the equilibrium test")
    v.add_argument("--u0", default=None, help="deviating control (default 0)")
    v.add_argument("--mollify", type=int, default=None, metavar="N_MOLL")
    v.add_argument("--no-antithetic", action="store_true")
    v.add_argument("--no-extrapolate", action="store_true")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("convergence", help="grid or mollifier convergence study")
    c.add_argument("--problem", required=True)
    c.add_argument("--study", choices=["grid", "mollifier"], required=True)
    c.add_argument("--levels", type=int, default=2)
    c.add_argument("--n-moll-base", type=int, default=8)
    c.add_argument("--min-order", type=float, default=None)
    c.add_argument("--out", default=None)
    solver_flags(c)
    c.set_defaults(func=cmd_convergence)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify" and args.nodes is None:
        args.nodes = "__default__"
    if getattr(args, "nodes", None) == "__default__":
        try:
            N = io.read_problem_file(args.problem, validate=False).spec.N
        except EreError as exc:
            _err(str(exc))
            return EXIT_INVALID
        args.nodes = f"0,{N // 2}"
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
