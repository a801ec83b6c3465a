"""Picard iteration on feedback strategies.

``gamma_map`` sends a strategy to the feedback gain built from the diagonal
of its frozen Lyapunov sweep.  ``solve_global`` iterates it on the whole
horizon; ``solve_windowed`` grows the solved region backward from ``T`` one
block at a time, shrinking the block whenever the observed contraction
factor is too weak.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import (DiagonalField, ProblemSpec, Strategy, TimeGrid, TwoTimeField,
                   apriori_bound, fro, min_eig, theta_bound)
from .errors import InsufficientHistory, MaxItersExceeded, NotPositiveDefinite, WindowCollapse
from .lyapunov import freeze, integrate_rows, sweep

log = logging.getLogger(__name__)

GLOBAL = "global"
WINDOWED = "windowed"


@dataclass(frozen=True)
class SolveOptions:
    mode: str = GLOBAL
    tol_theta: float = 1e-10
    max_iters: int = 100
    window_init: float | None = None   # default T/8
    window_min: float | None = None    # default T/1024
    contraction_target: float = 0.5
    enforce_delta0: bool = False

    def resolved(self, T: float) -> "SolveOptions":
        """Fill horizon-dependent defaults and clamp the initial window to T."""
        w_init = T / 8 if self.window_init is None else self.window_init
        w_min = T / 1024 if self.window_min is None else self.window_min
        w_init = min(w_init, T)
        opts = SolveOptions(self.mode, self.tol_theta, self.max_iters, w_init, w_min,
                            self.contraction_target, self.enforce_delta0)
        if self.mode not in (GLOBAL, WINDOWED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not opts.tol_theta > 0:
            raise ValueError("tol_theta must be positive")
        if not 0 < w_min <= w_init:
            raise ValueError("need 0 < window_min <= window_init")
        return opts


@dataclass
class WindowRecord:
    start: float
    end: float
    iters: int
    factor: float
    attempts: int = 1


@dataclass
class SolveReport:
    mode: str = GLOBAL
    residuals: list = field(default_factory=list)
    contraction_factors: list = field(default_factory=list)
    apriori_bound: float = math.nan
    apriori_margin: float = math.nan
    theta_bound: float = math.nan
    theta_margin: float = math.nan
    psd_min_eig: float = math.nan
    in_delta0: bool = True
    windows: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "mode": self.mode,
            "iterations": self.iterations,
            "residuals": list(self.residuals),
            "contraction_factors": list(self.contraction_factors),
            "apriori_bound": self.apriori_bound,
            "apriori_margin": self.apriori_margin,
            "theta_bound": self.theta_bound,
            "theta_margin": self.theta_margin,
            "psd_min_eig": self.psd_min_eig,
            "in_delta0": self.in_delta0,
            "windows": [dict(start=w.start, end=w.end, iters=w.iters, factor=w.factor,
                             attempts=w.attempts) for w in self.windows],
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass(frozen=True, eq=False)
class Solution:
    theta: Strategy
    P: TwoTimeField
    diagonal: DiagonalField
    report: SolveReport
    grid: TimeGrid | None = None


def feedback_gain(spec: ProblemSpec, diag: np.ndarray, nodes=None) -> np.ndarray:
    """-[R(t,t) + D'PD]^{-1} [B'P + D'PC] at the given nodes (default: all)."""
    nodes = np.arange(spec.N + 1) if nodes is None else np.asarray(nodes, dtype=int)
    out = np.empty((nodes.size, spec.m, spec.n))
    floor = 0.5 * spec.delta
    for k, i in enumerate(nodes):
        P = diag[k]
        B, C, D = spec.B.values[i], spec.C.values[i], spec.D.values[i]
        M = spec.R.values[i, i] + D.T @ P @ D
        M = 0.5 * (M + M.T)
        lam = float(min_eig(M))
        if lam < floor:
            raise NotPositiveDefinite(
                f"R(t,t) + D'P(t,t)D has min eigenvalue {lam:.6g} < delta/2 at node {i}",
                node=int(i), min_eig=lam)
        out[k] = -cho_solve(cho_factor(M), B.T @ P + D.T @ P @ C)
    return out


def _gamma_on(spec: ProblemSpec, gains: np.ndarray, nodes) -> tuple[np.ndarray, np.ndarray]:
    """New gains and diagonal P(t_i, t_i) for the listed nodes only."""
    rows = integrate_rows(spec, freeze(spec, Strategy(gains)), nodes)
    nodes = sorted(rows)
    diag = np.stack([rows[i][0] for i in nodes])
    return feedback_gain(spec, diag, nodes), diag


def gamma_map(spec: ProblemSpec, theta: Strategy) -> Strategy:
    nodes = range(spec.N + 1)
    new, _ = _gamma_on(spec, theta.gains, nodes)
    return Strategy(new)


def terminal_gain(spec: ProblemSpec) -> np.ndarray:
    """Feedback gain at t = T built from G(T); the Picard starting value."""
    return feedback_gain(spec, spec.G.values[-1:], [spec.N])[0]


def contraction_estimate(report_or_residuals) -> float:
    """Geometric mean of the last min(5, len-1) successive residual ratios."""
    res = getattr(report_or_residuals, "residuals", report_or_residuals)
    res = [float(r) for r in res]
    if len(res) < 3:
        raise InsufficientHistory(f"need at least 3 residuals, got {len(res)}")
    return _geometric_ratio(res)


def _geometric_ratio(res) -> float:
    if len(res) < 2:
        return 0.0
    k = min(5, len(res) - 1)
    ratios = []
    for prev, cur in zip(res[-k - 1:-1], res[-k:]):
        if cur == 0.0:
            return 0.0
        ratios.append(cur / prev)
    return float(np.exp(np.mean(np.log(ratios))))


def _ratios(res) -> list:
    return [cur / prev if prev > 0 else 0.0 for prev, cur in zip(res[:-1], res[1:])]


def _finish(spec, theta, report, opts, theta0, history, t_start) -> Solution:
    P, diag = sweep(spec, theta)
    report.apriori_bound = apriori_bound(spec)
    report.apriori_margin = report.apriori_bound - diag.sup_norm()
    report.theta_bound = theta_bound(spec)
    report.theta_margin = report.theta_bound - theta.sup_norm()
    report.psd_min_eig = float(np.min(min_eig(P.upper())))
    radius = 2.0 * report.theta_bound
    report.in_delta0 = bool(all(np.max(fro(g - theta0)) <= radius for g in history))
    if opts.enforce_delta0 and not report.in_delta0:
        log.warning("Picard iterates left the trust region of radius %.6g", radius)
    report.wall_time = time.perf_counter() - t_start
    return Solution(theta, P, diag, report, spec.grid)


def solve_global(spec: ProblemSpec, opts: SolveOptions | None = None) -> Solution:
    opts = (opts or SolveOptions()).resolved(spec.T)
    t_start = time.perf_counter()
    theta0 = terminal_gain(spec)
    gains = np.array(np.broadcast_to(theta0, (spec.N + 1, spec.m, spec.n)))
    report = SolveReport(mode=GLOBAL)
    history = [gains]
    nodes = range(spec.N + 1)
    for k in range(opts.max_iters):
        new, _ = _gamma_on(spec, gains, nodes)
        res = float(np.max(fro(new - gains)))
        report.residuals.append(res)
        history.append(new)
        gains = new
        log.debug("iteration %d residual %.3e", k + 1, res)
        if res <= opts.tol_theta:
            report.contraction_factors = _ratios(report.residuals)
            return _finish(spec, Strategy(gains), report, opts, theta0, history, t_start)
    raise MaxItersExceeded(f"no convergence after {opts.max_iters} Picard iterations "
                           f"(last residual {report.residuals[-1]:.3e})", report.residuals)


def solve_windowed(spec: ProblemSpec, opts: SolveOptions | None = None) -> Solution:
    opts = (opts or SolveOptions(mode=WINDOWED)).resolved(spec.T)
    t_start = time.perf_counter()
    dt, N, t = spec.grid.dt, spec.N, spec.grid.nodes
    theta0 = terminal_gain(spec)
    gains = np.array(np.broadcast_to(theta0, (N + 1, spec.m, spec.n)))
    report = SolveReport(mode=WINDOWED)
    history = [gains.copy()]
    h = opts.window_init
    solved_from = N + 1          # nodes >= solved_from hold converged gains
    attempts = 0
    while solved_from > 0:
        width = max(1, int(round(h / dt)))
        hi = solved_from - 1     # last unsolved node
        lo = max(0, min(solved_from, N) - width)
        block = np.arange(lo, hi + 1)
        anchor = gains[solved_from] if solved_from <= N else theta0
        trial = gains.copy()
        trial[block] = anchor
        residuals = []
        converged = widen = False
        for _ in range(opts.max_iters):
            new, _ = _gamma_on(spec, trial, block)
            res = float(np.max(fro(new - trial[block])))
            residuals.append(res)
            trial[block] = new
            history.append(trial.copy())
            if res <= opts.tol_theta:
                converged = True
                break
            if len(residuals) >= 3 and _geometric_ratio(residuals) > opts.contraction_target:
                widen = True
                break
        attempts += 1
        if widen:
            h /= 2.0
            log.debug("contraction %.3f on [%g, %g]; halving window to %g",
                      _geometric_ratio(residuals), t[lo], t[min(hi + 1, N)], h)
            if h < opts.window_min:
                raise WindowCollapse(f"window length {h:.3g} fell below window_min "
                                     f"{opts.window_min:.3g} near t = {t[hi]:.6g}")
            continue
        if not converged:
            raise MaxItersExceeded(f"block [{t[lo]:.6g}, {t[min(hi + 1, N)]:.6g}] did not "
                                   f"converge in {opts.max_iters} iterations", residuals)
        report.residuals.extend(residuals)
        report.contraction_factors.extend(_ratios(residuals))
        report.windows.append(WindowRecord(float(t[lo]), float(t[min(hi + 1, N)]),
                                           len(residuals), _geometric_ratio(residuals),
                                           attempts))
        attempts = 0
        gains = trial
        solved_from = lo
    return _finish(spec, Strategy(gains), report, opts, theta0, history, t_start)


def solve(spec: ProblemSpec, opts: SolveOptions | None = None) -> Solution:
    opts = opts or SolveOptions()
    if opts.mode == WINDOWED:
        return solve_windowed(spec, opts)
    return solve_global(spec, opts)
