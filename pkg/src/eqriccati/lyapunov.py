"""Backward Lyapunov sweeps for a frozen feedback strategy.

With the strategy fixed, each first-variable row ``t_i`` of the two-time
field solves the linear matrix ODE

    d/ds P = -(P A_th + A_th' P + C_th' P C_th + Q(t_i, s) + th' R(t_i, s) th),
    P(t_i, T) = G(t_i),

backward from ``s = T`` down to ``s = t_i``.  Rows share every coefficient
except the forcing and terminal value, so they are integrated together as
one batch; each row's arithmetic does not depend on which other rows are in
the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (LINEAR, DiagonalField, MatrixPath, ProblemSpec, Strategy,
                   TwoTimeField, symmetrize)
from .errors import NonFinite, ShapeMismatch


@dataclass(frozen=True, eq=False)
class FrozenCoefficients:
    """Closed-loop drift and diffusion A + B th, C + D th for a fixed th."""

    spec: ProblemSpec
    theta: Strategy
    aTheta: MatrixPath
    cTheta: MatrixPath

    def at_fraction(self, j, frac: float):
        """(A_th, C_th, th) at t_j + frac*dt for interval(s) j."""
        s = self.spec
        th = self.theta.at_fraction(j, frac)
        a = s.A.at_fraction(j, frac) + s.B.at_fraction(j, frac) @ th
        c = s.C.at_fraction(j, frac) + s.D.at_fraction(j, frac) @ th
        return a, c, th


def freeze(spec: ProblemSpec, theta: Strategy) -> FrozenCoefficients:
    g = theta.gains
    if g.shape != (spec.N + 1, spec.m, spec.n):
        raise ShapeMismatch(f"strategy has shape {g.shape}, expected "
                            f"{(spec.N + 1, spec.m, spec.n)}")
    a = spec.A.values + spec.B.values @ g
    c = spec.C.values + spec.D.values @ g
    return FrozenCoefficients(spec, theta, MatrixPath(a, LINEAR), MatrixPath(c, LINEAR))


def _rhs(P, a, c, F):
    return -(P @ a + a.T @ P + c.T @ P @ c + F)


def _row_forcing(spec, theta_frac, rows, j, frac):
    """Q(t_i, s) + th(s)' R(t_i, s) th(s) with both weights linear along the row."""
    Qv, Rv = spec.Q.values, spec.R.values
    if frac == 1.0:
        q, r = Qv[rows, j + 1], Rv[rows, j + 1]
    elif frac == 0.0:
        q, r = Qv[rows, j], Rv[rows, j]
    else:
        q = (1.0 - frac) * Qv[rows, j] + frac * Qv[rows, j + 1]
        r = (1.0 - frac) * Rv[rows, j] + frac * Rv[rows, j + 1]
    return q + theta_frac.T @ r @ theta_frac


def integrate_rows(spec: ProblemSpec, frozen: FrozenCoefficients, rows,
                   substeps: int = 1) -> dict[int, np.ndarray]:
    """Integrate the given rows; returns ``{i: array of P(t_i, s_j), j = i..N}``.

    Classical RK4 with ``substeps`` steps per grid interval; coefficients
    between nodes follow the path interpolation rules and are symmetrized
    after every step.
    """
    N, n = spec.N, spec.n
    rows = np.unique(np.asarray(list(rows), dtype=int))
    if rows.size == 0:
        return {}
    if rows[0] < 0 or rows[-1] > N:
        raise IndexError(f"row indices must lie in [0, {N}]")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = spec.grid.dt / substeps
    out = np.full((rows.size, N + 1, n, n), np.nan)
    P = np.array(spec.G.values[rows])
    out[:, N] = P
    for j in range(N - 1, rows[0] - 1, -1):
        act = int(np.searchsorted(rows, j, side="right"))
        r_act = rows[:act]
        X = P[:act]
        for sub in range(substeps - 1, -1, -1):
            f_hi, f_mid, f_lo = (sub + 1) / substeps, (sub + 0.5) / substeps, sub / substeps
            a_hi, c_hi, th_hi = frozen.at_fraction(j, f_hi)
            a_mid, c_mid, th_mid = frozen.at_fraction(j, f_mid)
            a_lo, c_lo, th_lo = frozen.at_fraction(j, f_lo)
            F_hi = _row_forcing(spec, th_hi, r_act, j, f_hi)
            F_mid = _row_forcing(spec, th_mid, r_act, j, f_mid)
            F_lo = _row_forcing(spec, th_lo, r_act, j, f_lo)
            # stepping from s to s - h
            k1 = _rhs(X, a_hi, c_hi, F_hi)
            k2 = _rhs(X - 0.5 * h * k1, a_mid, c_mid, F_mid)
            k3 = _rhs(X - 0.5 * h * k2, a_mid, c_mid, F_mid)
            k4 = _rhs(X - h * k3, a_lo, c_lo, F_lo)
            X = symmetrize(X - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.all(np.isfinite(X)):
            bad = int(r_act[np.argwhere(~np.isfinite(X))[0][0]])
            raise NonFinite(f"Lyapunov integration blew up in row {bad} at s index {j}",
                            index=(bad, j))
        P[:act] = X
        out[:act, j] = X
    return {int(i): out[k, i:] for k, i in enumerate(rows)}


def solve_row(spec: ProblemSpec, frozen: FrozenCoefficients, i: int,
              substeps: int = 1) -> np.ndarray:
    """P(t_i, s_j) for j = i..N, shape ``(N - i + 1, n, n)``."""
    if not 0 <= i <= spec.N:
        raise IndexError(f"node index {i} outside [0, {spec.N}]")
    return integrate_rows(spec, frozen, [i], substeps)[i]


def sweep(spec: ProblemSpec, theta: Strategy, rows=None) -> tuple[TwoTimeField, DiagonalField]:
    """Full two-time field and its diagonal for a fixed strategy.

    ``rows`` optionally lists the row batches to compute, in order (for
    example ``[[5, 1], [0, 2, 3, 4]]``); the result does not depend on it.
    """
    if spec.m < 1:
        raise ShapeMismatch("control dimension must be positive")
    frozen = freeze(spec, theta)
    N, n = spec.N, spec.n
    batches = [range(N + 1)] if rows is None else rows
    P = np.full((N + 1, N + 1, n, n), np.nan)
    done = set()
    for batch in batches:
        try:
            res = integrate_rows(spec, frozen, batch)
        except NonFinite as exc:
            raise NonFinite(f"sweep failed: {exc}", index=exc.index) from exc
        for i, row in res.items():
            P[i, i:] = row
            done.add(i)
    if len(done) != N + 1:
        raise ValueError("row batches must cover every node exactly")
    k = np.arange(N + 1)
    return TwoTimeField(P), DiagonalField(P[k, k])
