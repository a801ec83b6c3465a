"""Mollification of non-smooth weights and coefficients.

Every object is extended to the whole line by holding its end values
constant and then convolved in time with the scaled bump
``eta_{1/n}(t) = n eta(n t)``.  The convolution is a composite Simpson rule
on the support ``[-1, 1]`` of ``eta``; the rule's weights are positive, so
positivity, order and monotonicity of the samples survive exactly.

Only bandwidths ``1/n <= T`` are accepted: then the smoothed tails used far
outside ``[0, T]`` never reach the grid and the constant extension is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (LINEAR, PIECEWISE_CONSTANT_LEFT, MatrixPath, ProblemSpec, TimeGrid,
                   TwoTimeField, min_eig, symmetrize)
from .errors import MonotonicityViolated, PositivityViolated

ORDER_TOL = 1e-9


def _bump(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(1.0 / (t[inside] ** 2 - 1.0))
    return out


def _simpson(points: int):
    """Nodes and weights of composite Simpson on [-1, 1] with ``points`` per unit."""
    intervals = 2 * points
    intervals += intervals % 2
    x = np.linspace(-1.0, 1.0, intervals + 1)
    w = np.ones(intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (2.0 / intervals) / 3.0


@dataclass(frozen=True)
class MollifierParams:
    n_moll: int
    quad_points: int = 64
    C0: float = field(init=False)

    def __post_init__(self):
        if int(self.n_moll) != self.n_moll or self.n_moll < 1:
            raise ValueError(f"n_moll must be a positive integer, got {self.n_moll}")
        if self.quad_points < 2:
            raise ValueError("quad_points must be >= 2")
        x, w = _simpson(self.quad_points)
        object.__setattr__(self, "C0", 1.0 / float(np.sum(w * _bump(x))))

    @property
    def bandwidth(self) -> float:
        return 1.0 / self.n_moll

    def kernel(self):
        """Offsets u and weights (summing to one) so that f_n(t) = sum_k w_k f(t - u_k)."""
        x, w = _simpson(self.quad_points)
        return x / self.n_moll, w * self.C0 * _bump(x)


def mollifier_eta(t, params: MollifierParams):
    """The normalized bump C0 exp(1/(t^2 - 1)) on (-1, 1), zero elsewhere."""
    return params.C0 * _bump(t)


def eta_scaled(t, params: MollifierParams):
    n = params.n_moll
    return n * mollifier_eta(n * np.asarray(t, dtype=float), params)


def _check_bandwidth(grid: TimeGrid, params: MollifierParams):
    if params.bandwidth > grid.T:
        raise ValueError(f"bandwidth 1/n = {params.bandwidth:.3g} exceeds the horizon "
                         f"{grid.T:.3g}; the tail tapers would reach [0, T]")


def _interp_columns(values: np.ndarray, grid: TimeGrid, t: np.ndarray, mode: str):
    """Evaluate node data (axis 0) at times t, held constant outside [0, T]."""
    t = np.clip(t, 0.0, grid.T)
    x = t / grid.dt
    if mode == PIECEWISE_CONSTANT_LEFT:
        j = np.clip(np.floor(x + 1e-12).astype(int), 0, grid.N)
        return values[j]
    j = np.clip(np.floor(x).astype(int), 0, grid.N - 1)
    w = (x - j).reshape((-1,) + (1,) * (values.ndim - 1))
    return (1.0 - w) * values[j] + w * values[j + 1]


def _convolve(values: np.ndarray, grid: TimeGrid, params: MollifierParams,
              mode: str = LINEAR) -> np.ndarray:
    _check_bandwidth(grid, params)
    offsets, weights = params.kernel()
    t = grid.nodes
    out = np.zeros_like(values, dtype=float)
    for u, w in zip(offsets, weights):
        if w == 0.0:
            continue
        out += w * _interp_columns(values, grid, t - u, mode)
    return out


def convolve_path(path: MatrixPath, grid: TimeGrid, params: MollifierParams) -> MatrixPath:
    """Smooth a coefficient path; the result is sampled on the grid, linear between nodes."""
    return MatrixPath(_convolve(path.values, grid, params, path.interpolation), LINEAR)


def _path_monotonicity(values: np.ndarray) -> float:
    if len(values) < 2:
        return np.inf
    return float(np.min(min_eig(values[1:] - values[:-1])))


def mollify_terminal(G: MatrixPath, grid: TimeGrid, params: MollifierParams,
                     tol: float = ORDER_TOL) -> MatrixPath:
    """Smooth a nondecreasing PSD terminal weight, keeping it PSD and nondecreasing."""
    margin = _path_monotonicity(G.values)
    if margin < -tol:
        raise MonotonicityViolated(f"G decreases somewhere: min eigenvalue of successive "
                                   f"differences is {margin:.3g}")
    low = float(np.min(min_eig(G.values)))
    if low < -tol:
        raise PositivityViolated(f"G is not positive semidefinite (min eigenvalue {low:.3g})")
    out = symmetrize(_convolve(G.values, grid, params, G.interpolation))
    return MatrixPath(out, LINEAR)


def mollify_twotime(Q: TwoTimeField, grid: TimeGrid, params: MollifierParams,
                    floor: float = 0.0, tol: float = ORDER_TOL) -> TwoTimeField:
    """Smooth t -> Q(t, s_j) for each column, keeping positivity and monotonicity in t.

    For t beyond the column's own time s_j the value Q(s_j, s_j) is used.
    ``floor`` is the positivity floor (0 for Q, delta for R).
    """
    d = Q.dim
    upper = Q.upper()
    low = float(np.min(min_eig(upper - floor * np.eye(d))))
    if low < -tol:
        raise PositivityViolated(f"two-time weight falls below floor {floor:g} by {-low:.3g}")
    v = Q.values
    if Q.size > 1:
        diff = v[1:] - v[:-1]
        iu = np.triu_indices(Q.size - 1)
        margin = float(np.min(min_eig(diff[iu[0], iu[1] + 1])))
        if margin < -tol:
            raise MonotonicityViolated(f"two-time weight decreases in its first variable "
                                       f"(margin {margin:.3g})")
    ext = Q.extended()
    smooth = symmetrize(_convolve(ext, grid, params, LINEAR))
    return TwoTimeField(smooth)


def smooth_coefficients(spec: ProblemSpec, params: MollifierParams) -> ProblemSpec:
    """Mollify A, B, C, D, G, Q and R of a problem with bounded data."""
    grid = spec.grid
    paths = {}
    for name in ("A", "B", "C", "D"):
        raw = getattr(spec, name)
        sm = convolve_path(raw, grid, params)
        cap = 2.0 * float(np.max(np.abs(raw.values)))
        # convex averaging never exceeds the original sup, let alone twice it
        assert float(np.max(np.abs(sm.values))) <= cap + 1e-12, f"sup-norm cap broken for {name}"
        paths[name] = sm
    return spec.replace(
        G=mollify_terminal(spec.G, grid, params),
        Q=mollify_twotime(spec.Q, grid, params, floor=0.0),
        R=mollify_twotime(spec.R, grid, params, floor=spec.delta),
        **paths,
    )
