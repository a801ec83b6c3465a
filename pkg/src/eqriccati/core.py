"""Domain types, grids, triangular two-time storage and assumption checks.

All containers hold numpy arrays that are flagged read-only after
construction, so a ``ProblemSpec`` can be shared freely between solver
calls.  Matrix norms are Frobenius norms throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFinite, ShapeMismatch

LINEAR = "linear"
PIECEWISE_CONSTANT_LEFT = "piecewise-constant-left"
INTERPOLATION_MODES = (LINEAR, PIECEWISE_CONSTANT_LEFT)

SYMMETRY_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^T)/2 over the last two axes."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def fro(m: np.ndarray) -> np.ndarray:
    """Frobenius norm over the last two axes."""
    return np.sqrt(np.sum(np.asarray(m) ** 2, axis=(-2, -1)))


def min_eig(m: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of (a stack of) symmetric matrices."""
    return np.linalg.eigvalsh(symmetrize(np.asarray(m)))[..., 0]


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got array of shape {a.shape}")
    return a


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def T(self) -> float:
        return self.horizon

    @property
    def N(self) -> int:
        return self.steps

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * int(factor))


@dataclass(frozen=True, eq=False)
class MatrixPath:
    """One matrix per grid node plus the rule used between nodes."""

    values: np.ndarray
    interpolation: str = LINEAR

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ShapeMismatch(f"MatrixPath needs shape (N+1, r, c), got {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0][0])
            raise NonFinite(f"MatrixPath has a non-finite entry at node {bad}", index=bad)
        if self.interpolation not in INTERPOLATION_MODES:
            raise ValueError(f"unknown interpolation mode {self.interpolation!r}")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def constant(cls, grid: TimeGrid, matrix, interpolation: str = LINEAR) -> "MatrixPath":
        m = _as_matrix(matrix)
        return cls(np.broadcast_to(m, (grid.N + 1,) + m.shape), interpolation)

    @classmethod
    def sample(cls, grid: TimeGrid, func: Callable[[float], object],
               interpolation: str = LINEAR) -> "MatrixPath":
        return cls(np.stack([_as_matrix(func(t)) for t in grid.nodes]), interpolation)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    def __len__(self):
        return self.values.shape[0]

    def at_fraction(self, j: int | np.ndarray, frac: float) -> np.ndarray:
        """Value at t_j + frac*dt for frac in [0, 1] inside interval j."""
        v = self.values
        if self.interpolation == PIECEWISE_CONSTANT_LEFT:
            return v[j]
        if frac == 0.0:
            return v[j]
        if frac == 1.0:
            return v[np.asarray(j) + 1]
        return (1.0 - frac) * v[j] + frac * v[np.asarray(j) + 1]

    def evaluate(self, grid: TimeGrid, t) -> np.ndarray:
        """Evaluate at arbitrary times; values outside [0, T] are held constant."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, grid.T)
        x = t / grid.dt
        j = np.clip(np.floor(x).astype(int), 0, grid.N)
        if self.interpolation == PIECEWISE_CONSTANT_LEFT:
            return self.values[j]
        j = np.minimum(j, grid.N - 1)
        w = (x - j)[..., None, None]
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]

    def sup_norm(self) -> float:
        return float(np.max(fro(self.values)))

    def is_symmetric(self, tol: float = SYMMETRY_TOL) -> bool:
        return bool(np.all(fro(self.values - np.swapaxes(self.values, 1, 2)) <= tol))


@dataclass(frozen=True, eq=False)
class TwoTimeField:
    """Symmetric matrices on the triangle {(t_i, s_j): i <= j}.

    Storage is a dense ``(N+1, N+1, d, d)`` array; entries with ``i > j``
    are NaN and never read.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 4 or v.shape[0] != v.shape[1] or v.shape[2] != v.shape[3]:
            raise ShapeMismatch(f"TwoTimeField needs shape (N+1, N+1, d, d), got {v.shape}")
        iu = np.triu_indices(v.shape[0])
        upper = v[iu]
        if not np.all(np.isfinite(upper)):
            k = int(np.argwhere(~np.isfinite(upper))[0][0])
            raise NonFinite(f"TwoTimeField has a non-finite entry at (i, j) = "
                            f"({iu[0][k]}, {iu[1][k]})", index=(int(iu[0][k]), int(iu[1][k])))
        if np.any(fro(upper - np.swapaxes(upper, -1, -2)) > SYMMETRY_TOL):
            raise ShapeMismatch("TwoTimeField entries must be symmetric; use TwoTimeField.symmetric")
        il = np.tril_indices(v.shape[0], -1)
        v[il] = np.nan
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def symmetric(cls, values) -> "TwoTimeField":
        v = np.array(values, dtype=float)
        return cls(symmetrize(v))

    @classmethod
    def constant(cls, grid: TimeGrid, matrix) -> "TwoTimeField":
        m = symmetrize(_as_matrix(matrix))
        return cls(np.broadcast_to(m, (grid.N + 1, grid.N + 1) + m.shape))

    @classmethod
    def separable(cls, grid: TimeGrid, base, t_weight) -> "TwoTimeField":
        """Q(t_i, s_j) = t_weight[i] * base."""
        b = symmetrize(_as_matrix(base))
        w = np.asarray(t_weight, dtype=float)
        if w.shape != (grid.N + 1,):
            raise ShapeMismatch(f"t_weight needs {grid.N + 1} entries, got {w.shape}")
        v = np.broadcast_to(w[:, None, None, None] * b, (grid.N + 1, grid.N + 1) + b.shape)
        return cls(v)

    @classmethod
    def sample(cls, grid: TimeGrid, func: Callable[[float, float], object]) -> "TwoTimeField":
        t = grid.nodes
        d = _as_matrix(func(t[0], t[0])).shape[0]
        v = np.full((grid.N + 1, grid.N + 1, d, d), np.nan)
        for i in range(grid.N + 1):
            for j in range(i, grid.N + 1):
                v[i, j] = _as_matrix(func(t[i], t[j]))
        return cls.symmetric(v)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, ij):
        i, j = ij
        if i > j:
            raise IndexError(f"TwoTimeField is defined only for i <= j, got ({i}, {j})")
        return self.values[i, j]

    def row(self, i: int) -> np.ndarray:
        return self.values[i, i:]

    def diagonal(self) -> np.ndarray:
        k = np.arange(self.size)
        return self.values[k, k]

    def extended(self) -> np.ndarray:
        """Dense copy with Q(t_i, s_j) := Q(s_j, s_j) for i > j."""
        v = np.array(self.values)
        il = np.tril_indices(self.size, -1)
        v[il] = v[il[1], il[1]]
        return v

    def upper(self) -> np.ndarray:
        return self.values[np.triu_indices(self.size)]

    def is_constant_in_t(self, tol: float = 1e-12) -> bool:
        ext = self.extended()
        diff = ext - ext[0][None]
        iu = np.triu_indices(self.size)
        return bool(np.all(fro(diff[iu]) <= tol))


@dataclass(frozen=True, eq=False)
class Strategy:
    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float)
        if g.ndim != 3:
            raise ShapeMismatch(f"Strategy needs shape (N+1, m, n), got {g.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.argwhere(~np.isfinite(g))[0][0])
            raise NonFinite(f"Strategy has a non-finite gain at node {bad}", index=bad)
        object.__setattr__(self, "gains", _frozen(g))

    @classmethod
    def constant(cls, grid: TimeGrid, gain) -> "Strategy":
        g = _as_matrix(gain)
        return cls(np.broadcast_to(g, (grid.N + 1,) + g.shape))

    def __len__(self):
        return self.gains.shape[0]

    def at_fraction(self, j, frac: float) -> np.ndarray:
        g = self.gains
        if frac == 0.0:
            return g[j]
        if frac == 1.0:
            return g[np.asarray(j) + 1]
        return (1.0 - frac) * g[j] + frac * g[np.asarray(j) + 1]

    def sup_distance(self, other: "Strategy") -> float:
        return float(np.max(fro(self.gains - other.gains)))

    def sup_norm(self) -> float:
        return float(np.max(fro(self.gains)))


@dataclass(frozen=True, eq=False)
class DiagonalField:
    """P(t_i, t_i) for every grid node."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise ShapeMismatch(f"DiagonalField needs shape (N+1, n, n), got {v.shape}")
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self):
        return self.values.shape[0]

    def min_eigs(self) -> np.ndarray:
        return min_eig(self.values)

    def sup_norm(self) -> float:
        return float(np.max(fro(self.values)))

    def sup_distance(self, other: "DiagonalField") -> float:
        return float(np.max(fro(self.values - other.values)))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    n: int
    m: int
    grid: TimeGrid
    A: MatrixPath
    B: MatrixPath
    C: MatrixPath
    D: MatrixPath
    G: MatrixPath
    Q: TwoTimeField
    R: TwoTimeField
    delta: float

    def __post_init__(self):
        n, m = self.n, self.m
        if n < 1:
            raise ShapeMismatch(f"state dimension must be >= 1, got n={n}")
        if m < 1:
            raise ShapeMismatch("control dimension m=0: the problem is uncontrolled and the "
                                "feedback gain is undefined")
        expected = {"A": (n, n), "C": (n, n), "B": (n, m), "D": (n, m), "G": (n, n)}
        for name, shape in expected.items():
            path = getattr(self, name)
            if path.shape != shape:
                raise ShapeMismatch(f"{name} has matrix shape {path.shape}, expected {shape}")
            if len(path) != self.grid.N + 1:
                raise ShapeMismatch(f"{name} has {len(path)} nodes, expected {self.grid.N + 1}")
        if not self.G.is_symmetric():
            raise ShapeMismatch("G must be symmetric at every node")
        for name, d in (("Q", n), ("R", m)):
            f = getattr(self, name)
            if f.dim != d or f.size != self.grid.N + 1:
                raise ShapeMismatch(f"{name} has dim {f.dim} on {f.size} nodes, "
                                    f"expected dim {d} on {self.grid.N + 1}")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def T(self) -> float:
        return self.grid.T

    @property
    def N(self) -> int:
        return self.grid.N

    def replace(self, **changes) -> "ProblemSpec":
        kw = {k: getattr(self, k) for k in
              ("n", "m", "grid", "A", "B", "C", "D", "G", "Q", "R", "delta")}
        kw.update(changes)
        return ProblemSpec(**kw)


def make_problem(T: float, N: int, *, A, B, C, D, Q, R, G, delta: float) -> ProblemSpec:
    """Build a spec from constants, callables or ready-made containers.

    Paths accept a matrix (constant), a callable ``t -> matrix`` or a
    ``MatrixPath``; weights ``Q``/``R`` accept a matrix, a callable
    ``(t, s) -> matrix`` or a ``TwoTimeField``; ``G`` is a path.
    """
    grid = TimeGrid(T, N)

    def path(x):
        if isinstance(x, MatrixPath):
            return x
        if callable(x):
            return MatrixPath.sample(grid, x)
        return MatrixPath.constant(grid, x)

    def two_time(x):
        if isinstance(x, TwoTimeField):
            return x
        if callable(x):
            return TwoTimeField.sample(grid, x)
        return TwoTimeField.constant(grid, x)

    A, B, C, D, G = (path(x) for x in (A, B, C, D, G))
    if not G.is_symmetric():
        G = MatrixPath(symmetrize(G.values), G.interpolation)
    return ProblemSpec(n=A.shape[0], m=B.shape[1], grid=grid, A=A, B=B, C=C, D=D, G=G,
                       Q=two_time(Q), R=two_time(R), delta=delta)


def refine(spec: ProblemSpec, factor: int) -> ProblemSpec:
    """Resample a spec onto a grid ``factor`` times finer.

    Paths follow their own interpolation mode; two-time fields are
    interpolated bilinearly on the extended triangle.
    """
    grid = spec.grid.refine(factor)
    t = grid.nodes

    def path(p: MatrixPath) -> MatrixPath:
        return MatrixPath(p.evaluate(spec.grid, t), p.interpolation)

    def two_time(f: TwoTimeField) -> TwoTimeField:
        ext = f.extended()
        x = t / spec.grid.dt
        j = np.minimum(np.floor(x).astype(int), spec.N - 1)
        w = x - j
        # bilinear in (t, s)
        a = (1 - w)[:, None, None, None] * ext[j] + w[:, None, None, None] * ext[j + 1]
        b = ((1 - w)[None, :, None, None] * a[:, j] + w[None, :, None, None] * a[:, j + 1])
        return TwoTimeField.symmetric(b)

    return ProblemSpec(n=spec.n, m=spec.m, grid=grid, A=path(spec.A), B=path(spec.B),
                       C=path(spec.C), D=path(spec.D), G=path(spec.G),
                       Q=two_time(spec.Q), R=two_time(spec.R), delta=spec.delta)


@dataclass(frozen=True)
class ValidationReport:
    h2_ok: bool
    h3_ok: bool
    psd_margins: dict = field(default_factory=dict)
    monotonicity_margins: dict = field(default_factory=dict)
    derived_bounds: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.h2_ok and self.h3_ok

    def summary(self) -> str:
        psd = ", ".join(f"{k}={v:.6g}" for k, v in self.psd_margins.items())
        mono = ", ".join(f"{k}={v:.6g}" for k, v in self.monotonicity_margins.items())
        return (f"(H2) {'ok' if self.h2_ok else 'FAILED'}: {psd}\n"
                f"(H3) {'ok' if self.h3_ok else 'FAILED'}: {mono}")


def _first_variable_margin(field_: TwoTimeField) -> float:
    v = field_.values
    if field_.size < 2:
        return np.inf
    # Q(t_{i+1}, s_j) - Q(t_i, s_j) for i + 1 <= j
    diff = v[1:] - v[:-1]
    iu = np.triu_indices(field_.size - 1)
    pairs = diff[iu[0], iu[1] + 1]
    return float(np.min(min_eig(pairs)))


def validate_problem(spec: ProblemSpec, tol: float = 1e-12) -> ValidationReport:
    """Check positivity and monotonicity assumptions on every sampled pair."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    q_up, r_up = spec.Q.upper(), spec.R.upper()
    for name, arr in (("Q", q_up), ("R", r_up), ("A", spec.A.values), ("B", spec.B.values),
                      ("C", spec.C.values), ("D", spec.D.values), ("G", spec.G.values)):
        if not np.all(np.isfinite(arr)):
            raise NonFinite(f"{name} has non-finite entries")
    g = spec.G.values
    psd = {
        "Q": float(np.min(min_eig(q_up))),
        "R_minus_delta": float(np.min(min_eig(r_up - spec.delta * np.eye(spec.m)))),
        "G": float(np.min(min_eig(g))),
    }
    mono = {
        "Q": _first_variable_margin(spec.Q),
        "R": _first_variable_margin(spec.R),
        "G": float(np.min(min_eig(g[1:] - g[:-1]))) if len(g) > 1 else np.inf,
    }
    bounds = {
        "gHat": float(np.max(fro(g))),
        "qHat": float(np.max(fro(q_up))),
        "rHat": float(np.max(fro(r_up))),
    }
    return ValidationReport(
        h2_ok=all(v >= -tol for v in psd.values()),
        h3_ok=all(v >= -tol for v in mono.values()),
        psd_margins=psd,
        monotonicity_margins=mono,
        derived_bounds=bounds,
    )


def _trapezoid(y: np.ndarray, dx: float) -> float:
    return float(dx * (0.5 * y[0] + np.sum(y[1:-1]) + 0.5 * y[-1]))


def apriori_bound(spec: ProblemSpec) -> float:
    """(gHat + T qHat) exp(int_0^T 2|A| + |C|^2 ds), trapezoid on the grid."""
    b = validate_problem(spec).derived_bounds
    integrand = 2.0 * fro(spec.A.values) + fro(spec.C.values) ** 2
    return (b["gHat"] + spec.T * b["qHat"]) * float(np.exp(_trapezoid(integrand, spec.grid.dt)))


def theta_bound(spec: ProblemSpec) -> float:
    """Uniform bound C* on the sup norm of any equilibrium feedback gain."""
    factor = spec.B.sup_norm() + spec.D.sup_norm() * spec.C.sup_norm()
    return factor * apriori_bound(spec) / spec.delta
