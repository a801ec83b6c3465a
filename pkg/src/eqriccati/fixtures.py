"""Reference problems used by the test suite, the acceptance run and the CLI docs."""
from __future__ import annotations

import numpy as np

from .core import PIECEWISE_CONSTANT_LEFT, MatrixPath, ProblemSpec, TimeGrid, make_problem


def stationary(N: int = 100, T: float = 1.0) -> ProblemSpec:
    """Scalar A=C=0, B=1, D=0, Q=R=G=1: P = 1 and feedback -1 are exact."""
    return make_problem(T, N, A=0, B=1, C=0, D=0, Q=1, R=1, G=1, delta=1)


def uncontrolled(N: int = 200, a: float = 0.3, c: float = 0.2, q: float = 1.0,
                 g: float = 1.0, T: float = 1.0) -> ProblemSpec:
    """Scalar B=D=0 problem whose diagonal has a closed form."""
    return make_problem(T, N, A=a, B=0, C=c, D=0, Q=q, R=1, G=g, delta=1)


def uncontrolled_diagonal(t, a=0.3, c=0.2, q=1.0, g=1.0, T=1.0):
    k = 2 * a + c * c
    e = np.exp(k * (T - np.asarray(t, dtype=float)))
    return g * e + q * (e - 1.0) / k


def classical_random(N: int = 200, seed: int = 2024, T: float = 1.0) -> ProblemSpec:
    """n=2, m=1 constant data with t-independent PSD weights."""
    rng = np.random.default_rng(seed)
    A = 0.5 * rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 1))
    C = 0.3 * rng.standard_normal((2, 2))
    D = 0.3 * rng.standard_normal((2, 1))
    L = rng.standard_normal((2, 2))
    Q = 0.5 * L @ L.T + 0.1 * np.eye(2)
    M = rng.standard_normal((2, 2))
    G = 0.5 * M @ M.T
    r = 1.0 + rng.random()
    return make_problem(T, N, A=A, B=B, C=C, D=D, Q=Q, R=[[r]], G=G, delta=r)


def time_inconsistent(N: int = 200, T: float = 1.0) -> ProblemSpec:
    """G(t) = 0.5 + 0.5t, Q(t, s) = 0.5 + 0.5t, R = 1, A=C=D=0, B=1."""
    return make_problem(T, N, A=0, B=1, C=0, D=0, Q=lambda t, s: 0.5 + 0.5 * t, R=1,
                        G=lambda t: 0.5 + 0.5 * t, delta=1)


def frozen_at_start(spec: ProblemSpec) -> ProblemSpec:
    """Same problem with weights frozen at initial time 0 (time-consistent)."""
    from .core import TwoTimeField
    N = spec.N
    q0 = np.broadcast_to(spec.Q.values[0][None], spec.Q.values.shape)
    r0 = np.broadcast_to(spec.R.values[0][None], spec.R.values.shape)
    g0 = MatrixPath(np.broadcast_to(spec.G.values[0], (N + 1,) + spec.G.shape))
    return spec.replace(Q=TwoTimeField(q0), R=TwoTimeField(r0), G=g0)


def kinked(N: int = 256, T: float = 1.0, c: float = 0.2) -> ProblemSpec:
    """Kinked terminal weight max(t - 1/2, 0) + 1/2 and a step drift +-1/2."""
    grid = TimeGrid(T, N)
    t = grid.nodes
    A = MatrixPath(np.where(t < 0.5 * T, -0.5, 0.5)[:, None, None], PIECEWISE_CONSTANT_LEFT)
    G = MatrixPath((np.maximum(t - 0.5 * T, 0.0) + 0.5)[:, None, None])
    return make_problem(T, N, A=A, B=1, C=c, D=0, Q=1, R=1, G=G, delta=1)
