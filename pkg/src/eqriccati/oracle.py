"""Independent verifiers for solver output.

Stochastic side: Euler-Maruyama simulation of the closed-loop fundamental
solution and of the controlled state, driven by a counter-based generator
(Philox) keyed by ``(seed, path)`` so that the increment used by path ``p``
at step ``k`` never depends on how many paths run or in which order.

With ``extrapolate`` on (default), every estimate combines a run at
``substeps`` with a run at ``2*substeps`` on the same Brownian path
(``2*fine - coarse``), cancelling the first-order weak bias of the scheme.

Deterministic side: a plain RK4 solver of the classical Riccati equation for
weights that do not depend on the initial time.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DiagonalField, ProblemSpec, Strategy, symmetrize
from .errors import NonFinite, TimeDependentWeights

ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class McConfig:
    paths: int = 10_000
    substeps: int = 4
    seed: int = 0
    antithetic: bool = True
    extrapolate: bool = True
    threads: int | None = None

    def __post_init__(self):
        if self.paths < 2:
            raise ValueError("need at least 2 paths")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class McEstimate:
    mean: np.ndarray | float
    stderr: np.ndarray | float
    paths_used: int


@dataclass(frozen=True)
class Spike:
    """Constant control u0 on [t_i, t_i + eps], the equilibrium feedback afterwards."""

    u0: np.ndarray
    eps: float
    theta: Strategy


@dataclass(frozen=True)
class Quotient:
    eps: float
    value: float
    stderr: float


# --------------------------------------------------------------------------- rng

def _stream(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(path << 64) | seed))


def brownian_normals(seed: int, first_path: int, count: int, steps: int,
                     threads: int | None = None) -> np.ndarray:
    """Standard normals, row p = path first_path + p, column k = step k."""
    out = np.empty((count, steps))

    def fill(p):
        out[p] = _stream(seed, first_path + p).standard_normal(steps)

    threads = threads or int(os.environ.get("ERE_THREADS", "0")) or os.cpu_count() or 1
    if threads > 1 and count > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, range(count)))
    else:
        for p in range(count):
            fill(p)
    return out


def _increments(cfg: McConfig, steps: int) -> np.ndarray:
    base = cfg.paths // 2 if cfg.antithetic else cfg.paths
    z = brownian_normals(cfg.seed, 0, base, steps, cfg.threads)
    return np.concatenate([z, -z]) if cfg.antithetic else z


def _coarsen(z: np.ndarray) -> np.ndarray:
    """Pairwise sums of fine standard normals, rescaled to standard normals."""
    return (z[:, 0::2] + z[:, 1::2]) / np.sqrt(2.0)


def _estimate(samples: np.ndarray, cfg: McConfig) -> McEstimate:
    if cfg.antithetic:
        half = samples.shape[0] // 2
        samples = 0.5 * (samples[:half] + samples[half:])
    k = samples.shape[0]
    mean = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / np.sqrt(k)
    if mean.ndim == 0:
        mean, stderr = float(mean), float(stderr)
    return McEstimate(mean, stderr, k)


def _levels(cfg: McConfig, i: int, N: int):
    """(normals, substeps, weight) per level of the estimator."""
    K = cfg.substeps
    if not cfg.extrapolate:
        return [(_increments(cfg, (N - i) * K), K, 1.0)]
    fine = _increments(cfg, (N - i) * 2 * K)
    return [(fine, 2 * K, 2.0), (_coarsen(fine), K, -1.0)]


# -------------------------------------------------------------- coefficients

def _closed_loop(spec: ProblemSpec, theta: Strategy, j: int, frac: float):
    th = theta.at_fraction(j, frac)
    a = spec.A.at_fraction(j, frac) + spec.B.at_fraction(j, frac) @ th
    c = spec.C.at_fraction(j, frac) + spec.D.at_fraction(j, frac) @ th
    return a, c, th


def _weights(spec: ProblemSpec, i: int, j: int, frac: float):
    """Q(t_i, s), R(t_i, s) at s = t_j + frac*dt, linear along row i."""
    Qv, Rv = spec.Q.values, spec.R.values
    q = (1.0 - frac) * Qv[i, j] + frac * Qv[i, j + 1]
    r = (1.0 - frac) * Rv[i, j] + frac * Rv[i, j + 1]
    return q, r


def _substep_times(i: int, N: int, K: int):
    """(interval, fraction) of every substep start, plus the final point T."""
    pts = [(j, s / K) for j in range(i, N) for s in range(K)]
    return pts + [(N - 1, 1.0)]


def _check_theta(spec: ProblemSpec, theta: Strategy):
    if theta.gains.shape != (spec.N + 1, spec.m, spec.n):
        raise ValueError(f"strategy shape {theta.gains.shape} does not match the problem")


# ------------------------------------------------------------------- Phi / diag

def _phi_run(spec, theta, i, z, K, store_nodes=False):
    """Euler-Maruyama for the fundamental solution started at I at t_i.

    Returns per-path Volterra samples and, optionally, Phi at grid nodes.
    """
    N, n = spec.N, spec.n
    h = spec.grid.dt / K
    sq = np.sqrt(h)
    paths = z.shape[0]
    phi = np.broadcast_to(np.eye(n), (paths, n, n)).copy()
    acc = np.zeros((paths, n, n))
    nodes = [phi.copy()] if store_nodes else None
    if i == N:
        G = spec.G.values[i]
        return phi.transpose(0, 2, 1) @ G @ phi, (np.stack(nodes, 1) if store_nodes else None)
    pts = _substep_times(i, N, K)

    def integrand(ph, j, frac):
        _, _, th = _closed_loop(spec, theta, j, frac)
        q, r = _weights(spec, i, j, frac)
        F = q + th.T @ r @ th
        return ph.transpose(0, 2, 1) @ F @ ph

    prev = integrand(phi, *pts[0])
    for k, (j, frac) in enumerate(pts[:-1]):
        a, c, _ = _closed_loop(spec, theta, j, frac)
        dw = (sq * z[:, k])[:, None, None]
        phi = phi + h * (a @ phi) + dw * (c @ phi)
        cur = integrand(phi, *pts[k + 1])
        acc += 0.5 * h * (prev + cur)
        prev = cur
        if store_nodes and (k + 1) % K == 0:
            nodes.append(phi.copy())
    if not np.all(np.isfinite(phi)):
        raise NonFinite(f"fundamental solution overflowed from node {i}", index=i)
    G = spec.G.values[i]
    total = phi.transpose(0, 2, 1) @ G @ phi + acc
    return symmetrize(total), (np.stack(nodes, 1) if store_nodes else None)


def simulate_phi(spec: ProblemSpec, theta: Strategy, i: int, cfg: McConfig) -> np.ndarray:
    """Samples of Phi(t_i, s_j), j = i..N; shape ``(paths, N - i + 1, n, n)``.

    Plain Euler-Maruyama at ``cfg.substeps`` (no extrapolation); with
    antithetic sampling the second half of the rows mirrors the first.
    """
    _check_theta(spec, theta)
    z = _increments(cfg, (spec.N - i) * cfg.substeps)
    _, nodes = _phi_run(spec, theta, i, z, cfg.substeps, store_nodes=True)
    return nodes


def mc_diagonal(spec: ProblemSpec, theta: Strategy, i: int, cfg: McConfig) -> McEstimate:
    """Monte Carlo estimate of P(t_i, t_i) from its stochastic representation."""
    _check_theta(spec, theta)
    total = 0.0
    for z, K, w in _levels(cfg, i, spec.N):
        vals, _ = _phi_run(spec, theta, i, z, K)
        total = total + w * vals
    return _estimate(total, cfg)


# ---------------------------------------------------------------- cost / spikes

def _spike_intervals(spec: ProblemSpec, eps: float) -> int:
    k = eps / spec.grid.dt
    if eps <= 0 or abs(k - round(k)) > ALIGN_TOL * max(1.0, k):
        raise ValueError(f"eps = {eps} is not a positive multiple of the grid step "
                         f"{spec.grid.dt}")
    return int(round(k))


def _cost_run(spec, theta, i, x, u0, n_spike, z, K):
    """Per-path cost for the state started at x at t_i; u0 on the first n_spike intervals."""
    N, n = spec.N, spec.n
    h = spec.grid.dt / K
    sq = np.sqrt(h)
    paths = z.shape[0]
    X = np.broadcast_to(np.asarray(x, float), (paths, n)).copy()
    J = np.zeros(paths)
    G = spec.G.values[i]

    def control(X, j, frac, spiking):
        if spiking:
            return np.broadcast_to(u0, (X.shape[0], spec.m))
        th = theta.at_fraction(j, frac)
        return X @ th.T

    def running(X, u, j, frac):
        q, r = _weights(spec, i, j, frac)
        return np.einsum("pi,ij,pj->p", X, q, X) + np.einsum("pi,ij,pj->p", u, r, u)

    k = 0
    for j in range(i, N):
        spiking = j < i + n_spike
        for s in range(K):
            f0, f1 = s / K, (s + 1) / K
            A, B, C, D = (p.at_fraction(j, f0) for p in (spec.A, spec.B, spec.C, spec.D))
            u = control(X, j, f0, spiking)
            left = running(X, u, j, f0)
            dw = sq * z[:, k]
            X = X + h * (X @ A.T + u @ B.T) + dw[:, None] * (X @ C.T + u @ D.T)
            right = running(X, control(X, j, f1, spiking), j, f1)
            J += 0.5 * h * (left + right)
            k += 1
    if not np.all(np.isfinite(X)):
        raise NonFinite(f"state overflowed when started at node {i}", index=i)
    return J + np.einsum("pi,ij,pj->p", X, G, X)


def cost_functional(spec: ProblemSpec, i: int, x, control, cfg: McConfig) -> McEstimate:
    """Estimate J(t_i, x; control) for a feedback ``Strategy`` or a ``Spike``."""
    x = np.asarray(x, dtype=float).reshape(spec.n)
    if not np.all(np.isfinite(x)):
        raise NonFinite("initial state is not finite")
    if isinstance(control, Spike):
        theta, n_spike = control.theta, _spike_intervals(spec, control.eps)
        u0 = np.asarray(control.u0, dtype=float).reshape(spec.m)
    else:
        theta, n_spike, u0 = control, 0, np.zeros(spec.m)
    _check_theta(spec, theta)
    total = 0.0
    for z, K, w in _levels(cfg, i, spec.N):
        total = total + w * _cost_run(spec, theta, i, x, u0, n_spike, z, K)
    return _estimate(total, cfg)


def equilibrium_test(spec: ProblemSpec, theta: Strategy, i: int, x, u0, eps_list,
                     cfg: McConfig) -> list[Quotient]:
    """Difference quotients (J(spike) - J(equilibrium)) / eps with common random numbers."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be positive and strictly decreasing")
    x = np.asarray(x, dtype=float).reshape(spec.n)
    u0 = np.asarray(u0, dtype=float).reshape(spec.m)
    _check_theta(spec, theta)
    spikes = [_spike_intervals(spec, e) for e in eps_list]
    levels = _levels(cfg, i, spec.N)
    base = sum(w * _cost_run(spec, theta, i, x, u0, 0, z, K) for z, K, w in levels)
    out = []
    for eps, n_spike in zip(eps_list, spikes):
        dev = sum(w * _cost_run(spec, theta, i, x, u0, n_spike, z, K) for z, K, w in levels)
        est = _estimate((dev - base) / eps, cfg)
        out.append(Quotient(eps, est.mean, est.stderr))
    return out


# ------------------------------------------------------------ classical Riccati

def classical_riccati(spec: ProblemSpec) -> DiagonalField:
    """RK4 for the standard Riccati equation; weights must not depend on t."""
    if not (spec.Q.is_constant_in_t() and spec.R.is_constant_in_t()):
        raise TimeDependentWeights("Q and R must not depend on their first time variable")
    G = spec.G.values
    if np.max(np.abs(G - G[0])) > 1e-12:
        raise TimeDependentWeights("G must be constant in t")
    N, dt = spec.N, spec.grid.dt

    def coeffs(j, frac):
        A, B, C, D = (p.at_fraction(j, frac) for p in (spec.A, spec.B, spec.C, spec.D))
        Qv, Rv = spec.Q.values[0], spec.R.values[0]
        q = (1.0 - frac) * Qv[j] + frac * Qv[j + 1]
        r = (1.0 - frac) * Rv[j] + frac * Rv[j + 1]
        return A, B, C, D, q, r

    def rhs(P, A, B, C, D, q, r):
        S = P @ B + C.T @ P @ D
        M = r + D.T @ P @ D
        return -(P @ A + A.T @ P + C.T @ P @ C + q - S @ np.linalg.solve(M, S.T))

    out = np.empty((N + 1, spec.n, spec.n))
    P = np.array(G[-1])
    out[N] = P
    for j in range(N - 1, -1, -1):
        hi, mid, lo = coeffs(j, 1.0), coeffs(j, 0.5), coeffs(j, 0.0)
        k1 = rhs(P, *hi)
        k2 = rhs(P - 0.5 * dt * k1, *mid)
        k3 = rhs(P - 0.5 * dt * k2, *mid)
        k4 = rhs(P - dt * k3, *lo)
        P = symmetrize(P - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        out[j] = P
    return DiagonalField(out)
