import math

import numpy as np
import pytest
from scipy.integrate import quad

from eqriccati import fixtures
from eqriccati.core import (PIECEWISE_CONSTANT_LEFT, MatrixPath, TimeGrid, TwoTimeField,
                            make_problem, min_eig)
from eqriccati.errors import MonotonicityViolated, PositivityViolated
from eqriccati.mollify import (MollifierParams, _simpson, convolve_path, eta_scaled,
                               mollifier_eta, mollify_terminal, mollify_twotime,
                               smooth_coefficients)

EXACT_MASS, _ = quad(lambda t: math.exp(1 / (t * t - 1)), -1, 1, epsabs=1e-14, epsrel=1e-14)


def test_normalization_constant():
    p = MollifierParams(8)
    assert p.C0 == pytest.approx(1 / EXACT_MASS, rel=1e-7)
    assert 1 / EXACT_MASS == pytest.approx(2.2522836210, abs=1e-9)
    x, w = _simpson(p.quad_points)
    assert np.sum(w * mollifier_eta(x, p)) == pytest.approx(1.0, abs=1e-10)


def test_eta_values():
    p = MollifierParams(4)
    assert mollifier_eta(1.0, p) == 0.0
    assert mollifier_eta(-1.0, p) == 0.0
    assert mollifier_eta(0.0, p) == pytest.approx(math.exp(-1) / EXACT_MASS, rel=1e-7)
    assert mollifier_eta(0.0, p) == pytest.approx(0.82857, abs=1e-5)
    assert eta_scaled(0.1, p) == pytest.approx(4 * mollifier_eta(0.4, p))
    assert eta_scaled(0.3, p) == 0.0


def test_kernel_weights():
    u, w = MollifierParams(16).kernel()
    assert np.sum(w) == pytest.approx(1.0, abs=1e-12)
    assert np.all(w >= 0)
    assert np.max(np.abs(u)) == pytest.approx(1 / 16)


def test_bad_params():
    with pytest.raises(ValueError):
        MollifierParams(0)
    with pytest.raises(ValueError):
        convolve_path(MatrixPath(np.ones((3, 1, 1))), TimeGrid(0.5, 2), MollifierParams(1))


def test_constant_terminal_unchanged():
    g = TimeGrid(1.0, 32)
    G = MatrixPath.constant(g, [[2.0, 0.5], [0.5, 1.0]])
    out = mollify_terminal(G, g, MollifierParams(8))
    np.testing.assert_allclose(out.values, G.values, rtol=0, atol=1e-12)


def _kink(t):
    return max(t - 0.5, 0.0) + 0.5


def _direct(f, t, n, T=1.0):
    """Convolution with the exactly normalized bump and constant extension."""
    def integrand(u):
        return f(min(max(t - u, 0.0), T)) * n * math.exp(1 / ((n * u) ** 2 - 1)) / EXACT_MASS
    val, _ = quad(integrand, -1 / n, 1 / n, points=[t - 0.5], epsabs=1e-13, limit=200)
    return val


def test_kinked_terminal_against_direct_convolution():
    g = TimeGrid(1.0, 64)
    G = MatrixPath.sample(g, lambda t: [[_kink(t)]])
    n = 8
    out = mollify_terminal(G, g, MollifierParams(n))
    ref = np.array([_direct(_kink, t, n) for t in g.nodes])
    assert np.max(np.abs(out.values[:, 0, 0] - ref)) < 1e-6
    # sup distance bounded by the modulus of continuity at scale 1/n
    assert np.max(np.abs(out.values - G.values)) <= 1 / n


def test_staircase_stays_monotone():
    g = TimeGrid(1.0, 50)
    G = MatrixPath.sample(g, lambda t: np.diag([math.floor(4 * t), 1 + math.floor(3 * t)]),
                          PIECEWISE_CONSTANT_LEFT)
    out = mollify_terminal(G, g, MollifierParams(10))
    d = out.values[1:] - out.values[:-1]
    assert np.min(min_eig(d)) >= -1e-9


def test_terminal_rejects_bad_input():
    g = TimeGrid(1.0, 10)
    with pytest.raises(MonotonicityViolated):
        mollify_terminal(MatrixPath.sample(g, lambda t: [[1 - t]]), g, MollifierParams(4))
    with pytest.raises(PositivityViolated):
        mollify_terminal(MatrixPath.sample(g, lambda t: [[t - 0.5]]), g, MollifierParams(4))


def test_twotime_constant_unchanged():
    g = TimeGrid(1.0, 16)
    Q = TwoTimeField.sample(g, lambda t, s: [[1 + s]])
    out = mollify_twotime(Q, g, MollifierParams(4))
    np.testing.assert_allclose(out.upper(), Q.upper(), rtol=0, atol=1e-12)


def _q_ramp(t):
    return math.exp(-max(0.3 - t, 0.0))


def test_twotime_deviation_shrinks():
    g = TimeGrid(1.0, 256)
    Q = TwoTimeField.sample(g, lambda t, s: _q_ramp(t) * np.eye(2))
    devs = []
    for n in (8, 16, 32, 64):
        out = mollify_twotime(Q, g, MollifierParams(n))
        devs.append(float(np.nanmax(np.abs(out.upper() - Q.upper()))))
    for a, b in zip(devs, devs[1:]):
        assert b <= 0.5 * a * 1.05
    assert devs[-1] < 0.01


def test_twotime_delta_floor():
    g = TimeGrid(1.0, 32)
    R = TwoTimeField.sample(g, lambda t, s: [[1.0 + max(t - 0.4, 0.0)]])
    out = mollify_twotime(R, g, MollifierParams(8), floor=1.0)
    assert np.min(min_eig(out.upper())) >= 1.0 - 1e-9


def test_twotime_rejects_decreasing():
    g = TimeGrid(1.0, 8)
    Q = TwoTimeField.sample(g, lambda t, s: [[2 - t]])
    with pytest.raises(MonotonicityViolated):
        mollify_twotime(Q, g, MollifierParams(2))


def test_smooth_constant_coefficients():
    spec = fixtures.classical_random(N=40)
    out = smooth_coefficients(spec, MollifierParams(8))
    for name in ("A", "B", "C", "D", "G"):
        np.testing.assert_allclose(getattr(out, name).values, getattr(spec, name).values,
                                   atol=1e-12)
    np.testing.assert_allclose(out.Q.upper(), spec.Q.upper(), atol=1e-12)


def test_step_coefficient_l2_convergence():
    N = 512
    spec = make_problem(1, N, A=MatrixPath(np.sign(np.linspace(0, 1, N + 1) - 0.5)[:, None, None],
                                           PIECEWISE_CONSTANT_LEFT),
                        B=1, C=0, D=0, Q=1, R=1, G=1, delta=1)
    errs = []
    for n in (8, 16, 32):
        A_n = smooth_coefficients(spec, MollifierParams(n)).A
        diff = A_n.values[:, 0, 0] - spec.A.values[:, 0, 0]
        errs.append(math.sqrt(np.sum(diff[:-1] ** 2) * spec.grid.dt))
        assert A_n.sup_norm() <= spec.A.sup_norm() + 1e-12
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.2


def test_order_preserved():
    g = TimeGrid(1.0, 64)
    X = MatrixPath.sample(g, lambda t: [[0.5 + 0.2 * t]])
    Y = MatrixPath.sample(g, lambda t: [[0.5 + 0.2 * t + (t > 0.5)]])
    p = MollifierParams(16)
    xs, ys = mollify_terminal(X, g, p), mollify_terminal(Y, g, p)
    assert np.min(ys.values - xs.values) >= -1e-10
