import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from linecodec.metrics import (MetricError, RdCurve, bd_rate, d1, d2, estimate_normals,
                               evaluate, peak_of, psnr)


def brute_nn(ref, tst):
    dist = ((tst[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
    idx = dist.argmin(axis=1)
    return idx, tst - ref[idx]


def brute_d1(ref, tst):
    _, err = brute_nn(ref, tst)
    return float(np.mean([e @ e for e in err]))


def brute_d2(ref, tst, normals, degenerate):
    idx, err = brute_nn(ref, tst)
    out = []
    for e, i in zip(err, idx):
        out.append(e @ e if degenerate[i] else float(e @ normals[i]) ** 2)
    return float(np.mean(out))


def test_d1_d2_brute_force_50_pairs():
    rng = np.random.default_rng(99)
    for _ in range(50):
        a = rng.uniform(0, 100, (500, 3))
        b = a + rng.normal(scale=2.0, size=(500, 3)) if rng.random() < 0.5 else \
            rng.uniform(0, 100, (500, 3))
        assert abs(d1(a, b) - brute_d1(a, b)) <= 1e-9
        n, deg = estimate_normals(a)
        assert abs(d2(a, b) - brute_d2(a, b, n, deg)) <= 1e-9


def test_d1_examples():
    a = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0]], float)
    assert d1(a, a) == 0
    assert d1(a, a + [1, 0, 0]) == 1.0
    with pytest.raises(MetricError):
        d1(np.zeros((0, 3)), a)


def _plane(n=400, seed=0):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0, 50, (n, 2))
    return np.c_[g, np.zeros(n)]


def test_d2_tangential_and_normal():
    p = _plane()
    shifted = p + [0.3, 0.2, 0.0]
    assert d1(p, shifted) > 0
    assert d2(p, shifted) < 1e-20
    assert d2(p, p + [0, 0, 2.0]) == pytest.approx(4.0)


def test_d2_planar_patch_brute_force():
    rng = np.random.default_rng(3)
    p = _plane(500, 1) + rng.normal(scale=0.1, size=(500, 3))
    t = p + rng.normal(scale=0.5, size=(500, 3))
    n, deg = estimate_normals(p, 12)
    assert abs(d2(p, t, normals=(n, deg)) - brute_d2(p, t, n, deg)) <= 1e-9


def test_d2_collinear_fallback():
    line = np.c_[np.arange(30.0), np.zeros(30), np.zeros(30)]
    mse, fb = d2(line, line + [0, 1, 0], return_fallbacks=True)
    assert fb == 30 and mse == pytest.approx(1.0)


@given(st.integers(0, 2**31))
def test_d2_le_d1_per_point(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 20, (40, 3))
    b = rng.uniform(0, 20, (25, 3))
    n, deg = estimate_normals(a)
    idx, err = brute_nn(a, b)
    for e, i in zip(err, idx):
        assert (e @ n[i]) ** 2 <= e @ e + 1e-12
    assert d2(a, b) <= d1(a, b) + 1e-12


@given(st.integers(0, 2**31))
def test_d1_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 20, (30, 3)), rng.uniform(0, 20, (20, 3))
    assert d1(a[rng.permutation(30)], b[rng.permutation(20)]) == pytest.approx(d1(a, b))


def test_evaluate_symmetric_max_and_psnr():
    a = _plane(300, 2)
    b = a[:150] + [0, 0, 1.0]
    r = evaluate(a, b)
    assert r.d1_mse == max(r.d1_ab, r.d1_ba) and r.d2_mse == max(r.d2_ab, r.d2_ba)
    assert r.peak == peak_of(a)
    assert r.d1_psnr == pytest.approx(10 * math.log10(3 * r.peak ** 2 / r.d1_mse))
    assert evaluate(a, a).d1_psnr == math.inf
    assert evaluate(a, a, peak=1023).peak == 1023


def test_psnr_formula():
    assert psnr(3.0, 10.0) == pytest.approx(20.0)
    assert psnr(0, 1) == math.inf


RATES = np.array([0.5, 1.0, 2.0, 4.0])
Q = np.array([30.0, 36.0, 41.0, 45.0])


def test_bd_rate_identical_and_doubled():
    a = RdCurve(RATES, Q)
    assert abs(bd_rate(a, RdCurve(RATES, Q))) < 1e-9
    assert bd_rate(a, RdCurve(2 * RATES, Q)) == pytest.approx(100.0, abs=0.5)


def _lagrange(x, y):
    def f(t):
        s = 0.0
        for i in range(len(x)):
            w = y[i]
            for j in range(len(x)):
                if j != i:
                    w *= (t - x[j]) / (x[i] - x[j])
            s += w
        return s
    return f


def test_bd_rate_hand_integrated():
    # four points: the cubic is the interpolant; integrate it by quadrature
    ta, qa = RATES, Q
    tt, qt = np.array([0.45, 0.8, 1.9, 3.1]), np.array([31.0, 35.5, 41.5, 44.0])
    lo, hi = max(qa.min(), qt.min()), min(qa.max(), qt.max())
    ia = quad(_lagrange(qa, np.log(ta)), lo, hi)[0]
    it = quad(_lagrange(qt, np.log(tt)), lo, hi)[0]
    want = (math.exp((it - ia) / (hi - lo)) - 1) * 100
    got = bd_rate(RdCurve(ta, qa), RdCurve(tt, qt))
    assert got == pytest.approx(want, rel=1e-3)


@given(st.floats(0.5, 3.0), st.floats(-2.0, 2.0))
def test_bd_rate_opposite_signs(scale, tilt):
    a = RdCurve(RATES, Q)
    b = RdCurve(RATES * scale * np.exp(tilt * 0.01 * (Q - Q.mean())), Q)
    rab, rba = bd_rate(a, b) / 100, bd_rate(b, a) / 100
    if abs(rab) > 1e-6:
        assert rab * rba < 0
    assert (1 + rab) * (1 + rba) == pytest.approx(1.0, abs=0.02)


def test_rd_curve_validation():
    with pytest.raises(MetricError):
        RdCurve([1, 2, 3], [1, 2, 3])
    with pytest.raises(MetricError):
        RdCurve([1, 1, 2, 3], [1, 2, 3, 4])
    with pytest.raises(MetricError):
        bd_rate(RdCurve(RATES, Q), RdCurve(RATES, Q + 100))
    c = RdCurve.from_points([(1, 30), (2, 33), (3, 35), (4, 36), (5, math.inf)])
    assert len(c.rate) == 4
