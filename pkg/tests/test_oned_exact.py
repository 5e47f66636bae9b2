import json
import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from crw2d.oned_exact import (
    OrderedStarts1D,
    SkewMatrix,
    brownian_pnc_mc,
    fit_cN,
    gaussian_kernel,
    km_density,
    km_ordered_integral,
    pfaffian,
    phi,
    pnc_pfaffian_1d,
    to_json,
    vandermonde,
    vandermonde_asymptotic,
)


def _random_skew(n, seed):
    A = np.random.default_rng(seed).normal(size=(n, n))
    return A - A.T


def test_phi_matches_defining_integral():
    for x in (0.0, 0.3, 1.0, 2.5):
        ref = 2 / math.sqrt(math.pi) * integrate.quad(lambda s: math.exp(-s * s), 0, x)[0]
        assert phi(x) == pytest.approx(ref, abs=1e-12)
    assert phi(-1.0) == -phi(1.0)
    assert float(phi(mpmath.mpf(1))) == pytest.approx(phi(1.0), abs=1e-15)


def test_pfaffian_small_orders():
    assert pfaffian([[0, 2.5], [-2.5, 0]]) == 2.5
    A = _random_skew(4, 0)
    expect = A[0, 1] * A[2, 3] - A[0, 2] * A[1, 3] + A[0, 3] * A[1, 2]
    assert pfaffian(A) == pytest.approx(expect, rel=1e-12)
    assert pfaffian(np.zeros((0, 0))) == 1


@pytest.mark.parametrize("n", [2, 4, 6, 8, 10, 12])
def test_pfaffian_squared_is_determinant(n):
    A = _random_skew(n, n)
    assert pfaffian(A) ** 2 == pytest.approx(np.linalg.det(A), rel=1e-9)


def test_pfaffian_routes_agree_on_sign():
    # block-diagonal: Pf is the product of the 2x2 blocks
    A = np.zeros((10, 10))
    vals = [1.0, -2.0, 3.0, 0.5, -1.5]
    for k, v in enumerate(vals):
        A[2 * k, 2 * k + 1], A[2 * k + 1, 2 * k] = v, -v
    assert pfaffian(A) == pytest.approx(np.prod(vals), rel=1e-12)
    assert pfaffian(A[:8, :8]) == pytest.approx(np.prod(vals[:4]), rel=1e-12)


def test_pfaffian_input_validation():
    with pytest.raises(ValueError):
        pfaffian(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        SkewMatrix([[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        SkewMatrix([[1, 0], [0, 0]])
    with pytest.raises(ValueError):
        OrderedStarts1D((0.0, 0.0))


def test_pnc_two_walkers_closed_form():
    for x, t in ((1.0, 1.0), (2.0, 0.3), (0.5, 7.0)):
        assert pnc_pfaffian_1d([0.0, x], t) == pytest.approx(math.erf(x / math.sqrt(4 * t)), rel=1e-14)


def test_pnc_validation_and_range():
    with pytest.raises(ValueError):
        pnc_pfaffian_1d([0.0, 1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        pnc_pfaffian_1d([1.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        pnc_pfaffian_1d([0.0, 1.0], 0.0)
    for t in (1e-3, 0.1, 1.0, 10.0, 100.0):
        p = pnc_pfaffian_1d([0.0, 1.0, 2.0, 3.0], t)
        assert 0.0 <= p <= 1.0


def test_pnc_limits():
    xs = [0.0, 1.0, 2.0, 3.0]
    assert pnc_pfaffian_1d(xs, 1e-4) == pytest.approx(1.0, abs=1e-12)
    assert pnc_pfaffian_1d([0.0, 1e-9, 1.0, 2.0], 1.0) < 1e-8
    assert pnc_pfaffian_1d(xs, 1e8, precision=40) < 1e-10


def test_pnc_monotone():
    xs = [0.0, 1.0, 2.0, 3.0]
    ts = np.geomspace(0.01, 100, 30)
    p = [pnc_pfaffian_1d(xs, t, precision=30) for t in ts]
    assert all(a >= b for a, b in zip(p, p[1:]))
    q = [pnc_pfaffian_1d([c * x for x in xs], 1.0) for c in (0.5, 1.0, 2.0, 4.0)]
    assert all(a <= b for a, b in zip(q, q[1:]))


def test_brownian_scaling():
    xs = [0.0, 0.7, 1.9, 3.0]
    assert pnc_pfaffian_1d([2 * x for x in xs], 4 * 2.0) == pnc_pfaffian_1d(xs, 2.0)
    assert pnc_pfaffian_1d([3 * x for x in xs], 9 * 2.0) == pytest.approx(pnc_pfaffian_1d(xs, 2.0), rel=1e-14)


def test_precision_route_agrees():
    xs = [0.0, 1.0, 2.0, 3.0]
    assert pnc_pfaffian_1d(xs, 1.0, precision=40) == pytest.approx(pnc_pfaffian_1d(xs, 1.0), rel=1e-12)


def test_km_single_walker_is_gaussian():
    for y in (-1.0, 0.0, 2.0):
        assert km_density([0.5], [y], 1.3) == pytest.approx(float(gaussian_kernel(1.3, 0.5, y)), rel=1e-14)
    assert integrate.quad(lambda y: float(gaussian_kernel(2.0, 0.0, y)), -np.inf, np.inf)[0] == pytest.approx(1.0)


def test_km_validation_and_coincident_ends():
    assert km_density([0.0, 1.0], [0.4, 0.4], 1.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        km_density([0.0, 1.0], [0.0], 1.0)
    with pytest.raises(ValueError):
        km_density([1.0, 0.0], [0.0, 1.0], 1.0)


def test_km_two_walkers_against_dblquad():
    t = 1.0
    val = integrate.dblquad(
        lambda y2, y1: km_density([0.0, 1.0], [y1, y2], t), -12, 13, lambda y1: y1, lambda y1: 13, epsabs=1e-10
    )[0]
    assert val == pytest.approx(pnc_pfaffian_1d([0.0, 1.0], t), abs=1e-6)


@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_km_ordered_integral_four_walkers(t):
    xs = [0.0, 1.0, 2.0, 3.0]
    assert km_ordered_integral(xs, t) == pytest.approx(pnc_pfaffian_1d(xs, t), abs=1e-6)


def test_vandermonde_basics():
    assert vandermonde([0.0, 1.0, 3.0]) == 1.0 * 3.0 * 2.0
    assert vandermonde([1.0, 1.0, 2.0]) == 0.0
    with pytest.raises(ValueError):
        vandermonde_asymptotic([0.0, 1.0, 2.0], 1.0, 1.0)


def test_vandermonde_two_walkers_first_order():
    c2 = 1 / math.sqrt(math.pi)
    for t in (1e2, 1e4, 1e6):
        r = pnc_pfaffian_1d([0.0, 1.0], t) / vandermonde_asymptotic([0.0, 1.0], t, c2)
        assert r == pytest.approx(1.0, abs=1.0 / t)


def test_four_walker_constant_stable():
    xs = [0.0, 1.0, 2.0, 3.0]
    a, b = fit_cN(xs, 1e4), fit_cN(xs, 1e6)
    assert abs(a / b - 1) < 0.01
    # the constant does not depend on the starting configuration
    assert fit_cN([0.0, 0.5, 2.0, 5.0], 1e6) == pytest.approx(b, rel=1e-4)
    assert vandermonde_asymptotic(xs, 1e6, b) == pytest.approx(pnc_pfaffian_1d(xs, 1e6, precision=50), rel=1e-12)


@pytest.mark.parametrize("t", [0.25, 4.0])
def test_brownian_mc_matches_pfaffian(t):
    xs = [0.0, 1.0, 2.0, 3.0]
    s = brownian_pnc_mc(xs, [t], 100_000, seed=11)
    assert abs(s.mean[0] - pnc_pfaffian_1d(xs, t)) <= 3 * s.stderr[0]


def test_brownian_mc_two_walkers_curve():
    ts = [0.1, 0.5, 2.0]
    s = brownian_pnc_mc([0.0, 1.0], ts, 50_000, seed=3)
    for k, t in enumerate(ts):
        assert abs(s.mean[k] - pnc_pfaffian_1d([0.0, 1.0], t)) <= 3 * s.stderr[k]
    assert np.all(np.diff(s.mean) <= 0)


def test_brownian_mc_reproducible():
    a = brownian_pnc_mc([0.0, 1.0, 2.0, 3.0], [1.0], 5000, seed=2, threads=1)
    b = brownian_pnc_mc([0.0, 1.0, 2.0, 3.0], [1.0], 5000, seed=2, threads=3)
    assert a.mean[0] == b.mean[0]


def test_long_time_example_is_rare():
    # at t = 100 the exact value is ~1.6e-7, so 10^6 samples should see almost no survivors
    xs = [0.0, 1.0, 2.0, 3.0]
    p = pnc_pfaffian_1d(xs, 100.0)
    assert 1e-7 < p < 2e-7
    s = brownian_pnc_mc(xs, [100.0], 1_000_000, seed=5)
    assert s.mean[0] * 1_000_000 <= 3


def test_to_json_digits(tmp_path):
    text = to_json({"p": math.pi, "xs": [1 / 3]}, tmp_path / "v.json")
    d = json.loads(text)
    assert d["p"] == float("3.14159265358979") and d["xs"][0] == float("0.333333333333333")
    assert json.loads((tmp_path / "v.json").read_text()) == d
