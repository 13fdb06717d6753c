import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from optloss.core import Dataset
from optloss.errors import DomainError, UnsupportedError
from optloss.oracles import GaussianOracle, empirical_jstar, finite_mixture_jstar, gaussian_jstar

# J* for x0 uniform on {-1, +1} at alpha = sigma = 1, frozen from an independent
# adaptive quadrature of 1 - E[tanh(x_t)^2] (scipy.integrate.quad, abs err ~7e-15).
TWO_POINT_SIGMA1 = 0.4495995092066728
TWO_POINTS = ([[-1.0], [1.0]], [0.5, 0.5])


def test_gaussian_examples():
    o = GaussianOracle(dim=1)
    assert gaussian_jstar(o, 1.0, 0.0) == 0.0
    assert gaussian_jstar(o, 1.0, 1.0) == 0.5
    o8 = GaussianOracle(scale=1.3, dim=8)
    assert gaussian_jstar(o8, 1.0, 1e9 * 1.3) == pytest.approx(o8.variance, rel=1e-6)


def test_gaussian_matches_monte_carlo_regression():
    # For jointly Gaussian (x0, xt) the best predictor is linear, so the residual
    # of a least-squares fit estimates the conditional variance without the formula.
    rng = np.random.default_rng(11)
    n = 1_000_000
    x0 = rng.standard_normal(n)
    xt = x0 + rng.standard_normal(n)
    slope = np.dot(xt, x0) / np.dot(xt, xt)
    r2 = (x0 - slope * xt) ** 2
    se = r2.std() / math.sqrt(n)
    assert abs(r2.mean() - gaussian_jstar(GaussianOracle(), 1.0, 1.0)) < 3 * se


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.1, 5))
def test_gaussian_monotone_and_bounded(s1, s2, scale):
    o = GaussianOracle(scale=scale, dim=3)
    lo, hi = sorted((s1, s2))
    assert 0 <= gaussian_jstar(o, 1.0, lo) <= gaussian_jstar(o, 1.0, hi) <= o.variance


def test_mixture_single_point_is_zero():
    assert finite_mixture_jstar([[0.3, 0.1]], [1.0], 1.0, 2.0) == 0.0


def test_mixture_two_point_reference():
    assert finite_mixture_jstar(*TWO_POINTS, 1.0, 1.0) == pytest.approx(TWO_POINT_SIGMA1, abs=1e-12)


def test_mixture_large_sigma_is_variance():
    assert finite_mixture_jstar(*TWO_POINTS, 1.0, 1e6) == pytest.approx(1.0, abs=1e-8)


# Smaller sigma sharpens the posterior switch between the two points, so the
# rule needs more nodes before doubling stops changing the result.
@pytest.mark.parametrize("sigma,nodes", [(0.3, 1024), (0.5, 256), (1.0, 128), (3.0, 128)])
def test_mixture_node_doubling_converges(sigma, nodes):
    a = finite_mixture_jstar(*TWO_POINTS, 1.0, sigma, nodes)
    b = finite_mixture_jstar(*TWO_POINTS, 1.0, sigma, 2 * nodes)
    assert abs(a - b) < 1e-10


@pytest.mark.parametrize("sigma", [0.3, 0.5, 2.0])
def test_mixture_matches_adaptive_quadrature(sigma):
    def integrand(e):
        return math.exp(-e * e / 2) / math.sqrt(2 * math.pi) * math.tanh((1 + sigma * e) / sigma**2) ** 2

    ref = 1.0 - quad(integrand, -40, 40, epsabs=1e-15, epsrel=1e-13, limit=500, points=[-1 / sigma])[0]
    assert finite_mixture_jstar(*TWO_POINTS, 1.0, sigma, 2048) == pytest.approx(ref, rel=1e-9, abs=1e-14)


def test_mixture_2d_factorizes():
    # Independent coordinates: J* adds across dimensions.
    pts = [[-1.0, -2.0], [-1.0, 2.0], [1.0, -2.0], [1.0, 2.0]]
    j2 = finite_mixture_jstar(pts, [0.25] * 4, 1.0, 1.0, 64)
    j1a = finite_mixture_jstar([[-1.0], [1.0]], [0.5, 0.5], 1.0, 1.0, 64)
    j1b = finite_mixture_jstar([[-2.0], [2.0]], [0.5, 0.5], 1.0, 1.0, 64)
    assert j2 == pytest.approx(j1a + j1b, abs=1e-10)


def test_mixture_bounded_by_variance(rng):
    pts = rng.standard_normal((5, 2))
    p = np.full(5, 0.2)
    var = float(np.sum((pts - pts.mean(0)) ** 2) / 5)
    for s in (0.1, 1.0, 10.0):
        assert 0 <= finite_mixture_jstar(pts, p, 1.0, s, 48) <= var + 1e-12


def test_mixture_errors():
    with pytest.raises(UnsupportedError):
        finite_mixture_jstar(np.zeros((2, 3)), [0.5, 0.5], 1.0, 1.0)
    with pytest.raises(DomainError):
        finite_mixture_jstar(*TWO_POINTS, 1.0, 1.0, quadrature_nodes=16)
    with pytest.raises(DomainError):
        finite_mixture_jstar([[0.0], [1.0]], [0.5, 0.6], 1.0, 1.0)


def test_empirical_equals_equal_weight_mixture():
    ds = Dataset(np.array([[-1.0], [1.0]]))
    assert empirical_jstar(ds, 1.0, 1.0) == finite_mixture_jstar(*TWO_POINTS, 1.0, 1.0)
