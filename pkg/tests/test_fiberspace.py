import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cohomlab.errors import BackendMismatch, DomainMismatch, InvalidParameter
from cohomlab.fiberspace import (
    CylinderDomain,
    CylinderFunction,
    FourierFunction,
    UlamFunction,
    integrate as fs_integrate,
    lp_norm,
    norm_B,
)
from cohomlab.symbolic import SftSpec, gibbs


def test_fourier_integral_matches_quadrature():
    f = FourierFunction.cos(1) + FourierFunction.sin(3, 0.5) + 0.25
    f2 = f * f
    ref, _ = integrate.quad(lambda x: float(f2.evaluate(x)), 0, 1, limit=200)
    assert f2.integral() == pytest.approx(ref, abs=1e-12)
    # Parseval: 0.25^2 + 1/2 + 0.25/2
    assert f2.integral() == pytest.approx(0.0625 + 0.5 + 0.125, abs=1e-14)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_fourier_variation_of_cosine(k):
    # total variation of cos(2 pi k x) is 4k; the grid value is a lower bound
    # within O((k/M)^2) on the 1024-point norm grid
    v = FourierFunction.cos(k).variation()
    assert 4 * k * (1 - (np.pi * k / 1024) ** 2) <= v <= 4 * k + 1e-12
    assert FourierFunction.cos(k).l1() == pytest.approx(2 / np.pi, rel=1e-4)
    assert FourierFunction.cos(k).sup() == pytest.approx(1.0, abs=1e-12)


def test_fourier_exp_matches_bessel():
    from scipy.special import iv

    e = (FourierFunction.cos(1) * 0.7).exp()
    assert e.integral() == pytest.approx(iv(0, 0.7), abs=1e-14)
    assert e.coeff(1).real == pytest.approx(iv(1, 0.7), abs=1e-14)
    assert e.truncation_error < 1e-14


def test_fourier_from_function():
    f = FourierFunction.from_function(lambda x: 1 / (2 + np.cos(2 * np.pi * x)), K=40)
    # int 1/(2 + cos) = 1/sqrt(3)
    assert f.integral() == pytest.approx(1 / np.sqrt(3), abs=1e-14)
    x = np.linspace(0, 1, 17)
    assert np.max(np.abs(f(x) - 1 / (2 + np.cos(2 * np.pi * x)))) < 1e-12


def test_fourier_divide_and_real():
    a = FourierFunction.cos(1) + 3
    q = (a * a) / a
    x = np.linspace(0, 1, 33)
    assert np.allclose(q(x), a(x), atol=1e-12)
    z = FourierFunction.from_modes({1: 1.0})
    assert not z.is_real
    assert np.allclose(z.real(x), np.cos(2 * np.pi * x), atol=1e-14)


def test_ulam_cell_averages():
    f = UlamFunction.from_function(lambda x: x, N=8)
    assert np.allclose(f.values, (np.arange(8) + 0.5) / 8, atol=1e-15)
    assert f.integral() == pytest.approx(0.5)
    assert f.variation() == pytest.approx(7 / 8)
    g = UlamFunction.from_function(lambda x: x ** 2, N=16)
    assert g.integral() == pytest.approx(1 / 3, abs=1e-15)


def _bernoulli_state():
    return gibbs(SftSpec.full_shift(2), np.zeros((2, 2)), 0, 30, burn=0)


def test_cylinder_integral_bernoulli():
    st_ = _bernoulli_state()
    d = CylinderDomain(st_, 3)
    f = CylinderFunction.from_words(d, 3, lambda w: w @ np.array([4.0, 2.0, 1.0]))
    # mean of a uniform 3-bit integer
    assert f.integral() == pytest.approx(3.5, abs=1e-14)
    assert f.sup() == 7
    # neighbours differing first at index k are 2^{-k} apart
    assert f.variation() == pytest.approx(7.0)
    c = f.condition(1)
    assert np.allclose(c.tensor, [1.5, 5.5])


def test_cylinder_markov_integral():
    P = np.array([[0.9, 0.1], [0.4, 0.6]])
    st_ = gibbs(SftSpec.full_shift(2), np.log(P), -50, 50)
    d = CylinderDomain(st_, 0)
    f = CylinderFunction.from_words(d, 2, lambda w: (w[:, 0] == 0) & (w[:, 1] == 1))
    assert f.integral() == pytest.approx(0.8 * 0.1, abs=1e-12)


def test_norms_and_functional_interface():
    f = FourierFunction.cos(2)
    assert norm_B(f) == pytest.approx(2 / np.pi + 8, rel=1e-5)
    assert lp_norm(f, 2) == pytest.approx(np.sqrt(0.5), rel=1e-10)
    assert lp_norm(f, np.inf) == pytest.approx(1.0)
    assert fs_integrate(f + 2) == pytest.approx(2.0)


def test_mismatches():
    with pytest.raises(BackendMismatch):
        FourierFunction.cos(1) + UlamFunction.constant(1.0, 8)
    with pytest.raises(BackendMismatch):
        UlamFunction.constant(1.0, 8) + UlamFunction.constant(1.0, 16)
    st_ = _bernoulli_state()
    with pytest.raises(DomainMismatch):
        CylinderFunction.constant(CylinderDomain(st_, 0)) + CylinderFunction.constant(CylinderDomain(st_, 1))
    with pytest.raises(InvalidParameter):
        FourierFunction([1.0, 2.0])


def test_immutability():
    f = FourierFunction.cos(1)
    with pytest.raises(ValueError):
        f.coeffs[0] = 3
    g = f + 1
    assert f.coeff(0) == 0 and g.coeff(0) == 1


coef = st.lists(st.floats(-2, 2, allow_nan=False), min_size=5, max_size=5)


@settings(max_examples=40, deadline=None)
@given(a=coef, b=coef, s=st.floats(-3, 3, allow_nan=False))
def test_fourier_algebra_pointwise(a, b, s):
    f, g = FourierFunction(a), FourierFunction(b)
    x = np.linspace(0, 1, 13)
    assert np.allclose((f + g)(x), f(x) + g(x), atol=1e-12)
    assert np.allclose((f * g)(x), f(x) * g(x), atol=1e-11)
    assert np.allclose((f * s)(x), s * f(x), atol=1e-12)
    assert (f + g).variation() <= f.variation() + g.variation() + 1e-9


@settings(max_examples=40, deadline=None)
@given(v=st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=32))
def test_ulam_norm_properties(v):
    f = UlamFunction(v)
    assert f.l1() <= f.sup() + 1e-15
    assert abs(f.integral()) <= f.l1() + 1e-15
    assert f.variation() == pytest.approx(np.sum(np.abs(np.diff(v))))
