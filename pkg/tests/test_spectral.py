import numpy as np
import pytest

from cohomlab.cocycle import random_corpus
from cohomlab.driving import FiniteCycle, IidSymbols, materialize
from cohomlab.errors import NoSpectralGap
from cohomlab.fiberspace import FourierFunction
from cohomlab.livsic import CoboundaryProblem, planted_observable
from cohomlab.spectral import (
    TwistedCocycle,
    chebyshev_check,
    coboundary_signature,
    decay_check,
    dlambda_dtheta,
    lambda_products,
    triplet,
)
from cohomlab.transfer import FiberedSystem, LinearFullBranch, MapFamily


def doubling(window=300):
    fam = MapFamily({0: LinearFullBranch(2)}, "fourier")
    return FiberedSystem.from_orbit(materialize(FiniteCycle(1), 0, window), fam)


def cos_problem(shift=0.0):
    return CoboundaryProblem(doubling(), lambda i: FourierFunction.cos(1) + shift)


def planted_problem(c=0.0):
    s = doubling()
    F = planted_observable(s, lambda i: FourierFunction.cos(1) + 0.5 * FourierFunction.sin(2))
    return CoboundaryProblem(s, lambda i: F(i) + c)


def test_theta_zero_is_density_and_lebesgue():
    tr = triplet(cos_problem(), 0, 0.0)
    assert tr.lam == pytest.approx(1.0, abs=1e-12)
    assert tr.v.is_constant(1.0, 1e-12)
    assert tr.phi.is_constant(1.0, 1e-10)
    assert tr.eigen_residual < 1e-12


@pytest.mark.parametrize("theta", [0.3, -0.2, 0.15j, 0.2 + 0.1j])
def test_planted_eigenvalue_exact(theta):
    # F = H o T - H + c is cohomologous to c, so lambda^theta = e^{theta c}
    c = 0.4
    tc = TwistedCocycle(planted_problem(c), theta)
    assert tc.lam(0) == pytest.approx(np.exp(theta * c), abs=1e-10)
    tr = tc.triplet(0)
    assert tr.eigen_residual < 1e-8 and tr.adjoint_residual < 1e-8
    assert abs(tr.phi_v - 1) < 1e-12


def test_second_derivative_is_variance():
    prob = cos_problem()
    h = 1e-3
    lp, lm = TwistedCocycle(prob, h).lam(0), TwistedCocycle(prob, -h).lam(0)
    # Sigma^2 = 1/2 for cos 2 pi x under doubling
    assert np.real(lp + lm - 2) / h ** 2 == pytest.approx(0.5, abs=1e-5)


def test_first_derivative_is_mean():
    assert dlambda_dtheta(cos_problem(0.3), 0) == pytest.approx(0.3, abs=1e-6)
    assert abs(dlambda_dtheta(cos_problem(), 0)) < 1e-6


@pytest.mark.parametrize("t", [0.05, 0.1, 0.2])
def test_eigen_residuals_small_imaginary(t):
    tr = triplet(cos_problem(), 0, 1j * t)
    assert tr.eigen_residual < 1e-8
    assert tr.adjoint_residual < 1e-8


def test_decay_check_rate_below_one():
    prob = cos_problem()
    tc = TwistedCocycle(prob, 0.1j)
    corpus = random_corpus("fourier", 4, np.random.default_rng(1), K=12, mean_zero=False)
    C, r, ratios = decay_check(tc, 0, corpus, 12)
    assert r < 1
    assert np.all(ratios <= C * r ** np.arange(1, 13) * (1 + 1e-9))


def test_signature_dichotomy():
    sig = coboundary_signature(cos_problem(), [0.05, 0.1, 0.2], n_max=100)
    assert sig["verdict"] == "decaying"
    # kappa(t) ~ t^2 Sigma^2 / 2 = t^2 / 4
    assert sig["kappa_over_t2"][0] == pytest.approx(0.25, rel=0.01)
    planted = coboundary_signature(planted_problem(), [0.1, 0.2], n_max=60)
    assert planted["verdict"] == "bounded"
    assert min(planted["min_product"]) > 0.999


def test_lambda_products_start_at_one():
    mags = lambda_products(cos_problem(), 0.1, 0, 5)
    assert mags[0] == 1.0 and np.all(np.diff(mags) < 0)


def test_chebyshev_smoothness():
    assert chebyshev_check(cos_problem(), 0) < 1e-8


def test_random_system_triplet():
    fam = MapFamily({0: LinearFullBranch(2, 0.2), 1: LinearFullBranch(3, 0.2)}, "fourier")
    s = FiberedSystem.from_orbit(materialize(IidSymbols(2, 7), 0, 200), fam)
    prob = CoboundaryProblem(s, lambda i: FourierFunction.cos(1) + 0.25 * FourierFunction.sin(2))
    tc = TwistedCocycle(prob, 0.1j)
    for i in range(3):
        tr = tc.triplet(i)
        assert tr.eigen_residual < 1e-8
        assert abs(tr.lam) < 1


def test_no_spectral_gap_raised():
    tc = TwistedCocycle(cos_problem(), 0.3j, depth=2, gap_tol=1e-14)
    with pytest.raises(NoSpectralGap):
        tc.v(0)
