import numpy as np
import pytest

from cohomlab.driving import FiniteCycle, IidSymbols, materialize
from cohomlab.errors import NotACoboundary, TailNotConverged
from cohomlab.fiberspace import FourierFunction, UlamFunction
from cohomlab.livsic import (
    CoboundaryProblem,
    birkhoff_exact,
    birkhoff_monte_carlo,
    birkhoff_sum,
    chi_terms,
    detector_functional,
    green_kubo,
    planted_observable,
    sigma2,
    solve,
)
from cohomlab.transfer import FiberedSystem, LinearFullBranch, MapFamily, PiecewiseLinearMap


def doubling(window=200):
    fam = MapFamily({0: LinearFullBranch(2)}, "fourier")
    return FiberedSystem.from_orbit(materialize(FiniteCycle(1), 0, window), fam)


def two_fiber(window=200):
    fam = MapFamily({0: LinearFullBranch(2, 0.2), 1: LinearFullBranch(3, 0.2)}, "fourier")
    return FiberedSystem.from_orbit(materialize(IidSymbols(2, 7), 0, window), fam)


def sup_mod_const(f, g):
    d = f - g
    return (d - d.integral()).sup()


def test_planted_doubling_recovery():
    s = doubling()
    H = lambda i: FourierFunction.cos(1)  # noqa: E731
    res = solve(CoboundaryProblem(s, planted_observable(s, H)), fibers=range(0, 6))
    assert res.verdict == "Coboundary"
    for i, Hi in res.H.items():
        assert sup_mod_const(Hi, H(i)) < 1e-12
    assert max(res.residual.values()) < 1e-12


def test_planted_two_fiber_recovery():
    s = two_fiber()
    H = lambda i: FourierFunction.cos(1) if s.label(i) == 0 else FourierFunction.sin(1)  # noqa: E731
    prob = CoboundaryProblem(s, planted_observable(s, H))
    res = solve(prob, fibers=range(-4, 4))
    assert res.verdict == "Coboundary"
    assert max(sup_mod_const(res.H[i], H(i)) for i in res.H) < 1e-10
    assert max(res.L_pi.values()) < 1e-12


def test_cos_not_a_coboundary():
    s = doubling()
    prob = CoboundaryProblem(s, lambda i: FourierFunction.cos(1))
    with pytest.raises(NotACoboundary) as info:
        solve(prob, fibers=range(0, 4))
    res = info.value.result
    # cos(2 pi x) is orthogonal to cos(2 pi 2^n x) for n >= 1, so Sigma^2 = 1/2
    assert res.sigma2["gk"] == pytest.approx(0.5, abs=1e-12)
    assert res.sigma2["birkhoff"] == pytest.approx(0.5, abs=1e-12)
    # chi = 0 and pi = F: L cos = 0
    assert res.pi_norm_B[0] == pytest.approx(FourierFunction.cos(1).norm_B())
    assert max(res.L_pi.values()) < 1e-15


def test_green_kubo_two_modes():
    # F = cos 2 pi x + cos 4 pi x: only the lag-1 covariance (= 1/2) survives
    s = doubling()
    F = FourierFunction.cos(1) + FourierFunction.cos(2)
    s2, tail, acov = green_kubo(CoboundaryProblem(s, lambda i: F), 0, 10)
    assert s2 == pytest.approx(2.0, abs=1e-14)
    assert acov[1] == pytest.approx(0.5, abs=1e-15)
    assert tail == 0.0


def test_birkhoff_exact_matches_direct_sum():
    # direct Parseval on the Koopman-composed Birkhoff sum
    s = two_fiber()
    F = lambda i: FourierFunction.cos(1) + 0.3 * FourierFunction.sin(2)  # noqa: E731
    prob = CoboundaryProblem(s, F)
    n = 8
    S = birkhoff_sum(s, prob.Ft, 0, n)
    direct = float(np.sum(np.abs(S.coeffs) ** 2)) / n
    assert birkhoff_exact(prob, 0, n) == pytest.approx(direct, rel=1e-12)


def test_birkhoff_sum_telescopes():
    s = two_fiber(30)
    H = lambda i: FourierFunction.cos(1) if s.label(i) == 0 else FourierFunction.sin(2)  # noqa: E731
    F = planted_observable(s, H)
    S = birkhoff_sum(s, F, -5, 6)
    from cohomlab.transfer import koopman_power

    ref = koopman_power(s, -5, 6, H(1)) - H(-5)
    assert (S - ref).sup() < 1e-12


def test_monte_carlo_birkhoff():
    s = doubling()
    prob = CoboundaryProblem(s, lambda i: FourierFunction.cos(1))
    m, se = birkhoff_monte_carlo(prob, 0, 20, 4000, np.random.default_rng(0))
    assert abs(m - 0.5) < 5 * se


def _markov_planted(N):
    # Markov map with invariant density 9/8, 3/4
    T = PiecewiseLinearMap([(0, 2 / 3, 1.5, 0), (2 / 3, 1, 2, -4 / 3)])
    fam = MapFamily({0: T}, "ulam", N)
    s = FiberedSystem.from_orbit(materialize(FiniteCycle(1), 0, 200), fam)
    Hf = UlamFunction.from_function(lambda x: np.cos(2 * np.pi * x), N)
    prob = CoboundaryProblem(s, planted_observable(s, lambda i: Hf))
    res = solve(prob, fibers=range(0, 2), raise_on_failure=False)
    d = res.H[0] - Hf
    d = d - prob.cocycle.equivariant_integral(0, d)
    return prob, res, d.sup()


def test_nontrivial_density_planted_ulam_converges():
    # the Ulam Koopman matrix is not a composition operator, so pi and the
    # recovery error are O(1/N) and Sigma^2 is O(1/N^2)
    prob, r1, e1 = _markov_planted(600)
    _, r2, e2 = _markov_planted(1200)
    assert not prob.cocycle.trivial
    assert r1.pi_norm[0] / r2.pi_norm[0] == pytest.approx(2.0, rel=0.1)
    assert e1 / e2 == pytest.approx(2.0, rel=0.1)
    assert r1.sigma2["gk"] / r2.sigma2["gk"] == pytest.approx(4.0, rel=0.1)
    assert e2 < 1e-2 and r2.verdict == "Coboundary"


def test_series_terms_decay_and_window():
    s = doubling(window=4)
    F = planted_observable(s, lambda i: FourierFunction.cos(1) + FourierFunction.cos(3))
    prob = CoboundaryProblem(s, F)
    terms = chi_terms(prob, 0)
    assert terms[-1] < 1e-13
    # a non-smooth-enough observable needs many terms; a short window cannot hold them
    G = FourierFunction(np.exp(-0.05 * np.abs(np.arange(-200, 201))))
    with pytest.raises(TailNotConverged):
        chi_terms(CoboundaryProblem(s, lambda i: G), 0)


def test_detector_functional():
    s = doubling()
    H = lambda i: FourierFunction.cos(1)  # noqa: E731
    prob = CoboundaryProblem(s, planted_observable(s, H))
    out = detector_functional(prob, H, 0.3, 0, n=3)
    assert out["residual"] < 1e-12
    assert out["functional_norm_estimate"] > 0.1
    bad = CoboundaryProblem(s, lambda i: FourierFunction.cos(1))
    zero = lambda i: FourierFunction.constant(0.0)  # noqa: E731
    assert detector_functional(bad, zero, 0.3, 0, n=1)["residual"] > 1e-3


def test_sigma2_modes():
    s = doubling()
    prob = CoboundaryProblem(s, lambda i: FourierFunction.cos(1))
    out = sigma2(prob, n_max=10, fibers=[0], birkhoff="none")
    assert out["birkhoff_method"] == "none" and "birkhoff" not in out
    assert out["martingale"] == pytest.approx(0.5, abs=1e-14)
