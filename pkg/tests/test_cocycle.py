import numpy as np
import pytest

from cohomlab.cocycle import DensityCocycle, decay_probe, fit_exponential, inf_estimate, random_corpus
from cohomlab.driving import IidSymbols, materialize
from cohomlab.errors import FitFailed, HorizonExceeded
from cohomlab.fiberspace import FourierFunction, UlamFunction
from cohomlab.transfer import FiberedSystem, LinearFullBranch, MapFamily, PiecewiseLinearMap

# [0, 2/3) -> [0, 1) with slope 3/2 and [2/3, 1) -> [0, 2/3) with slope 2.
# Solving the two-state Perron-Frobenius balance by hand gives the invariant
# density 9/8 on [0, 2/3) and 3/4 on [2/3, 1).
MARKOV_MAP = PiecewiseLinearMap([(0, 2 / 3, 1.5, 0), (2 / 3, 1, 2, -4 / 3)])
H1, H2 = 9 / 8, 3 / 4


def _exact_density(N):
    x = (np.arange(N) + 0.5) / N
    return np.where(x < 2 / 3, H1, H2)


def _markov_system(N=300, window=60):
    orbit = materialize(IidSymbols(1, 0), 0, window)
    return FiberedSystem.from_orbit(orbit, MapFamily({0: MARKOV_MAP}, "ulam", N))


def _random_fourier(window=60):
    orbit = materialize(IidSymbols(2, 7), 0, window)
    fam = MapFamily({0: LinearFullBranch(2, 0.2), 1: LinearFullBranch(3, 0.2)}, "fourier")
    return FiberedSystem.from_orbit(orbit, fam)


def test_fit_exponential_exact_data():
    n = np.arange(1, 20)
    fit = fit_exponential(n, 3 * np.exp(-0.5 * n))
    assert fit.lam == pytest.approx(0.5, abs=1e-12)
    assert fit.C == pytest.approx(3.0, rel=1e-10)
    assert fit.bound(40) == pytest.approx(3 * np.exp(-20), rel=1e-9)
    exact = fit_exponential(n, np.r_[1.0, np.zeros(18)])
    assert exact.lam is None and exact.bound(5) == 0.0
    with pytest.raises(FitFailed):
        fit_exponential(n, np.zeros(19), exact_ok=False)


def test_markov_map_density():
    s = _markov_system()
    coc = DensityCocycle(s)
    assert not coc.trivial
    v = coc.density(0)
    # cell boundaries align with 2/3 when N is a multiple of 3
    assert np.max(np.abs(v.values - _exact_density(300))) < 1e-12
    assert coc.residual(0) < 1e-12
    assert coc.rho(range(0, 5)) == pytest.approx(H2, abs=1e-12)


def test_normalized_operator_is_markov():
    s = _markov_system()
    coc = DensityCocycle(s)
    one = UlamFunction.constant(1.0, 300)
    assert coc.normalized_apply(0, one).is_constant(1.0, 1e-12)
    rng = np.random.default_rng(0)
    psi = random_corpus("ulam", 1, rng, N=300, mean_zero=False)[0]
    # int L phi d mu_{i+1} = int phi d mu_i
    lhs = coc.equivariant_integral(1, coc.normalized_apply(0, psi))
    assert lhs == pytest.approx(coc.equivariant_integral(0, psi), abs=1e-13)
    assert coc.invariance_residual(0, psi) < 1e-13


def test_trivial_random_fourier():
    s = _random_fourier()
    coc = DensityCocycle(s)
    assert coc.trivial
    assert coc.density(5).is_constant(1.0, 0.0)
    assert max(coc.residual(i) for i in range(-10, 10)) < 1e-14


def test_pullback_seeds_agree():
    s = _markov_system()
    x0 = (np.arange(300) + 0.5) / 300
    a = DensityCocycle(s, start=lambda i: UlamFunction(1 + 0.9 * np.cos(2 * np.pi * x0)))
    b = DensityCocycle(s, start=lambda i: UlamFunction(1 + x0 ** 3))
    fit = DensityCocycle(s).convergence(0, 30)
    diff = (a.density(0) - b.density(0)).norm_B()
    # round-off floor: the variation sums 300 cell differences near 1e-15 each
    assert diff <= 2 * fit.bound(a.depth) + 300 * 1e-14


def test_convergence_rate_is_geometric():
    s = _markov_system()
    fit = DensityCocycle(s).convergence(0, 30)
    assert fit.lam is None or fit.lam > 0.1


def test_depth_beyond_window():
    s = _markov_system(window=10)
    coc = DensityCocycle(s, depth=40)
    with pytest.raises(HorizonExceeded):
        coc.density(0)
    clipped = DensityCocycle(s, depth=40, one_sided=True)
    assert clipped.density(0).integral() == pytest.approx(1.0)


def test_inf_estimate_is_lower_bound():
    f = FourierFunction.cos(3) * 0.5 + 1
    assert inf_estimate(f) <= 0.5 + 1e-12
    assert inf_estimate(f) > 0.49


def test_decay_probe_rate():
    s = _random_fourier()
    rng = np.random.default_rng(3)
    fit = decay_probe(s, random_corpus("fourier", 6, rng, K=16), 12, j=0)
    assert fit.lam > 0.3


def test_report_keys():
    rep = DensityCocycle(_markov_system()).report(range(0, 4))
    assert rep["rho"] == pytest.approx(H2, abs=1e-12)
    assert rep["max_residual"] < 1e-12
    assert set(rep) >= {"depth", "trivial", "fit", "tail_bound", "sup_norm_B"}
