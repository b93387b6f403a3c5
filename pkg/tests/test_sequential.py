from fractions import Fraction

import numpy as np
import pytest

from cohomlab.errors import InvalidParameter, NonEquivariantMeasure, TailNotConverged
from cohomlab.fiberspace import FourierFunction, UlamFunction
from cohomlab.livsic import planted_observable
from cohomlab.sequential import (
    SequentialProblem,
    ac_variation,
    binary_digits,
    decompose,
    direct_U,
    limexp_curve,
    martingale_orthogonality,
    reconstruct_H,
    tv_with_jumps,
    variance_curve,
    variance_direct,
    variance_sup_probe,
)
from cohomlab.transfer import (
    FiberedSystem,
    FourierLinearTransfer,
    LinearFullBranch,
    PiecewiseLinearMap,
    UlamTransfer,
)


def alternating(J, b=Fraction(1, 5)):
    ops = [FourierLinearTransfer(LinearFullBranch(2 if j % 2 == 0 else 3, b)) for j in range(J + 1)]
    return FiberedSystem.sequential(ops)


def H_seq(j):
    return FourierFunction.cos(1) if j % 2 == 0 else FourierFunction.sin(1) + 0.5 * FourierFunction.cos(2)


@pytest.fixture(scope="module")
def planted():
    s = alternating(40)
    prob = SequentialProblem(s, planted_observable(s, H_seq), J=40)
    return prob, decompose(prob)


def test_identity_and_annihilation(planted):
    prob, dec = planted
    assert max(dec.identity_residual.values()) < 1e-12
    assert max(dec.L_M.values()) < 1e-12
    assert max(dec.direct_U_gap.values()) < 1e-12
    # int U_j d mu_j = 0 because every term is a pushed-forward centered function
    assert max(abs(v) for v in dec.int_U.values()) < 1e-14


def test_direct_U_matches_recursion(planted):
    prob, dec = planted
    for j in (1, 5, 9):
        assert (direct_U(prob, j) - dec.U[j]).norm_B() < 1e-12


def test_orthogonality(planted):
    prob, dec = planted
    assert martingale_orthogonality(prob, dec, max_gap=3, fibers=range(10)) < 1e-12


def test_variance_recursion_matches_direct():
    s = alternating(12)
    prob = SequentialProblem(s, lambda j: FourierFunction.cos(1) + FourierFunction.cos(2), J=12)
    curve = variance_curve(prob, 12)
    for n in (1, 4, 9, 12):
        assert curve[n] == pytest.approx(variance_direct(prob, n), rel=1e-12, abs=1e-14)


def test_variance_bounded_for_planted(planted):
    prob, dec = planted
    probe = variance_sup_probe(prob, 40, dec=dec)
    assert probe["verdict"] == "Bounded"
    assert max(probe["variance"]) < 5


def test_variance_grows_for_cos():
    s = alternating(40)
    prob = SequentialProblem(s, lambda j: FourierFunction.cos(1), J=40)
    probe = variance_sup_probe(prob, 40)
    # orbits of cos under k x + b give mutually orthogonal modes: Var_n = n / 2
    assert probe["slope"] == pytest.approx(0.5, abs=1e-12)
    assert probe["verdict"] == "Unbounded"


def test_reconstruction_planted(planted):
    prob, dec = planted
    pts = [Fraction(2 * i + 1, 64) for i in range(32)]
    rec = reconstruct_H(prob, dec, 3, 30, pts)
    truth = H_seq(3).evaluate(np.array([float(p) for p in pts]))
    d = rec.values - truth
    assert np.max(np.abs(d - d.mean())) < 1e-12
    curve = limexp_curve(prob, dec, H_seq, range(0, 20))
    assert curve[0] > 0.1
    assert np.all(curve[2:] < 1e-12)


def test_reconstruction_tail_failure():
    s = alternating(40)
    prob = SequentialProblem(s, lambda j: FourierFunction.cos(1), J=40)
    dec = decompose(prob, check_direct=0)
    with pytest.raises(TailNotConverged):
        reconstruct_H(prob, dec, 0, 30)
    with pytest.raises(InvalidParameter):
        reconstruct_H(prob, dec, 20, 30)


def _markov_sequence(N):
    T = PiecewiseLinearMap([(0, 2 / 3, 1.5, 0), (2 / 3, 1, 2, -4 / 3)])
    s = FiberedSystem.sequential([UlamTransfer(T, N) for _ in range(20)])
    F = UlamFunction.from_function(lambda x: np.cos(2 * np.pi * x), N)
    return s, (lambda j: F)


def test_non_equivariant_needs_rebase():
    s, F = _markov_sequence(300)
    with pytest.raises(NonEquivariantMeasure):
        SequentialProblem(s, F, J=20)
    prob = SequentialProblem(s, F, J=20, rebase=True)
    assert prob.rebased
    dec = decompose(prob, check_direct=4)
    assert max(dec.identity_residual.values()) < 1e-10


def test_ulam_annihilation_is_first_order():
    # the Ulam Koopman matrix is not multiplicative, so L M = 0 holds up to O(1/N)
    worst = []
    for N in (300, 600):
        s, F = _markov_sequence(N)
        prob = SequentialProblem(s, F, J=20, rebase=True)
        dec = decompose(prob, check_direct=0)
        worst.append(max(prob.L(j, dec.M[j]).l1() for j in range(20)))
    assert worst[0] / worst[1] == pytest.approx(2.0, rel=0.05)
    assert worst[1] < 2e-3


def test_binary_digits_oracle():
    p = np.array([1, 5, 11, 2 ** 20 - 1])
    q = 2 ** 20
    digits = binary_digits(p, q, 20)
    for row, pp in zip(digits, p):
        ref = [int(c) for c in format(pp, "020b")]
        assert row.tolist() == ref


def test_counterexample_variations():
    # d/dx sum_k 2^{-k} f(2^k x) = n for f(x) = x - 1/2
    x = (np.arange(512) + 0.5) / 512
    for n in (1, 3, 10):
        assert ac_variation(n, x) == pytest.approx(n)
    # every jump of the partial sum has total size n as well, so TV = 2n
    for n in (1, 2, 5, 9):
        assert tv_with_jumps(n) == pytest.approx(2 * n)
    with pytest.raises(InvalidParameter):
        tv_with_jumps(21)
