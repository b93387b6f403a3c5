import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cohomlab.driving import (
    CircleRotation,
    FiniteCycle,
    IidSymbols,
    MarkovSymbols,
    base_from_config,
    materialize,
    step,
)
from cohomlab.errors import HorizonExceeded, InvalidParameter


def test_finite_cycle_step():
    assert step(FiniteCycle(3), 0, 4) == 1
    assert step(FiniteCycle(3), 2, -5) == 0


def test_rotation_step():
    assert step(CircleRotation(0.25), 0.1, 2) == pytest.approx(0.6, abs=1e-15)
    assert step(CircleRotation(0.25), 0.1, -1) == pytest.approx(0.85, abs=1e-15)


def test_finite_cycle_orbit_labels():
    orb = materialize(FiniteCycle(2), 0, 3)
    assert orb.labels == (1, 0, 1, 0, 1, 0, 1)
    assert len(orb) == 7
    assert orb.label(-3) == 1 and orb.label(0) == 0


def test_markov_identity_is_constant():
    orb = materialize(MarkovSymbols(((1.0, 0.0), (0.0, 1.0)), seed=3, start=0), 0, 25)
    assert set(orb.labels) == {0}


def test_iid_same_seed_same_stream():
    a = materialize(IidSymbols(2, 7), 0, 10)
    b = materialize(IidSymbols(2, 7), 0, 10)
    c = materialize(IidSymbols(2, 8), 0, 10)
    assert len(a.labels) == 21
    assert a.labels == b.labels
    assert a.labels != c.labels


def test_iid_frequencies():
    base = IidSymbols(3, 11, probabilities=(0.5, 0.3, 0.2), horizon=20000)
    counts = np.bincount(base.stream, minlength=3) / base.stream.size
    # binomial standard error is below 4e-3 for 40001 draws
    assert np.allclose(counts, [0.5, 0.3, 0.2], atol=0.015)


def test_markov_frequencies_match_stationary():
    P = ((0.9, 0.1), (0.4, 0.6))
    base = MarkovSymbols(P, seed=5, horizon=20000)
    assert np.allclose(base.stationary(), [0.8, 0.2], atol=1e-12)
    freq = np.mean(base.stream == 0)
    assert abs(freq - 0.8) < 0.02
    s = base.stream
    trans01 = np.sum((s[:-1] == 0) & (s[1:] == 1)) / np.sum(s[:-1] == 0)
    assert abs(trans01 - 0.1) < 0.01


def test_window_and_stream_horizons():
    orb = materialize(FiniteCycle(5), 0, 4)
    with pytest.raises(HorizonExceeded):
        orb.label(5)
    base = IidSymbols(2, 1, horizon=10)
    with pytest.raises(HorizonExceeded):
        base.step(8, 3)
    with pytest.raises(HorizonExceeded):
        materialize(base, 0, 11)


@pytest.mark.parametrize("bad", [
    lambda: FiniteCycle(0),
    lambda: CircleRotation(1.0),
    lambda: IidSymbols(2, 0, probabilities=(0.5, 0.6)),
    lambda: MarkovSymbols(((0.5, 0.4), (0.5, 0.5)), seed=0),
    lambda: materialize(FiniteCycle(2), 0, -1),
    lambda: base_from_config({"kind": "Lorenz"}),
    lambda: base_from_config({"kind": "FiniteCycle"}),
])
def test_invalid_parameters(bad):
    with pytest.raises(InvalidParameter):
        bad()


@pytest.mark.parametrize("base", [
    FiniteCycle(4),
    CircleRotation(0.3),
    IidSymbols(3, 2, probabilities=(0.2, 0.3, 0.5), horizon=50),
    MarkovSymbols(((0.9, 0.1), (0.4, 0.6)), seed=4, start=1, horizon=50),
])
def test_config_roundtrip(base):
    again = base_from_config(base.to_config())
    assert materialize(again, 0, 20).labels == materialize(base, 0, 20).labels


@settings(max_examples=60, deadline=None)
@given(p=st.integers(1, 12), w=st.integers(-30, 30), j=st.integers(-20, 20), k=st.integers(-20, 20))
def test_cycle_group_action(p, w, j, k):
    b = FiniteCycle(p)
    assert b.step(b.step(w, j), k) == b.step(w, j + k)
    assert b.step(b.step(w, k), -k) == w % p


@settings(max_examples=60, deadline=None)
@given(j=st.integers(-20, 20), k=st.integers(-20, 20))
def test_stream_group_action(j, k):
    b = IidSymbols(2, 3, horizon=50)
    assert b.step(b.step(0, j), k) == b.step(0, j + k)
    # shifting the anchor shifts the labels
    orb0 = materialize(b, 0, 25)
    orb1 = materialize(b, j, 5)
    assert [orb1.label(i) for i in range(-5, 6)] == [orb0.label(j + i) for i in range(-5, 6)]
