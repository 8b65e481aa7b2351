from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqperm.errors import InvalidArgumentError, InvalidStateError
from seqperm.pvalue_core import (AvBcParams, BesagCliffordParams, BinMixParams,
                                 ClassicalParams, LossState, PValueProcess,
                                 aggressive, avbc_pvalue, bc_pvalue,
                                 bc_stopping_time, binmix_alpha_star,
                                 binmix_calibrated_pvalue, binmix_rejects_at,
                                 binmix_wealth, exact_fraction, gamma_h,
                                 perm_pvalue, trajectory)

indicators = st.lists(st.integers(0, 1), min_size=0, max_size=120)


def test_loss_state_validation():
    with pytest.raises(InvalidArgumentError):
        LossState(2, 3)
    with pytest.raises(InvalidArgumentError):
        LossState().update(2)
    assert LossState.from_indicators([1, 0, 1]) == LossState(3, 2)
    assert [s.losses for s in trajectory([1, 0, 1])] == [0, 1, 1, 2]


def test_perm_pvalue():
    assert perm_pvalue(0, 999) == 1 / 1000
    assert perm_pvalue(9, 999) == 0.01
    with pytest.raises(InvalidArgumentError):
        perm_pvalue(5, 3)


def test_bc_pvalue():
    assert bc_pvalue(LossState(40, 10), 10, 1000) == 0.25
    assert bc_pvalue(LossState(1000, 3), 10, 1000) == 4 / 1001
    with pytest.raises(InvalidStateError):
        bc_pvalue(LossState(5, 2), 10, 1000)


def test_avbc_values():
    assert avbc_pvalue(LossState(0, 0), 10) == 1.0
    assert avbc_pvalue(LossState(30, 10), 10) == 10 / 30
    with pytest.raises(InvalidStateError):
        avbc_pvalue(LossState(30, 11), 10)
    # at the hitting time avBC coincides with BC
    assert avbc_pvalue(LossState(40, 10), 10) == bc_pvalue(LossState(40, 10), 10, 1000)


def test_worked_example_values():
    # h=10 at alpha 0.05: t = 190 + l with l losses gives p = 10 / 200
    for l in range(10):
        p = avbc_pvalue(LossState(190 + l, l), 10)
        assert Fraction(10, 190 + l + 10 - l) == Fraction(1, 20)
        assert p == 0.05


def test_exact_fraction():
    assert exact_fraction(0.1) == Fraction(1, 10)
    assert exact_fraction(np.float64(0.05)) == Fraction(1, 20)


@settings(max_examples=100, deadline=None)
@given(ind=indicators, h=st.integers(1, 6))
def test_avbc_process_nonincreasing_and_frozen(ind, h):
    proc = PValueProcess(AvBcParams(h))
    prev = 1.0
    for x in ind:
        proc = proc.update(x)
        assert proc.pvalue <= prev
        prev = proc.pvalue
    g = gamma_h(ind, h)
    if g is not None:
        assert proc.state.t == g
        assert proc.pvalue == pytest.approx(h / g)
    else:
        assert proc.state.t == len(ind)


@settings(max_examples=60, deadline=None)
@given(ind=indicators, h=st.integers(1, 6), B=st.integers(1, 60))
def test_bc_process_stops(ind, h, B):
    ind = ind + [0] * B
    proc = PValueProcess(BesagCliffordParams(h, B))
    n = 0
    while not proc.frozen:
        proc = proc.update(ind[n])
        n += 1
    assert n == bc_stopping_time(ind, h, B)
    assert proc.pvalue == bc_pvalue(proc.state, h, B)
    with pytest.raises(InvalidStateError):
        proc.update(0)


def test_classical_process():
    proc = PValueProcess(ClassicalParams(3)).run([1, 0, 0])
    assert proc.frozen and proc.pvalue == 0.5
    assert PValueProcess(ClassicalParams(3)).run([0, 0]).pvalue == 1.0
    with pytest.raises(InvalidStateError):
        proc.update(1)


def test_aggressive_is_h1():
    assert aggressive() == AvBcParams(1)
    proc = PValueProcess(aggressive()).run([0, 0, 0, 1, 0, 0])
    assert proc.state == LossState(4, 1)
    assert proc.pvalue == 0.25


def test_binmix_wealth_start():
    # wealth starts at 1 for any c
    for c in (0.01, 0.3, 0.9):
        assert binmix_wealth(LossState(0, 0), c) == pytest.approx(1.0)


def test_alpha_star_closed_form():
    # with zero losses: smallest a with 1 - (1 - 0.9 a)^(t+1) >= 0.9
    for t, frozen in [(50, 0.049049656146078726943), (10, 0.20985463245590323187),
                      (100, 0.025044404837610024643)]:
        a = binmix_alpha_star(0, t, 0.9)
        assert a == pytest.approx(frozen, abs=2e-9)
        assert a >= frozen
        assert binmix_rejects_at(LossState(t, 0), 0.9, a)


@settings(max_examples=60, deadline=None)
@given(t=st.integers(0, 400), frac=st.floats(0, 1), b=st.sampled_from([0.5, 0.9]))
def test_alpha_star_is_threshold(t, frac, b):
    L = int(frac * t)
    a = binmix_alpha_star(L, t, b)
    if a < 1.0:
        assert binmix_rejects_at(LossState(t, L), b, a)
        if a > 2e-9:
            assert not binmix_rejects_at(LossState(t, L), b, a - 2e-9)
    else:
        assert not binmix_rejects_at(LossState(t, L), b, 1 - 1e-9)


@settings(max_examples=40, deadline=None)
@given(ind=indicators)
def test_binmix_process_is_running_min(ind):
    proc = PValueProcess(BinMixParams(0.9)).run(ind)
    hist = trajectory(ind)
    assert proc.pvalue == binmix_calibrated_pvalue(hist, 0.9)


def test_params_validation():
    for bad in (lambda: ClassicalParams(0), lambda: BesagCliffordParams(0, 5),
                lambda: AvBcParams(0), lambda: BinMixParams(1.0)):
        with pytest.raises(InvalidArgumentError):
            bad()
