import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqperm.errors import InvalidArgumentError, LimitExceededError
from seqperm.maxt import (ExchangeableGaussianStatistics, SharedPermutationStatistics,
                          closed_testing, combine_sum, maxt_reference,
                          maxt_sequential, sorted_source, threshold_count)
from seqperm.pvalue_core import BinMixParams, PValueProcess
from seqperm.stats_perm import Dataset, ReplayedStatistics


def instance(rng, M, T=4000):
    mu = np.where(rng.random(M) < 0.5, rng.uniform(1, 4, M), 0.0)
    y0 = np.sort(rng.normal(mu))[::-1]
    null = rng.normal(size=(T, M)) + 0.5 * rng.normal(size=(T, 1))
    return y0, null


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), M=st.integers(1, 5), cap=st.integers(5, 3000))
def test_maxt_matches_reference_and_closure(seed, M, cap):
    rng = np.random.default_rng(seed)
    y0, null = instance(rng, M)
    src = ReplayedStatistics(y0, null)
    res = maxt_sequential(src, 0.05, 0.1, cap)
    assert set(res.rejections.indices) == maxt_reference(y0, null, 0.05, 0.1, cap)
    cl = closed_testing(src, "max", 0.05, 0.1, cap)
    assert res.rejections.indices == cl.rejections.indices
    # closure coherence: a rejected i has every intersection containing it rejected
    for t in cl.tests:
        if not t.rejected:
            assert not (t.subset & cl.rejections.indices)


def test_single_hypothesis_is_plain_binmix_test():
    rng = np.random.default_rng(3)
    null = rng.normal(size=(500, 1))
    src = ReplayedStatistics([1.7], null)
    res = maxt_sequential(src, 0.05, 0.1, 500)
    from seqperm import _binom
    ell, t, out = 0, 0, None
    for y in null[:, 0]:
        t += 1
        ell += y >= 1.7
        w = _binom.binom_sf_ufunc(float(ell), t + 1.0, 0.05) / 0.05
        if w < 0.1 or w >= 10 or t == 500:
            out = (w >= 10, t)
            break
    assert (len(res.rejections) == 1, int(res.stopping_times[0])) == out


def test_no_losses_rejects_everything_together():
    y0 = np.array([5.0, 4.0, 3.0])
    null = np.full((200, 3), -10.0)
    res = maxt_sequential(ReplayedStatistics(y0, null), 0.05, 0.1)
    assert len(res.rejections) == 3
    assert len(set(res.rejection_times.tolist())) == 1


def test_closure_small_cases():
    rng = np.random.default_rng(0)
    null = rng.normal(size=(3000, 2))
    # strong evidence on one hypothesis only; the pair test carries it
    cl = closed_testing(ReplayedStatistics([6.0, -3.0], null), "max", 0.05, 0.1, 2000)
    assert cl.rejections.indices == {0}
    assert cl.bound({0}) == 1 and cl.bound({0, 1}) == 1 and cl.bound(set()) == 0
    # nothing rejected when the global intersection is accepted
    cl = closed_testing(ReplayedStatistics([0.1, -0.2], null), "sum", 0.05, 0.1, 2000)
    assert cl.rejections.indices == frozenset()
    assert all(cl.bound(S) <= len(S) for S in ({0}, {1}, {0, 1}))


def test_other_combiners():
    rng = np.random.default_rng(1)
    null = rng.normal(size=(3000, 3))
    src = ReplayedStatistics([5.0, 4.5, -1.0], null)
    for comb in ("sum", threshold_count([1.0, 1.0, 1.0]), combine_sum):
        cl = closed_testing(src, comb, 0.05, 0.1, 2500)
        assert cl.rejections.indices <= {0, 1}
        assert cl.bound(cl.rejections.indices) <= len(cl.rejections)


def test_guards():
    with pytest.raises(LimitExceededError):
        closed_testing(ExchangeableGaussianStatistics(np.zeros(21)), "max")
    with pytest.raises(InvalidArgumentError):
        maxt_sequential(ReplayedStatistics([1.0, 2.0], np.zeros((5, 2))), 0.05, 0.1)
    with pytest.raises(InvalidArgumentError):
        maxt_sequential(ReplayedStatistics([2.0, 1.0], np.zeros((5, 2))), 0.2, 0.1)


def test_sorted_source_and_permutation_statistics():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(24, 4))
    x[:12, 2] += 2.5
    ds = Dataset(x, np.repeat([1, 0], 12))
    raw = SharedPermutationStatistics(ds, "mean-diff", seed=3)
    # observed values equal the direct statistic
    d = x[:12].mean(axis=0) - x[12:].mean(axis=0)
    np.testing.assert_allclose(raw.observed, d, atol=1e-12)
    src, order = sorted_source(raw)
    assert order[0] == 2
    assert np.all(np.diff(src.observed) <= 0)
    block = src.statistics(0, 10)
    np.testing.assert_allclose(block, raw.statistics(0, 10)[:, order])
    res = maxt_sequential(src, 0.05, 0.1, 3000)
    assert res.rejections.indices <= {0}
    mw = SharedPermutationStatistics(ds, "mann-whitney", seed=3)
    from seqperm.stats_perm import mann_whitney_u
    assert mw.observed[2] == pytest.approx(mann_whitney_u(x[:, 2], ds.labels))


def test_exchangeable_gaussian_reproducible():
    a = ExchangeableGaussianStatistics(np.zeros(4), 0.5, seed=9)
    b = ExchangeableGaussianStatistics(np.zeros(4), 0.5, seed=9)
    assert np.array_equal(a.statistics(100, 300), b.statistics(100, 300))
    z = a.statistics(0, 20000)
    c = np.corrcoef(z.T)
    assert c[0, 1] == pytest.approx(0.5, abs=0.03)


def test_retraction_is_reported():
    # hypothesis 1 never loses and rejects at t = 13; hypothesis 0 loses once
    # early, stays undecided, then loses every round from t = 14 and goes futile
    y0 = np.array([0.0, -0.5])
    null = np.full((400, 2), -9.0)
    null[4, 0] = 10.0
    null[13:, 0] = 10.0
    src = ReplayedStatistics(y0, null)
    res = maxt_sequential(src, 0.05, 0.1)
    assert len(res.rejections) == 0
    assert res.retracted == {1}
    assert res.rejection_time(1) == 13
    keep = maxt_sequential(src, 0.05, 0.1, retract=False)
    assert keep.rejections.indices == {1}
    assert maxt_reference(y0, null, 0.05, 0.1) == set()
