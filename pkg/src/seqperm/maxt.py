"""Closed testing with sequential permutation tests.

Statistic sources here expose whole vectors: ``observed`` (length M) and
``statistics(start, count)`` returning the generated vectors for rounds
start+1 .. start+count, one shared permutation per round.  The tests use
the binomial-mixture wealth with a fixed mixing parameter c.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Optional

import numpy as np

from . import _binom
from .engine import RunResult, _timeline
from .errors import InvalidArgumentError, LimitExceededError
from .procedures import RejectionSet
from .stats_perm import Dataset, PermutationLosses, ReplayedStatistics, _PhiloxWindow

MAX_CLOSURE_M = 20


# -- statistic sources ---------------------------------------------------------------

class SharedPermutationStatistics:
    """MW U or mean difference for every column under one permutation per round."""

    def __init__(self, dataset: Dataset, statistic: str = "mann-whitney",
                 seed: int = 0, block: int = 256):
        self._losses = PermutationLosses(dataset, statistic, seed, "shared", block=block)
        n1 = int(dataset.labels.sum())
        n0 = dataset.n - n1
        scores = self._losses.scores
        if statistic == "mann-whitney":
            self._scale = np.ones(dataset.M)
            self._shift = np.full(dataset.M, -n1 * (n1 + 1) / 2.0)
        else:
            self._scale = np.full(dataset.M, 1.0 / n1 + 1.0 / n0)
            self._shift = -scores.sum(axis=0) / n0
        self.M = dataset.M
        self.block = block
        self.observed = self._losses.observed_sums * self._scale + self._shift
        # near-equal values from different summation orders count as ties
        self.tol = self._losses.tol * self._scale

    def statistics(self, start, count):
        idx = np.arange(self.M)
        K = self.block
        out = np.empty((count, self.M))
        col = 0
        for b in range(start // K, (start + count - 1) // K + 1):
            lo = max(start, b * K) - b * K
            hi = min(start + count, (b + 1) * K) - b * K
            sums = self._losses.subset_sums(idx, b)[:, lo:hi]
            out[col:col + hi - lo] = (sums * self._scale[:, None] + self._shift[:, None]).T
            col += hi - lo
        return out


class ExchangeableGaussianStatistics:
    """Null vectors i.i.d. N(0, Sigma) with equicorrelation rho.

    Under the global null the observed vector is drawn from the same law,
    so (Y_0, Y_1, ...) is jointly exchangeable.
    """

    def __init__(self, observed, rho: float = 0.0, seed: int = 0, block: int = 256):
        self.observed = np.asarray(observed, dtype=float)
        self.M = self.observed.size
        if not 0.0 <= rho < 1.0:
            raise InvalidArgumentError("rho must lie in [0, 1)")
        self.rho = rho
        self.block = block
        self.tol = np.zeros(self.M)
        self._win = _PhiloxWindow(seed)

    @staticmethod
    def draw(rng, count, M, rho):
        z = rng.standard_normal((count, M))
        common = rng.standard_normal((count, 1))
        return np.sqrt(1.0 - rho) * z + np.sqrt(rho) * common

    def statistics(self, start, count):
        K = self.block
        out = np.empty((count, self.M))
        col = 0
        for b in range(start // K, (start + count - 1) // K + 1):
            gen = self._win.at(0, b)
            blk = self.draw(gen, K, self.M, self.rho)
            lo = max(start, b * K) - b * K
            hi = min(start + count, (b + 1) * K) - b * K
            out[col:col + hi - lo] = blk[lo:hi]
            col += hi - lo
        return out


class _Reordered:
    def __init__(self, src, order):
        self.src, self.order = src, np.asarray(order)
        self.observed = np.asarray(src.observed)[self.order]
        self.M = self.order.size
        self.tol = np.asarray(getattr(src, "tol", np.zeros(src.M)))[self.order]
        self.block = getattr(src, "block", 256)

    def statistics(self, start, count):
        return self.src.statistics(start, count)[:, self.order]


def sorted_source(src):
    """(source with observed statistics in decreasing order, original index of each slot)."""
    order = np.argsort(-np.asarray(src.observed), kind="stable")
    return _Reordered(src, order), order


def _check_source(src):
    if not hasattr(src, "statistics") or not hasattr(src, "observed"):
        raise InvalidArgumentError("need a statistic source with observed and statistics()")


def _chunk(source, t, chunk, cap):
    n = chunk if cap is None else min(chunk, cap - t)
    limit = getattr(source, "limit", None)
    if limit is not None and t < limit:
        n = min(n, limit - t)
    return n


def _wealth(losses, t, c):
    return _binom.binom_sf_ufunc(np.asarray(losses, dtype=float), t + 1.0, c) / c


def _check_levels(c, alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    if not 0.0 < c < alpha:
        raise InvalidArgumentError(f"c must lie in (0, alpha), got {c}")


# -- sequential MaxT ---------------------------------------------------------------------

def maxt_sequential(source, c: float, alpha: float,
                    max_permutations: Optional[int] = None,
                    retract: bool = True, chunk: int = 256) -> RunResult:
    """Sequential MaxT closure with the binomial-mixture wealth.

    Observed statistics must be sorted decreasingly.  Hypothesis i loses
    when the maximum of the generated statistics over j >= i reaches the
    maximum of the observed ones over j >= i.  Wealth below alpha stops i
    and every j >= i (and, with ``retract``, drops them from R); wealth of
    at least 1/alpha rejects i.  Reaching the cap counts as futility for
    the first hypothesis that did not reject in the final round.
    """
    _check_source(source)
    _check_levels(c, alpha)
    y0 = np.asarray(source.observed, dtype=float)
    if np.any(np.diff(y0) > 0):
        raise InvalidArgumentError("observed statistics must be sorted decreasingly")
    M = y0.size
    tol = np.asarray(getattr(source, "tol", np.zeros(M)), dtype=float)
    obs_suffix = np.maximum.accumulate((y0 - tol)[::-1])[::-1]
    active = np.ones(M, dtype=bool)
    rejected = np.zeros(M, dtype=bool)
    retracted = set()
    losses = np.zeros(M, dtype=np.int64)
    tau = np.full(M, -1, dtype=np.int64)
    rtime = np.full(M, -1, dtype=np.int64)
    best = np.ones(M)  # running max wealth
    t = 0
    buf, buf_start = None, 0
    while active.any():
        if buf is None or t - buf_start >= buf.shape[0]:
            buf, buf_start = source.statistics(t, _chunk(source, t, chunk, max_permutations)), t
        y = buf[t - buf_start]
        t += 1
        suffix = np.maximum.accumulate(y[::-1])[::-1]
        live = np.flatnonzero(active)
        losses[live] += suffix[live] >= obs_suffix[live]
        w = _wealth(losses[live], t, c)
        best[live] = np.maximum(best[live], w)
        cut = np.flatnonzero(w < alpha)
        cut_at = live[cut[0]] if cut.size else M
        if max_permutations is not None and t >= max_permutations:
            undecided = live[w < 1.0 / alpha]
            if undecided.size:
                cut_at = min(cut_at, undecided[0])
        before = live < cut_at
        win = live[before & (w >= 1.0 / alpha)]
        rejected[win] = True
        rtime[win] = t
        tau[win] = t
        active[win] = False
        if cut_at < M:
            tail = np.arange(cut_at, M)
            stop = tail[active[tail]]
            tau[stop] = t
            active[tail] = False
            if retract:
                gone = tail[rejected[tail]]
                retracted.update(gone.tolist())
                rejected[tail] = False
    p = np.minimum(1.0, 1.0 / best)
    rs = RejectionSet(frozenset(np.flatnonzero(rejected).tolist()), int(rejected.sum()), M)
    return RunResult(rs, tau, rtime, p, _timeline(rtime), [], "shared", frozenset(retracted))


def maxt_reference(y0, null, c, alpha, max_permutations=None):
    """Plain loop over the printed algorithm, for cross-checking."""
    y0 = list(map(float, y0))
    M = len(y0)
    A = list(range(M))
    R = set()
    ell = [0] * M
    t = 0
    while A:
        y = null[t]
        t += 1
        for i in list(A):
            if i not in A:
                continue
            if max(y[i:]) >= max(y0[i:]):
                ell[i] += 1
            w = float(_wealth(ell[i], t, c))
            capped = max_permutations is not None and t >= max_permutations
            if w < alpha or (capped and w < 1.0 / alpha):
                A = [j for j in A if j < i]
                R -= set(range(i, M))
            elif w >= 1.0 / alpha:
                R.add(i)
                A.remove(i)
    return R


# -- generic closure ---------------------------------------------------------------------

def combine_max(Y, members):
    return np.where(members[None, :, :], Y[:, None, :], -np.inf).max(axis=2)


def combine_sum(Y, members):
    return Y @ members.T.astype(float)


def threshold_count(thresholds) -> Callable:
    """C_I(Y) = #{i in I : Y^i >= d_i} for per-hypothesis thresholds d_i."""
    d = np.asarray(thresholds, dtype=float)

    def combine(Y, members):
        return (Y >= d[None, :]).astype(float) @ members.T.astype(float)

    return combine


COMBINERS = {"max": combine_max, "sum": combine_sum}


@dataclass(frozen=True)
class IntersectionTestResult:
    subset: frozenset
    rejected: bool

    def __post_init__(self):
        if not self.subset:
            raise InvalidArgumentError("intersection subset must be nonempty")


@dataclass(frozen=True)
class TrueDiscoveryBound:
    """d(S) = min |S \\ I| over intersections I that were not rejected."""

    accepted: tuple  # frozensets of non-rejected intersections, empty set included
    M: int

    def __call__(self, S) -> int:
        S = frozenset(S)
        return min(len(S - I) for I in self.accepted)


@dataclass
class ClosureResult:
    rejections: RejectionSet
    bound: TrueDiscoveryBound
    tests: list
    stopping_times: dict


def _subsets(M):
    out = []
    for k in range(1, M + 1):
        out.extend(frozenset(c) for c in combinations(range(M), k))
    return out


def closed_testing(source, combiner="max", c: float = 0.05, alpha: float = 0.1,
                   max_permutations: Optional[int] = None, chunk: int = 256) -> ClosureResult:
    """Run a sequential permutation test on C_I for every nonempty I.

    Each intersection test stops on its own: reject once the wealth reaches
    1/alpha, accept once it falls below alpha or at the cap.  Hypothesis i
    is rejected when all intersections containing it are.
    """
    _check_source(source)
    _check_levels(c, alpha)
    y0 = np.asarray(source.observed, dtype=float)
    M = y0.size
    if M > MAX_CLOSURE_M:
        raise LimitExceededError(
            f"closure enumerates 2^M - 1 intersections; M={M} exceeds the limit {MAX_CLOSURE_M}")
    comb = COMBINERS[combiner] if isinstance(combiner, str) else combiner
    subsets = _subsets(M)
    members = np.zeros((len(subsets), M), dtype=bool)
    for k, S in enumerate(subsets):
        members[k, list(S)] = True
    tol = np.asarray(getattr(source, "tol", np.zeros(M)), dtype=float)
    c0 = comb((y0 - tol)[None, :], members)[0]
    n = len(subsets)
    active = np.ones(n, dtype=bool)
    phi = np.zeros(n, dtype=bool)
    losses = np.zeros(n, dtype=np.int64)
    stop = np.zeros(n, dtype=np.int64)
    t = 0
    while active.any():
        k = _chunk(source, t, chunk, max_permutations)
        Y = source.statistics(t, k)
        C = comb(Y, members)
        for r in range(k):
            t += 1
            live = np.flatnonzero(active)
            losses[live] += C[r, live] >= c0[live]
            w = _wealth(losses[live], t, c)
            win = live[w >= 1.0 / alpha]
            lose = live[w < alpha]
            phi[win] = True
            done = np.concatenate([win, lose])
            if max_permutations is not None and t >= max_permutations:
                done = live
            active[done] = False
            stop[done] = t
            if not active.any():
                break
    rej = np.ones(M, dtype=bool)
    for k in np.flatnonzero(~phi):
        rej[members[k]] = False
    tests = [IntersectionTestResult(S, bool(phi[k])) for k, S in enumerate(subsets)]
    accepted = (frozenset(),) + tuple(S for k, S in enumerate(subsets) if not phi[k])
    rs = RejectionSet(frozenset(np.flatnonzero(rej).tolist()), int(rej.sum()), M)
    return ClosureResult(rs, TrueDiscoveryBound(accepted, M), tests,
                         {S: int(stop[k]) for k, S in enumerate(subsets)})


def replayed(observed, null) -> ReplayedStatistics:
    return ReplayedStatistics(observed, null)


__all__ = [
    "maxt_sequential", "maxt_reference", "closed_testing", "ClosureResult",
    "IntersectionTestResult", "TrueDiscoveryBound", "combine_max", "combine_sum",
    "threshold_count", "SharedPermutationStatistics", "ExchangeableGaussianStatistics",
    "sorted_source", "MAX_CLOSURE_M", "replayed",
]
