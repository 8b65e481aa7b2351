"""Test statistics, loss indicators and reproducible permutation streams.

A label permutation is represented by the positions that receive label 1.
They come from a truncated forward Fisher-Yates pass: n1 swap steps on
0..n-1 leave a uniformly random ordered n1-subset in the prefix, which is
exactly the law of the group-1 positions under a uniform relabelling.
Both supported statistics are increasing affine maps of the group-1 sum
of a per-column score (mid-ranks for Mann-Whitney, raw values for the
mean difference), so the hot loop only ever forms subset sums.

Every (hypothesis, block) pair owns a Philox counter window: the key is
(seed, hypothesis) and the counter addresses the block.  Any draw can be
regenerated independently of worker count and of how the engine chunks
its requests.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .errors import InvalidArgumentError, StreamExhaustedError

_U64 = (1 << 64) - 1
SHARED_KEY = _U64
_TWO53 = 9007199254740992.0
_TWO53_INT = np.int64(1 << 53)
_MASK53 = np.int64((1 << 53) - 1)
STATISTICS = ("mann-whitney", "mean-diff", "identity")
ALTERNATIVES = ("greater", "less")


def worker_count() -> int:
    raw = os.environ.get("SEQPERM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# -- data ----------------------------------------------------------------------

@dataclass
class Dataset:
    """Samples x hypotheses matrix with a binary group label per sample."""

    matrix: np.ndarray
    labels: np.ndarray
    names: Optional[list] = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise InvalidArgumentError("matrix must be 2-D (samples x hypotheses)")
        self.labels = _check_labels(self.labels)
        if self.labels.size != self.matrix.shape[0]:
            raise InvalidArgumentError(
                f"{self.labels.size} labels for {self.matrix.shape[0]} samples")
        if not np.all(np.isfinite(self.matrix)):
            r, c = np.argwhere(~np.isfinite(self.matrix))[0]
            raise InvalidArgumentError(f"non-finite entry at sample {r}, column {c}")
        if self.names is None:
            self.names = [f"h{j}" for j in range(self.matrix.shape[1])]
        elif len(self.names) != self.matrix.shape[1]:
            raise InvalidArgumentError("names length does not match column count")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def M(self) -> int:
        return self.matrix.shape[1]

    def columns(self, keep) -> "Dataset":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return Dataset(self.matrix[:, keep], self.labels.copy(),
                       [self.names[j] for j in keep])


def _check_labels(labels):
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.size < 2:
        raise InvalidArgumentError("labels must be a vector with at least 2 entries")
    if not np.all((lab == 0) | (lab == 1)):
        raise InvalidArgumentError("labels must be 0/1")
    lab = lab.astype(np.int8)
    if lab.min() == lab.max():
        raise InvalidArgumentError("both label groups must be present")
    return lab


# -- statistics ----------------------------------------------------------------

def midranks(x) -> np.ndarray:
    """Ranks 1..n with ties replaced by their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = xs.size
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    avg = 0.5 * (starts + ends + 1)
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def midranks_columns(matrix) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    out = np.empty_like(matrix)
    for j in range(matrix.shape[1]):
        out[:, j] = midranks(matrix[:, j])
    return out


def mann_whitney_u(column, labels) -> float:
    """U of group 1 against group 0 (ties count 1/2); large U = group 1 larger."""
    lab = _check_labels(labels)
    col = np.asarray(column, dtype=float)
    if col.shape != lab.shape:
        raise InvalidArgumentError("column and labels differ in length")
    n1 = int(lab.sum())
    return float(midranks(col)[lab == 1].sum() - n1 * (n1 + 1) / 2.0)


def mean_diff(column, labels) -> float:
    lab = _check_labels(labels)
    col = np.asarray(column, dtype=float)
    if col.shape != lab.shape:
        raise InvalidArgumentError("column and labels differ in length")
    return float(col[lab == 1].mean() - col[lab == 0].mean())


def loss_indicator(y_t: float, y_0: float) -> int:
    """1 iff the generated statistic is at least the observed one (ties lose)."""
    if math.isnan(y_t) or math.isnan(y_0):
        raise InvalidArgumentError("NaN statistic")
    return int(y_t >= y_0)


_STAT_FUNCS = {"mann-whitney": mann_whitney_u, "mean-diff": mean_diff}


def statistic_function(name: str):
    try:
        return _STAT_FUNCS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown statistic {name!r}; choose from {sorted(_STAT_FUNCS)}") from None


def column_scores(dataset: Dataset, statistic: str) -> np.ndarray:
    """Per-sample scores whose group-1 sum is monotone in the statistic."""
    if statistic == "mann-whitney":
        return midranks_columns(dataset.matrix)
    if statistic == "mean-diff":
        return dataset.matrix.copy()
    raise InvalidArgumentError(f"statistic {statistic!r} has no label-permutation form")


# -- compiled shuffles -----------------------------------------------------------

@numba.njit(cache=True)
def _uniform_index(rng, lo, hi):
    # unbiased integer in [lo, hi) from 53-bit draws x: Lemire's
    # multiply-shift with rejection while x * span fits in 64 bits,
    # plain modulo rejection beyond that
    span = np.int64(hi - lo)
    if span < 2048:
        m = np.int64(rng.random() * _TWO53) * span
        low = m & _MASK53
        if low < span:
            t = _TWO53_INT % span
            while low < t:
                m = np.int64(rng.random() * _TWO53) * span
                low = m & _MASK53
        return lo + (m >> 53)
    limit = _TWO53_INT - (_TWO53_INT % span)
    while True:
        x = np.int64(rng.random() * _TWO53)
        if x < limit:
            return lo + x % span


@numba.njit(cache=True)
def _subsets_block(rng, n, k, count):
    out = np.empty((count, k), dtype=np.int32)
    work = np.arange(n).astype(np.int32)
    for row in range(count):
        for j in range(k):
            r = _uniform_index(rng, j, n)
            tmp = work[j]
            work[j] = work[r]
            work[r] = tmp
            out[row, j] = work[j]
    return out


@numba.njit(cache=True)
def _subset_sums_block(rng, scores, k, count):
    # same draws as _subsets_block, but only the score sums are kept
    n = scores.size
    out = np.empty(count)
    work = np.arange(n).astype(np.int32)
    for row in range(count):
        s = 0.0
        for j in range(k):
            r = _uniform_index(rng, j, n)
            tmp = work[j]
            work[j] = work[r]
            work[r] = tmp
            s += scores[work[j]]
        out[row] = s
    return out


class _PhiloxWindow:
    """One reusable Philox generator repositioned per (key, block)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64
        self.bitgen = np.random.Philox(key=[self.seed, 0])
        self.gen = np.random.Generator(self.bitgen)
        self._state = self.bitgen.state

    def at(self, stream: int, block: int):
        st = self._state
        st["state"]["key"] = np.array([self.seed, int(stream) & _U64], dtype=np.uint64)
        st["state"]["counter"] = np.array([0, 0, int(block), 0], dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self.bitgen.state = st
        return self.gen


# -- permutation stream ----------------------------------------------------------

@dataclass
class PermutationStream:
    """Seeded label permutations, per hypothesis or shared across hypotheses.

    ``block`` permutations share one Philox counter window; a permutation
    is identified by (hypothesis, draw) with draw = 1, 2, ...
    """

    seed: int
    labels: np.ndarray
    mode: str = "independent"
    block: int = 256
    _pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("independent", "shared"):
            raise InvalidArgumentError(f"mode must be independent or shared, got {self.mode!r}")
        if self.block < 1:
            raise InvalidArgumentError("block must be >= 1")
        self.labels = _check_labels(self.labels)
        self.n = self.labels.size
        self.n1 = int(self.labels.sum())
        self._win = _PhiloxWindow(self.seed)

    def stream_key(self, hypothesis: int) -> int:
        return SHARED_KEY if self.mode == "shared" else int(hypothesis)

    def group1_positions(self, hypothesis: int, block: int) -> np.ndarray:
        """(block x n1) group-1 positions for all draws of one block."""
        gen = self._win.at(self.stream_key(hypothesis), block)
        return _subsets_block(gen, self.n, self.n1, self.block)

    def permuted_labels(self, hypothesis: int, draw: int) -> np.ndarray:
        if draw < 1:
            raise InvalidArgumentError("draws are numbered from 1")
        b, r = divmod(draw - 1, self.block)
        pos = self.group1_positions(hypothesis, b)[r]
        out = np.zeros(self.n, dtype=np.int8)
        out[pos] = 1
        return out

    def next_labels(self, hypothesis: int) -> np.ndarray:
        draw = self._pos.get(hypothesis, 0) + 1
        self._pos[hypothesis] = draw
        return self.permuted_labels(hypothesis, draw)

    def position(self, hypothesis: int) -> int:
        return self._pos.get(hypothesis, 0)


def next_permuted_statistic(stream: PermutationStream, dataset: Dataset,
                            hypothesis_index: int, statistic: str = "mann-whitney") -> float:
    """Advance the hypothesis' position and evaluate the statistic on it."""
    func = statistic_function(statistic)
    lab = stream.next_labels(hypothesis_index)
    return func(dataset.matrix[:, hypothesis_index], lab)


# -- loss sources ------------------------------------------------------------------

class LossSource:
    """Random-access loss indicators I^i_s for s = 1, 2, ...

    ``fetch(idx, start, count)`` returns a bool array of shape
    (len(idx), count) holding draws start+1 .. start+count.
    """

    M: int
    block: int = 256
    limit: Optional[int] = None  # finite replay length, None for unbounded

    def fetch(self, idx, start: int, count: int) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.limit is not None and start + count > self.limit:
            raise StreamExhaustedError(
                f"replayed stream has {self.limit} draws, requested up to {start + count}")
        out = np.empty((idx.size, count), dtype=bool)
        if idx.size == 0 or count == 0:
            return out
        K = self.block
        b0, b1 = start // K, (start + count - 1) // K
        col = 0
        for b in range(b0, b1 + 1):
            lo = max(start, b * K) - b * K
            hi = min(start + count, (b + 1) * K) - b * K
            out[:, col:col + hi - lo] = self._block(idx, b)[:, lo:hi]
            col += hi - lo
        return out

    def _block(self, idx: np.ndarray, b: int) -> np.ndarray:
        raise NotImplementedError


class ReplayedLosses(LossSource):
    """Recorded indicator matrix (hypotheses x draws)."""

    def __init__(self, indicators):
        mat = np.asarray(indicators)
        if mat.ndim != 2:
            raise InvalidArgumentError("indicator matrix must be 2-D")
        if not np.all((mat == 0) | (mat == 1)):
            raise InvalidArgumentError("indicators must be 0/1")
        self.matrix = mat.astype(bool)
        self.M, self.limit = self.matrix.shape
        self.block = max(1, self.limit)

    def fetch(self, idx, start, count):
        idx = np.asarray(idx, dtype=np.int64)
        if start + count > self.limit:
            raise StreamExhaustedError(
                f"replayed stream has {self.limit} draws, requested up to {start + count}")
        return self.matrix[idx, start:start + count].copy()


class ReplayedStatistics(LossSource):
    """Observed statistics plus a finite table of generated ones.

    ``null`` has shape (draws, M); row s-1 holds the s-th generated vector.
    """

    def __init__(self, observed, null, alternative: str = "greater"):
        self.observed = np.asarray(observed, dtype=float)
        self.null = np.asarray(null, dtype=float)
        if self.null.ndim != 2 or self.null.shape[1] != self.observed.size:
            raise InvalidArgumentError("null table must be draws x M")
        if np.isnan(self.observed).any() or np.isnan(self.null).any():
            raise InvalidArgumentError("NaN statistic")
        self.M = self.observed.size
        self.limit = self.null.shape[0]
        sign = _alt_sign(alternative)
        self.matrix = (sign * self.null.T >= sign * self.observed[:, None])

    def fetch(self, idx, start, count):
        if start + count > self.limit:
            raise StreamExhaustedError(
                f"statistic table has {self.limit} draws, requested up to {start + count}")
        return self.matrix[np.asarray(idx, dtype=np.int64), start:start + count].copy()

    def statistics(self, start, count):
        if start + count > self.limit:
            raise StreamExhaustedError("statistic table exhausted")
        return self.null[start:start + count]


def _alt_sign(alternative):
    if alternative not in ALTERNATIVES:
        raise InvalidArgumentError(f"alternative must be one of {ALTERNATIVES}")
    return 1.0 if alternative == "greater" else -1.0


def normal_sf(y) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return np.array([0.5 * math.erfc(v / math.sqrt(2.0)) for v in y])


class GaussianNullLosses(LossSource):
    """Null statistics i.i.d. N(0, 1), independent across hypotheses.

    Only the loss indicator 1{Z >= y0} enters any strategy, so it is drawn
    as 1{U < P(Z >= y0)} with U uniform, which has the same law.
    """

    def __init__(self, observed, seed: int, block: int = 1024):
        self.observed = np.asarray(observed, dtype=float)
        self.M = self.observed.size
        self.block = block
        self.tail = normal_sf(self.observed)
        self._win = _PhiloxWindow(seed)

    def _block(self, idx, b):
        out = np.empty((idx.size, self.block), dtype=bool)
        for r, i in enumerate(idx):
            gen = self._win.at(int(i), b)
            out[r] = gen.random(self.block) < self.tail[i]
        return out


class PermutationLosses(LossSource):
    """Loss indicators from label permutations of a dataset."""

    def __init__(self, dataset: Dataset, statistic: str = "mann-whitney",
                 seed: int = 0, mode: str = "independent",
                 alternative: str = "greater", block: int = 256,
                 workers: Optional[int] = None):
        self.dataset = dataset
        self.M = dataset.M
        self.block = block
        self.stream = PermutationStream(seed, dataset.labels, mode, block)
        self.scores = np.ascontiguousarray(column_scores(dataset, statistic))
        self.scores_T = np.ascontiguousarray(self.scores.T)
        g1 = dataset.labels == 1
        self.observed_sums = self.scores[g1].sum(axis=0)
        # sums that agree up to rounding are ties, and ties are losses
        self.tol = 1e-9 * np.abs(self.scores).sum(axis=0)
        self.sign = _alt_sign(alternative)
        self.workers = worker_count() if workers is None else max(1, workers)
        self._shared_cache = None

    def observed_statistics(self, statistic="mann-whitney"):
        func = statistic_function(statistic)
        return np.array([func(self.dataset.matrix[:, j], self.dataset.labels)
                         for j in range(self.M)])

    def _compare(self, sums, idx):
        if self.sign > 0:
            return sums >= (self.observed_sums[idx] - self.tol[idx])[:, None]
        return sums <= (self.observed_sums[idx] + self.tol[idx])[:, None]

    def subset_sums(self, idx, b) -> np.ndarray:
        """(len(idx) x block) group-1 score sums for draws of block b."""
        idx = np.asarray(idx, dtype=np.int64)
        st = self.stream
        if st.mode == "shared":
            if self._shared_cache is None or self._shared_cache[0] != b:
                pos = st.group1_positions(0, b)
                onehot = np.zeros((st.block, st.n))
                np.put_along_axis(onehot, pos.astype(np.int64), 1.0, axis=1)
                self._shared_cache = (b, onehot)
            return (self.scores_T[idx] @ self._shared_cache[1].T)
        out = np.empty((idx.size, st.block))
        if self.workers == 1 or idx.size < 2 * self.workers:
            self._fill_independent(out, idx, b, st.seed)
        else:
            parts = np.array_split(np.arange(idx.size), self.workers)
            with ThreadPoolExecutor(self.workers) as ex:
                list(ex.map(lambda rows: self._fill_independent(
                    out, idx, b, st.seed, rows), parts))
        return out

    def _fill_independent(self, out, idx, b, seed, rows=None):
        win = _PhiloxWindow(seed)
        rows = range(idx.size) if rows is None else rows
        n1 = self.stream.n1
        K = self.stream.block
        for r in rows:
            i = int(idx[r])
            gen = win.at(i, b)
            out[r] = _subset_sums_block(gen, self.scores_T[i], n1, K)

    def _block(self, idx, b):
        return self._compare(self.subset_sums(idx, b), idx)


def as_loss_source(obj) -> LossSource:
    if isinstance(obj, LossSource):
        return obj
    return ReplayedLosses(obj)


__all__ = [
    "Dataset", "midranks", "mann_whitney_u", "mean_diff", "loss_indicator",
    "PermutationStream", "next_permuted_statistic", "LossSource",
    "ReplayedLosses", "ReplayedStatistics", "GaussianNullLosses",
    "PermutationLosses", "as_loss_source", "normal_sf", "statistic_function",
    "column_scores", "worker_count", "STATISTICS",
]
