"""Sequential multiple-testing loops.

All engines draw from a :class:`~seqperm.stats_perm.LossSource`, so the
same code runs on replayed indicator matrices, Gaussian identity-mode
simulations and label permutations of real data.  Round ``t`` means that
every hypothesis still active has consumed its first ``t`` draws.

Comparisons of avBC and classical p-values against BH thresholds are done
in exact integer arithmetic (alpha is taken as the decimal it is written
as), so tie cases such as h / (t + h - L) == m alpha / M resolve the same
way in every path and in the oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError
from .procedures import RejectionSet, bh_threshold, get_procedure
from .pvalue_core import (BISECTION_TOL, AvBcParams, BesagCliffordParams,
                          BinMixParams, ClassicalParams, Variant, binom_sf,
                          exact_fraction)
from .stats_perm import LossSource, as_loss_source

AVBC_PATHS = ("step", "fast", "shortcut")


# -- configuration and results ----------------------------------------------------

@dataclass(frozen=True)
class EngineConfig:
    """Run settings.  ``strategy`` is one of the pvalue_core parameter types."""

    alpha: float = 0.1
    strategy: Variant = AvBcParams(10)
    procedure: str = "bh"
    max_permutations: Optional[int] = None
    batch_size: int = 1
    seed: int = 0
    stream_mode: str = "independent"
    final_sweep: bool = False
    avbc_path: str = "step"
    two_sided: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidArgumentError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.max_permutations is not None and self.max_permutations < 1:
            raise InvalidArgumentError("max_permutations must be positive")
        if self.stream_mode not in ("independent", "shared"):
            raise InvalidArgumentError(f"unknown stream mode {self.stream_mode!r}")
        if self.avbc_path not in AVBC_PATHS:
            raise InvalidArgumentError(f"avbc_path must be one of {AVBC_PATHS}")
        get_procedure(self.procedure)


@dataclass
class RunResult:
    rejections: RejectionSet
    stopping_times: np.ndarray
    rejection_times: np.ndarray  # -1 where never rejected
    final_pvalues: np.ndarray
    timeline: List[Tuple[int, Tuple[int, ...]]]
    m_trace: List[Tuple[int, int]] = field(default_factory=list)
    stream_mode: str = "independent"
    retracted: frozenset = frozenset()

    @property
    def M(self) -> int:
        return int(self.stopping_times.size)

    @property
    def total_permutations(self) -> int:
        """Permutations generated: one per draw, or one per round if shared."""
        if self.stream_mode == "shared":
            return int(self.stopping_times.max(initial=0))
        return int(self.stopping_times.sum())

    @property
    def average_permutations(self) -> float:
        return float(self.stopping_times.mean())

    def rejection_time(self, i: int) -> Optional[int]:
        r = int(self.rejection_times[i])
        return None if r < 0 else r

    @property
    def rejected_mask(self) -> np.ndarray:
        return self.rejections.mask()

    def same_as(self, other: "RunResult") -> bool:
        return (self.rejections.indices == other.rejections.indices
                and np.array_equal(self.stopping_times, other.stopping_times)
                and np.array_equal(self.rejection_times, other.rejection_times)
                and np.array_equal(self.final_pvalues, other.final_pvalues)
                and self.timeline == other.timeline)


def _timeline(rtime: np.ndarray):
    hit = np.flatnonzero(rtime >= 0)
    out = []
    for t in np.unique(rtime[hit]):
        out.append((int(t), tuple(int(i) for i in hit[rtime[hit] == t])))
    return out


def _result(rejected, tau, rtime, pvals, m_trace, mode, m_star=0):
    M = tau.size
    rs = RejectionSet(frozenset(np.flatnonzero(rejected).tolist()), int(m_star), M)
    return RunResult(rs, tau.astype(np.int64), rtime.astype(np.int64),
                     np.asarray(pvals, dtype=float), _timeline(rtime), m_trace, mode)


# -- exact rational BH ---------------------------------------------------------------

def _alpha_parts(alpha):
    f = exact_fraction(alpha)
    return f.numerator, f.denominator


def min_passing_ranks(num, den, alpha, M):
    """Smallest rank m with num/den <= m alpha / M, elementwise and exact.

    The value can exceed M (never passes)."""
    a_num, a_den = _alpha_parts(alpha)
    num = np.asarray(num, dtype=np.int64)
    den = np.asarray(den, dtype=np.int64)
    top = int(num.max(initial=1)) * M * a_den
    bot = int(den.max(initial=1)) * a_num
    if top < 2 ** 62 and bot < 2 ** 62:
        n = num * (M * a_den)
        d = den * a_num
        return -((-n) // d)
    out = [-((-int(a) * M * a_den) // (int(b) * a_num)) for a, b in zip(num, den)]
    return np.array([min(v, M + 1) for v in out], dtype=np.int64)


def bh_mstar_from_ranks(ranks, M) -> int:
    counts = np.bincount(np.minimum(ranks, M + 1), minlength=M + 2)
    cum = np.cumsum(counts)[1:M + 1]
    ok = np.flatnonzero(cum >= np.arange(1, M + 1))
    return int(ok[-1]) + 1 if ok.size else 0


def exact_bh_reject(num, den, alpha) -> RejectionSet:
    """BH on rational p-values num_i / den_i with exact threshold tests."""
    num = np.asarray(num, dtype=np.int64)
    M = num.size
    ranks = min_passing_ranks(num, den, alpha, M)
    m = bh_mstar_from_ranks(ranks, M)
    idx = np.flatnonzero(ranks <= m) if m else np.array([], dtype=np.int64)
    return RejectionSet(frozenset(idx.tolist()), m, M)


def maxp_shortcut_exact(h, d_min, n_rejected, n_active, alpha, M) -> bool:
    """max active avBC p-value h / d_min passes at rank n_rejected + n_active."""
    a_num, a_den = _alpha_parts(alpha)
    return h * M * a_den <= d_min * (n_rejected + n_active) * a_num


# -- closed forms --------------------------------------------------------------------

def adaptive_B(m: int, M: int, h: int, alpha: float) -> int:
    """ceil(h M / (max(m, 1) alpha)) - 1, evaluated exactly."""
    if M < 1 or m < 0 or m > M:
        raise InvalidArgumentError(f"need 0 <= m <= M, got m={m}, M={M}")
    if h < 1:
        raise InvalidArgumentError("h must be >= 1")
    a = exact_fraction(alpha)
    x = h * M / (max(m, 1) * a)
    return math.ceil(x) - 1


_EULER_GAMMA = 0.57721566490153286061


def harmonic_number(n: int) -> float:
    """H_n = sum_{k <= n} 1/k; exact summation up to 1e6, asymptotic above."""
    if n <= 0:
        return 0.0
    if n <= 1_000_000:
        return math.fsum(1.0 / np.arange(1, n + 1, dtype=float))
    inv = 1.0 / n
    inv2 = inv * inv
    return (math.log(n) + _EULER_GAMMA + 0.5 * inv
            - inv2 / 12.0 + inv2 * inv2 / 120.0 - inv2 ** 3 / 252.0)


def worst_case_avg_bound(M: int, h: int, alpha: float) -> float:
    """Sure upper bound on the mean stopping time of BH with avBC."""
    if M < 1:
        raise InvalidArgumentError("M must be >= 1")
    q = h / exact_fraction(alpha)
    first = math.floor(q - 1)
    lo = math.floor(q)
    hi = math.floor(M * q - 2)
    if hi < lo:
        return float(first)
    # sum_{t=lo}^{hi} 1/(t+1) = H_{hi+1} - H_{lo}
    return float(first) + float(q) * (harmonic_number(hi + 1) - harmonic_number(lo))


def rejection_equivalence_oracle(indicator_matrix, h: int, alpha: float) -> RejectionSet:
    """Largest R with classical p-value at B_|R| <= alpha |R| / M for all of R."""
    mat = np.asarray(indicator_matrix)
    if mat.ndim != 2:
        raise InvalidArgumentError("indicator matrix must be 2-D")
    M, T = mat.shape
    need = adaptive_B(1, M, h, alpha)
    if T < need:
        raise InvalidArgumentError(f"need at least {need} columns, got {T}")
    a = exact_fraction(alpha)
    cum = np.cumsum(mat.astype(np.int64), axis=1)
    for r in range(M, 0, -1):
        B = adaptive_B(r, M, h, alpha)
        L = cum[:, B - 1]
        # (1 + L) / (1 + B) <= a r / M  <=>  (1 + L) M a_den <= a_num r (1 + B)
        ok = (1 + L) * M * a.denominator <= a.numerator * r * (1 + B)
        if int(ok.sum()) >= r:
            return RejectionSet(frozenset(np.flatnonzero(ok).tolist()), r, M)
    return RejectionSet(frozenset(), 0, M)


# -- draw plumbing ----------------------------------------------------------------------

class _Prefetch:
    """Window cache over a loss source, reloaded in block-aligned chunks."""

    def __init__(self, source: LossSource, chunk: Optional[int] = None):
        self.src = source
        self.block = max(1, int(getattr(source, "block", 256)))
        self.chunk = max(1, chunk or self.block)
        self.start = 0
        self.buf = None
        self.pos = np.full(source.M, -1, dtype=np.int64)

    def get(self, rows, start, count):
        if (self.buf is None or start < self.start
                or start + count > self.start + self.buf.shape[1]
                or np.any(self.pos[rows] < 0)):
            self._load(rows, start, count)
        off = start - self.start
        return self.buf[self.pos[rows], off:off + count]

    def _load(self, rows, start, count):
        K = self.block
        end = start + max(count, self.chunk)
        end = -(-end // K) * K
        limit = getattr(self.src, "limit", None)
        if limit is not None:
            end = max(min(end, limit), start + count)
        self.buf = self.src.fetch(rows, start, end - start)
        self.pos[:] = -1
        self.pos[rows] = np.arange(len(rows))
        self.start = start


def _consume(ind, L0, hmax=None, tmax=None):
    """Draws consumed per row until the hmax-th loss or tmax draws, and new L."""
    R, K = ind.shape
    cum = L0[:, None] + np.cumsum(ind, axis=1, dtype=np.int64)
    used = np.full(R, K, dtype=np.int64)
    if hmax is not None and K:
        hit = cum >= hmax
        anyhit = hit.any(axis=1)
        used[anyhit] = hit[anyhit].argmax(axis=1) + 1
    if tmax is not None:
        used = np.minimum(used, tmax)
    L = L0.copy()
    pos = used > 0
    L[pos] = cum[np.flatnonzero(pos), used[pos] - 1]
    return used, L


# -- process banks for the generic loop ----------------------------------------------

class _Bank:
    def __init__(self, M):
        self.t = np.zeros(M, dtype=np.int64)
        self.L = np.zeros(M, dtype=np.int64)

    def advance(self, rows, ind):
        raise NotImplementedError

    def frozen(self):
        return np.zeros(self.t.size, dtype=bool)


class _AvBcBank(_Bank):
    def __init__(self, M, h):
        super().__init__(M)
        self.h = h

    def advance(self, rows, ind):
        live = rows[self.L[rows] < self.h]
        if live.size == 0:
            return
        sub = ind[np.isin(rows, live)]
        used, L = _consume(sub, self.L[live], self.h)
        self.t[live] += used
        self.L[live] = L

    def frozen(self):
        return self.L >= self.h

    def pvalues(self):
        return self.h / (self.t + self.h - self.L)


class _ClassicalBank(_Bank):
    def __init__(self, M, B):
        super().__init__(M)
        self.B = B

    def advance(self, rows, ind):
        used, L = _consume(ind, self.L[rows], None, self.B - self.t[rows])
        self.t[rows] += used
        self.L[rows] = L

    def frozen(self):
        return self.t >= self.B

    def pvalues(self):
        return np.where(self.t >= self.B, (1.0 + self.L) / (1.0 + self.B), 1.0)


class _BcBank(_Bank):
    def __init__(self, M, h, B):
        super().__init__(M)
        self.h, self.B = h, B

    def advance(self, rows, ind):
        used, L = _consume(ind, self.L[rows], self.h, self.B - self.t[rows])
        self.t[rows] += used
        self.L[rows] = L

    def frozen(self):
        return (self.L >= self.h) | (self.t >= self.B)

    def pvalues(self):
        hit = self.L >= self.h
        out = np.ones(self.t.size)
        full = ~hit & (self.t >= self.B)
        out[hit] = self.h / np.maximum(self.t[hit], 1)
        out[full] = (1.0 + self.L[full]) / (1.0 + self.B)
        return out


class _BinMixBank(_Bank):
    def __init__(self, M, b):
        super().__init__(M)
        self.b = b
        self.pmin = np.ones(M)

    def advance(self, rows, ind):
        t = self.t[rows].astype(float)
        L = self.L[rows].astype(float)
        pm = self.pmin[rows].copy()
        _kernels.binmix_advance(np.ascontiguousarray(ind), t, L, pm, self.b, BISECTION_TOL)
        self.t[rows] = t.astype(np.int64)
        self.L[rows] = L.astype(np.int64)
        self.pmin[rows] = pm

    def pvalues(self):
        return self.pmin.copy()


class _TwoSidedBank:
    """min(1, 2 min(p_upper, p_lower)) over two banks fed the same draws."""

    def __init__(self, upper, lower):
        self.upper, self.lower = upper, lower

    @property
    def t(self):
        return np.maximum(self.upper.t, self.lower.t)

    @property
    def L(self):
        return self.upper.L

    def advance(self, rows, ind):
        up, lo = ind
        self.upper.advance(rows, up)
        self.lower.advance(rows, lo)

    def frozen(self):
        return self.upper.frozen() & self.lower.frozen()

    def pvalues(self):
        return np.minimum(1.0, 2.0 * np.minimum(self.upper.pvalues(), self.lower.pvalues()))


def _make_bank(strategy, M):
    if isinstance(strategy, AvBcParams):
        return _AvBcBank(M, strategy.h)
    if isinstance(strategy, ClassicalParams):
        return _ClassicalBank(M, strategy.B)
    if isinstance(strategy, BesagCliffordParams):
        return _BcBank(M, strategy.h, strategy.B)
    if isinstance(strategy, BinMixParams):
        return _BinMixBank(M, strategy.b)
    raise InvalidArgumentError(f"unsupported strategy {strategy!r}")


# -- futility rules ------------------------------------------------------------------------

@dataclass
class FutilityContext:
    t: int
    draws: np.ndarray
    losses: np.ndarray
    active: np.ndarray
    pvalues: np.ndarray
    alpha: float
    n_active_start: int


class FutilityRule:
    """Data-dependent stop for futility; returns a mask over all hypotheses."""

    def __call__(self, ctx: FutilityContext) -> np.ndarray:
        raise NotImplementedError


class NoFutility(FutilityRule):
    def __call__(self, ctx):
        return np.zeros(ctx.active.size, dtype=bool)


@dataclass
class LossCountFutility(FutilityRule):
    """Stop once L_t exceeds z_t; z is a constant or a function of t."""

    z: object

    def __call__(self, ctx):
        z = self.z(ctx.t) if callable(self.z) else self.z
        return ctx.losses > z


@dataclass
class AlphaMaxFutility(FutilityRule):
    """Binomial-mixture wealth at the largest level BH can still use is below
    that level: SF(L; t+1, b a) < b a^2 with a = min(alpha, alpha (|A_t| + m*) / M)."""

    b: float = 0.9

    def __call__(self, ctx):
        M = ctx.active.size
        m = bh_threshold(ctx.pvalues, ctx.alpha)
        a = min(ctx.alpha, ctx.alpha * (ctx.n_active_start + m) / M)
        sf = binom_sf(ctx.losses, ctx.draws + 1, self.b * a)
        return sf < self.b * a * a


# -- Algorithm: generic loop ------------------------------------------------------------------

def run_general(config: EngineConfig, streams, futility: Optional[FutilityRule] = None) -> RunResult:
    """Generic sequential loop with any monotone procedure.

    Each round every active hypothesis consumes ``batch_size`` draws (or
    until its own process freezes), the procedure is applied to the p-values
    of all hypotheses at min(t, tau_i), active rejections are recorded, and
    then frozen processes, the futility rule and the cap stop the rest.
    With ``two_sided`` the streams argument is an (upper, lower) pair.
    """
    procedure = get_procedure(config.procedure)
    futility = futility or NoFutility()
    if config.two_sided:
        up, lo = (as_loss_source(s) for s in streams)
        sources = (up, lo)
        M = up.M
        bank = _TwoSidedBank(_make_bank(config.strategy, M), _make_bank(config.strategy, M))
    else:
        sources = (as_loss_source(streams),)
        M = sources[0].M
        bank = _make_bank(config.strategy, M)
    fetchers = [_Prefetch(s) for s in sources]
    cap = config.max_permutations
    active = np.ones(M, dtype=bool)
    tau = np.full(M, -1, dtype=np.int64)
    rtime = np.full(M, -1, dtype=np.int64)
    rejected = np.zeros(M, dtype=bool)
    t = 0
    m_trace = []
    while active.any():
        step = config.batch_size if cap is None else min(config.batch_size, cap - t)
        rows = np.flatnonzero(active)
        n_start = rows.size
        ind = [f.get(rows, t, step) for f in fetchers]
        bank.advance(rows, ind[0] if len(ind) == 1 else tuple(ind))
        t += step
        p = bank.pvalues()
        rs = procedure(p, config.alpha)
        m_trace.append((t, rs.threshold_m))
        newly = active & rs.mask()
        rejected |= newly
        rtime[newly] = t
        active &= ~newly
        ctx = FutilityContext(t, bank.t, bank.L, active.copy(), p, config.alpha, n_start)
        stop = active & (bank.frozen() | futility(ctx))
        if cap is not None and t >= cap:
            stop |= active
        active &= ~stop
        done = newly | stop
        tau[done] = bank.t[done]
    p = bank.pvalues()
    if config.final_sweep:
        rs = procedure(p, config.alpha)
        extra = rs.mask() & ~rejected
        rejected |= extra
        rtime[extra] = t
    m_star = m_trace[-1][1] if m_trace else 0
    return _result(rejected, tau, rtime, p, m_trace, config.stream_mode, m_star)


# -- BH with avBC -------------------------------------------------------------------------------

class _AvBcState:
    def __init__(self, M, h):
        self.h = h
        self.tv = np.zeros(M, dtype=np.int64)
        self.L = np.zeros(M, dtype=np.int64)
        self.active = np.ones(M, dtype=bool)
        self.tau = np.full(M, -1, dtype=np.int64)
        self.rtime = np.full(M, -1, dtype=np.int64)

    @property
    def D(self):
        return self.tv + self.h - self.L

    def pvalues(self):
        return self.h / self.D


def _avbc_rounds(src, st: _AvBcState, t, alpha, cap, batch, shortcut=False):
    """Step the avBC processes from round t until nobody is active."""
    M, h = st.tv.size, st.h
    pf = _Prefetch(src)
    ranks = min_passing_ranks(np.full(M, h), st.D, alpha, M)
    m_trace = []
    n_rejected = int((st.rtime >= 0).sum())
    while st.active.any():
        step = batch if cap is None else min(batch, cap - t)
        rows = np.flatnonzero(st.active)
        ind = pf.get(rows, t, step)
        used, L = _consume(ind, st.L[rows], h)
        st.tv[rows] += used
        st.L[rows] = L
        t += step
        if shortcut:
            fut = rows[st.L[rows] >= h]
            st.active[fut] = False
            st.tau[fut] = st.tv[fut]
            live = rows[st.L[rows] < h]
            if cap is not None and t >= cap:
                pass
            elif live.size and maxp_shortcut_exact(
                    h, int(st.D[live].min()), n_rejected, live.size, alpha, M):
                st.rtime[live] = t
                n_rejected += live.size
                st.active[live] = False
                st.tau[live] = st.tv[live]
                continue
        else:
            ranks[rows] = min_passing_ranks(np.full(rows.size, h), st.D[rows], alpha, M)
            m = bh_mstar_from_ranks(ranks, M)
            m_trace.append((t, m))
            newly = rows[ranks[rows] <= m]
            st.rtime[newly] = t
            st.active[newly] = False
            st.tau[newly] = st.tv[newly]
        stop = st.active & (st.L >= h)
        if cap is not None and t >= cap:
            stop |= st.active
        st.tau[stop] = st.tv[stop]
        st.active &= ~stop
    return t, m_trace


def _avbc_finish(st, t, alpha, m_trace, mode, final_sweep):
    M = st.tv.size
    rej = st.rtime >= 0
    final = exact_bh_reject(np.full(M, st.h), st.D, alpha)
    if final_sweep:
        extra = final.mask() & ~rej
        st.rtime[extra] = t
        rej |= extra
    return _result(rej, st.tau, st.rtime, st.pvalues(), m_trace, mode,
                   final.threshold_m if final_sweep else (m_trace[-1][1] if m_trace else 0))


def _rewind(src, st: _AvBcState, S: int):
    """Roll every hypothesis that drew past S back to its state at round S."""
    rows = np.flatnonzero(st.tv > S)
    if rows.size == 0:
        return
    span = int(st.tv[rows].max()) - S
    ind = src.fetch(rows, S, span).astype(np.int64)
    mask = np.arange(span)[None, :] < (st.tv[rows] - S)[:, None]
    st.L[rows] -= (ind * mask).sum(axis=1)
    st.tv[rows] = S
    st.active[rows] = True
    st.tau[rows] = -1


def run_bh_avbc(config: EngineConfig, streams, path: Optional[str] = None) -> RunResult:
    """BH with anytime-valid BC p-values.

    ``step`` evaluates BH after every batch.  ``fast`` jumps between the
    candidate thresholds B_m, which decide the rejection set, and then
    replays exactly the final window of h rounds, where every rejection
    must fall; it returns the same RunResult as ``step`` at batch 1.
    ``shortcut`` only checks whether the largest active p-value passes at
    the rank covering all active hypotheses and applies BH once at the end.
    """
    if not isinstance(config.strategy, AvBcParams):
        raise InvalidArgumentError("run_bh_avbc needs an AvBcParams strategy")
    path = path or config.avbc_path
    src = as_loss_source(streams)
    M, h, alpha, cap = src.M, config.strategy.h, config.alpha, config.max_permutations
    st = _AvBcState(M, h)
    if path == "step":
        t, tr = _avbc_rounds(src, st, 0, alpha, cap, config.batch_size)
        return _avbc_finish(st, t, alpha, tr, config.stream_mode, config.final_sweep)
    if path == "shortcut":
        t, tr = _avbc_rounds(src, st, 0, alpha, cap, config.batch_size, shortcut=True)
        return _avbc_finish(st, t, alpha, tr, config.stream_mode, True)
    if config.batch_size != 1:
        raise InvalidArgumentError("the fast path reproduces the batch-1 schedule only")
    return _avbc_fast(src, st, alpha, cap, config)


def _advance_to(pf, st, t, target):
    rows = np.flatnonzero(st.active)
    if rows.size == 0 or target <= t:
        return
    pos = t
    while pos < target and rows.size:
        n = min(target - pos, pf.chunk - (pos % pf.chunk))
        limit = getattr(pf.src, "limit", None)
        if limit is not None:
            n = min(n, max(limit - pos, 1))
        ind = pf.get(rows, pos, n)
        used, L = _consume(ind, st.L[rows], st.h)
        st.tv[rows] += used
        st.L[rows] = L
        fut = rows[L >= st.h]
        st.active[fut] = False
        st.tau[fut] = st.tv[fut]
        rows = rows[L < st.h]
        pos += n


def _avbc_fast(src, st, alpha, cap, config):
    M, h = st.tv.size, st.h
    pf = _Prefetch(src)
    t = 0
    found = 0
    for m in range(M, 0, -1):
        target = adaptive_B(m, M, h, alpha)
        if cap is not None and target >= cap:
            break
        _advance_to(pf, st, t, target)
        t = max(t, target)
        if int(st.active.sum()) >= m:
            found = m
            break
        if not st.active.any():
            break
    if found:
        end = adaptive_B(found, M, h, alpha)
    elif cap is not None and st.active.any():
        end = cap
    else:
        # nothing is ever rejected; run the rest to futility
        _advance_to(pf, st, t, cap if cap is not None else 2 ** 62)
        if cap is not None:
            left = st.active.copy()
            st.tau[left] = st.tv[left]
            st.active[:] = False
        return _avbc_finish(st, int(st.tau.max(initial=0)), alpha, [],
                            config.stream_mode, config.final_sweep)
    S = max(0, end - h)
    if t > S:
        _rewind(src, st, S)
    else:
        _advance_to(pf, st, t, S)
    t, tr = _avbc_rounds(src, st, S, alpha, cap, 1)
    return _avbc_finish(st, t, alpha, tr, config.stream_mode, config.final_sweep)


def run_to_futility_then_bh(streams, h: int, alpha: float,
                            cap: Optional[int] = None) -> RejectionSet:
    """Every hypothesis runs to its h-th loss (or the cap); BH once at the end."""
    src = as_loss_source(streams)
    st = _AvBcState(src.M, h)
    _advance_to(_Prefetch(src), st, 0, cap if cap is not None else 2 ** 62)
    return exact_bh_reject(np.full(src.M, h), st.D, alpha)


# -- BH with the binomial mixture ------------------------------------------------------------

def run_bh_binmix(config: EngineConfig, streams) -> RunResult:
    """BH with calibrated binomial-mixture p-values and the alpha_max futility stop.

    Sticky critical-value flags are kept as one watermark per hypothesis:
    the smallest rank j whose critical value the loss count has ever been
    under.  Reported p-values are the calibrated running minima.
    """
    if not isinstance(config.strategy, BinMixParams):
        raise InvalidArgumentError("run_bh_binmix needs a BinMixParams strategy")
    src = as_loss_source(streams)
    M, b, alpha = src.M, config.strategy.b, config.alpha
    cap = config.max_permutations or 0
    L = np.zeros(M)
    w = np.full(M, M + 1, dtype=np.int64)
    cnt = np.zeros(M + 2, dtype=np.int64)
    cnt[M + 1] = M
    active = np.ones(M, dtype=bool)
    tau = np.full(M, -1, dtype=np.int64)
    rtime = np.full(M, -1, dtype=np.int64)
    pmin = np.ones(M)
    pf = _Prefetch(src)
    t, mstar = 0, 0
    m_trace = []
    while active.any():
        rows = np.flatnonzero(active)
        n = pf.chunk if not cap else min(pf.chunk, cap - t)
        n = min(n, pf.block - (t % pf.block)) if pf.block > 1 else n
        ind = np.ascontiguousarray(pf.get(rows, t, n))
        trace = np.zeros(n, dtype=np.int64)
        t_new, mstar = _kernels.bh_binmix_chunk(
            ind, rows, t, n, L, w, active, tau, rtime, pmin, cnt, mstar,
            alpha, b, M, cap, BISECTION_TOL, trace)
        m_trace.extend(zip(range(t + 1, t_new + 1), trace[:t_new - t].tolist()))
        t = t_new
    return _result(rtime >= 0, tau, rtime, pmin, m_trace, config.stream_mode, mstar)


# -- fixed-budget strategies -------------------------------------------------------------------

def _fetch_counts(src, B, hmax=None):
    """Draws used and losses for every hypothesis over its first B draws."""
    M = src.M
    used = np.zeros(M, dtype=np.int64)
    L = np.zeros(M, dtype=np.int64)
    live = np.arange(M)
    pos = 0
    chunk = max(int(getattr(src, "block", 256)), 1)
    chunk = max(chunk, min(B, 4096))
    while pos < B and live.size:
        n = min(chunk, B - pos)
        ind = src.fetch(live, pos, n)
        u, Lr = _consume(ind, L[live], hmax)
        used[live] += u
        L[live] = Lr
        if hmax is not None:
            live = live[Lr < hmax]
        pos += n
    return used, L


def _fixed_result(num, den, tau, p, config):
    M = tau.size
    if config.procedure == "bh":
        rs = exact_bh_reject(num, den, config.alpha)
    else:
        rs = get_procedure(config.procedure)(p, config.alpha)
    rtime = np.full(M, -1, dtype=np.int64)
    idx = np.array(sorted(rs.indices), dtype=np.int64)
    rtime[idx] = tau[idx]
    return RunResult(rs, tau, rtime, p, _timeline(rtime), [], config.stream_mode)


def run_classical(config: EngineConfig, streams) -> RunResult:
    """Every hypothesis draws exactly B permutations; procedure applied once."""
    B = config.strategy.B
    src = as_loss_source(streams)
    used, L = _fetch_counts(src, B)
    p = (1.0 + L) / (1.0 + B)
    return _fixed_result(1 + L, np.full(L.size, 1 + B), used, p, config)


def run_bc(config: EngineConfig, streams) -> RunResult:
    """Besag-Clifford: stop at the h-th loss or at B; procedure applied once."""
    h, B = config.strategy.h, config.strategy.B
    src = as_loss_source(streams)
    used, L = _fetch_counts(src, B, h)
    hit = L >= h
    num = np.where(hit, h, L + 1)
    den = np.where(hit, used, B + 1)
    return _fixed_result(num, den, used, num / den, config)


def run(config: EngineConfig, streams, futility: Optional[FutilityRule] = None) -> RunResult:
    """Dispatch to the dedicated loop for the configuration."""
    s = config.strategy
    if config.two_sided or (futility is not None):
        return run_general(config, streams, futility)
    if isinstance(s, ClassicalParams):
        return run_classical(config, streams)
    if isinstance(s, BesagCliffordParams):
        return run_bc(config, streams)
    if config.procedure == "bh" and isinstance(s, AvBcParams):
        return run_bh_avbc(config, streams)
    if config.procedure == "bh" and isinstance(s, BinMixParams):
        return run_bh_binmix(config, streams)
    return run_general(config, streams)


__all__ = [
    "EngineConfig", "RunResult", "run", "run_general", "run_bh_avbc",
    "run_bh_binmix", "run_classical", "run_bc", "run_to_futility_then_bh",
    "adaptive_B", "worst_case_avg_bound", "harmonic_number",
    "rejection_equivalence_oracle", "exact_bh_reject", "min_passing_ranks",
    "bh_mstar_from_ranks", "maxp_shortcut_exact", "FutilityRule", "NoFutility",
    "LossCountFutility", "AlphaMaxFutility", "FutilityContext",
]
