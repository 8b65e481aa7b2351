"""Single-hypothesis sequential permutation p-values.

Every strategy here is a function of the loss count alone: after ``t``
generated statistics, ``losses`` of them were at least as large as the
observed one.  The binomial helpers wrap the compiled kernels in
:mod:`seqperm._binom` with argument validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Union

import numpy as np

from . import _binom
from .errors import InvalidArgumentError, InvalidStateError

BISECTION_TOL = 1e-9


def exact_fraction(x: float) -> Fraction:
    """Decimal value of ``x`` as written (0.1 -> 1/10, not the binary double)."""
    return Fraction(str(float(x)))


def _check_prob(name, p, lo_open=False, hi_open=False):
    arr = np.asarray(p, dtype=float)
    bad = np.isnan(arr) | (arr < 0.0) | (arr > 1.0)
    if lo_open:
        bad |= arr == 0.0
    if hi_open:
        bad |= arr == 1.0
    if np.any(bad):
        raise InvalidArgumentError(f"{name} out of range: {p!r}")
    return arr


def _check_count(name, n):
    arr = np.asarray(n)
    if arr.dtype.kind == "f":
        if np.any(~np.isfinite(arr)) or np.any(arr != np.floor(arr)):
            raise InvalidArgumentError(f"{name} must be integral: {n!r}")
    elif arr.dtype.kind not in "iub":
        raise InvalidArgumentError(f"{name} must be integral: {n!r}")
    if np.any(arr < 0):
        raise InvalidArgumentError(f"{name} must be nonnegative: {n!r}")
    return arr.astype(float)


def _scalarize(out, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


# -- binomial machinery ------------------------------------------------------

def binom_cdf(k, n, p):
    """P(X <= k) for X ~ Binomial(n, p).  Broadcasts over arrays.

    ``k > n`` gives 1 and ``k < 0`` gives 0.  Relative error is below
    1e-12 against extended-precision summation for ``n`` up to 1e7.
    """
    nn = _check_count("n", n)
    pp = _check_prob("p", p)
    kk = np.asarray(k, dtype=float)
    return _scalarize(_binom.binom_cdf_ufunc(kk, nn, pp), k, n, p)


def binom_sf(k, n, p):
    """P(X > k), computed directly (no 1 - cdf cancellation)."""
    nn = _check_count("n", n)
    pp = _check_prob("p", p)
    kk = np.asarray(k, dtype=float)
    return _scalarize(_binom.binom_sf_ufunc(kk, nn, pp), k, n, p)


def binom_pmf(k, n, p):
    nn = _check_count("n", n)
    pp = _check_prob("p", p)
    kk = np.asarray(k, dtype=float)
    return _scalarize(_binom.binom_pmf_ufunc(kk, nn, pp), k, n, p)


# near-ties closer than this are re-decided exactly
_TIE_BAND = 1e-12
# largest n * bits(denominator of p) for exact tie resolution
EXACT_TIE_BITS = 400_000


def _exact_cdf_ge(k, n, p, q):
    """P(X <= k) >= q with p and q taken as their exact binary values.

    Returns None when the integer sum would exceed the size budget.
    """
    fp, fq = Fraction(p), Fraction(q)
    a, D = fp.numerator, fp.denominator
    b = D - a
    if n * D.bit_length() > EXACT_TIE_BITS:
        return None
    # sum the shorter tail: T_j = C(n, j) a^j b^(n-j), stepped exactly
    if k <= n - k - 1:
        term, total = b ** n, b ** n
        for j in range(k):
            term = term * (n - j) * a // ((j + 1) * b)
            total += term
        return total * fq.denominator >= fq.numerator * D ** n
    term, total = a ** n, 0
    for j in range(n, k, -1):
        total += term
        term = term * j * b // ((n - j + 1) * a)
    # P(X > k) <= 1 - q
    return total * fq.denominator <= (fq.denominator - fq.numerator) * D ** n


def _refine_quantile(k, q, n, p):
    n = int(n)
    if p == 0.0 or p == 1.0:
        return k
    while k > 0 and abs(_binom.binom_cdf_ufunc(k - 1.0, n, p) - q) <= _TIE_BAND * q:
        if not _exact_cdf_ge(k - 1, n, p, q):
            break
        k -= 1
    while k < n and abs(_binom.binom_cdf_ufunc(float(k), n, p) - q) <= _TIE_BAND * q:
        if _exact_cdf_ge(k, n, p, q) is not False:
            break
        k += 1
    return k


def binom_quantile(q, n, p):
    """Smallest integer k with P(X <= k) >= q.

    The compiled bisection decides on the float CDF; cases within 1e-12 of
    a tie are re-decided in exact integer arithmetic (within the
    ``EXACT_TIE_BITS`` budget).
    """
    qq = _check_prob("q", q, lo_open=True, hi_open=True)
    nn = _check_count("n", n)
    pp = _check_prob("p", p)
    out = np.asarray(_binom.binom_quantile_ufunc(qq, nn, pp)).astype(np.int64)
    it = np.nditer([out, *np.broadcast_arrays(qq, nn, pp)], flags=["refs_ok"],
                   op_flags=[["readwrite"], ["readonly"], ["readonly"], ["readonly"]])
    for k, qv, nv, pv in it:
        k[...] = _refine_quantile(int(k), float(qv), float(nv), float(pv))
    if all(np.ndim(x) == 0 for x in (q, n, p)):
        return int(out)
    return out


# -- loss state --------------------------------------------------------------

@dataclass(frozen=True)
class LossState:
    """Permutations drawn so far and how many of them were losses."""

    t: int = 0
    losses: int = 0

    def __post_init__(self):
        if self.t < 0 or self.losses < 0 or self.losses > self.t:
            raise InvalidArgumentError(
                f"need 0 <= losses <= t, got t={self.t}, losses={self.losses}")

    def update(self, loss_indicator) -> "LossState":
        if loss_indicator not in (0, 1, True, False):
            raise InvalidArgumentError(f"indicator must be 0/1: {loss_indicator!r}")
        return LossState(self.t + 1, self.losses + int(loss_indicator))

    @classmethod
    def from_indicators(cls, indicators: Iterable[int]) -> "LossState":
        ind = np.asarray(list(indicators), dtype=np.int64)
        return cls(int(ind.size), int(ind.sum()))


def trajectory(indicators: Iterable[int]) -> list:
    """States at t = 0, 1, ..., T for an indicator sequence."""
    state = LossState()
    out = [state]
    for x in indicators:
        state = state.update(x)
        out.append(state)
    return out


# -- closed-form p-values ----------------------------------------------------

def perm_pvalue(losses: int, B: int) -> float:
    """Classical permutation p-value (1 + losses) / (1 + B)."""
    if B < 1 or losses < 0 or losses > B:
        raise InvalidArgumentError(f"need 0 <= losses <= B, B >= 1; got {losses}, {B}")
    return (1 + losses) / (1 + B)


def bc_pvalue(state: LossState, h: int, B: int) -> float:
    """Besag-Clifford p-value; ``state`` must sit at min(first t with h losses, B)."""
    if h < 1 or B < 1:
        raise InvalidArgumentError(f"need h >= 1 and B >= 1; got h={h}, B={B}")
    if state.losses > h or state.t > B:
        raise InvalidStateError(f"state {state} is past the stopping time")
    if state.losses == h:
        return h / state.t
    if state.t == B:
        return (state.losses + 1) / (B + 1)
    raise InvalidStateError(f"state {state} is before the stopping time")


def avbc_pvalue(state: LossState, h: int) -> float:
    """Anytime-valid BC p-value h / (t + h - L_t).

    A state with exactly ``h`` losses is read as the hitting time itself,
    which is where :class:`PValueProcess` freezes.
    """
    if h < 1:
        raise InvalidArgumentError(f"h must be >= 1, got {h}")
    if state.losses > h:
        raise InvalidStateError(f"{state} has more than h={h} losses")
    return h / (state.t + h - state.losses)


def avbc_pvalues(t, losses, h):
    t = np.asarray(t, dtype=float)
    return h / (t + h - np.asarray(losses, dtype=float))


# -- binomial mixture --------------------------------------------------------

def binmix_wealth(state: LossState, c: float) -> float:
    """Wealth (1 - BinCDF(L_t; t+1, c)) / c of the binomial mixture bettor."""
    _check_prob("c", c, lo_open=True, hi_open=True)
    return float(_binom.binom_sf_ufunc(state.losses, state.t + 1.0, c)) / c


def binmix_rejects_at(state: LossState, b: float, alpha_prime: float) -> bool:
    """Whether the calibrated bettor with c = b * alpha' has wealth >= 1/alpha'."""
    _check_prob("b", b, lo_open=True, hi_open=True)
    _check_prob("alpha_prime", alpha_prime, lo_open=True, hi_open=True)
    sf = _binom.binom_sf_ufunc(state.losses, state.t + 1.0, b * alpha_prime)
    return bool(sf >= b)


def binmix_alpha_star(losses, t, b, tol: float = BISECTION_TOL):
    """Smallest level the state rejects at (upper bisection end), 1 if none."""
    out = _binom.alpha_star_ufunc(np.asarray(losses, dtype=float),
                                  np.asarray(t, dtype=float), b, tol)
    return _scalarize(out, losses, t)


def binmix_calibrated_pvalue(history, b: float, tol: float = BISECTION_TOL) -> float:
    """Running minimum over ``history`` of the per-state rejection level.

    ``history`` holds LossState objects (or (t, losses) pairs).  An empty
    history, or one with only t = 0, yields 1.
    """
    _check_prob("b", b, lo_open=True, hi_open=True)
    best = 1.0
    for s in history:
        t, L = (s.t, s.losses) if isinstance(s, LossState) else s
        best = min(best, float(_binom.alpha_star_ufunc(L, t, b, tol)))
    return best


# -- strategy parameters -----------------------------------------------------

@dataclass(frozen=True)
class ClassicalParams:
    B: int

    def __post_init__(self):
        if self.B < 1:
            raise InvalidArgumentError(f"B must be >= 1, got {self.B}")


@dataclass(frozen=True)
class BesagCliffordParams:
    h: int
    B: int

    def __post_init__(self):
        if self.h < 1 or self.B < 1:
            raise InvalidArgumentError(f"need h >= 1 and B >= 1, got {self.h}, {self.B}")


@dataclass(frozen=True)
class AvBcParams:
    """Loss budget; h = 1 is the aggressive strategy."""

    h: int

    def __post_init__(self):
        if self.h < 1:
            raise InvalidArgumentError(f"h must be >= 1, got {self.h}")


@dataclass(frozen=True)
class BinMixParams:
    b: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise InvalidArgumentError(f"b must lie in (0, 1), got {self.b}")


Variant = Union[ClassicalParams, BesagCliffordParams, AvBcParams, BinMixParams]


def aggressive() -> AvBcParams:
    return AvBcParams(h=1)


# -- process -----------------------------------------------------------------

@dataclass(frozen=True)
class PValueProcess:
    """A running, nonincreasing p-value for one hypothesis.

    ``update`` returns a new process.  Classical and BC processes are
    finished at their stopping time and refuse further updates; an avBC
    process freezes at its h-th loss and ignores further updates.
    """

    variant: Variant
    state: LossState = field(default_factory=LossState)
    running_min_p: float = 1.0

    @property
    def frozen(self) -> bool:
        v, s = self.variant, self.state
        if isinstance(v, ClassicalParams):
            return s.t >= v.B
        if isinstance(v, BesagCliffordParams):
            return s.losses >= v.h or s.t >= v.B
        if isinstance(v, AvBcParams):
            return s.losses >= v.h
        return False

    @property
    def pvalue(self) -> float:
        return self.running_min_p

    def _value(self, state: LossState) -> float:
        v = self.variant
        if isinstance(v, ClassicalParams):
            return perm_pvalue(state.losses, v.B) if state.t == v.B else 1.0
        if isinstance(v, BesagCliffordParams):
            if state.losses == v.h or state.t == v.B:
                return bc_pvalue(state, v.h, v.B)
            return 1.0
        if isinstance(v, AvBcParams):
            return avbc_pvalue(state, v.h)
        return float(_binom.alpha_star_ufunc(state.losses, state.t, v.b, BISECTION_TOL))

    def update(self, loss_indicator) -> "PValueProcess":
        if self.frozen:
            if isinstance(self.variant, AvBcParams):
                return self
            raise InvalidStateError(f"{type(self.variant).__name__} process already stopped")
        state = self.state.update(loss_indicator)
        p = min(self.running_min_p, self._value(state))
        return replace(self, state=state, running_min_p=p)

    def run(self, indicators: Iterable[int]) -> "PValueProcess":
        proc = self
        for x in indicators:
            proc = proc.update(x)
        return proc


def bc_stopping_time(indicators, h: int, B: int) -> int:
    """min(first t with h losses, B) for a recorded indicator sequence."""
    ind = np.asarray(indicators, dtype=np.int64)[:B]
    cum = np.cumsum(ind)
    hit = np.flatnonzero(cum >= h)
    if hit.size:
        return int(hit[0]) + 1
    if ind.size < B:
        raise InvalidArgumentError("sequence ends before the BC stopping time")
    return B


def gamma_h(indicators, h: int):
    """First t with L_t = h, or None if the sequence never reaches h losses."""
    cum = np.cumsum(np.asarray(indicators, dtype=np.int64))
    hit = np.flatnonzero(cum >= h)
    return int(hit[0]) + 1 if hit.size else None


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


__all__ = [
    "BISECTION_TOL", "LossState", "ClassicalParams", "BesagCliffordParams",
    "AvBcParams", "BinMixParams", "PValueProcess", "aggressive", "trajectory",
    "perm_pvalue", "bc_pvalue", "avbc_pvalue", "avbc_pvalues", "binom_cdf",
    "binom_sf", "binom_pmf", "binom_quantile", "binmix_wealth",
    "binmix_rejects_at", "binmix_alpha_star", "binmix_calibrated_pvalue",
    "bc_stopping_time", "gamma_h", "exact_fraction", "ceil_div",
]
