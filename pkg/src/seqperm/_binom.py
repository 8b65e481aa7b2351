"""Compiled binomial kernels.

The pmf uses Loader's saddle-point form (Stirling error + deviance term),
with n*p carried in double-double so the deviance keeps full relative
precision far from the mean.  A tail probability is the anchor pmf times
a sum of positive pmf ratios, always walking away from the mode, so the
summed side is the short one and never cancels; the other side is its
complement.  Cost is O(sqrt(n p (1-p))) terms near the mean.
"""

import math

import numba
import numpy as np

_LN_2PI = 1.8378770664093454836
_SUM_EPS = 1e-18

# log(n!) - log(sqrt(2 pi n) (n/e)^n) for n = 0..15 (index 0 unused).
_SFERR = np.array([
    0.0,
    0.08106146679532725821967,
    0.04134069595540929409382,
    0.02767792568499833914879,
    0.02079067210376509311152,
    0.01664469118982119216319,
    0.01387612882307074799875,
    0.01189670994589177009506,
    0.01041126526197209649748,
    0.009255462182712732917729,
    0.008330563433362871256469,
    0.007573675487951840794972,
    0.006942840107209529865664,
    0.00640899418800420706844,
    0.005951370112758847735624,
    0.005554733551962801371039,
])

_jit = numba.njit(cache=True, nogil=True)


@_jit
def _stirlerr(n):
    if n <= 15.0:
        return _SFERR[int(n)]
    nn = n * n
    s0 = 1.0 / 12.0
    s1 = 1.0 / 360.0
    s2 = 1.0 / 1260.0
    s3 = 1.0 / 1680.0
    s4 = 1.0 / 1188.0
    if n > 500.0:
        return (s0 - s1 / nn) / n
    if n > 80.0:
        return (s0 - (s1 - s2 / nn) / nn) / n
    if n > 35.0:
        return (s0 - (s1 - (s2 - s3 / nn) / nn) / nn) / n
    return (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / n


@_jit
def _two_prod(a, b):
    prod = a * b
    c = 134217729.0 * a
    a_hi = c - (c - a)
    a_lo = a - a_hi
    c = 134217729.0 * b
    b_hi = c - (c - b)
    b_lo = b - b_hi
    err = ((a_hi * b_hi - prod) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return prod, err


@_jit
def _bd0(x, m_hi, m_lo):
    # x log(x/m) + m - x, with m = m_hi + m_lo
    d = (x - m_hi) - m_lo
    s = x + m_hi + m_lo
    if abs(d) < 0.5 * s:
        v = d / s
        total = d * v
        ej = 2.0 * x * v
        v2 = v * v
        for j in range(1, 200):
            ej *= v2
            nxt = total + ej / (2 * j + 1)
            if nxt == total:
                return nxt
            total = nxt
        return total
    return x * (math.log(x / m_hi) - m_lo / m_hi) - d


@_jit
def _dbinom(x, n, p):
    """P(X = x) for X ~ Bin(n, p); x, n integral floats."""
    if x < 0.0 or x > n:
        return 0.0
    if p == 0.0:
        return 1.0 if x == 0.0 else 0.0
    if p == 1.0:
        return 1.0 if x == n else 0.0
    if x == 0.0:
        return math.exp(n * math.log1p(-p))
    if x == n:
        return math.exp(n * math.log(p))
    # 1 - p == q + q_lo exactly
    q = 1.0 - p
    q_lo = (1.0 - q) - p
    mp_hi, mp_lo = _two_prod(n, p)
    mq_hi, mq_lo = _two_prod(n, q)
    mq_lo += n * q_lo
    y = n - x
    lc = (_stirlerr(n) - _stirlerr(x) - _stirlerr(y)
          - _bd0(x, mp_hi, mp_lo) - _bd0(y, mq_hi, mq_lo))
    lf = _LN_2PI + math.log(x) + math.log1p(-x / n)
    return math.exp(lc - 0.5 * lf)


@_jit
def _tail_sum(k, n, p, downward):
    # sum_{j} pmf(j) over j <= k (downward) or j >= k (upward), walking
    # away from the mode so terms shrink; anchored at the exact pmf(k)
    anchor = _dbinom(k, n, p)
    if anchor == 0.0:
        return 0.0
    q = 1.0 - p
    total = 1.0
    term = 1.0
    j = k
    if downward:
        ratio = q / p
        while j > 0.0:
            term *= j / (n - j + 1.0) * ratio
            total += term
            if term < _SUM_EPS * total:
                break
            j -= 1.0
    else:
        ratio = p / q
        while j < n:
            term *= (n - j) / (j + 1.0) * ratio
            total += term
            if term < _SUM_EPS * total:
                break
            j += 1.0
    return anchor * total


@_jit
def _pbinom(k, n, p, upper):
    """P(X <= k) (upper=False) or P(X > k) (upper=True)."""
    k = math.floor(k)
    if k < 0.0:
        return 1.0 if upper else 0.0
    if k >= n:
        return 0.0 if upper else 1.0
    if p == 0.0:
        return 0.0 if upper else 1.0
    if p == 1.0:
        return 1.0 if upper else 0.0
    # each directly summed tail is below 3/4, so its complement keeps
    # full relative precision
    if k < math.floor(n * p):
        lower = _tail_sum(k, n, p, True)
        return 1.0 - lower if upper else lower
    tail = _tail_sum(k + 1.0, n, p, False)
    return tail if upper else 1.0 - tail


@numba.vectorize(["float64(float64, float64, float64)"], cache=True)
def binom_cdf_ufunc(k, n, p):
    return _pbinom(k, n, p, False)


@numba.vectorize(["float64(float64, float64, float64)"], cache=True)
def binom_sf_ufunc(k, n, p):
    return _pbinom(k, n, p, True)


@numba.vectorize(["float64(float64, float64, float64)"], cache=True)
def binom_pmf_ufunc(k, n, p):
    return _dbinom(k, n, p)


@_jit
def _quantile(q, n, p):
    # smallest k with P(X <= k) >= q
    lo = -1.0
    hi = n
    if p == 0.0:
        return 0.0
    while hi - lo > 1.0:
        mid = math.floor(0.5 * (lo + hi))
        if _pbinom(mid, n, p, False) >= q:
            hi = mid
        else:
            lo = mid
    return hi


@numba.vectorize(["float64(float64, float64, float64)"], cache=True)
def binom_quantile_ufunc(q, n, p):
    return _quantile(q, n, p)


@_jit
def _alpha_star(losses, t, b, tol):
    # inf{a in (0,1): P(Bin(t+1, b a) > losses) >= b}, upper bisection end
    n = t + 1.0
    if _pbinom(losses, n, b, True) < b:
        return 1.0
    lo = 0.0
    hi = 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _pbinom(losses, n, b * mid, True) >= b:
            hi = mid
        else:
            lo = mid
    return hi


@numba.vectorize(["float64(float64, float64, float64, float64)"], cache=True)
def alpha_star_ufunc(losses, t, b, tol):
    return _alpha_star(losses, t, b, tol)
