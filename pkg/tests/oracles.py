"""Independent reference implementations used only by the tests."""

from fractions import Fraction
from itertools import combinations

import mpmath
import numpy as np

mpmath.mp.dps = 40


def mp_pmf(k, n, p):
    p = mpmath.mpf(p)
    return mpmath.binomial(n, k) * p ** k * (1 - p) ** (n - k)


def mp_cdf_sf(k, n, p, eps=mpmath.mpf(10) ** -32):
    """(P(X <= k), P(X > k)) by summing the short tail inward at 40 digits."""
    if k >= n:
        return mpmath.mpf(1), mpmath.mpf(0)
    if k < 0:
        return mpmath.mpf(0), mpmath.mpf(1)
    p = mpmath.mpf(p)
    q = 1 - p
    if p == 0:
        return mpmath.mpf(1), mpmath.mpf(0)
    if q == 0:
        return mpmath.mpf(0), mpmath.mpf(1)
    if k <= n * p:
        term = mp_pmf(k, n, p)
        s, j = term, k
        while j > 0:
            term = term * j / (n - j + 1) * q / p
            j -= 1
            s += term
            if term < eps * s:
                break
        return s, 1 - s
    term = mp_pmf(k + 1, n, p)
    s, j = term, k + 1
    while j < n:
        term = term * (n - j) / (j + 1) * p / q
        j += 1
        s += term
        if term < eps * s:
            break
    return 1 - s, s


def scan_quantile(q, n, p):
    """Smallest k with CDF(k) >= q by walking up from 0 with exact-ish terms."""
    acc = mpmath.mpf(0)
    for k in range(n + 1):
        acc += mp_pmf(k, n, p)
        if acc >= q:
            return k
    return n


def bh_bruteforce(p, alpha):
    """Largest k such that the k-th smallest p-value is <= k alpha / M."""
    p = [Fraction(str(float(x))) for x in p]
    a = Fraction(str(float(alpha)))
    M = len(p)
    ps = sorted(p)
    k = 0
    for r in range(1, M + 1):
        if ps[r - 1] <= r * a / M:
            k = r
    thr = k * a / M
    return {i for i in range(M) if k and p[i] <= thr}


def bh_fraction(p, alpha):
    """BH on exact Fractions."""
    a = Fraction(str(float(alpha)))
    M = len(p)
    ps = sorted(p)
    k = 0
    for r in range(1, M + 1):
        if ps[r - 1] <= r * a / M:
            k = r
    return {i for i in range(M) if k and p[i] <= k * a / M}


def mw_pairs(x, labels):
    x = np.asarray(x, dtype=float)
    g1 = x[np.asarray(labels) == 1]
    g0 = x[np.asarray(labels) == 0]
    u = 0.0
    for a in g1:
        for b in g0:
            u += 1.0 if a > b else (0.5 if a == b else 0.0)
    return u


def avbc_step_reference(mat, h, alpha, cap=None, batch=1):
    """Plain-Python rounds of the generic loop with BH on exact p-values."""
    mat = np.asarray(mat).astype(int)
    M, T = mat.shape
    t_i = [0] * M
    L = [0] * M
    active = set(range(M))
    tau = [-1] * M
    rtime = [-1] * M
    t = 0
    while active:
        step = batch if cap is None else min(batch, cap - t)
        for i in sorted(active):
            for _ in range(step):
                if L[i] >= h:
                    break
                L[i] += mat[i, t_i[i]]
                t_i[i] += 1
        t += step
        p = [Fraction(h, t_i[i] + h - L[i]) for i in range(M)]
        R = bh_fraction(p, alpha)
        for i in sorted(active & R):
            rtime[i] = t
            tau[i] = t_i[i]
        active -= R
        for i in sorted(active):
            if L[i] >= h or (cap is not None and t >= cap):
                tau[i] = t_i[i]
                active.discard(i)
    return {i for i in range(M) if rtime[i] >= 0}, tau, rtime


def closure_subsets(M):
    for k in range(1, M + 1):
        for c in combinations(range(M), k):
            yield frozenset(c)


def random_instance(rng, M, h, alpha, extra=0, null_share=0.5):
    """Indicator matrix long enough for any uncapped BH + avBC run."""
    from seqperm.engine import adaptive_B

    T = adaptive_B(1, M, h, alpha) + extra
    kind = rng.random(M) < null_share
    q = np.where(kind, rng.random(M), rng.random(M) * rng.choice([0.001, 0.01, 0.05]))
    return (rng.random((M, T)) < q[:, None]).astype(np.int8)
