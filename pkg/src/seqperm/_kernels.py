"""Compiled inner loops for the binomial-mixture engines."""

import numba

from ._binom import _alpha_star, _pbinom

_jit = numba.njit(cache=True, nogil=True)


@_jit
def _rejects(losses, t, b, alpha):
    return _pbinom(losses, t + 1.0, b * alpha, True) >= b


@_jit
def calibrated_min_update(pmin, losses, t, b, tol):
    # fold state (losses, t) into a running minimum of the rejection level;
    # bisect only when the state already rejects at the current minimum
    if pmin <= 0.0:
        return pmin
    if pmin < 1.0 and not _rejects(losses, t, b, pmin):
        return pmin
    a = _alpha_star(losses, t, b, tol)
    return a if a < pmin else pmin


@_jit
def binmix_advance(ind, t, L, pmin, b, tol):
    """Feed indicator rows into binomial-mixture processes (running min)."""
    R, K = ind.shape
    for r in range(R):
        tr = t[r]
        lr = L[r]
        pm = pmin[r]
        for k in range(K):
            if ind[r, k]:
                # the state just before a loss is a local minimum candidate
                pm = calibrated_min_update(pm, lr, tr, b, tol)
                lr += 1
            tr += 1
        pm = calibrated_min_update(pm, lr, tr, b, tol)
        t[r] = tr
        L[r] = lr
        pmin[r] = pm


@_jit
def _passes(losses, t, j, b, alpha, M, one_minus_b):
    # l <= crit_j  <=>  BinCDF(l; t+1, b alpha j / M) < 1 - b
    return _pbinom(losses, t + 1.0, b * alpha * j / M, False) < one_minus_b


@_jit
def _lower_watermark(losses, t, w, b, alpha, M, one_minus_b):
    # smallest passing j below the current watermark w (or w itself)
    if w <= 1 or not _passes(losses, t, w - 1, b, alpha, M, one_minus_b):
        return w
    lo = 0
    hi = w - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _passes(losses, t, mid, b, alpha, M, one_minus_b):
            hi = mid
        else:
            lo = mid
    return hi


@_jit
def bh_binmix_chunk(ind, rows, t0, ncols, L, w, active, tau, rtime, pmin,
                    cnt, mstar, alpha, b, M, cap, tol, mtrace):
    """Run up to ``ncols`` rounds of the BH + binomial-mixture loop.

    ``ind[r, k]`` is the indicator of hypothesis ``rows[r]`` at round
    t0 + k + 1.  Watermarks ``w`` (M + 1 = none) and their histogram
    ``cnt`` carry the sticky critical-value flags.  Returns the last
    round processed and the current m*.
    """
    one_minus_b = 1.0 - b
    R = rows.size
    t = t0
    for k in range(ncols):
        t = t0 + k + 1
        n_active = 0
        for r in range(R):
            if active[rows[r]]:
                n_active += 1
        if n_active == 0:
            return t - 1, mstar
        changed = False
        for r in range(R):
            i = rows[r]
            if not active[i]:
                continue
            if ind[r, k]:
                pmin[i] = calibrated_min_update(pmin[i], L[i], t - 1.0, b, tol)
                L[i] += 1
            else:
                nw = _lower_watermark(L[i], t, w[i], b, alpha, M, one_minus_b)
                if nw < w[i]:
                    cnt[w[i]] -= 1
                    cnt[nw] += 1
                    w[i] = nw
                    changed = True
        if changed:
            c = 0
            best = 0
            for m in range(1, M + 1):
                c += cnt[m]
                if c >= m:
                    best = m
            if best > mstar:
                mstar = best
        mtrace[k] = mstar
        amax = alpha * (n_active + mstar) / M
        if amax > alpha:
            amax = alpha
        for r in range(R):
            i = rows[r]
            if not active[i]:
                continue
            stop = False
            if w[i] <= mstar:
                rtime[i] = t
                stop = True
            elif _pbinom(L[i], t + 1.0, b * amax, True) < b * amax * amax:
                stop = True
            elif cap > 0 and t >= cap:
                stop = True
            if stop:
                active[i] = False
                tau[i] = t
                pmin[i] = calibrated_min_update(pmin[i], L[i], t, b, tol)
    return t, mstar


@_jit
def finish_calibrated(rows, L, t_arr, pmin, b, tol):
    for r in range(rows.size):
        i = rows[r]
        pmin[i] = calibrated_min_update(pmin[i], L[i], t_arr[i], b, tol)

