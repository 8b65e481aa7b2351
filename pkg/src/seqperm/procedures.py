"""Monotone p-value multiple-testing procedures.

All procedures share one contract: a p-vector in, a :class:`RejectionSet`
out, nonincreasing in every coordinate.  Indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class RejectionSet:
    indices: frozenset
    threshold_m: int = 0
    M: int = 0

    def __len__(self):
        return len(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def sorted(self):
        return sorted(self.indices)

    def mask(self):
        out = np.zeros(self.M, dtype=bool)
        out[list(self.indices)] = True
        return out


def _as_pvector(p):
    arr = np.asarray(p, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidArgumentError("p-vector must be nonempty")
    if np.any(np.isnan(arr)) or np.any(arr <= 0.0) or np.any(arr > 1.0):
        raise InvalidArgumentError("p-values must lie in (0, 1]")
    return arr


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")


def bh_threshold(p, alpha: float) -> int:
    """Largest m with #{p_i <= m alpha / M} >= m; 0 when no m qualifies."""
    _check_alpha(alpha)
    ps = np.sort(_as_pvector(p))
    M = ps.size
    ranks = np.arange(1, M + 1)
    ok = np.flatnonzero(ps <= ranks * alpha / M)
    return int(ok[-1]) + 1 if ok.size else 0


def bh_reject(p, alpha: float) -> RejectionSet:
    arr = _as_pvector(p)
    m = bh_threshold(arr, alpha)
    if m == 0:
        return RejectionSet(frozenset(), 0, arr.size)
    idx = np.flatnonzero(arr <= m * alpha / arr.size)
    return RejectionSet(frozenset(idx.tolist()), m, arr.size)


def harmonic(M: int) -> float:
    return float(np.sum(1.0 / np.arange(1, M + 1)))


def by_reject(p, alpha: float) -> RejectionSet:
    """BH at level alpha / H_M; valid under arbitrary dependence."""
    _check_alpha(alpha)
    arr = _as_pvector(p)
    return bh_reject(arr, alpha / harmonic(arr.size))


def holm_reject(p, alpha: float) -> RejectionSet:
    _check_alpha(alpha)
    arr = _as_pvector(p)
    M = arr.size
    order = np.argsort(arr, kind="stable")
    levels = alpha / (M - np.arange(M))
    fail = np.flatnonzero(arr[order] > levels)
    k = int(fail[0]) if fail.size else M
    return RejectionSet(frozenset(order[:k].tolist()), k, M)


def bonferroni_reject(p, alpha: float) -> RejectionSet:
    _check_alpha(alpha)
    arr = _as_pvector(p)
    idx = np.flatnonzero(arr <= alpha / arr.size)
    return RejectionSet(frozenset(idx.tolist()), idx.size, arr.size)


Procedure = Callable[[np.ndarray, float], RejectionSet]

PROCEDURES: Dict[str, Procedure] = {
    "bh": bh_reject,
    "by": by_reject,
    "holm": holm_reject,
    "bonferroni": bonferroni_reject,
}

# procedures whose error control does not need PRDS
ARBITRARY_DEPENDENCE = frozenset({"by", "holm", "bonferroni"})


def get_procedure(name: str) -> Procedure:
    try:
        return PROCEDURES[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown procedure {name!r}; choose from {sorted(PROCEDURES)}") from None
