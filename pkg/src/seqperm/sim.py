"""Simulation harness: Gaussian mean model, metrics and bound checks.

Simulations run in identity mode: observed statistics are drawn directly
and generated statistics are N(0, 1), so no labels are shuffled.  Within a
replication every method reads the same generated draws.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import _binom
from .engine import (EngineConfig, RunResult, adaptive_B, run,
                     worst_case_avg_bound)
from .errors import InvalidArgumentError
from .maxt import ExchangeableGaussianStatistics, maxt_sequential
from .pvalue_core import (AvBcParams, BesagCliffordParams, BinMixParams,
                          ClassicalParams)
from .stats_perm import GaussianNullLosses, LossSource

QUANTILES = (0.25, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class GaussianSimConfig:
    M: int = 1000
    pi_A: float = 0.4
    mu_A: float = 2.5
    rho: float = 0.0
    alpha: float = 0.1
    reps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise InvalidArgumentError("M must be >= 1")
        if not 0.0 <= self.pi_A <= 1.0:
            raise InvalidArgumentError("pi_A must lie in [0, 1]")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidArgumentError("rho must lie in [0, 1)")
        if self.reps < 1:
            raise InvalidArgumentError("reps must be >= 1")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    strategy: object
    max_permutations: Optional[int] = None

    def config(self, alpha, seed=0) -> EngineConfig:
        return EngineConfig(alpha=alpha, strategy=self.strategy,
                            max_permutations=self.max_permutations, seed=seed)


def standard_methods(h=10, b=0.9, B=10000, cap=10000, bc_B=None) -> List[MethodSpec]:
    return [
        MethodSpec(f"classical(B={B})", ClassicalParams(B)),
        MethodSpec(f"bc(h={h},B={bc_B or B})", BesagCliffordParams(h, bc_B or B)),
        MethodSpec(f"avbc(h={h})", AvBcParams(h), cap),
        MethodSpec("aggressive", AvBcParams(1), cap),
        MethodSpec(f"binmix(b={b})", BinMixParams(b), cap),
    ]


@dataclass
class SimRep:
    observed: np.ndarray
    is_alternative: np.ndarray
    seed: int

    def losses(self) -> LossSource:
        return GaussianNullLosses(self.observed, seed=self.seed)


def simulate_gaussian(config: GaussianSimConfig) -> List[SimRep]:
    """Observed statistics: equicorrelated normals shifted by mu_A on alternatives."""
    out = []
    for r in range(config.reps):
        rng = np.random.default_rng([config.seed, r])
        alt = rng.random(config.M) < config.pi_A
        z = rng.standard_normal(config.M)
        w = rng.standard_normal()
        y = math.sqrt(1.0 - config.rho) * z + math.sqrt(config.rho) * w + config.mu_A * alt
        out.append(SimRep(y, alt, int(rng.integers(2 ** 62))))
    return out


@dataclass
class MetricsRecord:
    method: str
    power: float
    fdr: float
    avg_permutations: float
    rejection_time_quantiles: List[tuple]
    power_se: float = 0.0
    fdr_se: float = 0.0
    reps: int = 0
    power_defined: bool = True
    setting: Dict[str, float] = field(default_factory=dict)


def fdp(rejected: np.ndarray, is_alternative: np.ndarray) -> float:
    r = int(rejected.sum())
    v = int((rejected & ~is_alternative).sum())
    return v / max(r, 1)


def summarize(name, results: Sequence[RunResult], reps: Sequence[SimRep],
              setting=None) -> MetricsRecord:
    powers, fdps, avg, times = [], [], [], []
    defined = True
    for res, rep in zip(results, reps):
        rej = res.rejected_mask
        n_alt = int(rep.is_alternative.sum())
        if n_alt == 0:
            defined = False
            powers.append(0.0)
        else:
            powers.append((rej & rep.is_alternative).sum() / n_alt)
        fdps.append(fdp(rej, rep.is_alternative))
        avg.append(res.average_permutations)
        times.append(res.rejection_times[res.rejection_times >= 0])
    n = len(results)
    pw, fd = np.array(powers), np.array(fdps)
    allt = np.concatenate(times) if times else np.array([])
    q = [(qq, float(np.quantile(allt, qq))) for qq in QUANTILES] if allt.size else []
    se = (lambda x: float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
    return MetricsRecord(name, float(pw.mean()), float(fd.mean()), float(np.mean(avg)),
                         q, se(pw), se(fd), n, defined, dict(setting or {}))


def run_experiment(config: GaussianSimConfig, methods: Sequence[MethodSpec],
                   keep_results: bool = False):
    """Metrics per method, every method reading the same draws in each replication."""
    reps = simulate_gaussian(config)
    per_method: Dict[str, List[RunResult]] = {m.name: [] for m in methods}
    for rep in reps:
        src = rep.losses()
        for m in methods:
            per_method[m.name].append(run(m.config(config.alpha), src))
    setting = {k: v for k, v in asdict(config).items() if k != "seed"}
    records = [summarize(m.name, per_method[m.name], reps, setting) for m in methods]
    if keep_results:
        return records, per_method, reps
    return records


def write_metrics_csv(records: Iterable[MetricsRecord], path) -> None:
    """Tidy rows: setting columns, method, metric, value."""
    records = list(records)
    keys = sorted({k for r in records for k in r.setting})
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(keys + ["method", "metric", "value"])
        for r in records:
            base = [r.setting.get(k, "") for k in keys] + [r.method]
            for metric in ("power", "power_se", "fdr", "fdr_se", "avg_permutations"):
                wr.writerow(base + [metric, repr(float(getattr(r, metric)))])
            for qq, t in r.rejection_time_quantiles:
                wr.writerow(base + [f"rejection_time_q{qq:g}", repr(t)])


# -- adversarial bound checks ----------------------------------------------------------

class ScheduledLosses(LossSource):
    """Losses at prescribed draw positions (1-based), zeros elsewhere."""

    def __init__(self, loss_times: Sequence[Sequence[int]], block: int = 4096):
        self.M = len(loss_times)
        self.block = block
        self.times = [np.asarray(sorted(x), dtype=np.int64) for x in loss_times]

    def _block(self, idx, b):
        K = self.block
        out = np.zeros((idx.size, K), dtype=bool)
        for r, i in enumerate(idx):
            ts = self.times[i]
            sel = ts[(ts > b * K) & (ts <= (b + 1) * K)]
            out[r, sel - b * K - 1] = True
        return out


def staircase_schedule(M, h, alpha, rng=None):
    """Hypothesis k takes its h-th loss exactly at B_(k+1): no threshold ever has enough survivors.

    With ``rng`` the first h - 1 losses are scattered over earlier draws."""
    out = []
    for k in range(M):
        end = adaptive_B(k + 1, M, h, alpha)
        if rng is not None and end - 1 >= h - 1:
            early = rng.choice(end - 1, size=h - 1, replace=False) + 1
            out.append(sorted(early.tolist()) + [end])
        else:
            out.append(list(range(max(1, end - h + 1), end + 1)))
    return out


def adversarial_bound_check(M: int, h: int, alpha: float, trials: int = 20,
                            seed: int = 0, report: Optional[list] = None) -> bool:
    """Mean stopping time stays below the sure bound on all patterns tried."""
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    bound = worst_case_avg_bound(M, h, alpha)
    rng = np.random.default_rng(seed)
    B1 = adaptive_B(1, M, h, alpha)
    patterns = {
        "no-losses": [[] for _ in range(M)],
        "immediate": [list(range(1, h + 1)) for _ in range(M)],
        "staircase": staircase_schedule(M, h, alpha),
    }
    for k in range(trials):
        kind = k % 3
        if kind == 0:
            patterns[f"staircase-jitter-{k}"] = staircase_schedule(M, h, alpha, rng)
        elif kind == 1:
            # losses late: random h-th loss times spread over [1, B_1]
            ends = rng.integers(h, B1 + 1, size=M)
            patterns[f"late-{k}"] = [list(range(e - h + 1, e + 1)) for e in ends]
        else:
            q = rng.random(M) * rng.choice([0.01, 0.1, 1.0], size=M)
            patterns[f"random-{k}"] = [
                (np.flatnonzero(rng.random(B1 + 1) < qi) + 1)[:h].tolist() for qi in q]
    cfg = EngineConfig(alpha=alpha, strategy=AvBcParams(h), avbc_path="fast")
    ok = True
    for name, sched in patterns.items():
        res = run(cfg, ScheduledLosses(sched))
        tbar = res.average_permutations
        if report is not None:
            report.append((name, tbar, bound))
        ok &= tbar <= bound
    return bool(ok)


def worst_bound_figure(alpha: float = 0.1, h: int = 1, M_grid=None):
    """Rows (M, classical budget, sure mean bound for avBC)."""
    grid = M_grid if M_grid is not None else [int(10 ** k) for k in range(0, 7)]
    return [(int(M), adaptive_B(1, int(M), h, alpha), worst_case_avg_bound(int(M), h, alpha))
            for M in grid]


# -- single-process validity --------------------------------------------------------------

def _null_losses(rng, reps, T):
    # exchangeable null: the observed rank is uniform, losses i.i.d. given it
    q = rng.random(reps)
    return rng.random((reps, T)) < q[:, None]


def avbc_rejection_rate(h, alpha, reps=10_000, seed=0, horizon=None):
    """P(some t <= horizon with h / (t + h - L_t) <= alpha), frozen at the h-th loss."""
    rng = np.random.default_rng(seed)
    T = horizon or adaptive_B(1, 1, h, alpha)
    ind = _null_losses(rng, reps, T)
    L = np.cumsum(ind, axis=1)
    t = np.arange(1, T + 1)
    live = L < h  # processes before their h-th loss; frozen ones never cross later
    hit = live & (h <= alpha * (t[None, :] + h - L))
    return float(hit.any(axis=1).mean())


def binmix_rejection_rate(alpha, b=0.9, reps=10_000, seed=0, horizon=2000):
    """P(calibrated p-value reaches alpha before the horizon)."""
    return wealth_crossing_rate(b * alpha, 1.0 / alpha, reps, seed, horizon)


def wealth_crossing_rate(c, level, reps=10_000, seed=0, horizon=2000):
    """P(sup_t (1 - BinCDF(L_t; t+1, c)) / c >= level) under exchangeable nulls."""
    rng = np.random.default_rng(seed)
    ind = _null_losses(rng, reps, horizon)
    L = np.cumsum(ind, axis=1).astype(float)
    t = np.arange(1, horizon + 1, dtype=float)
    hit = np.zeros(reps, dtype=bool)
    step = 256
    for s in range(0, horizon, step):
        sl = slice(s, min(s + step, horizon))
        rows = np.flatnonzero(~hit)
        w = _binom.binom_sf_ufunc(L[rows, sl], t[None, sl] + 1.0, c) / c
        hit[rows] |= (w >= level).any(axis=1)
    # t = 0 state: wealth (1 - (1-c)) / c = 1
    return float(hit.mean())


def maxt_fwer(M=10, alpha=0.1, c=0.05, reps=10_000, rho=0.0, cap=1000, seed=0):
    """Share of global-null replications with any MaxT rejection."""
    any_rej = 0
    for r in range(reps):
        rng = np.random.default_rng([seed, r])
        y0 = ExchangeableGaussianStatistics.draw(rng, 1, M, rho)[0]
        src = ExchangeableGaussianStatistics(np.sort(y0)[::-1], rho, seed=int(rng.integers(2 ** 62)))
        res = maxt_sequential(src, c, alpha, max_permutations=cap)
        any_rej += len(res.rejections) > 0
    return any_rej / reps


def mc_se(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n)


__all__ = [
    "GaussianSimConfig", "MethodSpec", "standard_methods", "SimRep",
    "simulate_gaussian", "MetricsRecord", "summarize", "run_experiment",
    "write_metrics_csv", "ScheduledLosses", "staircase_schedule",
    "adversarial_bound_check", "worst_bound_figure", "avbc_rejection_rate",
    "binmix_rejection_rate", "wealth_crossing_rate", "maxt_fwer", "mc_se", "fdp", "synthetic_counts",
]


# -- synthetic count data -----------------------------------------------------------------

def synthetic_counts(n: int = 200, M: int = 5000, frac_shifted: float = 0.1,
                     fold: float = 2.0, strong_fold: float = 4.0, frac_strong: float = 0.5,
                     dispersion: float = 0.2, seed: int = 0):
    """Negative-binomial counts with planted group-1 fold changes.

    Returns (Dataset, shifted mask, strong mask).  Half of the samples are in
    group 1; a share ``frac_strong`` of the shifted genes get ``strong_fold``.
    """
    from .stats_perm import Dataset

    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int8)
    labels[rng.permutation(n)[: n // 2]] = 1
    base = np.exp(rng.normal(3.0, 1.5, M))
    lib = rng.uniform(0.5, 1.5, n)
    shifted = rng.random(M) < frac_shifted
    strong = shifted & (rng.random(M) < frac_strong)
    fc = np.where(strong, strong_fold, np.where(shifted, fold, 1.0))
    mean = lib[:, None] * base[None, :] * np.where(labels[:, None] == 1, fc[None, :], 1.0)
    # gamma-Poisson mixture with shape 1/dispersion
    k = 1.0 / dispersion
    lam = rng.gamma(k, mean / k)
    counts = rng.poisson(lam).astype(float)
    names = [f"gene{j:05d}" for j in range(M)]
    return Dataset(counts, labels, names), shifted, strong
