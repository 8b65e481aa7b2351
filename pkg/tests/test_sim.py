import numpy as np
import pytest

from seqperm.engine import adaptive_B, worst_case_avg_bound
from seqperm.errors import InvalidArgumentError
from seqperm.sim import (GaussianSimConfig, MethodSpec, ScheduledLosses,
                         adversarial_bound_check, avbc_rejection_rate, fdp,
                         run_experiment, simulate_gaussian, staircase_schedule,
                         standard_methods, synthetic_counts, wealth_crossing_rate,
                         worst_bound_figure, write_metrics_csv)
from seqperm.pvalue_core import AvBcParams, BesagCliffordParams


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        GaussianSimConfig(rho=1.0)
    with pytest.raises(InvalidArgumentError):
        GaussianSimConfig(reps=0)


def test_simulated_means():
    reps = simulate_gaussian(GaussianSimConfig(M=4000, pi_A=1.0, mu_A=2.0, reps=2, seed=1))
    assert reps[0].observed.mean() == pytest.approx(2.0, abs=0.1)
    assert reps[0].is_alternative.all()
    again = simulate_gaussian(GaussianSimConfig(M=4000, pi_A=1.0, mu_A=2.0, reps=2, seed=1))
    assert np.array_equal(again[1].observed, reps[1].observed)


def test_equicorrelation():
    reps = simulate_gaussian(GaussianSimConfig(M=2, pi_A=0.0, rho=0.7, reps=3000, seed=2))
    y = np.array([r.observed for r in reps])
    assert np.corrcoef(y.T)[0, 1] == pytest.approx(0.7, abs=0.05)


def test_fdp_convention():
    alt = np.array([True, False, False])
    assert fdp(np.zeros(3, bool), alt) == 0.0
    assert fdp(np.array([True, True, False]), alt) == 0.5


def test_global_null_flags_power():
    cfg = GaussianSimConfig(M=50, pi_A=0.0, mu_A=0.0, reps=5, seed=3)
    rec = run_experiment(cfg, [MethodSpec("avbc", AvBcParams(10), 10000)])[0]
    assert rec.power == 0.0 and not rec.power_defined


def test_perfect_separation():
    cfg = GaussianSimConfig(M=50, pi_A=1.0, mu_A=12.0, reps=2, seed=4)
    rec = run_experiment(cfg, [MethodSpec("avbc", AvBcParams(10), 10000)])[0]
    assert rec.power == 1.0 and rec.fdr == 0.0


def test_avbc_and_bc_identical_every_rep():
    cfg = GaussianSimConfig(M=200, reps=4, seed=5)
    B = adaptive_B(1, 200, 10, 0.1)
    methods = [MethodSpec("bc", BesagCliffordParams(10, B)), MethodSpec("avbc", AvBcParams(10))]
    _, res, _ = run_experiment(cfg, methods, keep_results=True)
    for a, b in zip(res["bc"], res["avbc"]):
        assert a.rejections.indices == b.rejections.indices


def test_metrics_csv(tmp_path):
    cfg = GaussianSimConfig(M=30, reps=2, seed=6)
    recs = run_experiment(cfg, standard_methods(B=500, cap=2000))
    path = tmp_path / "m.csv"
    write_metrics_csv(recs, path)
    lines = path.read_text().splitlines()
    assert lines[0].endswith("method,metric,value")
    assert len(lines) > 5 * 5
    write_metrics_csv(recs, tmp_path / "n.csv")
    assert (tmp_path / "n.csv").read_bytes() == path.read_bytes()


def test_scheduled_losses():
    src = ScheduledLosses([[1, 5], [], [4096, 4097]], block=4096)
    got = src.fetch([0, 2], 0, 4100)
    assert np.flatnonzero(got[0]).tolist() == [0, 4]
    assert np.flatnonzero(got[1]).tolist() == [4095, 4096]


def test_bound_checks():
    rep = []
    assert adversarial_bound_check(30, 2, 0.1, trials=6, report=rep)
    d = {name: tbar for name, tbar, _ in rep}
    assert d["no-losses"] == 2 / 0.1 - 2
    assert d["immediate"] == 2
    sched = staircase_schedule(30, 2, 0.1)
    assert [s[-1] for s in sched] == [adaptive_B(k, 30, 2, 0.1) for k in range(1, 31)]


def test_worst_bound_figure():
    rows = worst_bound_figure(0.1, 1, [1, 1000, 10 ** 4, 2 * 10 ** 4])
    assert rows[0] == (1, 9, 9.0)
    assert rows[1][1] == 9999
    assert rows[3][2] / rows[2][2] <= 1.25
    assert rows[2][2] == pytest.approx(worst_case_avg_bound(10 ** 4, 1, 0.1))


def test_single_process_validity_small():
    assert avbc_rejection_rate(5, 0.1, reps=4000, seed=1) <= 0.1 + 3 * np.sqrt(0.09 / 4000)
    assert wealth_crossing_rate(0.05, 10, reps=2000, seed=2, horizon=500) <= 0.1 + 3 * np.sqrt(0.09 / 2000)


def test_synthetic_counts():
    ds, shifted, strong = synthetic_counts(40, 300, seed=1)
    assert ds.matrix.shape == (40, 300)
    assert np.all(ds.matrix >= 0) and np.all(ds.matrix == np.round(ds.matrix))
    assert strong.sum() <= shifted.sum()
    assert ds.labels.sum() == 20
