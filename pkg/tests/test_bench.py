import math
import os

import numpy as np
import pytest

from capdmp import (
    ContractViolation,
    ExperimentConfig,
    NumericalError,
    TargetSpec,
    brent_minimize,
    ca_vs_bps_efficiency,
    efficiency_ratio,
    ks_distance,
    nested_brent,
    run_experiment,
)
from capdmp.bench import (
    RESULTS_HEADER,
    efficiency_table,
    fmt,
    read_results_csv,
    run_replicate,
    write_results_csv,
    write_summary_csv,
)
from capdmp.samplers import Budget


def brute_force_ks(samples, cdf):
    """Straightforward double-loop supremum over empirical jump points."""
    xs = sorted(samples)
    n = len(xs)
    best = 0.0
    for i, x in enumerate(xs, start=1):
        F = cdf(x)
        best = max(best, abs(F - i / n), abs(F - (i - 1) / n))
    return best


class TestKsDistance:
    def test_single_sample_against_uniform(self):
        assert ks_distance([0.5], lambda x: min(max(x, 0.0), 1.0)) == 0.5

    def test_stratified_quantiles(self):
        from statistics import NormalDist
        nd = NormalDist()
        for n in (10, 100):
            samples = [nd.inv_cdf((i - 0.5) / n) for i in range(1, n + 1)]
            assert ks_distance(samples, nd.cdf) == pytest.approx(1 / (2 * n))

    def test_matches_brute_force_exactly(self, rng):
        from statistics import NormalDist
        cdf = NormalDist().cdf
        for _ in range(1000):
            n = rng.integers(1, 60)
            samples = rng.normal(size=n)
            assert ks_distance(samples, cdf) == brute_force_ks(samples, cdf)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            ks_distance([], lambda x: x)


class TestBrent:
    def test_quadratic(self):
        xmin, fmin = brent_minimize(lambda x: (x - 2.0) ** 2, (0.0, 5.0), 10)
        assert abs(xmin - 2.0) < 1e-3

    def test_monotone_goes_to_boundary(self):
        xmin, _ = brent_minimize(lambda x: x, (0.0, 1.0), 12)
        assert xmin < 0.05

    def test_quartic(self):
        f = lambda x: x ** 4 - 3 * x ** 2 + 1
        xmin, _ = brent_minimize(f, (0.0, 3.0), 25)
        # independent dense grid scan confirms the argmin
        grid = np.linspace(0, 3, 200001)
        g_argmin = grid[np.argmin(f(grid))]
        assert g_argmin == pytest.approx(math.sqrt(1.5), abs=1e-4)
        assert abs(xmin - math.sqrt(1.5)) < 1e-3

    def test_exact_evaluation_budget(self):
        calls = []

        def f(x):
            calls.append(x)
            return (x - 0.7) ** 2

        brent_minimize(f, (0.0, 2.0), 13)
        assert len(calls) == 13

    def test_nonfinite_objective_aborts(self):
        with pytest.raises(NumericalError):
            brent_minimize(lambda x: float("nan"), (0.0, 1.0), 5)

    def test_bad_bracket(self):
        with pytest.raises(ContractViolation):
            brent_minimize(lambda x: x, (1.0, 0.0), 5)


class TestNestedBrent:
    def test_degenerate_inner_objective(self):
        # objective independent of the inner variable: the outer search
        # still optimizes normally and the inner returns an interior point
        def objective(outer, inner):
            return (math.log10(outer) - 0.0) ** 2

        (best_o, best_i), best_val, trace = nested_brent(
            objective, (1e-3, 1e1), (1e-4, 1e0), 8, 6)
        assert abs(math.log10(best_o)) < 0.05
        assert 1e-4 <= best_i <= 1e0
        assert len(trace) == 8 * 6

    def test_tuned_never_worse_than_bracket_endpoints(self):
        def objective(outer, inner):
            return (math.log10(outer) + 1.0) ** 2 + 0.5 * (math.log10(inner) + 2.0) ** 2

        (best_o, best_i), best_val, _ = nested_brent(
            objective, (1e-3, 1e1), (1e-4, 1e0), 10, 10)
        for o in (1e-3, 1e1):
            for i in (1e-4, 1e0):
                assert best_val <= objective(o, i) + 1e-12


class TestEfficiencyRatio:
    def test_epsilon_zero_is_b_over_a(self):
        assert efficiency_ratio(2.0, 5.0, 10, 4, 1.0, 0.0) == pytest.approx(2.5)

    def test_hand_arithmetic(self):
        assert efficiency_ratio(2.0, 4.0, 10, 5, 1.0, 1.0) == pytest.approx(0.75)

    def test_large_epsilon_limit(self):
        val = efficiency_ratio(2.0, 4.0, 10, 5, 2.0, 1e9)
        assert val == pytest.approx(1.0, rel=1e-6)

    def test_monotone_in_b_and_beta(self):
        bs = np.linspace(1.0, 10.0, 25)
        vals = [efficiency_ratio(2.0, b, 10, 5, 1.0, 0.3) for b in bs]
        assert all(v2 > v1 for v1, v2 in zip(vals, vals[1:]))
        betas = np.linspace(0.0, 10.0, 25)
        vals = [efficiency_ratio(2.0, 4.0, 10, 5, beta, 0.3) for beta in betas]
        assert all(v2 > v1 for v1, v2 in zip(vals, vals[1:]))

    def test_domain_errors(self):
        with pytest.raises(ContractViolation):
            efficiency_ratio(0.0, 1.0, 0, 0, 1.0, 0.0)
        with pytest.raises(ContractViolation):
            efficiency_ratio(1.0, 1.0, -1, 0, 1.0, 0.0)

    def test_ca_orientation_is_reciprocal(self):
        assert ca_vs_bps_efficiency(2.0, 4.0, 10, 5, 1.0, 1.0) \
            == pytest.approx(1.0 / 0.75)


def smoke_config(tmp_path=None, replicates=3, windows=120):
    return ExperimentConfig(
        targets=[TargetSpec("gaussian", {"d": 2, "delta": 1.0})],
        samplers=["bps", "ca_bps"],
        replicates=replicates,
        budget_seconds=None,
        budget_windows=windows,
        budget_events=600,
        tune=False,
        beta_grid=[1.0, 2.0],
        epsilon_grid=[0.0, 1e-4],
        base_seed=7,
        fixed_T={"bps": 1.0, "ca_bps": 0.7, "sl_pdmp": 0.7},
        fixed_delta={"bps": 0.1, "ca_bps": 0.35, "sl_pdmp": 0.35},
    )


class TestRunExperiment:
    def test_row_accounting(self):
        config = smoke_config()
        rows, summary = run_experiment(config)
        assert len(rows) == config.replicates * len(config.samplers)
        for row in rows:
            assert 0.0 <= row.ks <= 1.0
        ratio_rows = [s for s in summary if s["ratio_kind"]]
        # matched + raw per (beta, epsilon) pair
        assert len(ratio_rows) == 2 * len(config.beta_grid) * len(config.epsilon_grid)

    def test_median_permutation_invariance(self):
        config = smoke_config()
        rows, summary = run_experiment(config)
        med = [s for s in summary if not s["ratio_kind"]][0]["median_ks"]
        rows_shuffled = list(reversed(rows))
        by_sampler = {}
        for r in rows_shuffled:
            by_sampler.setdefault(r.sampler, []).append(r.ks)
        import statistics
        assert statistics.median(by_sampler[summary[0]["sampler"]]) \
            == pytest.approx(med)

    def test_deterministic_rows_given_seed(self):
        config1 = smoke_config()
        config1.timing_in_results = "blank"
        config2 = smoke_config()
        config2.timing_in_results = "blank"
        rows1, _ = run_experiment(config1)
        rows2, _ = run_experiment(config2)
        assert [r.csv_values() for r in rows1] == [r.csv_values() for r in rows2]

    def test_parallel_jobs_match_serial(self):
        config = smoke_config()
        config.timing_in_results = "blank"
        rows_serial, _ = run_experiment(config)
        config_par = smoke_config()
        config_par.timing_in_results = "blank"
        config_par.jobs = 2
        rows_par, _ = run_experiment(config_par)
        assert [r.csv_values() for r in rows_serial] \
            == [r.csv_values() for r in rows_par]

    def test_csv_round_trip(self, tmp_path):
        rows, summary = run_experiment(smoke_config())
        path = tmp_path / "results.csv"
        write_results_csv(path, rows)
        header = open(path).readline().strip()
        assert header == ",".join(RESULTS_HEADER)
        back = read_results_csv(path)
        assert len(back) == len(rows)
        assert back[0].ks == rows[0].ks
        spath = tmp_path / "summary.csv"
        write_summary_csv(spath, summary)
        assert open(spath).readline().strip().startswith("target,sampler")

    def test_seventeen_digit_serialization(self):
        x = 1.0 / 3.0
        assert fmt(x) == f"{x:.17g}"
        assert float(fmt(x)) == x
        assert fmt(3) == "3"
        assert fmt(None) == ""

    def test_missing_columns_diagnostic(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("target,sampler\nfoo,bar\n")
        with pytest.raises(ContractViolation, match="missing columns"):
            read_results_csv(path)


class TestEfficiencyTable:
    def _rows(self, sampler, ks, wall, bounces, windows):
        from capdmp.bench import ResultRow
        return [ResultRow(target="t", sampler=sampler, replicate=i, seed=i,
                          ks=ks, bounces=bounces, flips=0, windows=windows,
                          accepts=0, wall_s=wall, T=1.0, delta=0.1)
                for i in range(3)]

    def test_matched_direction_bps_better(self):
        # BPS reaches lower KS at the same budget: ratio at eps=0 below 1
        rows = {"bps": self._rows("bps", 0.01, 3.0, 1000, 50),
                "ca_bps": self._rows("ca_bps", 0.03, 3.0, 200, 100)}
        table = efficiency_table(rows, [1.0], [0.0])
        matched = [r for r in table if r[3] == "matched"][0]
        assert matched[2] == pytest.approx((0.01 / 0.03) ** 2, rel=1e-9)
        assert matched[2] < 1.0

    def test_matched_direction_ca_better(self):
        rows = {"bps": self._rows("bps", 0.2, 3.0, 1000, 50),
                "ca_bps": self._rows("ca_bps", 0.02, 3.0, 200, 100)}
        table = efficiency_table(rows, [1.0], [0.0])
        matched = [r for r in table if r[3] == "matched"][0]
        assert matched[2] > 1.0

    def test_raw_ratio_at_zero_epsilon_is_wall_quotient(self):
        rows = {"bps": self._rows("bps", 0.05, 4.0, 1000, 50),
                "ca_bps": self._rows("ca_bps", 0.05, 2.0, 200, 100)}
        table = efficiency_table(rows, [1.0], [0.0])
        raw = [r for r in table if r[3] == "raw"][0]
        assert raw[2] == pytest.approx(4.0 / 2.0)

    def test_missing_sampler_gives_empty_table(self):
        rows = {"bps": self._rows("bps", 0.05, 4.0, 1000, 50)}
        assert efficiency_table(rows, [1.0], [0.0]) == []


class TestRunReplicate:
    def test_bps_replicate_row(self):
        spec = TargetSpec("gaussian", {"d": 2, "delta": 1.0})
        row = run_replicate(spec, "bps", T=1.0, delta=0.1,
                            budget=Budget(events=400), seed=11, burn_in=0.1,
                            hardness=1e3, record_dt=0.1)
        assert row.sampler == "bps"
        assert 0.0 <= row.ks <= 1.0
        assert row.bounces > 0

    def test_sl_replicate_row(self):
        spec = TargetSpec("gaussian", {"d": 2, "delta": 1.0})
        row = run_replicate(spec, "sl_pdmp", T=0.7, delta=0.35,
                            budget=Budget(windows=150), seed=3, burn_in=0.1,
                            hardness=1e3, record_dt=0.1)
        assert row.windows == 150
        assert row.ks < 0.5
