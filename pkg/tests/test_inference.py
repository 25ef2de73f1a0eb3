import numpy as np
import pytest

from amirl.datagen import ScenarioSpec, generate
from amirl.impute import ImputedDataset
from amirl.inference import (InferenceError, bca_interval, fit_statistics)
from amirl.pipeline import prepare_design


def design_from_scenario(spec):
    panel, truth = generate(spec)
    imputed = ImputedDataset(panel.values, panel.mask, 0, 0, spec.seed)
    design = prepare_design(imputed, 0, list(range(1, spec.n_covariates + 1)),
                            panel.variable_names, demean=True,
                            n_intercepts=spec.n_units)
    return design, panel, truth


def standardized_truth(design, truth, spec):
    """Ground-truth slope vector on the standardized scale."""
    sd_y = design.y_scale[1]
    sd_x = design.x_scale[1]
    return truth.beta * sd_x / sd_y


class TestFitStatistics:
    def test_perfect_noiseless_fit_is_one(self):
        spec = ScenarioSpec(n_units=20, n_periods=5, n_covariates=4,
                            support=(0, 2), beta=(1.0, -2.0),
                            fixed_effect_scale=1.0, noise_scale=0.0,
                            missing_rate=0.0, seed=1)
        design, _, truth = design_from_scenario(spec)
        b = standardized_truth(design, truth, spec)
        stats = fit_statistics([design], b)
        assert stats.r2_overall == pytest.approx(1.0, abs=1e-10)
        assert stats.r2_within == pytest.approx(1.0, abs=1e-10)
        assert stats.r2_overall_adj == pytest.approx(1.0, abs=1e-10)
        assert stats.r2_within_adj == pytest.approx(1.0, abs=1e-10)

    def test_zero_coefficients_give_unit_means_model(self):
        spec = ScenarioSpec(n_units=15, n_periods=4, n_covariates=3,
                            support=(0,), beta=(1.0,), noise_scale=0.5,
                            missing_rate=0.0, seed=2)
        design, _, _ = design_from_scenario(spec)
        stats = fit_statistics([design], np.zeros(3))
        assert stats.r2_within == pytest.approx(0.0, abs=1e-12)
        # overall R2 of the unit-means-only model, computed directly
        fitted = design.y_unit_means[design.unit_of_row]
        sst = ((design.y_std - design.y_std.mean()) ** 2).sum()
        ssr = ((design.y_std - fitted) ** 2).sum()
        assert stats.r2_overall == pytest.approx(1 - ssr / sst, abs=1e-12)

    def test_within_r2_matches_two_pass_recompute(self):
        spec = ScenarioSpec(n_units=25, n_periods=6, n_covariates=5,
                            support=(1, 3), beta=(0.8, -0.6), noise_scale=1.0,
                            missing_rate=0.0, seed=3)
        design, _, truth = design_from_scenario(spec)
        b = standardized_truth(design, truth, spec)
        stats = fit_statistics([design], b)
        resid = design.y_dd - design.x_dd @ b
        r2 = 1.0 - (resid ** 2).sum() / (design.y_dd ** 2).sum()
        assert stats.r2_within == pytest.approx(r2, abs=1e-10)

    def test_adjusted_below_unadjusted(self):
        spec = ScenarioSpec(n_units=20, n_periods=5, n_covariates=4,
                            support=(0,), beta=(1.0,), noise_scale=1.0,
                            missing_rate=0.0, seed=4)
        design, _, truth = design_from_scenario(spec)
        b = standardized_truth(design, truth, spec)
        stats = fit_statistics([design], b)
        assert stats.r2_overall_adj <= stats.r2_overall
        assert stats.r2_within_adj <= stats.r2_within

    def test_averages_across_imputations(self):
        spec = ScenarioSpec(n_units=15, n_periods=4, n_covariates=3,
                            support=(0,), beta=(1.0,), noise_scale=0.5,
                            missing_rate=0.0, seed=5)
        design, _, truth = design_from_scenario(spec)
        b = standardized_truth(design, truth, spec)
        single = fit_statistics([design], b)
        double = fit_statistics([design, design], b)
        assert double.n_imputations == 2
        assert double.r2_overall == pytest.approx(single.r2_overall)

    def test_zero_variance_target_rejected(self):
        spec = ScenarioSpec(n_units=10, n_periods=3, n_covariates=3,
                            support=(0,), beta=(1.0,), noise_scale=0.5,
                            missing_rate=0.0, seed=6)
        design, _, _ = design_from_scenario(spec)
        design.y_std = np.zeros_like(design.y_std)
        with pytest.raises(InferenceError, match="zero variance"):
            fit_statistics([design], np.zeros(3))


class TestBcaInterval:
    def test_symmetric_estimator_close_to_percentile(self):
        rng = np.random.default_rng(7)
        data = rng.normal(size=(40, 6))  # 40 units, 6 rows each

        def estimator(units):
            return float(data[units].mean())

        ci = bca_interval(estimator, 40, level=0.90, n_resamples=4000, seed=8)
        boot = []
        rng2 = np.random.default_rng(np.random.SeedSequence(8, spawn_key=(5,)))
        for _ in range(4000):
            boot.append(estimator(rng2.integers(0, 40, 40)))
        lo, hi = np.quantile(boot, [0.05, 0.95])
        assert abs(ci.bias_z0) < 0.12
        assert abs(ci.acceleration) < 0.05
        assert ci.lower == pytest.approx(lo, abs=0.02)
        assert ci.upper == pytest.approx(hi, abs=0.02)

    def test_significance_flag(self):
        from amirl.inference import CoefficientInterval
        sig = CoefficientInterval(0, 0.3, 0.2, 0.5, 0.9, 0.0, 0.0)
        not_sig = CoefficientInterval(0, 0.3, -0.1, 0.5, 0.9, 0.0, 0.0)
        assert sig.significant and not not_sig.significant

    def test_degenerate_distribution_collapses(self):
        ci = bca_interval(lambda units: 3.14, 10, n_resamples=300, seed=9)
        assert ci.degenerate
        assert ci.lower == ci.upper == ci.estimate == 3.14

    def test_sign_flip_equivariance(self):
        rng = np.random.default_rng(10)
        data = rng.normal(size=30) ** 3  # skewed so z0 and a are nonzero

        def estimator(units):
            return float(data[units].mean())

        def neg_estimator(units):
            return -estimator(units)

        a = bca_interval(estimator, 30, level=0.90, n_resamples=500, seed=11)
        b = bca_interval(neg_estimator, 30, level=0.90, n_resamples=500, seed=11)
        assert b.lower == pytest.approx(-a.upper, abs=1e-12)
        assert b.upper == pytest.approx(-a.lower, abs=1e-12)
        assert b.bias_z0 == pytest.approx(-a.bias_z0, abs=1e-10)
        assert b.acceleration == pytest.approx(-a.acceleration, abs=1e-12)

    def test_coverage_monotonicity(self):
        rng = np.random.default_rng(12)
        data = rng.normal(size=25) * 2

        def estimator(units):
            return float(data[units].mean())

        narrow = bca_interval(estimator, 25, level=0.90, n_resamples=400, seed=13)
        wide = bca_interval(estimator, 25, level=0.99, n_resamples=400, seed=13)
        assert wide.lower <= narrow.lower
        assert wide.upper >= narrow.upper

    def test_coverage_of_linear_coefficient(self):
        # 90% nominal intervals for a demeaned OLS slope: coverage stays high
        covered = 0
        reps = 60
        for r in range(reps):
            spec = ScenarioSpec(n_units=30, n_periods=5, n_covariates=3,
                                support=(0,), beta=(1.0,), fixed_effect_scale=1.0,
                                noise_scale=1.0, missing_rate=0.0, seed=100 + r)
            design, _, _ = design_from_scenario(spec)
            x_dd, y_dd, t = design.x_dd, design.y_dd, design.n_periods

            def estimator(units):
                rows = (units[:, None] * t + np.arange(t)).ravel()
                coef, *_ = np.linalg.lstsq(x_dd[rows], y_dd[rows], rcond=None)
                return float(coef[0])

            sd_scale = design.x_scale[1][0] / design.y_scale[1]
            ci = bca_interval(estimator, 30, level=0.90, n_resamples=300,
                              seed=1000 + r)
            covered += ci.lower <= 1.0 * sd_scale <= ci.upper
        assert covered >= 0.8 * reps

    def test_needs_enough_resamples(self):
        with pytest.raises(InferenceError, match="200"):
            bca_interval(lambda u: 0.0, 5, n_resamples=100, seed=1)
