import numpy as np
import pytest

from cbindex import (
    BenefitPipeline,
    BenefitVector,
    BootstrapConfig,
    CbEstimate,
    bootstrap_ci,
    bootstrap_intervals,
    optimism_adjust,
    optimism_adjust_all,
)
from cbindex.errors import EstimationError
from cbindex.inference import _percentile_nearest_rank
from cbindex.pipeline import PipelineResult

from conftest import simulate_trial

MILD = np.array([0.3, -0.5, 0.4, -0.3, 0.3, -0.2])


def quick_pipeline():
    return BenefitPipeline(
        model="ridge", cv_folds=3, lambda_grid_size=4, lambda_min_ratio=1e-2,
        fit_tol=1e-6, theta_rtol=1e-2,
    )


class _StubResult:
    """Duck-typed PipelineResult carrying a fixed index value."""

    def __init__(self, cb, model_penalty=0.0):
        est = CbEstimate(
            mean_benefit=1.0, pair_max=1.0 / (1.0 - cb) if cb < 1 else 2.0,
            delta_b=0.0, gini_b=0.0, cb=cb, estimator_kind="parametric",
        )
        self.estimates = {"parametric": est}
        self.failures = {}
        self.model = type("M", (), {"penalty": model_penalty})()

    def cb_value(self, kind):
        est = self.estimates.get(kind)
        return est.cb if est is not None else None


class ConstantPredictionPipeline:
    """Ranks every subject identically: the index is always zero."""

    model = "ml"

    def estimate(self, data, seed=None):
        n = data.n
        bv = BenefitVector.from_values(np.full(n, 0.25), subject_ids=data.ids)
        est = CbEstimate(
            mean_benefit=0.25, pair_max=0.25, delta_b=0.0, gini_b=0.0,
            cb=0.0, estimator_kind="parametric",
        )
        return PipelineResult(
            model=type("M", (), {"penalty": 0.0})(),
            benefit=bv,
            estimates={"parametric": est},
            failures={"semiparametric": "stubbed out"},
        )

    def evaluate(self, fitted, data):
        return self.estimate(data)


class TestPercentileRule:
    def test_nearest_rank(self):
        values = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
        assert _percentile_nearest_rank(values, 0.025) == 1.0
        assert _percentile_nearest_rank(values, 0.25) == 3.0
        assert _percentile_nearest_rank(values, 0.5) == 5.0
        assert _percentile_nearest_rank(values, 0.975) == 10.0
        assert _percentile_nearest_rank(values, 1.0) == 10.0

    def test_degenerate_all_equal(self):
        values = np.full(9, 0.4)
        assert _percentile_nearest_rank(values, 0.025) == 0.4
        assert _percentile_nearest_rank(values, 0.975) == 0.4


class TestBootstrapCi:
    def test_same_seed_identical(self, small_trial):
        cfg = BootstrapConfig(replicates=24, seed=7)
        pipeline = quick_pipeline()
        a = bootstrap_ci(small_trial, pipeline, cfg, estimator="parametric")
        b = bootstrap_ci(small_trial, pipeline, cfg, estimator="parametric")
        assert a.point == b.point
        assert a.lower == b.lower and a.upper == b.upper
        np.testing.assert_array_equal(a.replicate_values, b.replicate_values)

    def test_workers_do_not_change_results(self, small_trial):
        pipeline = BenefitPipeline(model="ml", fit_tol=1e-6, theta_rtol=1e-2)
        seq = bootstrap_intervals(
            small_trial, pipeline, BootstrapConfig(replicates=16, seed=3, workers=1)
        )
        par = bootstrap_intervals(
            small_trial, pipeline, BootstrapConfig(replicates=16, seed=3, workers=2)
        )
        for kind in seq:
            np.testing.assert_array_equal(
                seq[kind].replicate_values, par[kind].replicate_values
            )

    def test_interval_orders_bounds(self, small_trial):
        iv = bootstrap_ci(
            small_trial, BenefitPipeline(model="ml"),
            BootstrapConfig(replicates=30, seed=5), estimator="parametric",
        )
        assert iv.lower <= iv.upper
        assert iv.n_failed + iv.replicate_values.size == 30

    def test_degenerate_majority_warns(self, small_trial):
        class Flaky(ConstantPredictionPipeline):
            """Succeeds on the original sample, fails half the resamples."""

            def __init__(self, original):
                self._original = original

            def estimate(self, data, seed=None):
                if data is not self._original and int(data.events.sum()) % 2 == 0:
                    raise EstimationError("stub failure")
                return super().estimate(data, seed)

        with pytest.warns(UserWarning, match="degenerate"):
            result = bootstrap_intervals(
                small_trial, Flaky(small_trial), BootstrapConfig(replicates=20, seed=11)
            )
        assert result["parametric"].unreliable
        assert result["parametric"].n_failed > 4

    def test_stratified_resampling_preserves_arm_sizes(self, small_trial):
        captured = []

        class Spy(ConstantPredictionPipeline):
            def estimate(self, data, seed=None):
                captured.append(int((data.treatment == 1).sum()))
                return super().estimate(data, seed)

        cfg = BootstrapConfig(replicates=6, seed=2, stratify_by_arm=True)
        bootstrap_intervals(small_trial, Spy(), cfg)
        n1 = int((small_trial.treatment == 1).sum())
        assert all(c == n1 for c in captured[1:])  # first call is the original

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_refit_shrinkage_off_reuses_original_penalty(self, small_trial, monkeypatch):
        import cbindex.nbglm as nbglm_mod
        import cbindex.pipeline as pipeline_mod

        calls = []
        real_cv = nbglm_mod.cross_validate_lambda

        def counting_cv(*args, **kwargs):
            calls.append(1)
            return real_cv(*args, **kwargs)

        monkeypatch.setattr(pipeline_mod.nbglm, "cross_validate_lambda", counting_cv)
        pipeline = quick_pipeline()
        cfg = BootstrapConfig(replicates=5, seed=2, refit_shrinkage=False)
        bootstrap_intervals(small_trial, pipeline, cfg)
        assert len(calls) == 1  # original sample only; replicates reuse its penalty

    def test_replicates_exportable(self, small_trial, tmp_path):
        iv = bootstrap_ci(
            small_trial, BenefitPipeline(model="ml"),
            BootstrapConfig(replicates=12, seed=9), estimator="parametric",
        )
        path = tmp_path / "reps.csv"
        iv.save_replicates(str(path), header_lines=["seed=9"])
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=9" and lines[1] == "value"
        assert len(lines) == 2 + iv.replicate_values.size


class TestOptimism:
    def test_constant_prediction_pipeline_has_zero_optimism(self, small_trial):
        res = optimism_adjust(
            small_trial,
            ConstantPredictionPipeline(),
            BootstrapConfig(replicates=10, seed=4),
            estimator="parametric",
        )
        assert res.optimism == 0.0
        assert res.adjusted == res.unadjusted

    def test_same_seed_identical(self, small_trial):
        pipeline = BenefitPipeline(model="ml", fit_tol=1e-6, theta_rtol=1e-2)
        cfg = BootstrapConfig(replicates=10, seed=21)
        a = optimism_adjust_all(small_trial, pipeline, cfg)
        b = optimism_adjust_all(small_trial, pipeline, cfg)
        for kind in a:
            assert a[kind].adjusted == b[kind].adjusted
            assert a[kind].optimism == b[kind].optimism

    def test_optimism_positive_on_average_under_null(self):
        # constant true benefit: whatever ranking the model finds is
        # noise, and the within-sample outcome-anchored estimate rides
        # that noise while the original-sample evaluation does not.
        # Single runs are noisy; the guarantee is about the mean.
        from cbindex.simulation import generate_population, _simulate_trial

        pop = generate_population("null", 20_000, seed=5)
        pipeline = BenefitPipeline(model="ml", fit_tol=1e-6, theta_rtol=1e-2)
        rng = np.random.default_rng(17)
        values = []
        for seed in range(8):
            d = _simulate_trial(pop, 300, rng)
            try:
                res = optimism_adjust(
                    d, pipeline, BootstrapConfig(replicates=10, seed=13 + seed),
                    estimator="semiparametric",
                )
            except EstimationError:
                continue
            values.append(res.optimism)
        assert len(values) >= 5
        assert np.mean(values) > 0


class TestConfigValidation:
    def test_replicates_floor(self):
        with pytest.raises(ValueError):
            BootstrapConfig(replicates=1, seed=0)

    def test_ci_level_range(self):
        with pytest.raises(ValueError):
            BootstrapConfig(replicates=10, seed=0, ci_level=1.0)
