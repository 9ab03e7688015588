import math

import numpy as np
import pytest
from scipy.optimize import minimize

from voicelr.calibration import (CalibrationModel, cosine_score,
                                 fit_calibration, load_calibration,
                                 log10_lrs, posterior, save_calibration,
                                 score_trials, to_lr)
from voicelr.core import EmbeddingRecord, ScoredTrial, Trial
from voicelr.embeddings import EmbeddingSet, EnrollmentVector
from voicelr.errors import DegenerateDataError, ValidationError

from oracles import logistic_objective


def _scored(same, diff):
    out = [ScoredTrial(f"k{i}", f"u{i}", "same-origin", s)
           for i, s in enumerate(same)]
    out += [ScoredTrial(f"k{i}", f"u{i}", "different-origin", s)
            for i, s in enumerate(diff, start=len(same))]
    return out


class TestCosine:

    def test_identical_direction(self):
        assert cosine_score([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert cosine_score([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_45_degrees(self):
        assert cosine_score([1.0, 0.0], [1.0, 1.0]) == pytest.approx(
            0.70711, abs=1e-5)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_score([0.0, 0.0], [1.0, 0.0])

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = rng.normal(size=(2, 8))
            assert cosine_score(a, b) == pytest.approx(
                cosine_score(5.0 * a, 0.01 * b), abs=1e-12)
            assert -1.0 - 1e-9 <= cosine_score(a, b) <= 1.0 + 1e-9


class TestScoreTrials:

    def _set(self):
        rng = np.random.default_rng(5)
        records = [EmbeddingRecord(f"s{i}", f"spk{i % 2}", 1, 1, 2.0,
                                   rng.normal(size=4)) for i in range(4)]
        return EmbeddingSet(4, records, "test")

    def test_self_trial_scores_one(self):
        emb = self._set()
        scored = score_trials([Trial("s0", "s0", "same-origin")], emb)
        assert scored[0].score == pytest.approx(1.0, abs=1e-12)

    def test_enrollment_of_single_vector_against_itself_scores_one(self):
        emb = self._set()
        enr = {"spk0": EnrollmentVector("spk0", emb.index["s0"].vector, 1, 2.0)}
        scored = score_trials([Trial("enroll:spk0", "s0", "same-origin")],
                              emb, enr)
        assert scored[0].score == pytest.approx(1.0, abs=1e-12)
        scored_bare = score_trials([Trial("spk0", "s0", "same-origin")],
                                   emb, enr)
        assert scored_bare[0].score == scored[0].score

    def test_order_preserved_and_labels_carried(self):
        emb = self._set()
        trials = [Trial("s0", "s1", "different-origin"),
                  Trial("s2", "s3", "same-origin"),
                  Trial("s1", "s2", "different-origin")]
        scored = score_trials(trials, emb)
        assert [(t.known_ref, t.unknown_ref, t.label) for t in scored] == \
            [(t.known_ref, t.unknown_ref, t.label) for t in trials]

    def test_all_missing_refs_reported_at_once(self):
        emb = self._set()
        trials = [Trial("nope1", "s0", "same-origin"),
                  Trial("s1", "nope2", "same-origin")]
        with pytest.raises(ValidationError) as err:
            score_trials(trials, emb)
        assert "nope1" in str(err.value) and "nope2" in str(err.value)


class TestFitCalibration:

    def test_symmetric_scores_give_zero_bias(self):
        model = fit_calibration(_scored([0.4], [-0.4]), l2=0.0)
        assert abs(model.bias) <= 1e-6

    def test_separated_classes_with_penalty_stay_finite(self):
        model = fit_calibration(_scored([0.9, 0.8], [0.2, 0.1]), l2=0.5)
        assert model.weight > 0.0
        assert math.isfinite(model.weight) and math.isfinite(model.bias)

    def test_matches_generic_convex_optimizer(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0])
        model = fit_calibration(_scored([0.9, 0.8], [0.2, 0.1]),
                                weighting="equal-prior", l2=0.01)
        objective = logistic_objective(scores, labels, "equal-prior", 0.01)
        ref = minimize(objective, [0.0, 0.0], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14,
                                "maxiter": 20000, "maxfev": 20000})
        ours = posterior(model, scores)
        theirs = 1.0 / (1.0 + np.exp(-(ref.x[0] * scores + ref.x[1])))
        np.testing.assert_allclose(ours, theirs, atol=1e-4)
        assert objective((model.weight, model.bias)) <= ref.fun + 1e-12

    def test_unweighted_l2_one_matches_sklearn_default_penalty(self):
        from sklearn.linear_model import LogisticRegression
        rng = np.random.default_rng(7)
        scores = np.concatenate([rng.normal(0.5, 0.3, 40),
                                 rng.normal(-0.2, 0.3, 60)])
        labels = np.array([1] * 40 + [0] * 60)
        model = fit_calibration((scores, labels), weighting="unweighted",
                                l2=1.0, tol=1e-12)
        ref = LogisticRegression(C=1.0, tol=1e-12, max_iter=10000)
        ref.fit(scores.reshape(-1, 1), labels)
        assert model.weight == pytest.approx(ref.coef_[0][0], abs=1e-6)
        assert model.bias == pytest.approx(ref.intercept_[0], abs=1e-6)

    def test_refit_is_bit_identical(self):
        rng = np.random.default_rng(11)
        scored = _scored(rng.normal(0.6, 0.2, 50), rng.normal(0.0, 0.2, 80))
        a = fit_calibration(scored)
        b = fit_calibration(scored)
        assert (a.weight, a.bias) == (b.weight, b.bias)

    def test_equal_prior_fit_ignores_class_imbalance(self):
        rng = np.random.default_rng(13)
        same = list(rng.normal(0.6, 0.2, 30))
        diff = list(rng.normal(0.0, 0.2, 30))
        balanced = fit_calibration(_scored(same, diff))
        skewed = fit_calibration(_scored(same, diff * 7))
        assert balanced.weight == pytest.approx(skewed.weight, abs=1e-7)
        assert balanced.bias == pytest.approx(skewed.bias, abs=1e-7)

    def test_single_class_is_degenerate(self):
        with pytest.raises(DegenerateDataError):
            fit_calibration(_scored([0.5, 0.6], []))

    def test_identical_scores_are_degenerate(self):
        with pytest.raises(DegenerateDataError):
            fit_calibration(_scored([0.5, 0.5], [0.5, 0.5]))

    def test_model_roundtrip(self, tmp_path):
        model = CalibrationModel(3.25, -0.125, 10, 20, "equal-prior", 0.01)
        save_calibration(model, tmp_path / "model.json")
        assert load_calibration(tmp_path / "model.json") == model


class TestPosteriorAndLr:

    def test_zero_model_is_indifferent(self):
        model = CalibrationModel(0.0, 0.0, 1, 1, "equal-prior", 0.0)
        assert posterior(model, 0.73) == 0.5

    def test_unit_weight_at_zero_score(self):
        model = CalibrationModel(1.0, 0.0, 1, 1, "equal-prior", 0.0)
        assert posterior(model, 0.0) == 0.5

    def test_hand_evaluated_logistic(self):
        model = CalibrationModel(2.0, -1.0, 1, 1, "equal-prior", 0.0)
        assert posterior(model, 1.0) == pytest.approx(
            1.0 / (1.0 + math.exp(-1.0)), abs=1e-12)

    def test_clip_bounds_posterior_and_lr(self):
        model = CalibrationModel(1000.0, 0.0, 1, 1, "equal-prior", 0.0)
        assert posterior(model, 1.0) == 1.0 - 1e-15
        assert posterior(model, -1.0) == 1e-15
        llr = log10_lrs(model, np.array([-1.0, 1.0]))
        # the bound is log10((1-clip)/clip) evaluated in doubles, ~15.0004
        assert np.all(np.abs(llr) <= 15.001)

    def test_to_lr_examples(self):
        half = to_lr(0.5)
        assert half.lr == 1.0 and half.log10_lr == 0.0
        assert to_lr(0.8).lr == pytest.approx(4.0, rel=1e-12)
        floor = to_lr(1e-15)
        assert floor.lr == pytest.approx(1e-15, rel=1e-9)
        assert floor.log10_lr == pytest.approx(-15.0, abs=1e-9)

    def test_to_lr_log_consistency(self):
        rng = np.random.default_rng(17)
        for p in rng.uniform(1e-12, 1.0 - 1e-12, 50):
            out = to_lr(float(p))
            assert abs(out.log10_lr - math.log10(out.lr)) <= 1e-12

    def test_to_lr_rejects_boundaries(self):
        for p in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                to_lr(p)
