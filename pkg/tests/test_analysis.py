"""Error inconsistency, temperature scaling, ensembling, benefit matrices."""

import numpy as np
import pytest

from sptk.analysis import (
    BenefitMatrix,
    apply_temperature,
    benefit_matrix,
    calibrated_ensemble,
    ensemble,
    error_inconsistency,
    fit_temperature,
)
from sptk.errors import IncompleteGridError, InputError, UndefinedMetricError
from sptk.predictions import PredictionSet, load_predictions, save_predictions


def make_predset(probs, labels, ids=None, logits=None):
    probs = np.asarray(probs, dtype=np.float64)
    n = len(probs)
    return PredictionSet(
        ids=ids or [f"e{i:04d}" for i in range(n)],
        probs=probs,
        labels=np.asarray(labels),
        logits=None if logits is None else np.asarray(logits, dtype=np.float64),
    )


def random_predset(rng, n, c, ids=None):
    logits = rng.normal(size=(n, c)) * 2.0
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    labels = rng.integers(0, c, size=n)
    return make_predset(probs, labels, ids=ids, logits=logits)


def oracle_inconsistency(a, b):
    """Independent per-example loop over the indicator cases."""
    count = 0
    for i in range(len(a)):
        ca = int(np.argmax(a.probs[i])) == a.labels[i]
        cb = int(np.argmax(b.probs[i])) == b.labels[i]
        if (ca and not cb) or (cb and not ca):
            count += 1
    return count / len(a)


class TestErrorInconsistency:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(0)
        a = random_predset(rng, 50, 4)
        assert error_inconsistency(a, a) == 0.0

    def test_enumerated_example(self):
        # n=4: A correct on {0,1}, B correct on {1,2} -> exactly-one on {0,2}
        labels = [0, 0, 0, 0]
        a = make_predset([[0.9, 0.1], [0.9, 0.1], [0.1, 0.9], [0.1, 0.9]], labels)
        b = make_predset([[0.1, 0.9], [0.9, 0.1], [0.9, 0.1], [0.1, 0.9]], labels)
        assert error_inconsistency(a, b) == 0.5

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(2, 200))
            c = int(rng.integers(2, 15))
            ids = [f"e{i:04d}" for i in range(n)]
            a = random_predset(rng, n, c, ids=ids)
            b = random_predset(rng, n, c, ids=ids)
            b.labels = a.labels.copy()
            val = error_inconsistency(a, b)
            assert val == pytest.approx(oracle_inconsistency(a, b), abs=1e-12)
            assert val == pytest.approx(error_inconsistency(b, a), abs=1e-12)
            assert 0.0 <= val <= 1.0

    def test_id_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        a = random_predset(rng, 10, 3, ids=[f"a{i}" for i in range(10)])
        b = random_predset(rng, 10, 3, ids=[f"b{i}" for i in range(10)])
        with pytest.raises(InputError):
            error_inconsistency(a, b)

    def test_containment_gives_accuracy_difference(self):
        # B correct everywhere A is, plus two more: value = |acc(A) - acc(B)|
        labels = np.zeros(6, dtype=int)
        right = [0.9, 0.1]
        wrong = [0.1, 0.9]
        a = make_predset([right, right, wrong, wrong, wrong, wrong], labels)
        b = make_predset([right, right, right, right, wrong, wrong], labels)
        acc_a, acc_b = 2 / 6, 4 / 6
        assert error_inconsistency(a, b) == pytest.approx(abs(acc_a - acc_b))


class TestTemperature:
    def test_calibrated_logits_fit_near_one(self):
        # labels drawn from the softmax itself: perfectly calibrated, so the
        # NLL-minimizing temperature sits at 1
        rng = np.random.default_rng(3)
        n, c = 2000, 4
        logits = rng.normal(size=(n, c)) * 1.5
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        u = rng.random((n, 1))
        labels = (np.cumsum(probs, axis=1) < u).sum(axis=1)
        tm = fit_temperature(logits, labels)
        assert abs(tm.temperature - 1.0) <= 0.1
        assert tm.nll_after <= tm.nll_before + 1e-9

    def test_scaling_logits_scales_temperature(self):
        rng = np.random.default_rng(4)
        n, c = 300, 3
        labels = rng.integers(0, c, size=n)
        logits = rng.normal(size=(n, c))
        logits[np.arange(n), labels] += 1.0
        t1 = fit_temperature(logits, labels).temperature
        t2 = fit_temperature(logits * 2.0, labels).temperature
        assert t2 == pytest.approx(2.0 * t1, rel=0.05)

    def test_fitted_never_worse_than_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n, c = int(rng.integers(10, 80)), int(rng.integers(2, 6))
            labels = rng.integers(0, c, size=n)
            if len(set(labels.tolist())) < 2:
                labels[0] = (labels[0] + 1) % c
            logits = rng.normal(size=(n, c)) * rng.uniform(0.2, 5.0)
            tm = fit_temperature(logits, labels)
            assert tm.nll_after <= tm.nll_before + 1e-9

    def test_single_class_labels_undefined(self):
        with pytest.raises(UndefinedMetricError):
            fit_temperature(np.zeros((5, 3)), np.zeros(5, dtype=int))

    def test_calibration_never_changes_argmax(self):
        rng = np.random.default_rng(6)
        pred = random_predset(rng, 120, 5)
        for t in (0.2, 0.9, 3.7):
            scaled = apply_temperature(pred, t)
            np.testing.assert_array_equal(scaled.argmax(), pred.argmax())


class TestEnsemble:
    def test_self_ensemble_preserves_argmax(self):
        rng = np.random.default_rng(7)
        a = random_predset(rng, 100, 4)
        mix = ensemble(a, a, 1.0, 1.0)
        np.testing.assert_array_equal(mix.argmax(), a.argmax())

    def test_confident_model_dominates_uniform(self):
        labels = [0, 1, 2]
        ids = ["a", "b", "c"]
        confident = make_predset(
            [[0.97, 0.02, 0.01], [0.01, 0.97, 0.02], [0.02, 0.01, 0.97]],
            labels, ids=ids,
        )
        uniform = make_predset(np.full((3, 3), 1 / 3), labels, ids=ids)
        mix = ensemble(confident, uniform)
        np.testing.assert_array_equal(mix.argmax(), confident.argmax())

    def test_probabilities_stay_normalized(self):
        rng = np.random.default_rng(8)
        ids = [f"e{i}" for i in range(50)]
        a = random_predset(rng, 50, 6, ids=ids)
        b = random_predset(rng, 50, 6, ids=ids)
        b.labels = a.labels.copy()
        mix = ensemble(a, b, 0.5, 2.0)
        np.testing.assert_allclose(mix.probs.sum(axis=1), 1.0, atol=1e-9)

    def test_regression_variant_averages(self):
        a = PredictionSet(ids=["x", "y"], probs=np.array([1.0, 3.0]),
                          labels=np.array([1.0, 2.0]), kind="regression")
        b = PredictionSet(ids=["x", "y"], probs=np.array([2.0, 5.0]),
                          labels=np.array([1.0, 2.0]), kind="regression")
        mix = ensemble(a, b)
        np.testing.assert_allclose(mix.probs, [1.5, 4.0])

    def test_calibrated_ensemble_pipeline(self):
        rng = np.random.default_rng(9)
        ids = [f"e{i}" for i in range(80)]
        val_ids = [f"v{i}" for i in range(80)]
        a = random_predset(rng, 80, 3, ids=ids)
        b = random_predset(rng, 80, 3, ids=ids)
        b.labels = a.labels.copy()
        va = random_predset(rng, 80, 3, ids=val_ids)
        vb = random_predset(rng, 80, 3, ids=val_ids)
        vb.labels = va.labels.copy()
        mix, ta, tb = calibrated_ensemble(a, b, va, vb)
        assert ta.temperature > 0 and tb.temperature > 0
        assert len(mix) == 80


class TestBenefitMatrix:
    def test_single_cell_identity(self):
        m = benefit_matrix({("d0", "d0"): 80.0}, {"d0": 60.0}, {"d0": 80.0},
                           ["d0"], ["d0"])
        assert m.values.shape == (1, 1)
        assert m.values[0, 0] == pytest.approx(1.0)

    def test_two_by_two_composes_scalar_op(self):
        from sptk.finetune import benefit_percent
        grid = {("a", "a"): 90.0, ("a", "b"): 70.0,
                ("b", "a"): 85.0, ("b", "b"): 75.0}
        rand = {"a": 60.0, "b": 50.0}
        ref = {"a": 88.0, "b": 80.0}
        m = benefit_matrix(grid, rand, ref, ["a", "b"], ["a", "b"])
        assert m.values.shape == (2, 2)
        for i, s in enumerate(["a", "b"]):
            for j, t in enumerate(["a", "b"]):
                expected = benefit_percent(rand[t], grid[(s, t)], ref[t]) / 100.0
                assert m.values[i, j] == pytest.approx(expected)

    def test_missing_cell_lists_pairs(self):
        with pytest.raises(IncompleteGridError) as exc:
            benefit_matrix({("a", "a"): 1.0}, {"a": 0.0, "b": 0.0},
                           {"a": 1.0, "b": 1.0}, ["a", "b"], ["a", "b"])
        assert ("a", "b") in exc.value.missing_pairs
        assert ("b", "a") in exc.value.missing_pairs

    def test_csv_and_json_emission(self, tmp_path):
        m = BenefitMatrix(sources=["s0", "s1"], targets=["t0", "t1"],
                          values=np.array([[1.0, 0.5], [0.25, 2.0]]))
        m.to_csv(tmp_path / "m.csv")
        m.to_json(tmp_path / "m.json")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0].split(",")[1:] == ["t0", "t1"]
        assert lines[1].startswith("s0,")
        import json
        payload = json.loads((tmp_path / "m.json").read_text())
        assert payload["values"][1][1] == 2.0


class TestPredictionFiles:
    def test_round_trip_multiclass(self, tmp_path):
        rng = np.random.default_rng(10)
        pred = random_predset(rng, 20, 4)
        p = tmp_path / "preds.jsonl"
        save_predictions(pred, p)
        back = load_predictions(p)
        assert back.ids == pred.ids
        np.testing.assert_allclose(back.probs, pred.probs, atol=1e-12)
        np.testing.assert_array_equal(back.labels, pred.labels)
        np.testing.assert_allclose(back.logits, pred.logits, atol=1e-12)

    def test_round_trip_regression(self, tmp_path):
        pred = PredictionSet(ids=["a", "b"], probs=np.array([0.25, 0.5]),
                             labels=np.array([0.3, 0.4]), kind="regression")
        p = tmp_path / "reg.jsonl"
        save_predictions(pred, p)
        back = load_predictions(p, kind="regression")
        np.testing.assert_allclose(back.probs, pred.probs)

    def test_invalid_probability_rows_rejected(self):
        with pytest.raises(InputError):
            PredictionSet(ids=["a"], probs=np.array([[0.9, 0.9]]),
                          labels=np.array([0]))
