"""AUROC against the all-pairs definition, report round-trips, and
whole-dataset evaluation."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cannet.cross_attention import build_single_model
from cannet.errors import ConfigError, ShapeError
from cannet.metrics import EvalReport, auroc, evaluate, summarize
from cannet.synth_data import generate

from oracles import auroc_allpairs_oracle, auroc_loop_oracle


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_perfect_inversion(self):
        assert auroc([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1]) == 0.0

    def test_constant_scores_give_half(self):
        assert auroc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_single_tied_pair_gets_half_credit(self):
        # pairs: (0.7 vs 0.3) won, (0.7 vs 0.7) tied -> (1 + 0.5) / 2
        assert auroc([0.3, 0.7, 0.7], [0, 0, 1]) == 0.75

    @pytest.mark.parametrize("label", [0, 1])
    def test_absent_class_is_undefined(self, label):
        assert auroc([0.2, 0.8], [label, label]) is None

    @pytest.mark.parametrize("n,seed", [(5, 0), (20, 1), (100, 2), (333, 3)])
    def test_matches_all_pairs_oracle(self, n, seed):
        rng = np.random.default_rng(seed)
        scores = rng.standard_normal(n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        expect = auroc_allpairs_oracle(scores, labels)
        assert_allclose(auroc(scores, labels), expect, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_oracle_under_heavy_ties(self, seed):
        rng = np.random.default_rng(100 + seed)
        scores = rng.integers(0, 4, size=60).astype(np.float64)
        labels = rng.integers(0, 2, size=60)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        expect = auroc_allpairs_oracle(scores, labels)
        assert_allclose(auroc(scores, labels), expect, rtol=1e-12)
        assert_allclose(auroc_loop_oracle(scores, labels), expect, rtol=1e-12)

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(7)
        scores = rng.uniform(-2, 2, size=50)
        labels = rng.integers(0, 2, size=50)
        labels[0] = 1
        labels[1] = 0
        base = auroc(scores, labels)
        assert auroc(3.0 * scores + 11.0, labels) == base
        assert auroc(np.exp(scores), labels) == base

    def test_rejects_bad_shapes_and_labels(self):
        with pytest.raises(ShapeError):
            auroc([[0.1, 0.2]], [[0, 1]])
        with pytest.raises(ShapeError):
            auroc([0.1, 0.2], [0, 1, 1])
        with pytest.raises(ConfigError):
            auroc([0.1, 0.2], [0, 2])


class TestSummarize:
    def test_per_label_columns_are_independent(self):
        rng = np.random.default_rng(8)
        scores = rng.uniform(size=(40, 3))
        labels = rng.integers(0, 2, size=(40, 3))
        labels[:, 0] = (np.arange(40) % 2 == 0).astype(int)
        rep = summarize(["a", "b", "c"], scores, labels)
        for i in range(3):
            assert rep.per_label_auroc[i] == auroc(scores[:, i], labels[:, i])
        assert rep.pos_counts == labels.sum(axis=0).tolist()
        assert rep.neg_counts == (40 - labels.sum(axis=0)).tolist()

    def test_mean_skips_undefined_labels(self):
        scores = np.array([[0.1, 0.4], [0.9, 0.6]])
        labels = np.array([[0, 0], [1, 0]])  # second label has no positives
        rep = summarize(["a", "b"], scores, labels)
        assert rep.per_label_auroc == [1.0, None]
        assert rep.undefined_labels == [1]
        assert rep.mean_auroc == 1.0

    def test_all_undefined_gives_nan_mean(self):
        rep = summarize(["a"], np.array([[0.2], [0.3]]), np.array([[0], [0]]))
        assert np.isnan(rep.mean_auroc)

    def test_rejects_mismatched_names(self):
        with pytest.raises(ShapeError):
            summarize(["a"], np.zeros((2, 2)), np.zeros((2, 2), dtype=int))

    def test_rejects_mismatched_matrices(self):
        with pytest.raises(ShapeError):
            summarize(["a", "b"], np.zeros((2, 2)), np.zeros((3, 2), dtype=int))


class TestEvalReport:
    def _report(self):
        scores = np.array([[0.1, 0.4], [0.9, 0.6], [0.2, 0.5]])
        labels = np.array([[0, 0], [1, 0], [0, 0]])
        return summarize(["common", "rare"], scores, labels)

    def test_json_round_trip(self):
        rep = self._report()
        blob = json.dumps(rep.to_json_dict())
        back = EvalReport.from_json_dict(json.loads(blob))
        assert back.label_names == rep.label_names
        assert back.per_label_auroc == rep.per_label_auroc
        assert back.mean_auroc == rep.mean_auroc
        assert back.pos_counts == rep.pos_counts
        assert back.neg_counts == rep.neg_counts

    def test_json_round_trip_with_nan_mean(self):
        rep = summarize(["a"], np.array([[0.2], [0.3]]), np.array([[0], [0]]))
        d = rep.to_json_dict()
        assert d["mean"] is None
        back = EvalReport.from_json_dict(json.loads(json.dumps(d)))
        assert np.isnan(back.mean_auroc)

    def test_table_marks_undefined_labels(self):
        table = self._report().to_table()
        lines = table.splitlines()
        assert lines[0].split() == ["Label", "AUROC", "Pos", "Neg"]
        assert "n/a" in lines[2]
        assert "common" in lines[1] and "1.0000" in lines[1]
        assert lines[-1].startswith("Average")


class TestEvaluate:
    def test_scores_whole_dataset_in_eval_mode(self):
        ds = generate(seed=3, n_samples=12, hw=32, prevalences=(0.5, 0.3))
        rng = np.random.default_rng(0)
        model = build_single_model([2, 3], 2, rng, np.random.default_rng(1))
        rep = evaluate(model, ds, crop=32, batch_size=5)
        assert rep.label_names == ["label_0", "label_1"]
        assert rep.pos_counts == ds.pos_counts.tolist()
        again = evaluate(model, ds, crop=32, batch_size=7)
        assert again.per_label_auroc == rep.per_label_auroc

    def test_default_crop_comes_from_dataset(self):
        ds = generate(seed=3, n_samples=6, hw=32, prevalences=(0.5,))
        rng = np.random.default_rng(0)
        model = build_single_model([2, 3], 1, rng, np.random.default_rng(1))
        rep = evaluate(model, ds, batch_size=4)
        explicit = evaluate(model, ds, crop=ds.default_crop, batch_size=4)
        assert rep.per_label_auroc == explicit.per_label_auroc

    def test_rejects_empty_dataset(self):
        ds = generate(seed=3, n_samples=4, hw=32, prevalences=(0.5,))
        ds.samples = []
        rng = np.random.default_rng(0)
        model = build_single_model([2, 3], 1, rng, np.random.default_rng(1))
        with pytest.raises(ConfigError):
            evaluate(model, ds)
