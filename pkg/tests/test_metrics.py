import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter1d

from howtotag.metrics import (
    ConfusionCounts, MetricsError, binary_accuracy, confusion, evaluate, gaussian_kernel, macro_f1,
    macro_precision_recall, metrics_report, micro_f1, smooth_curve,
)
from howtotag.model import ModelConfig

from conftest import jittered_params, padded_batch
from oracles import brute_metrics, flattened_f1


def counts(tp, fp, tn, fn):
    return ConfusionCounts(*(np.array([x]) for x in (tp, fp, tn, fn)))


class TestConfusion:
    def test_perfect_and_inverted(self):
        y = np.random.default_rng(0).integers(0, 2, (20, 5))
        c = confusion(y, y)
        assert c.totals[1] == c.totals[3] == 0
        c = confusion(1 - y, y)
        assert c.totals[0] == c.totals[2] == 0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p, t = rng.integers(0, 2, (200, 67)), rng.integers(0, 2, (200, 67))
            c = confusion(p, t)
            tp, fp, tn, fn = brute_metrics(p.tolist(), t.tolist())["counts"]
            assert (c.tp.tolist(), c.fp.tolist(), c.tn.tolist(), c.fn.tolist()) == (tp, fp, tn, fn)
            np.testing.assert_array_equal(c.tp + c.fp + c.tn + c.fn, 200)

    def test_shape_mismatch(self):
        with pytest.raises(MetricsError):
            confusion(np.zeros((2, 3)), np.zeros((3, 2)))


class TestScalarMetrics:
    def test_accuracy(self):
        assert binary_accuracy(counts(3, 1, 5, 1)) == pytest.approx(0.8)
        assert binary_accuracy(counts(2, 0, 3, 0)) == 1.0
        assert binary_accuracy(counts(0, 2, 0, 3)) == 0.0
        with pytest.raises(MetricsError):
            binary_accuracy(counts(0, 0, 0, 0))

    def test_macro_precision_recall(self):
        c = confusion(np.ones((4, 2)), np.ones((4, 2)))
        assert macro_precision_recall(c) == (1.0, 1.0)
        # label 0: precision 1, label 1: precision 0.5
        c = confusion([[1, 1], [0, 1]], [[1, 1], [0, 0]])
        assert macro_precision_recall(c)[0] == pytest.approx(0.75)

    def test_zero_denominator_counts_as_zero(self):
        c = confusion([[0, 1]], [[0, 1]])
        assert macro_precision_recall(c) == (0.5, 0.5)

    def test_macro_f1(self):
        assert macro_f1(0.3, 0.3) == pytest.approx(0.3)
        assert macro_f1(1.0, 0.0) == 0.0
        assert macro_f1(0.0, 0.0) == 0.0
        assert macro_f1(0.9, 0.7) == pytest.approx(0.7875, abs=1e-15)

    def test_micro_f1(self):
        assert micro_f1(counts(5, 0, 9, 0)) == 1.0
        assert micro_f1(counts(8, 2, 0, 2)) == pytest.approx(0.8)
        assert micro_f1(counts(0, 0, 4, 0)) == 0.0

    def test_macro_differs_from_mean_label_f1(self):
        # label 0 perfect; label 1 precision 1, recall 1/4
        rep = metrics_report([[1, 1], [0, 0], [0, 0], [0, 0]], [[1, 1], [0, 1], [0, 1], [0, 1]])
        assert rep.macro_f1 == pytest.approx(10 / 13, abs=1e-15)
        assert rep.mean_label_f1 == pytest.approx(0.7, abs=1e-15)


class TestReport:
    def test_against_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n, L = rng.integers(1, 30), rng.integers(1, 10)
            p, t = rng.integers(0, 2, (n, L)), (rng.random((n, L)) < 0.2).astype(int)
            rep = metrics_report(p, t)
            ref = brute_metrics(p.tolist(), t.tolist())
            for key in ("accuracy", "macro_precision", "macro_recall", "macro_f1", "micro_f1"):
                got = rep.binary_accuracy if key == "accuracy" else getattr(rep, key)
                assert abs(got - ref[key]) < 1e-12
            assert abs(rep.micro_f1 - flattened_f1(p.tolist(), t.tolist())) < 1e-12

    def test_serialisation(self, tmp_path):
        rep = metrics_report([[1, 0]], [[1, 1]], ["A", "B"], 0.4)
        rep.save_json(tmp_path / "m.json")
        data = json.loads((tmp_path / "m.json").read_text())
        assert data["decision_threshold"] == 0.4
        assert [r["label"] for r in data["per_label"]] == ["A", "B"]
        rep.save_per_label_csv(tmp_path / "p.csv")
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "label,tp,fp,tn,fn,precision,recall,f1,support"


class TestEvaluate:
    cfg = ModelConfig(vocab_size=20, num_labels=5, max_len=8, d_model=8, n_heads=2, n_layers=1, d_ff=8)

    def test_threshold_monotone_and_range(self):
        p = jittered_params(self.cfg, 0, scale=1.0)
        ids, mask = padded_batch([8, 6, 4, 3, 8, 5], 8, 20)
        y = np.random.default_rng(0).integers(0, 2, (6, 5))
        positives = []
        for th in np.linspace(0.01, 0.99, 30):
            rep = evaluate(p, ids, mask, y, threshold=th)
            positives.append(sum(r["tp"] + r["fp"] for r in rep.per_label))
            for v in rep.headline().values():
                assert 0.0 <= v <= 1.0
        assert all(a >= b for a, b in zip(positives, positives[1:]))
        assert positives[0] > positives[-1]

    def test_default_threshold_recorded(self):
        p = jittered_params(self.cfg, 1)
        ids, mask = padded_batch([8], 8, 20)
        assert evaluate(p, ids, mask, np.zeros((1, 5))).decision_threshold == 0.5

    def test_errors(self):
        p = jittered_params(self.cfg, 1)
        ids, mask = padded_batch([8], 8, 20)
        with pytest.raises(MetricsError):
            evaluate(p, ids, mask, np.zeros((1, 5)), threshold=1.0)
        with pytest.raises(MetricsError):
            evaluate(p, ids[:0], mask[:0], np.zeros((0, 5)))


class TestSmoothing:
    @pytest.mark.parametrize("sigma", [0.4, 1.0, 2.5, 7.0])
    @pytest.mark.parametrize("n", [1, 5, 40])
    def test_matches_scipy_reflect(self, sigma, n):
        y = np.random.default_rng(n).normal(size=n)
        ref = gaussian_filter1d(y, sigma, mode="reflect", radius=math.ceil(3 * sigma))
        np.testing.assert_allclose(smooth_curve(y, sigma), ref, atol=1e-12)

    def test_kernel(self):
        k = gaussian_kernel(1.5)
        assert len(k) == 2 * 5 + 1
        assert k.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(k, k[::-1])

    def test_constant(self):
        np.testing.assert_allclose(smooth_curve([3.5] * 17, 2.0), 3.5, atol=1e-13)

    def test_tiny_sigma_is_identity(self):
        y = np.random.default_rng(0).normal(size=12)
        np.testing.assert_array_equal(smooth_curve(y, 1e-9), y)

    @settings(max_examples=200, deadline=None)
    @given(y=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), sigma=st.floats(0.05, 20.0))
    def test_mean_preserved(self, y, sigma):
        assert abs(smooth_curve(y, sigma).mean() - np.mean(y)) < 1e-9

    def test_errors(self):
        with pytest.raises(MetricsError):
            smooth_curve([], 1.0)
        with pytest.raises(MetricsError):
            smooth_curve([1.0], 0.0)
