import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from howtotag.model import ModelConfig, Parameters, init_params
from howtotag.train import (
    EncodedData, NonFiniteError, OptimizerState, TrainConfig, TrainingError, adamw_step, bce_loss, epoch_batches,
    fit, flag_best, grid_search, default_grid, pretrain, train_epoch,
)

from conftest import padded_batch
from experiments import overfit_run


def scalar_params(value):
    cfg = ModelConfig(vocab_size=6, num_labels=1, max_len=3, d_model=2, n_heads=1, n_layers=1, d_ff=2)
    return Parameters(cfg, {"w": np.array([value])})


def loop_bce(probs, targets):
    total, n = 0.0, 0
    for prow, trow in zip(probs, targets):
        for p, y in zip(prow, trow):
            p = min(max(p, 1e-7), 1 - 1e-7)
            total -= y * math.log(p) + (1 - y) * math.log(1 - p)
            n += 1
    return total / n


class TestBCE:
    def test_half(self):
        loss, _ = bce_loss(np.full((4, 3), 0.5), np.random.default_rng(0).integers(0, 2, (4, 3)))
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_perfect(self):
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = bce_loss(y, y)
        assert 0 <= loss < 1e-6

    def test_loop_oracle_and_gradient(self):
        rng = np.random.default_rng(1)
        p, y = rng.random((6, 5)), rng.integers(0, 2, (6, 5)).astype(float)
        p[0, 0], p[1, 1] = 0.0, 1.0
        loss, grad = bce_loss(p, y)
        assert abs(loss - loop_bce(p, y)) < 1e-12
        interior = (p > 1e-3) & (p < 1 - 1e-3)
        eps = 1e-7
        for i, j in zip(*np.nonzero(interior)):
            q = p.copy()
            q[i, j] += eps
            up = bce_loss(q, y)[0]
            q[i, j] -= 2 * eps
            assert grad[i, j] == pytest.approx((up - bce_loss(q, y)[0]) / (2 * eps), rel=1e-5)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=20))
    def test_nonnegative(self, pairs):
        p = np.array([[a for a, _ in pairs]])
        y = np.array([[b for _, b in pairs]], dtype=float)
        assert bce_loss(p, y)[0] >= 0

    def test_shape_mismatch(self):
        with pytest.raises(TrainingError):
            bce_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestAdamW:
    def test_hand_calculation(self):
        # g = 1: m = 0.1, v = 0.001, both bias corrections give 1
        p, s = adamw_step(scalar_params(2.0), {"w": np.array([1.0])}, OptimizerState.zeros(scalar_params(2.0)),
                          TrainConfig(learning_rate=0.1, weight_decay=0.01))
        expected = 2.0 - 0.1 * 0.01 * 2.0 - 0.1 * 1.0 / (1.0 + 1e-8)
        assert p["w"][0] == pytest.approx(expected, abs=1e-15)
        assert s.step == 1
        assert s.m["w"][0] == pytest.approx(0.1) and s.v["w"][0] == pytest.approx(0.001)

    def test_second_step(self):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
        p0 = scalar_params(0.0)
        p1, s1 = adamw_step(p0, {"w": np.array([1.0])}, OptimizerState.zeros(p0), cfg)
        p2, _ = adamw_step(p1, {"w": np.array([-2.0])}, s1, cfg)
        m = 0.9 * 0.1 + 0.1 * -2.0
        v = 0.999 * 0.001 + 0.001 * 4.0
        m_hat, v_hat = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
        assert p2["w"][0] == pytest.approx(p1["w"][0] - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8), abs=1e-14)

    def test_zero_gradient_fixed_point(self):
        p = scalar_params(1.5)
        q, _ = adamw_step(p, {"w": np.zeros(1)}, OptimizerState.zeros(p), TrainConfig(weight_decay=0.0))
        assert q["w"][0] == 1.5

    def test_decay_isolated(self):
        p = scalar_params(1.5)
        q, _ = adamw_step(p, {"w": np.zeros(1)}, OptimizerState.zeros(p), TrainConfig(learning_rate=0.1,
                                                                                      weight_decay=0.2))
        assert q["w"][0] == pytest.approx(1.5 * (1 - 0.1 * 0.2), abs=1e-15)

    def test_deterministic_and_pure(self, tiny_cfg):
        p = init_params(tiny_cfg, 0)
        g = {k: np.random.default_rng(1).normal(size=v.shape) for k, v in p.items()}
        a, sa = adamw_step(p, g, OptimizerState.zeros(p), TrainConfig())
        b, sb = adamw_step(p, g, OptimizerState.zeros(p), TrainConfig())
        for k in p:
            np.testing.assert_array_equal(a[k], b[k])
        np.testing.assert_array_equal(p["tok_emb"], init_params(tiny_cfg, 0)["tok_emb"])

    def test_non_finite_names_parameter(self):
        p = scalar_params(1.0)
        with pytest.raises(NonFiniteError, match="'w'|w"):
            adamw_step(p, {"w": np.array([np.inf])}, OptimizerState.zeros(p), TrainConfig())

    def test_state_round_trip(self, tiny_cfg):
        p = init_params(tiny_cfg, 0)
        g = {k: np.ones_like(v) for k, v in p.items()}
        _, s = adamw_step(p, g, OptimizerState.zeros(p), TrainConfig())
        back = OptimizerState.from_arrays(s.to_arrays(), p)
        assert back.step == 1
        np.testing.assert_array_equal(back.m["head.bias"], s.m["head.bias"])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(learning_rate=-1e-3), dict(beta1=1.0), dict(weight_decay=-0.1),
                                        dict(batch_size=0), dict(epochs=0), dict(objective="rl")])
    def test_invalid(self, kwargs):
        with pytest.raises(TrainingError):
            TrainConfig(**kwargs)


def tiny_data(tiny_cfg, n=10, seed=0):
    rng = np.random.default_rng(seed)
    ids, mask = padded_batch(list(rng.integers(3, tiny_cfg.max_len + 1, n)), tiny_cfg.max_len, tiny_cfg.vocab_size,
                             seed)
    return EncodedData(ids, mask, rng.integers(0, 2, (n, tiny_cfg.num_labels)).astype(float))


class TestTrainEpoch:
    def test_batches_cover_once(self):
        parts = epoch_batches(23, 5, seed=0, epoch=3)
        assert [len(b) for b in parts] == [5, 5, 5, 5, 3]
        assert sorted(np.concatenate(parts).tolist()) == list(range(23))
        assert not np.array_equal(np.concatenate(parts), np.concatenate(epoch_batches(23, 5, 0, 4)))

    def test_deterministic(self, tiny_cfg):
        data = tiny_data(tiny_cfg)
        cfg = TrainConfig(learning_rate=1e-2, batch_size=4, epochs=2, max_len=8)
        a = fit(data, data, tiny_cfg, cfg)
        b = fit(data, data, tiny_cfg, cfg)
        assert a.trace.rows() == b.trace.rows()
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_lr_zero_freezes(self, tiny_cfg):
        data = tiny_data(tiny_cfg)
        p = init_params(tiny_cfg, 0)
        cfg = TrainConfig(learning_rate=0.0, weight_decay=0.0, batch_size=3, max_len=8)
        s = OptimizerState.zeros(p)
        losses = []
        q = p
        for epoch in range(3):
            q, s, stats = train_epoch(q, s, data, cfg, epoch)
            losses.append(stats.train_loss)
        for k in p:
            np.testing.assert_array_equal(q[k], p[k])
        assert losses[0] == pytest.approx(losses[1], abs=1e-12) == pytest.approx(losses[2], abs=1e-12)

    def test_fit_one_epoch(self, tiny_cfg):
        result = fit(tiny_data(tiny_cfg), None, tiny_cfg, TrainConfig(epochs=1, batch_size=4, max_len=8))
        assert len(result.trace) == 1 and result.best_epoch == 1
        assert math.isnan(result.trace.epochs[0].test_accuracy)

    def test_label_width_checked(self, tiny_cfg):
        data = tiny_data(tiny_cfg)
        data.targets = data.targets[:, :2]
        with pytest.raises(TrainingError, match="num_labels"):
            fit(data, None, tiny_cfg, TrainConfig(epochs=1, max_len=8))

    @pytest.mark.slow
    def test_overfit_loss_mostly_decreasing(self):
        _, _, result, _ = overfit_run()
        losses = result.trace.column("train_loss")
        decreasing = sum(b < a for a, b in zip(losses, losses[1:])) / (len(losses) - 1)
        assert decreasing >= 0.8
        assert result.trace.epochs[-1].train_accuracy >= 0.99


class TestPretrain:
    @pytest.mark.parametrize("objective", ["mlm_pretrain", "plm_pretrain"])
    def test_loss_goes_down_and_steps_count(self, tiny_cfg, objective):
        data = tiny_data(tiny_cfg, n=12)
        cfg = TrainConfig(learning_rate=5e-3, batch_size=4, epochs=6, max_len=8, objective=objective, mask_rate=0.3)
        p, s, trace = pretrain(init_params(tiny_cfg, 0), data, cfg)
        assert [t.step for t in trace] == [3, 6, 9, 12, 15, 18]
        assert trace[-1].loss < trace[0].loss
        _, s2, more = pretrain(p, data, cfg.replace(epochs=1), s, start_epoch=6)
        assert more[0].step == 21 and more[0].epoch == 7

    def test_identity_order_reports_ar(self, tiny_cfg):
        data = tiny_data(tiny_cfg, n=6)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=3, epochs=2, max_len=8, objective="plm_pretrain",
                          identity_order=True)
        _, _, trace = pretrain(init_params(tiny_cfg, 0), data, cfg)
        for t in trace:
            assert abs(t.loss - t.ar_nll) < 1e-10

    def test_finetune_is_not_pretraining(self, tiny_cfg):
        with pytest.raises(TrainingError):
            pretrain(init_params(tiny_cfg, 0), tiny_data(tiny_cfg), TrainConfig(max_len=8))


class TestGrid:
    def test_default_grid_shape(self):
        grid = default_grid(TrainConfig())
        assert [(c.learning_rate, c.max_len) for c in grid] == [
            (lr, m) for lr in (1e-4, 2e-4, 3e-4, 4e-4, 5e-4) for m in (484, 512)]

    def test_flag_best_scan(self):
        rows = [{"learning_rate": lr, "accuracy": a} for lr, a in
                [(3e-4, 0.9), (1e-4, 0.8), (2e-4, 0.9), (5e-4, 0.7)]]
        flagged = flag_best(rows)
        assert [r["best"] for r in flagged] == [False, False, True, False]

    def test_flag_best_skips_errors(self):
        rows = [{"learning_rate": 1e-4, "accuracy": None, "error": "boom"}, {"learning_rate": 2e-4, "accuracy": 0.1}]
        assert [r["best"] for r in flag_best(rows)] == [False, True]

    def test_single_cell_equals_direct_fit(self, tiny_cfg):
        data = tiny_data(tiny_cfg)
        cfg = TrainConfig(learning_rate=1e-2, batch_size=4, epochs=2, max_len=8)

        def score(params, d):
            from howtotag.metrics import evaluate
            rep = evaluate(params, d.input_ids, d.attention_mask, d.targets)
            return {"accuracy": rep.binary_accuracy, "macro_f1": rep.macro_f1, "micro_f1": rep.micro_f1}

        rows = grid_search([cfg], tiny_cfg, lambda m: (data, data), score)
        direct = score(fit(data, data, tiny_cfg, cfg).params, data)
        assert len(rows) == 1 and rows[0]["best"]
        assert rows[0]["accuracy"] == direct["accuracy"] and rows[0]["micro_f1"] == direct["micro_f1"]

    def test_failing_cell_recorded(self, tiny_cfg):
        data = tiny_data(tiny_cfg)

        def encode(max_len):
            if max_len == 9:
                raise ValueError("bad cell")
            return data, data

        grid = [TrainConfig(epochs=1, max_len=8), TrainConfig(epochs=1, max_len=9)]
        rows = grid_search(grid, tiny_cfg, encode, lambda p, d: {"accuracy": 0.5, "macro_f1": 0, "micro_f1": 0})
        assert rows[1]["error"] == "ValueError: bad cell" and rows[0]["best"]
