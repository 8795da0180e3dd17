"""Training loop: pool sampling, loss, schedule, determinism, and inference."""

import math

import numpy as np
import pytest

from retagg.aggregation import AggregationConfig, aggregate
from retagg.backbone import BackboneParams, forward, init_params
from retagg.dataset import Channel, WindowConfig
from retagg.training import (
    AdamState,
    LossRecord,
    TrainConfig,
    WindowPool,
    bce_loss,
    build_series_cache,
    fit,
    learning_rate,
    predict_series,
    sample_batch,
    train_epoch,
)


def small_config(**overrides):
    defaults = dict(
        epochs=1,
        batch_size=64,
        warmup_steps=5,
        max_lr=1e-2,
        final_lr=1e-6,
        start_lr=0.0,
        t_max=50,
        weight_decay=1e-6,
        patience=5,
        seed=0,
        aggregation=AggregationConfig(temperature=1.0, m=2, metric="pearson"),
        window=WindowConfig(window_length=8, stride=4),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def toy_channels(n_per_class=3, length=40, seed=0):
    """Linearly separable: label-1 runs high, label-0 runs low."""
    rng = np.random.default_rng(seed)
    channels = []
    for i in range(n_per_class):
        channels.append(
            Channel(id=f"lo{i}", values=-1.0 + 0.1 * rng.normal(size=length), label=0)
        )
        channels.append(
            Channel(id=f"hi{i}", values=1.0 + 0.1 * rng.normal(size=length), label=1)
        )
    return channels


class TestWindowPool:
    def test_small_pool_exhausted_by_large_batch(self):
        pool = WindowPool({"a": 3, "b": 2})
        rng = np.random.default_rng(0)
        taken = sample_batch(pool, 8192, rng)
        assert len(taken) == 5
        assert len(pool) == 0

    def test_every_window_seen_exactly_once(self):
        pool = WindowPool({"a": 57, "b": 13, "c": 30})
        rng = np.random.default_rng(1)
        seen = []
        while len(pool):
            seen.extend(sample_batch(pool, 7, rng))
        assert len(seen) == 100
        assert set(seen) == {("a", k) for k in range(57)} | {("b", k) for k in range(13)} | {("c", k) for k in range(30)}

    def test_empty_pool_is_an_error(self):
        pool = WindowPool({"a": 1})
        rng = np.random.default_rng(2)
        sample_batch(pool, 1, rng)
        with pytest.raises(ValueError, match="empty"):
            sample_batch(pool, 1, rng)

    def test_remaining_tracks_draws(self):
        pool = WindowPool({"a": 4})
        rng = np.random.default_rng(3)
        taken = sample_batch(pool, 2, rng)
        assert pool.remaining == {("a", k) for k in range(4)} - set(taken)

    def test_length_proportional_frequency(self):
        """Uniform pool draws hit a series proportionally to its window count."""
        rng = np.random.default_rng(4)
        trials = 20_000
        hits = 0
        for _ in range(trials):
            pool = WindowPool({"s1": 100, "s2": 300})
            (cid, _), = sample_batch(pool, 1, rng)
            hits += cid == "s2"
        p = 0.75
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(hits / trials - p) < 3 * sigma


class TestBceLoss:
    def test_uniform_posterior(self):
        pred = aggregate(np.array([[0.5, 0.5]]), [0.0], AggregationConfig())
        assert bce_loss(pred, 1) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_confident_correct_is_tiny(self):
        pred = aggregate(np.array([[1e-12, 1.0 - 1e-12]]), [0.0], AggregationConfig())
        assert bce_loss(pred, 1) == pytest.approx(1e-12, rel=1e-3)

    def test_gradient_value(self):
        from retagg.training import _bce_grad

        assert _bce_grad(0.5, 1) == pytest.approx(-2.0, abs=1e-12)

    def test_clamp_keeps_loss_finite(self):
        pred = aggregate(np.array([[1.0, 0.0]]), [0.0], AggregationConfig())
        assert math.isfinite(bce_loss(pred, 1))


class TestLearningRate:
    def test_schedule_endpoints(self):
        config = small_config(warmup_steps=100, t_max=700, start_lr=0.0, max_lr=3e-4, final_lr=1e-6)
        assert learning_rate(0, config) == 0.0
        assert abs(learning_rate(100, config) - 3e-4) < 1e-12
        assert abs(learning_rate(800, config) - 1e-6) < 1e-9

    def test_closed_form_cosine_midpoint(self):
        config = small_config(warmup_steps=10, t_max=100, max_lr=2e-3, final_lr=1e-5)
        expected = 1e-5 + 0.5 * (2e-3 - 1e-5) * (1 + math.cos(math.pi * 50 / 100))
        assert learning_rate(60, config) == pytest.approx(expected, abs=1e-15)

    def test_holds_final_after_horizon(self):
        config = small_config(warmup_steps=10, t_max=100, final_lr=1e-5)
        assert learning_rate(110, config) == 1e-5
        assert learning_rate(10_000, config) == 1e-5

    def test_warmup_is_linear(self):
        config = small_config(warmup_steps=4, start_lr=1e-4, max_lr=9e-4)
        quarter = learning_rate(1, config)
        assert quarter == pytest.approx(1e-4 + (9e-4 - 1e-4) / 4, abs=1e-15)


class TestTrainEpoch:
    def test_single_batch_single_series(self):
        channels = [Channel(id="only", values=np.arange(16.0), label=1)]
        config = small_config(batch_size=8192)
        model = init_params(8, hidden_width=2, seed=0, patch_size=2)
        _, records = train_epoch(model, channels, config, np.random.default_rng(0))
        assert len(records) == 1
        assert records[0].series_in_batch == 1

    def test_zero_init_first_batch_loss_is_log_two(self):
        channels = toy_channels()
        config = small_config(batch_size=8192)
        base = init_params(8, hidden_width=2, seed=0, patch_size=2)
        model = BackboneParams(config=base.config, arrays={k: np.zeros_like(v) for k, v in base.arrays.items()})
        _, records = train_epoch(model, channels, config, np.random.default_rng(0))
        assert records[0].loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_batch_count_and_loss_records(self):
        channels = toy_channels()
        cache = build_series_cache(channels, WindowConfig(8, 4), AggregationConfig(m=2))
        total = sum(c.windows.shape[0] for c in cache.values())
        config = small_config(batch_size=10)
        model = init_params(8, hidden_width=2, seed=1, patch_size=2)
        _, records = train_epoch(model, channels, config, np.random.default_rng(1))
        assert len(records) == math.ceil(total / 10)
        for r in records:
            assert isinstance(r, LossRecord)
            assert math.isfinite(r.loss) and r.loss >= 0.0

    def test_epoch_determinism_bitwise(self):
        channels = toy_channels()
        config = small_config(batch_size=7)
        runs = []
        for _ in range(2):
            model = init_params(8, hidden_width=3, seed=2, patch_size=2)
            params, records = train_epoch(model, channels, config, np.random.default_rng(42))
            runs.append((params, records))
        for name in runs[0][0].arrays:
            np.testing.assert_array_equal(runs[0][0].arrays[name], runs[1][0].arrays[name])
        assert [r.loss for r in runs[0][1]] == [r.loss for r in runs[1][1]]

    def test_batch_loss_is_mean_over_present_series(self):
        """Recompute the single-batch loss by hand from forward passes and weights."""
        channels = toy_channels(n_per_class=2)
        window = WindowConfig(8, 4)
        agg = AggregationConfig(temperature=1.0, m=2, metric="pearson")
        config = small_config(batch_size=8192, aggregation=agg, window=window, max_lr=0.0, final_lr=0.0, start_lr=0.0)
        cache = build_series_cache(channels, window, agg)
        model = init_params(8, hidden_width=3, seed=3, patch_size=2)
        _, records = train_epoch(model, channels, config, np.random.default_rng(5))

        from retagg.aggregation import softmax_weights

        losses = []
        for entry in cache.values():
            probs = np.array([forward(model, w).probs for w in entry.windows])
            alphas = softmax_weights(entry.supports, 1.0).alphas
            p1 = min(max(float(alphas @ probs[:, 1]), 1e-12), 1 - 1e-12)
            losses.append(-(entry.label * math.log(p1) + (1 - entry.label) * math.log(1 - p1)))
        assert records[0].loss == pytest.approx(np.mean(losses), abs=1e-12)

    def test_loss_decreases_on_separable_toy(self):
        channels = toy_channels(n_per_class=3)
        config = small_config(batch_size=12, epochs=1, max_lr=0.05, warmup_steps=10, t_max=2000)
        model = init_params(8, hidden_width=4, seed=4, patch_size=2)
        opt = AdamState.zeros(model)
        cache = build_series_cache(channels, config.window, config.aggregation)
        first = last = None
        for epoch in range(200):
            model, records = train_epoch(
                model, channels, config, np.random.default_rng([7, epoch]), epoch=epoch, opt_state=opt, cache=cache
            )
            if first is None:
                first = records[0].loss
            last = np.mean([r.loss for r in records])
            if last < 0.1:
                break
        assert last < 0.1, f"loss stuck at {last:.3f} (started {first:.3f})"


class TestFit:
    def test_early_stop_returns_first_epoch_params(self):
        channels = toy_channels()
        # zero learning rate: nothing improves after epoch 0
        config = small_config(epochs=10, patience=1, max_lr=0.0, final_lr=0.0, start_lr=0.0)
        model = init_params(8, hidden_width=2, seed=5, patch_size=2)
        best, history = fit(model, channels, channels, config)
        assert len(history) == 2
        for name in model.arrays:
            np.testing.assert_array_equal(best.arrays[name], model.arrays[name])

    def test_history_schema(self):
        channels = toy_channels()
        config = small_config(epochs=2, patience=5)
        model = init_params(8, hidden_width=2, seed=6, patch_size=2)
        _, history = fit(model, channels, channels, config)
        assert len(history) == 2
        for record in history:
            assert set(record) == {"epoch", "train_loss_mean", "val_f1", "val_auc", "val_acc", "lr_last"}

    def test_single_class_val_auc_is_none(self):
        channels = toy_channels()
        val = [ch for ch in channels if ch.label == 1]
        config = small_config(epochs=1)
        model = init_params(8, hidden_width=2, seed=7, patch_size=2)
        _, history = fit(model, channels, val, config)
        assert history[0]["val_auc"] is None

    def test_empty_sets_rejected(self):
        config = small_config()
        model = init_params(8, hidden_width=2, seed=8, patch_size=2)
        with pytest.raises(ValueError, match="non-empty"):
            fit(model, [], toy_channels(), config)


class TestPredictSeries:
    def test_single_window_channel_passthrough(self):
        channel = Channel(id="one", values=np.arange(8.0), label=0)
        window = WindowConfig(8, 4)
        agg = AggregationConfig(m=2)
        params = init_params(8, hidden_width=2, seed=9, patch_size=2)
        pred = predict_series(params, channel, window, agg)
        direct = forward(params, channel.values)
        np.testing.assert_array_equal(pred.probs, direct.probs)

    def test_simplex_valid(self):
        rng = np.random.default_rng(10)
        channel = Channel(id="c", values=rng.normal(size=100), label=1)
        params = init_params(16, hidden_width=3, seed=10, patch_size=4)
        pred = predict_series(params, channel, WindowConfig(16, 8), AggregationConfig(m=3))
        assert np.all(pred.probs >= 0.0)
        assert abs(pred.probs.sum() - 1.0) < 1e-9

    def test_matches_manual_chain(self):
        """Independent reimplementation: pairwise sims -> top-m means -> softmax -> mixture."""
        rng = np.random.default_rng(11)
        channel = Channel(id="c", values=rng.normal(size=120), label=1)
        window = WindowConfig(16, 8)
        m, tau = 3, 0.7
        agg = AggregationConfig(temperature=tau, m=m, metric="pearson")
        params = init_params(16, hidden_width=4, seed=11, patch_size=4)
        pred = predict_series(params, channel, window, agg)

        slices = [channel.values[s : s + 16] for s in range(0, 120 - 16 + 1, 8)]

        def pearson(a, b):
            a = a - a.mean()
            b = b - b.mean()
            na, nb = np.sqrt((a * a).sum()), np.sqrt((b * b).sum())
            return float((a * b).sum() / (na * nb)) if na > 0 and nb > 0 else 0.0

        supports = []
        for k, wk in enumerate(slices):
            sims = sorted(
                (pearson(wk, wj) for j, wj in enumerate(slices) if j != k), reverse=True
            )[:m]
            supports.append(sum(sims) / len(sims))
        supports = np.asarray(supports)
        exp = np.exp(supports / tau - (supports / tau).max())
        alphas = exp / exp.sum()
        posteriors = np.array([forward(params, s).probs for s in slices])
        expected = alphas @ posteriors
        np.testing.assert_allclose(pred.probs, expected, atol=1e-12)

    def test_enumeration_order_invariance(self):
        """Permuting (posterior, support) pairs leaves the mixture unchanged."""
        rng = np.random.default_rng(12)
        channel = Channel(id="c", values=rng.normal(size=90), label=0)
        window = WindowConfig(16, 8)
        agg = AggregationConfig(temperature=1.3, m=2, metric="cosine")
        params = init_params(16, hidden_width=3, seed=12, patch_size=4)
        pred = predict_series(params, channel, window, agg)
        perm = rng.permutation(pred.supports.size)
        shuffled = aggregate(pred.window_posteriors[perm], pred.supports[perm], agg)
        np.testing.assert_allclose(shuffled.probs, pred.probs, atol=1e-12)

    def test_short_channel_is_an_error(self):
        channel = Channel(id="tiny", values=np.arange(4.0), label=0)
        params = init_params(8, hidden_width=2, seed=13, patch_size=2)
        with pytest.raises(ValueError, match="no windows"):
            predict_series(params, channel, WindowConfig(8, 4), AggregationConfig(m=2))


class TestFitDeterminism:
    def test_same_seed_identical_params(self):
        channels = toy_channels()
        config = small_config(epochs=3, batch_size=9, seed=77)
        results = []
        for _ in range(2):
            model = init_params(8, hidden_width=3, seed=77, patch_size=2)
            best, history = fit(model, channels, channels, config)
            results.append((best, history))
        for name in results[0][0].arrays:
            np.testing.assert_array_equal(results[0][0].arrays[name], results[1][0].arrays[name])
        assert results[0][1] == results[1][1]
