"""Training loop: length-proportional window sampling with retrieval-weighted aggregation.

One epoch consumes every window of the training set exactly once.
Windows are drawn uniformly without replacement from a shared pool; at
fixed stride a series holds a window count proportional to its length,
so uniform pool draws hit series i with probability T_i / sum_j T_j.
Sampled windows are grouped by series, scored by the backbone, and
aggregated per series with weights derived from each window's
similarity support against the FULL series (not just the sampled
subset). The batch loss is the mean BCE over the series present in the
batch.

The influence weights depend only on raw window content, never on model
parameters, so no gradient flows through the retrieval path; per-series
supports are computed once and cached across epochs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from retagg.aggregation import AggregationConfig, SeriesPrediction, aggregate, softmax_weights
from retagg.backbone import BackboneParams, backward_batch, forward_batch
from retagg.dataset import Channel, WindowConfig, window_matrix
from retagg.metrics import accuracy, auc_score, f1_score
from retagg.retrieval import support_scores_matrix

PROB_EPS = 1e-12  # BCE probability clamp

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8192
    warmup_steps: int = 100
    max_lr: float = 3e-4
    final_lr: float = 1e-6
    start_lr: float = 0.0
    t_max: int = 700
    weight_decay: float = 1e-6
    patience: int = 5
    seed: int = 0
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    window: WindowConfig = field(default_factory=WindowConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        for name in ("max_lr", "final_lr", "start_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    batch: int
    loss: float
    series_in_batch: int


class WindowPool:
    """Epoch pool of (channel_id, window_index) pairs.

    Sampling removes entries, never repeats one, and empties the pool
    after exactly one pass over every window.
    """

    def __init__(self, per_series_counts: dict[str, int]):
        self.per_series_total = dict(per_series_counts)
        self._entries = [
            (cid, k) for cid in sorted(per_series_counts) for k in range(per_series_counts[cid])
        ]
        self._order = np.arange(len(self._entries))
        self._n_remaining = len(self._entries)

    def __len__(self) -> int:
        return self._n_remaining

    @property
    def remaining(self) -> frozenset[tuple[str, int]]:
        return frozenset(self._entries[i] for i in self._order[: self._n_remaining])

    def draw(self, count: int, rng: np.random.Generator) -> list[tuple[str, int]]:
        # partial Fisher-Yates: uniform without replacement, O(count)
        taken = []
        for _ in range(count):
            j = int(rng.integers(0, self._n_remaining))
            last = self._n_remaining - 1
            self._order[j], self._order[last] = self._order[last], self._order[j]
            taken.append(self._entries[self._order[last]])
            self._n_remaining = last
        return taken


def sample_batch(pool: WindowPool, batch_size: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """Draw min(batch_size, |pool|) windows uniformly without replacement."""
    if len(pool) == 0:
        raise ValueError("cannot sample from an empty pool")
    return pool.draw(min(batch_size, len(pool)), rng)


def bce_loss(prediction: SeriesPrediction, label: int) -> float:
    """Binary cross-entropy of the series posterior against a 0/1 label."""
    return _bce(float(prediction.probs[1]), label)


def _bce(p1: float, label: int) -> float:
    p1 = min(max(p1, PROB_EPS), 1.0 - PROB_EPS)
    return -(label * math.log(p1) + (1 - label) * math.log(1.0 - p1))


def _bce_grad(p1: float, label: int) -> float:
    """d(BCE)/d(p1), evaluated at the clamped probability."""
    p1 = min(max(p1, PROB_EPS), 1.0 - PROB_EPS)
    return -label / p1 + (1 - label) / (1.0 - p1)


def learning_rate(step: int, config: TrainConfig) -> float:
    """Linear warmup to max_lr, cosine decay to final_lr, then hold."""
    if step < config.warmup_steps:
        return config.start_lr + (config.max_lr - config.start_lr) * step / config.warmup_steps
    t = step - config.warmup_steps
    if t >= config.t_max:
        return config.final_lr
    return config.final_lr + 0.5 * (config.max_lr - config.final_lr) * (1.0 + math.cos(math.pi * t / config.t_max))


@dataclass
class AdamState:
    """Adaptive-moment accumulators; `step` counts applied updates."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: BackboneParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays.items()},
            v={k: np.zeros_like(a) for k, a in params.arrays.items()},
        )


def adam_update(
    params: BackboneParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> BackboneParams:
    """One optimizer step with decoupled weight decay; returns new params."""
    state.step += 1
    t = state.step
    new_arrays: dict[str, np.ndarray] = {}
    for name in sorted(params.arrays):
        g = grads[name]
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / (1.0 - ADAM_BETA1**t)
        v_hat = state.v[name] / (1.0 - ADAM_BETA2**t)
        theta = params.arrays[name]
        new_arrays[name] = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS) - lr * weight_decay * theta
    return BackboneParams(config=params.config, arrays=new_arrays)


@dataclass(frozen=True)
class SeriesCache:
    """Per-series window matrix and full-series supports, fixed for a whole run."""

    channel_id: str
    label: int
    windows: np.ndarray  # (n_windows, window_length)
    starts: np.ndarray
    supports: np.ndarray


def build_series_cache(
    channels: list[Channel], window_config: WindowConfig, agg_config: AggregationConfig
) -> dict[str, SeriesCache]:
    """Window matrices and supports per channel, keyed by id in sorted order.

    Channels shorter than one window are skipped: they contribute no
    windows and cannot be predicted.
    """
    cache: dict[str, SeriesCache] = {}
    for ch in sorted(channels, key=lambda c: c.id):
        values = window_matrix(ch, window_config)
        if values.shape[0] == 0:
            continue
        starts = np.arange(values.shape[0]) * window_config.stride
        supports = support_scores_matrix(values, agg_config.metric, agg_config.m)
        cache[ch.id] = SeriesCache(
            channel_id=ch.id, label=ch.label, windows=values, starts=starts, supports=supports
        )
    return cache


def _subset_alphas(supports: np.ndarray, config: AggregationConfig) -> np.ndarray:
    if config.weighting == "uniform":
        return np.full(supports.size, 1.0 / supports.size)
    return softmax_weights(supports, config.temperature).alphas


def train_epoch(
    params: BackboneParams,
    channels: list[Channel],
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    epoch: int = 0,
    opt_state: AdamState | None = None,
    cache: dict[str, SeriesCache] | None = None,
) -> tuple[BackboneParams, list[LossRecord]]:
    """One full pass over the window pool; returns updated params and batch records.

    `opt_state` carries Adam moments and the global step that drives the
    learning-rate schedule across epochs; a fresh state is created when
    none is given. `cache` skips rebuilding window matrices and supports.
    """
    if cache is None:
        cache = build_series_cache(channels, config.window, config.aggregation)
    if not cache:
        raise ValueError("no training series yields any window")
    if opt_state is None:
        opt_state = AdamState.zeros(params)

    pool = WindowPool({cid: c.windows.shape[0] for cid, c in cache.items()})
    records: list[LossRecord] = []
    batch_index = 0
    while len(pool) > 0:
        sampled = sample_batch(pool, config.batch_size, rng)
        grouped: dict[str, list[int]] = {}
        for cid, widx in sampled:
            grouped.setdefault(cid, []).append(widx)
        series_ids = sorted(grouped)

        stacks = []
        for cid in series_ids:
            grouped[cid] = sorted(grouped[cid])
            stacks.append(cache[cid].windows[grouped[cid]])
        batch_values = np.concatenate(stacks, axis=0)
        probs, _ = forward_batch(params, batch_values)

        grad_probs = np.zeros_like(probs)
        losses = []
        row = 0
        for cid in series_ids:
            entry = cache[cid]
            widxs = grouped[cid]
            rows = slice(row, row + len(widxs))
            alphas = _subset_alphas(entry.supports[widxs], config.aggregation)
            p1 = float(alphas @ probs[rows, 1])
            losses.append(_bce(p1, entry.label))
            grad_probs[rows, 1] = alphas * _bce_grad(p1, entry.label)
            row += len(widxs)

        n_present = len(series_ids)
        grad_probs /= n_present
        grads = backward_batch(params, batch_values, grad_probs)
        lr = learning_rate(opt_state.step, config)
        params = adam_update(params, grads, opt_state, lr, config.weight_decay)

        records.append(
            LossRecord(epoch=epoch, batch=batch_index, loss=float(np.mean(losses)), series_in_batch=n_present)
        )
        batch_index += 1
    return params, records


def _predict_from_cache(params: BackboneParams, entry: SeriesCache, agg_config: AggregationConfig) -> SeriesPrediction:
    probs, _ = forward_batch(params, entry.windows)
    return aggregate(probs, entry.supports, agg_config, series_id=entry.channel_id)


def predict_series(
    params: BackboneParams,
    channel: Channel,
    window_config: WindowConfig,
    agg_config: AggregationConfig,
) -> SeriesPrediction:
    """Series posterior over ALL windows of the channel; no sampling at inference."""
    values = window_matrix(channel, window_config)
    if values.shape[0] == 0:
        raise ValueError(
            f"channel {channel.id!r}: no windows (length {channel.length} < window_length {window_config.window_length})"
        )
    supports = support_scores_matrix(values, agg_config.metric, agg_config.m)
    probs, _ = forward_batch(params, values)
    return aggregate(probs, supports, agg_config, series_id=channel.id)


def fit(
    model: BackboneParams,
    train_channels: list[Channel],
    val_channels: list[Channel],
    config: TrainConfig,
) -> tuple[BackboneParams, list[dict]]:
    """Train with early stopping on validation series-level F1 (accuracy breaks ties).

    Returns the parameters of the best epoch and one history record per
    epoch: {epoch, train_loss_mean, val_f1, val_auc, val_acc, lr_last}.
    val_auc is null whenever the validation set holds a single class.
    """
    if not train_channels or not val_channels:
        raise ValueError("train and validation sets must both be non-empty")
    train_cache = build_series_cache(train_channels, config.window, config.aggregation)
    val_cache = build_series_cache(val_channels, config.window, config.aggregation)
    if not train_cache or not val_cache:
        raise ValueError("train and validation sets must both yield windows")

    params = model
    opt_state = AdamState.zeros(model)
    best_params = model.copy()
    best_key: tuple[float, float] | None = None
    epochs_since_improvement = 0
    history: list[dict] = []

    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        params, records = train_epoch(
            params, train_channels, config, rng, epoch=epoch, opt_state=opt_state, cache=train_cache
        )

        val_p1 = []
        val_labels = []
        for cid, entry in val_cache.items():
            pred = _predict_from_cache(params, entry, config.aggregation)
            val_p1.append(float(pred.probs[1]))
            val_labels.append(entry.label)
        val_f1 = f1_score(val_p1, val_labels)
        val_acc = accuracy(val_p1, val_labels)
        try:
            val_auc = auc_score(val_p1, val_labels)
        except ValueError:
            val_auc = None

        history.append(
            {
                "epoch": epoch,
                "train_loss_mean": float(np.mean([r.loss for r in records])),
                "val_f1": val_f1,
                "val_auc": val_auc,
                "val_acc": val_acc,
                "lr_last": learning_rate(opt_state.step - 1, config),
            }
        )

        key = (val_f1, val_acc)
        if best_key is None or key > best_key:
            best_key = key
            best_params = params.copy()
            epochs_since_improvement = 0
        else:
            epochs_since_improvement += 1
            if epochs_since_improvement >= config.patience:
                break
    return best_params, history


def write_history(history: list[dict], path: str | Path) -> None:
    """One JSON record per line, one line per epoch."""
    with open(path, "w") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
