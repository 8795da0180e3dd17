"""Window-level classifier: a small differentiable patch-pooling MLP.

The reference architecture averages non-overlapping patches of the raw
window (any trailing partial patch is dropped), feeds the patch means
through one tanh hidden layer, and emits two-class softmax logits. It
exists to exercise the sampling/retrieval/aggregation machinery, which
is agnostic to the classifier behind this interface; heavier models can
be swapped in by matching `forward`/`backward`.

Gradients are computed analytically and are checked against central
finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from retagg.dataset import Window


@dataclass(frozen=True)
class BackboneConfig:
    input_length: int
    patch_size: int = 24
    hidden_width: int = 16
    n_classes: int = 2

    def __post_init__(self):
        if self.input_length < 1:
            raise ValueError(f"input_length must be >= 1, got {self.input_length}")
        if not 1 <= self.patch_size <= self.input_length:
            raise ValueError(f"patch_size must be in [1, input_length], got {self.patch_size}")
        if self.hidden_width < 0:
            raise ValueError(f"hidden_width must be >= 0, got {self.hidden_width}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")

    @property
    def n_patches(self) -> int:
        return self.input_length // self.patch_size

    def to_dict(self) -> dict:
        return {
            "input_length": self.input_length,
            "patch_size": self.patch_size,
            "hidden_width": self.hidden_width,
            "n_classes": self.n_classes,
        }


@dataclass(frozen=True)
class WindowPosterior:
    """Class probabilities and the pre-activation scores behind them."""

    probs: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class BackboneParams:
    """Dense parameter arrays keyed by layer name, plus the architecture config."""

    config: BackboneConfig
    arrays: dict[str, np.ndarray]

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "BackboneParams":
        return BackboneParams(config=self.config, arrays={k: v.copy() for k, v in self.arrays.items()})


def init_params(
    input_length: int,
    hidden_width: int = 16,
    seed: int = 0,
    patch_size: int = 24,
    n_classes: int = 2,
) -> BackboneParams:
    """Seeded uniform initialization with per-layer bound 1/sqrt(fan_in).

    hidden_width=0 degenerates to a pure linear model on the patch
    features.
    """
    config = BackboneConfig(
        input_length=input_length, patch_size=patch_size, hidden_width=hidden_width, n_classes=n_classes
    )
    rng = np.random.default_rng(seed)
    d = config.n_patches
    arrays: dict[str, np.ndarray] = {}
    if hidden_width > 0:
        r1 = 1.0 / np.sqrt(d)
        arrays["hidden_w"] = rng.uniform(-r1, r1, size=(hidden_width, d))
        arrays["hidden_b"] = rng.uniform(-r1, r1, size=hidden_width)
        r2 = 1.0 / np.sqrt(hidden_width)
        arrays["out_w"] = rng.uniform(-r2, r2, size=(n_classes, hidden_width))
        arrays["out_b"] = rng.uniform(-r2, r2, size=n_classes)
    else:
        r = 1.0 / np.sqrt(d)
        arrays["out_w"] = rng.uniform(-r, r, size=(n_classes, d))
        arrays["out_b"] = rng.uniform(-r, r, size=n_classes)
    return BackboneParams(config=config, arrays=arrays)


def _as_batch(params: BackboneParams, window: Window | np.ndarray) -> np.ndarray:
    values = window.values if isinstance(window, Window) else np.asarray(window, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError(f"expected a 1-D window, got shape {values.shape}")
    if values.size != params.config.input_length:
        raise ValueError(f"window length mismatch: expected {params.config.input_length}, got {values.size}")
    return values[None, :]


def _patch_features(config: BackboneConfig, batch: np.ndarray) -> np.ndarray:
    d, p = config.n_patches, config.patch_size
    return batch[:, : d * p].reshape(batch.shape[0], d, p).mean(axis=2)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def forward_batch(params: BackboneParams, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior probabilities and logits for a (n, input_length) batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.config.input_length:
        raise ValueError(f"expected (n, {params.config.input_length}) batch, got {batch.shape}")
    feats = _patch_features(params.config, batch)
    if params.config.hidden_width > 0:
        hidden = np.tanh(feats @ params.arrays["hidden_w"].T + params.arrays["hidden_b"])
        logits = hidden @ params.arrays["out_w"].T + params.arrays["out_b"]
    else:
        logits = feats @ params.arrays["out_w"].T + params.arrays["out_b"]
    return _softmax_rows(logits), logits


def forward(params: BackboneParams, window: Window | np.ndarray) -> WindowPosterior:
    """Deterministic posterior for one window."""
    probs, logits = forward_batch(params, _as_batch(params, window))
    return WindowPosterior(probs=probs[0], logits=logits[0])


def backward_batch(params: BackboneParams, batch: np.ndarray, grad_probs: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients summed over the batch.

    grad_probs is d(loss)/d(probs), one row per window; the chain rule
    runs back through the softmax and the network layers.
    """
    batch = np.asarray(batch, dtype=np.float64)
    grad_probs = np.asarray(grad_probs, dtype=np.float64)
    if not np.all(np.isfinite(grad_probs)):
        raise ValueError("grad_probs must be finite")
    if grad_probs.shape != (batch.shape[0], params.config.n_classes):
        raise ValueError(f"expected grad_probs shape {(batch.shape[0], params.config.n_classes)}, got {grad_probs.shape}")

    feats = _patch_features(params.config, batch)
    if params.config.hidden_width > 0:
        pre = feats @ params.arrays["hidden_w"].T + params.arrays["hidden_b"]
        hidden = np.tanh(pre)
        logits = hidden @ params.arrays["out_w"].T + params.arrays["out_b"]
    else:
        hidden = None
        logits = feats @ params.arrays["out_w"].T + params.arrays["out_b"]
    probs = _softmax_rows(logits)

    # softmax jacobian: dZ_c = p_c * (g_c - sum_c' g_c' p_c')
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    grad_logits = probs * (grad_probs - inner)

    grads: dict[str, np.ndarray] = {}
    if params.config.hidden_width > 0:
        grads["out_w"] = grad_logits.T @ hidden
        grads["out_b"] = grad_logits.sum(axis=0)
        grad_hidden = grad_logits @ params.arrays["out_w"]
        grad_pre = grad_hidden * (1.0 - hidden**2)
        grads["hidden_w"] = grad_pre.T @ feats
        grads["hidden_b"] = grad_pre.sum(axis=0)
    else:
        grads["out_w"] = grad_logits.T @ feats
        grads["out_b"] = grad_logits.sum(axis=0)
    return grads


def backward(params: BackboneParams, window: Window | np.ndarray, grad_output: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter for one window."""
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (params.config.n_classes,):
        raise ValueError(f"expected grad_output shape {(params.config.n_classes,)}, got {grad_output.shape}")
    return backward_batch(params, _as_batch(params, window), grad_output[None, :])


def save_checkpoint(params: BackboneParams, path: str | Path, extra_config: dict | None = None) -> None:
    """Write params as JSON; decimal formatting round-trips every scalar exactly."""
    payload = {
        "config": {**params.config.to_dict(), **(extra_config or {})},
        "arrays": {name: arr.ravel().tolist() for name, arr in sorted(params.arrays.items())},
        "shapes": {name: list(arr.shape) for name, arr in sorted(params.arrays.items())},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[BackboneParams, dict]:
    """Read a checkpoint; returns the params and the full stored config dict."""
    payload = json.loads(Path(path).read_text())
    stored = payload["config"]
    config = BackboneConfig(
        input_length=stored["input_length"],
        patch_size=stored["patch_size"],
        hidden_width=stored["hidden_width"],
        n_classes=stored["n_classes"],
    )
    arrays = {
        name: np.asarray(flat, dtype=np.float64).reshape(payload["shapes"][name])
        for name, flat in payload["arrays"].items()
    }
    return BackboneParams(config=config, arrays=arrays), stored
