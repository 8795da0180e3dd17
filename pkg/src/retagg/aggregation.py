"""Convex aggregation of window posteriors.

Supports are turned into influence weights with a temperatured softmax
across the windows of a series, and the series posterior is the
weighted mixture of window posteriors. Because the weights are a
softmax and every window posterior lives in the probability simplex,
the series posterior provably stays in the simplex, and each window's
contribution to it is additive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

WEIGHTINGS = ("retrieval", "uniform")


@dataclass(frozen=True)
class AggregationConfig:
    """Knobs of the support-to-weight mapping.

    temperature steers sharpness: large values flatten the weights
    toward uniform averaging, small values concentrate on the
    best-supported window. weighting="uniform" bypasses supports
    entirely (the plain uniform-averaging ablation).
    """

    temperature: float = 1.0
    m: int = 10
    metric: str = "cosine"
    weighting: str = "retrieval"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")


@dataclass(frozen=True)
class WeightVector:
    """Normalized per-window influence weights."""

    alphas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.float64))


@dataclass(frozen=True)
class SeriesPrediction:
    """Series posterior with the parts that produced it.

    Inputs are retained so explanations can reconstruct per-window
    contributions without recomputation.
    """

    series_id: str
    probs: np.ndarray
    weights: WeightVector
    window_posteriors: np.ndarray  # (n_windows, n_classes)
    window_indices: tuple[int, ...]
    supports: np.ndarray


def softmax_weights(supports: Sequence[float] | np.ndarray, temperature: float) -> WeightVector:
    """Temperatured softmax over per-window supports.

    Computed with max-subtraction so extreme temperatures cannot
    overflow.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    supports = np.asarray(supports, dtype=np.float64)
    if supports.size == 0:
        raise ValueError("supports must be non-empty")
    if not np.all(np.isfinite(supports)):
        raise ValueError("supports must all be finite")
    scaled = supports / temperature
    scaled = scaled - scaled.max()
    exp = np.exp(scaled)
    return WeightVector(alphas=exp / exp.sum())


def aggregate(
    posteriors: np.ndarray,
    supports: Sequence[float] | np.ndarray,
    config: AggregationConfig,
    series_id: str = "",
    window_indices: Sequence[int] | None = None,
) -> SeriesPrediction:
    """Mix window posteriors into the series posterior.

    posteriors is (n_windows, n_classes) with each row in the simplex.
    Under retrieval weighting the mixture weights come from
    `softmax_weights`; under uniform weighting every window gets 1/n.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    supports = np.asarray(supports, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise ValueError("posteriors must be a non-empty (n_windows, n_classes) array")
    n = posteriors.shape[0]
    if supports.shape != (n,):
        raise ValueError(f"length mismatch: {n} posteriors vs {supports.shape} supports")

    if config.weighting == "uniform":
        weights = WeightVector(alphas=np.full(n, 1.0 / n))
    else:
        weights = softmax_weights(supports, config.temperature)

    probs = weights.alphas @ posteriors
    if window_indices is None:
        window_indices = range(n)
    return SeriesPrediction(
        series_id=series_id,
        probs=probs,
        weights=weights,
        window_posteriors=posteriors,
        window_indices=tuple(int(k) for k in window_indices),
        supports=supports,
    )


def weight_sensitivity(supports: Sequence[float] | np.ndarray, temperature: float, m: int, k: int) -> float:
    """Rate of change of weight k per unit increase of one of its neighbor similarities.

    Equals alpha_k * (1 - alpha_k) / (m * temperature): raising any
    neighbor similarity raises the window's mean support by 1/m, and
    the softmax passes that through with gain alpha_k(1 - alpha_k)/tau.
    Strictly positive whenever the series has at least two windows.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    alphas = softmax_weights(supports, temperature).alphas
    if not 0 <= k < alphas.size:
        raise ValueError(f"index {k} out of range for {alphas.size} windows")
    alpha = float(alphas[k])
    return alpha * (1.0 - alpha) / (m * temperature)
