"""Explanation reports: where the probability mass sits and why.

A series posterior is an additive sum of per-window contributions
(weight times window posterior), so every report reconstructs the
prediction exactly from its parts. The "why" behind each influential
window is its neighbor leaderboard: the ranked in-series windows whose
similarity produced its support, copied verbatim from retrieval so
nothing is recomputed or drifts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from retagg.aggregation import AggregationConfig, SeriesPrediction, softmax_weights
from retagg.dataset import Channel, Window, WindowConfig
from retagg.retrieval import NeighborSet, neighbor_sets

ADDITIVITY_TOL = 1e-9


@dataclass(frozen=True)
class WindowAttribution:
    """One window's additive share of the series probability."""

    window_index: int
    start: int
    posterior: np.ndarray
    support: float
    weight: float
    contribution: float  # weight * posterior[predicted class]


@dataclass(frozen=True)
class NeighborLeaderboardEntry:
    rank: int
    neighbor_index: int
    neighbor_start: int
    similarity: float


@dataclass(frozen=True)
class ExplanationReport:
    series_id: str
    predicted_class: int
    series_probs: np.ndarray
    metric: str
    m: int
    temperature: float
    window_length: int
    stride: int
    attributions: tuple[WindowAttribution, ...]  # sorted by contribution, descending
    leaderboards: dict[int, tuple[NeighborLeaderboardEntry, ...]]
    fs: float | None = None

    def to_dict(self) -> dict:
        def entry_dict(e: NeighborLeaderboardEntry) -> dict:
            d = {
                "rank": e.rank,
                "neighbor_index": e.neighbor_index,
                "neighbor_start": e.neighbor_start,
                "similarity": e.similarity,
            }
            if self.fs is not None:
                d["neighbor_start_seconds"] = e.neighbor_start / self.fs
            return d

        def attr_dict(a: WindowAttribution) -> dict:
            d = {
                "window_index": a.window_index,
                "start": a.start,
                "prob_class1": float(a.posterior[1]),
                "support": a.support,
                "weight": a.weight,
                "contribution": a.contribution,
                "contribution_class0": a.weight * float(a.posterior[0]),
                "contribution_class1": a.weight * float(a.posterior[1]),
            }
            if self.fs is not None:
                d["start_seconds"] = a.start / self.fs
            return d

        return {
            "series_id": self.series_id,
            "predicted_class": self.predicted_class,
            "series_probs": [float(p) for p in self.series_probs],
            "config": {
                "metric": self.metric,
                "m": self.m,
                "temperature": self.temperature,
                "window_length": self.window_length,
                "stride": self.stride,
            },
            "attributions": [attr_dict(a) for a in self.attributions],
            "leaderboards": {
                str(k): [entry_dict(e) for e in entries] for k, entries in self.leaderboards.items()
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def build_report(
    prediction: SeriesPrediction,
    neighbor_sets: Sequence[NeighborSet],
    channel: Channel,
    config: AggregationConfig,
    window_config: WindowConfig,
    top_k_windows: int = 5,
) -> ExplanationReport:
    """Attributions for every aggregated window plus leaderboards for the top-k.

    The prediction and neighbor sets must describe the same windows in
    the same order. The report is validated here: contributions must
    reconstruct the series probability before anything is returned.
    """
    n = prediction.window_posteriors.shape[0]
    if len(neighbor_sets) != n:
        raise ValueError(f"window count mismatch: prediction has {n}, neighbor_sets has {len(neighbor_sets)}")
    predicted_class = int(np.argmax(prediction.probs))

    attributions = []
    for pos, k in enumerate(prediction.window_indices):
        weight = float(prediction.weights.alphas[pos])
        posterior = prediction.window_posteriors[pos]
        attributions.append(
            WindowAttribution(
                window_index=int(k),
                start=int(k) * window_config.stride,
                posterior=posterior,
                support=float(prediction.supports[pos]),
                weight=weight,
                contribution=weight * float(posterior[predicted_class]),
            )
        )
    attributions.sort(key=lambda a: (-a.contribution, a.window_index))

    total = sum(a.contribution for a in attributions)
    if abs(total - float(prediction.probs[predicted_class])) > ADDITIVITY_TOL:
        raise ValueError(
            f"attribution sum {total!r} does not reconstruct series probability "
            f"{float(prediction.probs[predicted_class])!r}"
        )

    by_index = {ns.query_index: ns for ns in neighbor_sets}
    leaderboards: dict[int, tuple[NeighborLeaderboardEntry, ...]] = {}
    for a in attributions[:top_k_windows]:
        ns = by_index[a.window_index]
        leaderboards[a.window_index] = tuple(
            NeighborLeaderboardEntry(
                rank=rank,
                neighbor_index=j,
                neighbor_start=j * window_config.stride,
                similarity=s,
            )
            for rank, (j, s) in enumerate(ns.neighbors, start=1)
        )

    return ExplanationReport(
        series_id=prediction.series_id or channel.id,
        predicted_class=predicted_class,
        series_probs=prediction.probs,
        metric=config.metric,
        m=config.m,
        temperature=config.temperature,
        window_length=window_config.window_length,
        stride=window_config.stride,
        attributions=tuple(attributions),
        leaderboards=leaderboards,
        fs=channel.fs,
    )


def heatmap_series(prediction: SeriesPrediction, window_config: WindowConfig) -> list[tuple[int, int, float, float]]:
    """(start, end, class-1 probability, weight) per window, ordered by start.

    The rows are the overlay data behind localization plots.
    """
    rows = []
    for pos, k in enumerate(prediction.window_indices):
        start = int(k) * window_config.stride
        rows.append(
            (
                start,
                start + window_config.window_length,
                float(prediction.window_posteriors[pos, 1]),
                float(prediction.weights.alphas[pos]),
            )
        )
    rows.sort(key=lambda r: r[0])
    return rows


def write_heatmap_csv(rows: list[tuple[int, int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start", "end", "prob_class1", "weight"])
        for start, end, prob, weight in rows:
            writer.writerow([start, end, repr(prob), repr(weight)])


@dataclass(frozen=True)
class MonotonicityCheck:
    window_index: int
    alpha_before: float
    alpha_after: float
    delta: float
    expected_delta: float
    passed: bool


@dataclass(frozen=True)
class MonotonicityRecord:
    all_passed: bool
    epsilon: float
    checks: tuple[MonotonicityCheck, ...]


def verify_monotonicity(
    report: ExplanationReport,
    windows: Sequence[Window],
    config: AggregationConfig,
    epsilon: float = 1e-4,
) -> MonotonicityRecord:
    """Numerically confirm that raising a neighbor similarity raises the window's weight.

    For each leaderboard window, one neighbor similarity is nudged up by
    epsilon, the support mean and the softmax are recomputed, and the
    weight must strictly increase. The expected delta is
    epsilon * alpha * (1 - alpha) / (m_effective * temperature).
    """
    sets = neighbor_sets(list(windows), config.metric, config.m)
    supports = np.asarray([ns.mean_support for ns in sets], dtype=np.float64)

    checks = []
    for k in report.leaderboards:
        ns = sets[k]
        if ns.m_effective == 0:
            # single-window series: nothing to perturb, vacuous pass
            checks.append(
                MonotonicityCheck(
                    window_index=k, alpha_before=1.0, alpha_after=1.0, delta=0.0, expected_delta=0.0, passed=True
                )
            )
            continue
        base_alphas = softmax_weights(supports, config.temperature).alphas
        perturbed = supports.copy()
        perturbed[k] += epsilon / ns.m_effective  # one neighbor similarity +epsilon moves the mean by eps/m
        new_alphas = softmax_weights(perturbed, config.temperature).alphas
        alpha_before = float(base_alphas[k])
        alpha_after = float(new_alphas[k])
        delta = alpha_after - alpha_before
        expected = epsilon * alpha_before * (1.0 - alpha_before) / (ns.m_effective * config.temperature)
        checks.append(
            MonotonicityCheck(
                window_index=k,
                alpha_before=alpha_before,
                alpha_after=alpha_after,
                delta=delta,
                expected_delta=expected,
                passed=delta > 0.0,
            )
        )
    return MonotonicityRecord(all_passed=all(c.passed for c in checks), epsilon=epsilon, checks=tuple(checks))
