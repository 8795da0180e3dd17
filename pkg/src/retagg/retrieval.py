"""Within-series similarity retrieval.

Every window of a series is compared against every other window of the
same series (overlap allowed, identity excluded). A window's support is
the mean similarity to its top-m most similar neighbors; ties are broken
by ascending neighbor index so retrieval is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from retagg.dataset import Window

METRICS = ("pearson", "cosine")


def _check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise ValueError(f"unknown similarity metric {metric!r}, expected one of {METRICS}")
    return metric


def similarity(metric: str, a: np.ndarray, b: np.ndarray) -> float:
    """Similarity of two equal-length windows, in [-1, 1].

    Degenerate inputs (zero variance for pearson, zero norm for cosine)
    score 0 rather than propagating NaN.
    """
    _check_metric(metric)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError(f"windows must have length >= 2, got {a.size}")
    if metric == "pearson":
        a = a - a.mean()
        b = b - b.mean()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def similarity_matrix(values: np.ndarray, metric: str) -> np.ndarray:
    """All pairwise window similarities for one series.

    `values` is (n_windows, window_length). Rows with zero norm (zero
    variance under pearson) get similarity 0 against everything.
    """
    _check_metric(metric)
    values = np.asarray(values, dtype=np.float64)
    if metric == "pearson":
        values = values - values.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(values, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = values / safe[:, None]
    sims = unit @ unit.T
    sims[norms == 0.0, :] = 0.0
    sims[:, norms == 0.0] = 0.0
    return sims


@dataclass(frozen=True)
class NeighborSet:
    """Top-m nonidentical neighbors of one query window.

    neighbors: (neighbor_index, similarity) pairs sorted by descending
    similarity, ties by ascending index. m_effective is the count
    actually retrieved (a series may hold fewer than m other windows),
    and mean_support averages over that count, or 0 when the series has
    a single window.
    """

    query_index: int
    neighbors: tuple[tuple[int, float], ...]
    m_effective: int
    mean_support: float


def _top_neighbors(sim_row: np.ndarray, query_index: int, m: int) -> NeighborSet:
    n = sim_row.size
    others = np.delete(np.arange(n), query_index)
    m_eff = min(m, others.size)
    if m_eff == 0:
        return NeighborSet(query_index=query_index, neighbors=(), m_effective=0, mean_support=0.0)
    sims = sim_row[others]
    order = np.argsort(-sims, kind="stable")[:m_eff]  # stable sort keeps ties in ascending-index order
    picked = others[order]
    neighbors = tuple((int(j), float(sim_row[j])) for j in picked)
    mean_support = float(sims[order].mean())
    return NeighborSet(query_index=query_index, neighbors=neighbors, m_effective=m_eff, mean_support=mean_support)


def retrieve_neighbors(windows: Sequence[Window], query_index: int, metric: str, m: int) -> NeighborSet:
    """Exact top-m neighbor set of one window among all others of its series."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = len(windows)
    if not 0 <= query_index < n:
        raise ValueError(f"query_index {query_index} out of range for {n} windows")
    values = np.stack([w.values for w in windows])
    sims = similarity_matrix(values, metric)
    return _top_neighbors(sims[query_index], query_index, m)


def neighbor_sets(windows: Sequence[Window], metric: str, m: int) -> list[NeighborSet]:
    """Neighbor sets for every window of a series, in window-index order."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    values = np.stack([w.values for w in windows]) if windows else np.empty((0, 0))
    sims = similarity_matrix(values, metric) if len(windows) else np.empty((0, 0))
    return [_top_neighbors(sims[k], k, m) for k in range(len(windows))]


def support_scores(windows: Sequence[Window], metric: str, m: int) -> np.ndarray:
    """Mean top-m neighbor similarity per window, in window-index order."""
    return np.asarray([ns.mean_support for ns in neighbor_sets(windows, metric, m)], dtype=np.float64)


def support_scores_matrix(values: np.ndarray, metric: str, m: int) -> np.ndarray:
    """`support_scores` on a prestacked (n_windows, window_length) array.

    Avoids Window object overhead on the hot training path; results are
    identical to the per-window API.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = values.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.float64)
    if n == 1:
        return np.zeros(1, dtype=np.float64)
    sims = similarity_matrix(values, metric)
    supports = np.empty(n, dtype=np.float64)
    for k in range(n):
        others = np.delete(sims[k], k)
        m_eff = min(m, others.size)
        order = np.argsort(-others, kind="stable")[:m_eff]
        supports[k] = others[order].mean()
    return supports
