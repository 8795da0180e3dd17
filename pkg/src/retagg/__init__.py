"""Retrieval-weighted window aggregation for variable-length time series.

Long labeled recordings are cut into fixed-length sliding windows, each
window is scored by a small differentiable backbone, and windows are
reweighted by how strongly they agree with their most similar neighbors
inside the same recording. The series decision is a convex mixture of
window posteriors, which makes per-window contributions additive and
directly reportable.
"""

from retagg.dataset import (
    Channel,
    DatasetSplit,
    Window,
    WindowConfig,
    balance_classes,
    extract_windows,
    load_dataset,
    split_dataset,
    zscore_normalize,
)
from retagg.retrieval import NeighborSet, retrieve_neighbors, similarity, support_scores
from retagg.aggregation import (
    AggregationConfig,
    SeriesPrediction,
    WeightVector,
    aggregate,
    softmax_weights,
    weight_sensitivity,
)
from retagg.backbone import BackboneConfig, BackboneParams, WindowPosterior, backward, forward, init_params
from retagg.training import TrainConfig, WindowPool, bce_loss, fit, predict_series, sample_batch, train_epoch
from retagg.metrics import EvalResult, accuracy, auc_score, evaluate, f1_score
from retagg.explain import ExplanationReport, build_report, heatmap_series, verify_monotonicity

__version__ = "0.1.0"
