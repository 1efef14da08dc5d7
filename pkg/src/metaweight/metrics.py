"""Small metric primitives shared by the trainer and the harness."""

from __future__ import annotations

import numpy as np
from scipy import stats


def confusion_matrix(true_labels: np.ndarray, predictions: np.ndarray, c: int) -> np.ndarray:
    """Counts indexed [true][predicted]."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if true_labels.shape != predictions.shape or true_labels.ndim != 1:
        raise ValueError("labels and predictions must be 1-d vectors of equal length")
    if true_labels.size == 0:
        raise ValueError("empty evaluation set")
    mat = np.zeros((c, c), dtype=np.int64)
    np.add.at(mat, (true_labels, predictions), 1)
    return mat


def stability_from_history(weight_history: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std of |weight change| between adjacent epochs.

    weight_history has shape (epochs, samples); entry [e, j] is sample
    j's weight at the end of epoch e. Returns two vectors of length
    epochs - 1.
    """
    weight_history = np.asarray(weight_history, dtype=np.float64)
    if weight_history.ndim != 2 or weight_history.shape[0] < 2:
        raise ValueError("need a (epochs >= 2, samples) weight history")
    deltas = np.abs(np.diff(weight_history, axis=0))
    return deltas.mean(axis=1), deltas.std(axis=1)


def monotonicity_score(losses: np.ndarray, weights: np.ndarray) -> tuple[float, bool]:
    """Spearman rank correlation between losses and weights.

    Returns (score, degenerate). A constant input makes the correlation
    undefined; that case scores 0.0 with the degenerate flag set.
    """
    losses = np.asarray(losses, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if losses.shape != weights.shape or losses.ndim != 1:
        raise ValueError("losses and weights must be 1-d vectors of equal length")
    if losses.size < 2:
        raise ValueError("need at least 2 points")
    if np.all(losses == losses[0]) or np.all(weights == weights[0]):
        return 0.0, True
    rho = stats.spearmanr(losses, weights).statistic
    if np.isnan(rho):
        return 0.0, True
    return float(rho), False
