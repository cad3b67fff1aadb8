"""Closed-form readout training and binary classification of scalar outputs."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError


class ClassLabel(enum.Enum):
    EL_NINO = "elnino"
    LA_NINA = "lanina"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class ClassPrediction:
    """Binary class decision derived from a raw scalar model output.

    Nonnegative scores map to EL_NINO (ties at exactly zero included),
    negative scores to LA_NINA.
    """

    label: ClassLabel
    score: float


@dataclass(frozen=True)
class ReadoutSolution:
    w_out: np.ndarray
    b_out: np.ndarray
    train_mse: float


@dataclass(frozen=True)
class AccuracyReport:
    """Pooled and per-class fraction of correct predictions.

    Per-class entries are present only for classes that occur in the truth
    labels.
    """

    overall: float
    per_class: dict
    n_samples: int


def fit_readout(final_states: np.ndarray, targets: np.ndarray, ridge: float = 0.0) -> ReadoutSolution:
    """Least-squares readout on a bias-augmented design matrix.

    Solves min ||[X | 1] beta - y||^2 with an optional Tikhonov term
    ridge * ||w||^2 on the weights (the bias column is never penalized).
    With ridge = 0 the plain regression is solved by least squares and a
    rank-deficient design is rejected; with ridge > 0 the penalized normal
    equations are solved directly, switching to the equivalent dual
    (sample-space) form when there are more features than samples.
    """
    x = np.asarray(final_states, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2:
        raise ConfigError(f"final_states must be 2D (samples, units), got shape {x.shape}")
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != x.shape[0]:
        raise ConfigError(f"targets rows {y.shape[0]} != state rows {x.shape[0]}")
    if x.shape[0] < 2:
        raise ConfigError("need at least two samples to fit the readout")
    if ridge < 0.0:
        raise ConfigError(f"ridge must be nonnegative, got {ridge}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ConfigError("final_states/targets contain non-finite entries")

    n_samples, n_units = x.shape
    design = np.hstack([x, np.ones((n_samples, 1))])
    if ridge == 0.0:
        beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank < design.shape[1]:
            raise NumericError(
                f"normal equations are rank-deficient (rank {rank} < {design.shape[1]}); "
                "pass a positive ridge to regularize"
            )
    elif n_units <= n_samples:
        gram = design.T @ design
        gram[np.arange(n_units), np.arange(n_units)] += ridge
        beta = np.linalg.solve(gram, design.T @ y)
    else:
        # dual form: with the bias unpenalized, centering reduces the problem
        # to ridge regression in sample space (n_samples x n_samples system)
        x_mean = x.mean(axis=0)
        y_mean = y.mean(axis=0)
        xc = x - x_mean
        kernel = xc @ xc.T
        kernel[np.arange(n_samples), np.arange(n_samples)] += ridge
        dual = np.linalg.solve(kernel, y - y_mean)
        weights = xc.T @ dual
        bias = y_mean - x_mean @ weights
        beta = np.vstack([weights, bias[None, :]])

    residual = design @ beta - y
    mse = float(np.mean(residual**2))
    return ReadoutSolution(w_out=beta[:-1].T.copy(), b_out=beta[-1].copy(), train_mse=mse)


def binarize(output: float) -> ClassPrediction:
    """Map a raw scalar output to a class by sign (0.0 counts as EL_NINO)."""
    score = float(output)
    if not np.isfinite(score):
        raise ConfigError(f"output must be finite, got {score}")
    label = ClassLabel.EL_NINO if score >= 0.0 else ClassLabel.LA_NINA
    return ClassPrediction(label=label, score=score)


def accuracy(predictions: list, labels: list) -> AccuracyReport:
    """Fraction of matching labels, pooled and broken down per true class."""
    if len(predictions) != len(labels):
        raise ConfigError(f"got {len(predictions)} predictions for {len(labels)} labels")
    if not predictions:
        raise ConfigError("cannot compute accuracy of an empty prediction set")
    predicted = [p.label for p in predictions]
    hits = [p == t for p, t in zip(predicted, labels)]
    per_class = {}
    for cls in (ClassLabel.EL_NINO, ClassLabel.LA_NINA):
        members = [h for h, t in zip(hits, labels) if t == cls]
        if members:
            per_class[cls] = sum(members) / len(members)
    return AccuracyReport(
        overall=sum(hits) / len(hits),
        per_class=per_class,
        n_samples=len(labels),
    )
