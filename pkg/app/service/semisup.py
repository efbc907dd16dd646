import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.schemas import CategoryScores, CountsSummary, ExperimentReport, Method, PipelineConfig, Sample, SplitDataset
from app.service.dataset import as_labels, as_matrix, audit_unlabeled_truth
from app.service.pnn import pnn_classify_batch, pnn_train, select_sigma_loo
from app.service.svm import (
    SvmModel,
    confidence_scores,
    predict_classes,
    slack_variables,
    solver_diagnostics,
    train_svm,
)
from app.models import MulticlassModel

logger = logging.getLogger(__name__)

DEBUG_ASCENT_EVERY = 100


@dataclass(frozen=True)
class PipelineResult:
    report: ExperimentReport
    model: SvmModel
    # one entry per unlabeled sample, -1 where no pseudo-label was assigned
    pseudo_labels: Tuple[int, ...]


# --- 1. Evaluation ---
def evaluate(predictions: Sequence[int], test: Sequence[Sample], num_classes: Optional[int] = None) -> Tuple[float, List[List[int]]]:
    """Test error in percent and the confusion matrix (rows = true class)."""
    if not test:
        raise ValueError("cannot evaluate on an empty test set")
    if len(predictions) != len(test):
        raise ValueError("one prediction per test sample")
    truth = [s.label for s in test]
    if any(t is None for t in truth):
        raise ValueError("test samples must be labeled")
    if num_classes is None:
        num_classes = max(max(truth), max(int(p) for p in predictions)) + 1
    confusion = [[0] * num_classes for _ in range(num_classes)]
    for t, p in zip(truth, predictions):
        confusion[t][int(p)] += 1
    wrong = sum(1 for t, p in zip(truth, predictions) if t != int(p))
    return 100.0 * wrong / len(test), confusion


def _pseudo_label_accuracy(split: SplitDataset, pseudo_labels: Sequence[int]) -> Optional[float]:
    truth = audit_unlabeled_truth(split)
    pairs = [(t, p) for t, p in zip(truth, pseudo_labels) if p >= 0]
    if not pairs:
        return None
    return 100.0 * sum(1 for t, p in pairs if t == p) / len(pairs)


# --- 2. Shared plumbing ---
def _resolved(config: PipelineConfig, split: SplitDataset) -> PipelineConfig:
    return config.model_copy(update={"kernel": config.kernel.resolved(split.dim)})


def _fit(training_set: Sequence[Sample], split: SplitDataset, config: PipelineConfig) -> SvmModel:
    return train_svm(
        training_set,
        split.num_classes,
        config.kernel,
        config.c,
        tol=config.tol,
        max_iter=config.max_iter,
        workers=config.workers,
        debug_every=DEBUG_ASCENT_EVERY if config.debug else None,
    )


def _slack_totals(model: SvmModel, training_set: Sequence[Sample]) -> List[float]:
    X = as_matrix(training_set)
    labels = as_labels(training_set)
    if isinstance(model, MulticlassModel):
        return [
            float(slack_variables(b, X, np.where(labels == k, 1.0, -1.0)).sum())
            for k, b in enumerate(model.binaries)
        ]
    return [float(slack_variables(model, X, np.where(labels == 1, 1.0, -1.0)).sum())]


def _finish(
    method: Method,
    split: SplitDataset,
    config: PipelineConfig,
    model: SvmModel,
    training_set: Sequence[Sample],
    pseudo_labels: Sequence[int] = (),
    scores: Sequence[CategoryScores] = (),
    method_params: Optional[dict] = None,
) -> PipelineResult:
    predictions = predict_classes(model, as_matrix(split.test, split.dim))
    error, confusion = evaluate(predictions.tolist(), split.test, split.num_classes)
    report = ExperimentReport(
        method=method,
        test_error_percent=error,
        counts=CountsSummary(
            labeled=len(split.labeled),
            unlabeled=len(split.unlabeled),
            test=len(split.test),
            num_classes=split.num_classes,
            dim=split.dim,
        ),
        config=config,
        seed=config.seed,
        confusion=confusion,
        method_params=method_params or {},
        pseudo_label_accuracy=_pseudo_label_accuracy(split, pseudo_labels),
        pseudo_labels=list(pseudo_labels),
        pseudo_scores=[list(s.g) for s in scores],
        solver=solver_diagnostics(model),
        slack=_slack_totals(model, training_set) if config.debug else None,
    )
    logger.info(f"{method}: test error {error:.2f}% on {len(split.test)} samples (seed {config.seed})")
    return PipelineResult(report=report, model=model, pseudo_labels=tuple(pseudo_labels))


# --- 3. PNN-Training ---
def _pnn_inputs(split: SplitDataset, center: bool) -> Tuple[List[Sample], np.ndarray]:
    """
    Labeled samples and pool features as the PNN sees them. Normalization keeps only
    the direction of a vector, so with `center` both sets are first shifted by the
    mean of L and U together; the SVM still trains on the original features.
    """
    X_l = as_matrix(split.labeled, split.dim)
    X_u = as_matrix(split.unlabeled, split.dim)
    if center:
        mean = np.vstack([X_l, X_u]).mean(axis=0)
        X_l, X_u = X_l - mean, X_u - mean
        logger.debug(f"PNN inputs centered on {np.round(mean, 4).tolist()}")
    labeled = [Sample(features=tuple(x), label=s.label) for x, s in zip(X_l.tolist(), split.labeled)]
    return labeled, X_u


def pnn_pseudo_label(split: SplitDataset, config: PipelineConfig) -> Tuple[List[Sample], List[CategoryScores], float]:
    """
    Trains the PNN on the labeled set only and labels the whole unlabeled pool in
    one pass. Returns the augmented training set (labeled first, then the pool in
    its order), the PNN scores of the pool, and the window width used.
    """
    labeled, pool = _pnn_inputs(split, config.center_features)
    sigma = config.sigma
    if config.sigma_grid:
        sigma = select_sigma_loo(labeled, config.sigma_grid, split.num_classes)
        logger.info(f"Selected sigma={sigma} by leave-one-out over {list(config.sigma_grid)}")
    pnn = pnn_train(labeled, sigma, split.num_classes)
    scores = pnn_classify_batch(pnn, pool, workers=config.workers)
    pseudo = [Sample(features=s.features, label=sc.predicted) for s, sc in zip(split.unlabeled, scores)]
    return list(split.labeled) + pseudo, scores, sigma


def run_pnn_training(split: SplitDataset, config: PipelineConfig) -> PipelineResult:
    config = _resolved(config, split)
    training_set, scores, sigma = pnn_pseudo_label(split, config)
    config = config.model_copy(update={"sigma": sigma})
    model = _fit(training_set, split, config)
    return _finish(
        "pnn-training", split, config, model, training_set,
        pseudo_labels=[s.predicted for s in scores], scores=scores,
    )


def pnn_training_pipeline(split: SplitDataset, config: PipelineConfig) -> ExperimentReport:
    return run_pnn_training(split, config).report


# --- 4. Self-training baseline ---
def run_self_training(
    split: SplitDataset,
    config: PipelineConfig,
    confidence_quantile: float = 0.1,
    max_rounds: int = 50,
) -> PipelineResult:
    """
    Retrains the SVM on its own most confident predictions: each round moves the
    top `confidence_quantile` share (at least one sample) of the remaining pool
    into the training set, until the pool is empty or `max_rounds` rounds ran.
    """
    if not 0 < confidence_quantile <= 1:
        raise ValueError("confidence_quantile must lie in (0, 1]")
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    config = _resolved(config, split)
    training_set = list(split.labeled)
    remaining = list(range(len(split.unlabeled)))
    pseudo = [-1] * len(split.unlabeled)

    model = _fit(training_set, split, config)
    rounds = 0
    while remaining and rounds < max_rounds:
        X = as_matrix([split.unlabeled[i] for i in remaining], split.dim)
        confidence = confidence_scores(model, X)
        predicted = predict_classes(model, X)
        take = max(1, math.floor(confidence_quantile * len(remaining)))
        picked = set(np.argsort(-confidence, kind="stable")[:take].tolist())
        for pos in sorted(picked):
            idx = remaining[pos]
            pseudo[idx] = int(predicted[pos])
            training_set.append(Sample(features=split.unlabeled[idx].features, label=pseudo[idx]))
        remaining = [idx for pos, idx in enumerate(remaining) if pos not in picked]
        rounds += 1
        model = _fit(training_set, split, config)
        logger.debug(f"self-training round {rounds}: {len(picked)} added, {len(remaining)} left")

    return _finish(
        "self-training", split, config, model, training_set,
        pseudo_labels=pseudo,
        method_params={"confidence_quantile": confidence_quantile, "max_rounds": max_rounds, "rounds": rounds},
    )


def self_training_pipeline(
    split: SplitDataset,
    config: PipelineConfig,
    confidence_quantile: float = 0.1,
    max_rounds: int = 50,
) -> ExperimentReport:
    return run_self_training(split, config, confidence_quantile, max_rounds).report


# --- 5. Supervised lower bound ---
def run_supervised(split: SplitDataset, config: PipelineConfig) -> PipelineResult:
    config = _resolved(config, split)
    training_set = list(split.labeled)
    model = _fit(training_set, split, config)
    return _finish("supervised", split, config, model, training_set)


def supervised_svm_baseline(split: SplitDataset, config: PipelineConfig) -> ExperimentReport:
    return run_supervised(split, config).report


def run_pipeline(
    method: Method,
    split: SplitDataset,
    config: PipelineConfig,
    confidence_quantile: float = 0.1,
    max_rounds: int = 50,
) -> PipelineResult:
    if method == "pnn-training":
        return run_pnn_training(split, config)
    if method == "self-training":
        return run_self_training(split, config, confidence_quantile, max_rounds)
    if method == "supervised":
        return run_supervised(split, config)
    raise ValueError(f"unknown method {method!r}")
