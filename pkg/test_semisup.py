from unittest.mock import patch

import numpy as np
import pytest

from app.schemas import KernelSpec, PipelineConfig, Sample, SplitDataset
from app.service import dataset, semisup
from app.service.dataset import split_semi_supervised
from app.service.semisup import (
    evaluate,
    pnn_pseudo_label,
    pnn_training_pipeline,
    run_pipeline,
    run_pnn_training,
    run_self_training,
    self_training_pipeline,
    supervised_svm_baseline,
)

METHODS = ("pnn-training", "self-training", "supervised")


def blobs(centers, n_per_class, std, seed):
    rng = np.random.default_rng(seed)
    samples = []
    for label, center in enumerate(centers):
        for point in rng.normal(center, std, size=(n_per_class, len(center))):
            samples.append(Sample(features=tuple(point.tolist()), label=label))
    return samples


def blob_split(labeled_per_class=5, centers=((5.0, 0.0), (0.0, 5.0)), seed=1):
    train = blobs(centers, 50, 0.1, seed)
    test = blobs(centers, 20, 0.1, seed + 100)
    return split_semi_supervised(train, labeled_per_class=labeled_per_class, seed=seed, test=test)


def with_truth(split, truth):
    return SplitDataset.build(unlabeled_truth=tuple(truth), **dict(split))


@pytest.fixture
def split():
    return blob_split()


@pytest.fixture
def config():
    return PipelineConfig(sigma=1.0, seed=1)


# --- 1. Evaluation ---
def test_evaluate_counts_errors():
    test = [Sample(features=(1.0,), label=0)] * 1000 + [Sample(features=(1.0,), label=1)] * 1007
    predictions = [1] * 149 + [0] * 851 + [1] * 1007
    error, confusion = evaluate(predictions, test, num_classes=2)
    assert round(error, 2) == 7.42
    assert error == pytest.approx(100 * 149 / 2007)
    assert confusion == [[851, 149], [0, 1007]]


def test_evaluate_extremes():
    test = [Sample(features=(1.0,), label=c) for c in (0, 1, 1)]
    assert evaluate([0, 1, 1], test)[0] == 0.0
    assert evaluate([1, 0, 0], test)[0] == 100.0


def test_evaluate_rejects_empty_test_set():
    with pytest.raises(ValueError):
        evaluate([], [])


# --- 2. PNN-Training ---
def test_pseudo_labeling_keeps_labels_and_covers_the_pool(split, config):
    training_set, scores, sigma = pnn_pseudo_label(split, config)
    assert len(training_set) == len(split.labeled) + len(split.unlabeled)
    assert training_set[: len(split.labeled)] == split.labeled
    assert [s.features for s in training_set[len(split.labeled):]] == [s.features for s in split.unlabeled]
    assert all(s.label is not None for s in training_set)
    assert len(scores) == len(split.unlabeled)
    assert sigma == config.sigma


def test_pnn_training_on_separated_blobs(split, config):
    report = pnn_training_pipeline(split, config)
    assert report.method == "pnn-training"
    assert report.pseudo_label_accuracy == 100.0
    assert report.test_error_percent == 0.0
    assert report.counts.labeled == 10
    assert report.counts.unlabeled == 90
    assert report.config.kernel.gamma == 0.5
    assert report.converged


def test_pnn_training_three_classes(config):
    three = blob_split(centers=((5.0, 0.0, 0.0), (0.0, 5.0, 0.0), (0.0, 0.0, 5.0)))
    report = pnn_training_pipeline(three, config)
    assert report.counts.num_classes == 3
    assert len(report.solver) == 3
    assert report.test_error_percent == 0.0


def test_sigma_grid_choice_is_recorded(split):
    report = pnn_training_pipeline(split, PipelineConfig(sigma_grid=(0.3, 0.5), seed=1))
    assert report.config.sigma in (0.3, 0.5)


def test_pipelines_are_deterministic(split, config):
    for method in METHODS:
        first = run_pipeline(method, split, config).report.to_document()
        assert run_pipeline(method, split, config).report.to_document() == first


# --- 3. Audit separation ---
def test_scrambled_truth_changes_only_the_audit(split, config):
    truth = dataset.audit_unlabeled_truth(split)
    scrambled = with_truth(split, [1 - t for t in truth])
    honest = run_pnn_training(split, config).report
    lying = run_pnn_training(scrambled, config).report
    assert honest.pseudo_label_accuracy == 100.0
    assert lying.pseudo_label_accuracy == 0.0
    strip = lambda r: {k: v for k, v in r.outcome().items() if k != "pseudo_label_accuracy"}
    assert strip(honest) == strip(lying)


def test_ground_truth_is_read_after_training(split, config):
    calls = []
    real_train, real_audit = semisup.train_svm, semisup.audit_unlabeled_truth
    with patch("app.service.semisup.train_svm", side_effect=lambda *a, **k: calls.append("train") or real_train(*a, **k)), \
            patch("app.service.semisup.audit_unlabeled_truth", side_effect=lambda s: calls.append("audit") or real_audit(s)):
        run_self_training(split, config, confidence_quantile=0.5, max_rounds=3)
    assert calls.count("audit") == 1
    assert calls[-1] == "audit"


# --- 4. Baselines ---
def test_self_training_on_separated_blobs(split, config):
    report = self_training_pipeline(split, config, confidence_quantile=0.2, max_rounds=50)
    assert report.method == "self-training"
    assert report.test_error_percent == 0.0
    assert report.pseudo_label_accuracy == 100.0
    assert all(p >= 0 for p in report.pseudo_labels)
    assert report.method_params["rounds"] <= 50


def test_self_training_whole_pool_in_one_round(split, config):
    result = run_self_training(split, config, confidence_quantile=1.0, max_rounds=5)
    assert result.report.method_params["rounds"] == 1
    assert all(p >= 0 for p in result.pseudo_labels)


def test_self_training_stops_at_round_limit(split, config):
    result = run_self_training(split, config, confidence_quantile=0.1, max_rounds=2)
    assert result.report.method_params["rounds"] == 2
    assert sum(1 for p in result.pseudo_labels if p >= 0) == 9 + 8


def test_supervised_with_one_label_per_class(config):
    report = supervised_svm_baseline(blob_split(labeled_per_class=1), config)
    assert 0.0 <= report.test_error_percent <= 100.0
    assert report.pseudo_label_accuracy is None
    assert report.pseudo_labels == []


def test_empty_pool_makes_every_method_supervised(config):
    full = blob_split(labeled_per_class=50)
    outcomes = [run_pipeline(m, full, config).report.outcome() for m in METHODS]
    assert outcomes[0] == outcomes[1] == outcomes[2]


def test_supervised_never_beats_pnn_training_on_easy_data(config):
    for seed in range(20):
        s = blob_split(seed=seed)
        trial = config.model_copy(update={"seed": seed})
        supervised = supervised_svm_baseline(s, trial).test_error_percent
        assert supervised >= pnn_training_pipeline(s, trial).test_error_percent


def test_debug_mode_reports_slack(split):
    report = pnn_training_pipeline(split, PipelineConfig(seed=1, debug=True, kernel=KernelSpec(family="linear")))
    assert report.slack is not None and len(report.slack) == 1
    assert report.slack[0] >= 0.0


def test_fully_labeled_noiseless_moons_are_separated():
    data = dataset.generate_two_moons(50, noise_std=0.0, seed=0)
    full = split_semi_supervised(data, labeled_per_class=50, seed=0, test=data)
    hard_margin = PipelineConfig(c=1e6, kernel=KernelSpec(family="rbf", gamma=10.0), max_iter=200000)
    report = supervised_svm_baseline(full, hard_margin)
    assert report.converged
    assert report.test_error_percent == 0.0


# --- 5. Feature centering for the PNN pass ---
def test_centering_separates_blobs_that_share_a_direction():
    shifted = blob_split(centers=((10.0, 0.0), (12.0, 0.0)))
    centered = run_pnn_training(shifted, PipelineConfig(sigma=1.0, seed=1)).report
    raw = run_pnn_training(shifted, PipelineConfig(sigma=1.0, seed=1, center_features=False)).report
    assert centered.config.center_features
    assert centered.pseudo_label_accuracy == 100.0
    assert raw.pseudo_label_accuracy < 90.0


def test_centering_leaves_the_svm_inputs_alone(config):
    shifted = blob_split(centers=((10.0, 0.0), (12.0, 0.0)))
    training_set, _, _ = pnn_pseudo_label(shifted, config)
    assert training_set[: len(shifted.labeled)] == shifted.labeled
    assert [s.features for s in training_set[len(shifted.labeled):]] == [s.features for s in shifted.unlabeled]
