"""
Parzen probabilistic neural network.

Training stores each unit-normalized labeled pattern as a pattern unit. A test
vector x is normalized too; pattern k emits exp((w_k . x - 1) / sigma^2), which
for unit vectors equals exp(-|x - w_k|^2 / (2 sigma^2)), and each category unit
sums the emissions of its patterns.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

import numpy as np

from app.core.errors import DimensionMismatchError, SemiSupError, ZeroVectorError
from app.models import PnnModel
from app.schemas import CategoryScores, Sample

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-12
# category sums this close to the maximum (relative) count as tied
TIE_RTOL = 1e-9


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm < ZERO_NORM:
        raise ZeroVectorError("cannot normalize a zero-norm vector")
    return v / norm


def pnn_train(labeled: Sequence[Sample], sigma: float, num_classes: int) -> PnnModel:
    """Single pass: w_j <- x_j / |x_j|, category of pattern j <- label of sample j."""
    if not labeled:
        raise ValueError("cannot train a PNN without labeled samples")
    rows = []
    for j, sample in enumerate(labeled):
        if sample.label is None or sample.label >= num_classes:
            raise ValueError(f"sample {j}: label {sample.label} outside 0..{num_classes - 1}")
        try:
            rows.append(normalize(sample.features))
        except ZeroVectorError:
            raise ZeroVectorError("zero-norm training pattern", index=j)
    model = PnnModel(
        weights=np.vstack(rows),
        categories=np.asarray([s.label for s in labeled]),
        sigma=float(sigma),
        num_classes=num_classes,
    )
    logger.debug(f"PNN stores {model.n_patterns} patterns, sigma={sigma}")
    return model


def _activations(model: PnnModel, x) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DimensionMismatchError(model.dim, x.size)
    z = model.weights @ normalize(x)
    return z, (z - 1.0) / model.sigma ** 2


def first_max(scores: np.ndarray) -> np.ndarray:
    """Index of the first entry within TIE_RTOL of the maximum, along the last axis."""
    top = scores.max(axis=-1, keepdims=True)
    return np.argmax(scores >= top * (1.0 - TIE_RTOL), axis=-1)


def pnn_classify(model: PnnModel, x) -> CategoryScores:
    """
    g_c = sum over patterns of class c of exp((z_k - 1) / sigma^2).
    The argmax is taken on the max-shifted sums so it survives underflow of every
    g_c at tiny sigma; sums within a relative 1e-9 of the largest are ties, and ties
    go to the lowest class id.
    """
    z, exponent = _activations(model, x)
    g = np.bincount(model.categories, weights=np.exp(exponent), minlength=model.num_classes)
    shifted = np.bincount(
        model.categories, weights=np.exp(exponent - exponent.max()), minlength=model.num_classes
    )
    return CategoryScores(g=tuple(g.tolist()), predicted=int(first_max(shifted)))


def pnn_classify_batch(model: PnnModel, xs: Sequence, workers: int = 1) -> List[CategoryScores]:
    """Order-preserving map of `pnn_classify`; a failing element is reported with its index."""

    def classify_one(item):
        i, x = item
        try:
            return pnn_classify(model, x)
        except ZeroVectorError:
            raise ZeroVectorError("zero-norm input", index=i)
        except DimensionMismatchError:
            raise DimensionMismatchError(model.dim, np.asarray(x).size, index=i)

    items = list(enumerate(xs))
    if workers <= 1 or len(items) < 2:
        return [classify_one(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(classify_one, items))


def select_sigma_loo(labeled: Sequence[Sample], grid: Sequence[float], num_classes: int) -> float:
    """
    Leave-one-out choice of sigma on the labeled set: each pattern is classified by
    all the others. Fewest errors wins; ties go to the earlier grid entry.
    """
    if not grid:
        raise SemiSupError("empty sigma grid")
    if len(labeled) < 2:
        return float(grid[0])
    base = pnn_train(labeled, sigma=grid[0], num_classes=num_classes)
    Z = base.weights @ base.weights.T
    labels = base.categories
    n = len(labels)

    best_sigma, best_errors = float(grid[0]), None
    for sigma in grid:
        exponent = (Z - 1.0) / sigma ** 2
        np.fill_diagonal(exponent, -np.inf)
        exponent = exponent - exponent.max(axis=1, keepdims=True)
        emissions = np.exp(exponent)
        g = np.zeros((n, num_classes))
        for c in range(num_classes):
            g[:, c] = emissions[:, labels == c].sum(axis=1)
        errors = int(np.sum(first_max(g) != labels))
        logger.info(f"sigma={sigma}: {errors}/{n} leave-one-out errors")
        if best_errors is None or errors < best_errors:
            best_sigma, best_errors = float(sigma), errors
    return best_sigma
