"""
Dataset construction: two-moons generator, USPS / generic labeled-file loading and
seeded labeled / unlabeled / test splitting.

Every random draw goes through `make_rng`, a numpy Generator over PCG64, so equal
(inputs, seed) give equal outputs on every platform numpy supports.
"""
import gzip
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import (
    BadArgumentsError,
    DatasetDimensionError,
    DatasetError,
    DatasetParseError,
    InsufficientSamplesError,
    UnknownLabelError,
)
from app.schemas import Sample, SplitDataset

logger = logging.getLogger(__name__)

USPS_DIM = 256
USPS_CLASSES = 10

PathLike = Union[str, Path]


# --- 1. Random streams ---
def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, stream: int) -> int:
    """Independent 64-bit seed for sub-stream `stream` of `seed`."""
    state = np.random.SeedSequence([seed, stream]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def as_matrix(samples: Sequence[Sample], dim: int = 0) -> np.ndarray:
    if not samples:
        return np.zeros((0, dim))
    return np.asarray([s.features for s in samples], dtype=np.float64)


def as_labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.asarray([s.label for s in samples], dtype=np.int64)


# --- 2. Two moons ---
def generate_two_moons(n_per_class: int, noise_std: float = 0.1, seed: int = 0) -> List[Sample]:
    """
    Interleaving half circles: class 0 is (cos t, sin t), class 1 is
    (1 - cos t, 0.5 - sin t), with t evenly spaced on [0, pi] and isotropic
    Gaussian noise of standard deviation `noise_std` added to every coordinate.
    Class 0 samples come first.
    """
    if n_per_class < 1:
        raise BadArgumentsError("n_per_class must be at least 1")
    if noise_std < 0 or not math.isfinite(noise_std):
        raise BadArgumentsError("noise_std must be a finite non-negative number")

    t = np.linspace(0.0, np.pi, n_per_class)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    points = np.vstack([upper, lower])
    if noise_std > 0:
        points = points + make_rng(seed).normal(0.0, noise_std, size=points.shape)

    labels = [0] * n_per_class + [1] * n_per_class
    return [Sample(features=tuple(p), label=c) for p, c in zip(points.tolist(), labels)]


# --- 3. Labeled files (dense and sparse text, optionally gzipped) ---
def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return path.open("r", encoding="utf-8")


def _parse_label(token: str, line_no: int, offset: int, num_classes: Optional[int]) -> int:
    try:
        value = float(token)
    except ValueError:
        raise DatasetParseError(f"label {token!r} is not a number", line_no)
    if not value.is_integer():
        raise UnknownLabelError(token, line_no)
    label = int(value) - offset
    if label < 0 or (num_classes is not None and label >= num_classes):
        raise UnknownLabelError(token, line_no)
    return label


def _parse_dense(tokens: List[str], line_no: int) -> List[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise DatasetParseError(str(exc), line_no)


def _parse_sparse(tokens: List[str], line_no: int, dim: Optional[int]) -> Dict[int, float]:
    entries = {}
    for token in tokens:
        idx, sep, val = token.partition(":")
        if not sep:
            raise DatasetParseError(f"expected idx:val, got {token!r}", line_no)
        try:
            index, value = int(idx), float(val)
        except ValueError:
            raise DatasetParseError(f"bad sparse entry {token!r}", line_no)
        if index < 1:
            raise DatasetParseError(f"sparse indices are 1-based, got {index}", line_no)
        if dim is not None and index > dim:
            raise DatasetDimensionError(f"index {index} exceeds dimension {dim}", line_no)
        entries[index - 1] = value
    return entries


def load_labeled_file(
    path: PathLike,
    dim: Optional[int] = None,
    num_classes: Optional[int] = None,
    label_offset: int = 0,
) -> List[Sample]:
    """
    Reads `label v1 v2 ...` (dense) or `label idx:val ...` (sparse, 1-based) records.
    The format is detected from the first record. Without an explicit `dim`, dense
    files take it from the first record and sparse files from the largest index.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")

    records: List[Tuple[int, int, list]] = []
    sparse = None
    # label-only records read before the format is known; valid only in sparse files
    label_only: List[int] = []
    try:
        with _open_text(path) as fh:
            for line_no, raw in enumerate(fh, start=1):
                tokens = raw.split()
                if not tokens:
                    continue
                label = _parse_label(tokens[0], line_no, label_offset, num_classes)
                if len(tokens) == 1:
                    if sparse is False:
                        raise DatasetParseError("record has no feature values", line_no)
                    if sparse is None:
                        label_only.append(line_no)
                    records.append((line_no, label, {}))
                    continue
                if sparse is None:
                    sparse = any(":" in t for t in tokens[1:])
                    if not sparse and label_only:
                        raise DatasetParseError("record has no feature values", label_only[0])
                if sparse:
                    records.append((line_no, label, _parse_sparse(tokens[1:], line_no, dim)))
                else:
                    values = _parse_dense(tokens[1:], line_no)
                    if dim is None:
                        dim = len(values)
                    if len(values) != dim:
                        raise DatasetDimensionError(f"expected {dim} values, got {len(values)}", line_no)
                    records.append((line_no, label, values))
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"could not read {path}: {exc}")

    if not records:
        raise DatasetParseError(f"no records in {path}", 0)
    if sparse is None:
        raise DatasetParseError(f"no feature values in {path}", records[0][0])

    if sparse:
        if dim is None:
            dim = max((max(r[2], default=-1) for r in records), default=-1) + 1
        if dim < 1:
            raise DatasetDimensionError(f"no feature values in {path}")
        dense_records = []
        for line_no, label, entries in records:
            row = [0.0] * dim
            for index, value in entries.items():
                row[index] = value
            dense_records.append((line_no, label, row))
        records = dense_records

    samples = []
    for line_no, label, values in records:
        if not all(math.isfinite(v) for v in values):
            raise DatasetParseError("non-finite feature value", line_no)
        samples.append(Sample(features=tuple(values), label=label))
    logger.info(f"Loaded {len(samples)} samples of dimension {dim} from {path} ({'sparse' if sparse else 'dense'})")
    return samples


def _rescale(samples: List[Sample], lo: float, hi: float) -> List[Sample]:
    span = hi - lo
    out = []
    for s in samples:
        v = np.clip(2.0 * (np.asarray(s.features) - lo) / span - 1.0, -1.0, 1.0)
        out.append(Sample(features=tuple(v.tolist()), label=s.label))
    return out


def load_usps(path_train: PathLike, path_test: PathLike, label_offset: int = 0) -> Tuple[List[Sample], List[Sample]]:
    """
    Loads the USPS train/test files (256 features, digits 0..9).
    Unless the training values already span exactly [-1, 1], both files are mapped
    linearly onto [-1, 1] with the min/max of the training file.
    """
    train = load_labeled_file(path_train, dim=USPS_DIM, num_classes=USPS_CLASSES, label_offset=label_offset)
    test = load_labeled_file(path_test, dim=USPS_DIM, num_classes=USPS_CLASSES, label_offset=label_offset)

    X = as_matrix(train)
    lo, hi = float(X.min()), float(X.max())
    if (lo, hi) != (-1.0, 1.0) and hi > lo:
        logger.warning(f"USPS values span [{lo}, {hi}]; rescaling to [-1, 1]")
        train, test = _rescale(train, lo, hi), _rescale(test, lo, hi)
    return train, test


# --- 4. Semi-supervised split ---
def _fraction_counts(class_sizes: Dict[int, int], fraction: float) -> Dict[int, int]:
    """Floor per class, hand the remainder to the largest classes, keep at least one each."""
    total = sum(class_sizes.values())
    counts = {c: max(1, math.floor(fraction * n)) for c, n in class_sizes.items()}
    remainder = round(fraction * total) - sum(counts.values())
    by_size = sorted(class_sizes, key=lambda c: (-class_sizes[c], c))
    i = 0
    while remainder > 0 and any(counts[c] < class_sizes[c] for c in by_size):
        c = by_size[i % len(by_size)]
        if counts[c] < class_sizes[c]:
            counts[c] += 1
            remainder -= 1
        i += 1
    return counts


def split_semi_supervised(
    data: Sequence[Sample],
    labeled_per_class: Optional[int] = None,
    labeled_fraction: Optional[float] = None,
    seed: int = 0,
    test: Optional[Sequence[Sample]] = None,
    num_classes: Optional[int] = None,
) -> SplitDataset:
    """
    Draws the labeled set per class (exact count, or a stratified fraction) and strips
    the labels of everything else into the unlabeled pool. `test` is the held-out set.
    Splits keep the input order of the samples they hold.
    """
    if (labeled_per_class is None) == (labeled_fraction is None):
        raise BadArgumentsError("give exactly one of labeled_per_class or labeled_fraction")
    if labeled_fraction is not None and not 0 < labeled_fraction <= 1:
        raise BadArgumentsError("labeled_fraction must lie in (0, 1]")
    if not data:
        raise BadArgumentsError("cannot split an empty dataset")
    if any(s.label is None for s in data):
        raise BadArgumentsError("every sample to split needs a label")

    labels = [s.label for s in data]
    if num_classes is None:
        num_classes = max(labels) + 1
    if num_classes < 2:
        raise BadArgumentsError("a split needs at least two classes")
    if max(labels) >= num_classes:
        raise BadArgumentsError(f"label {max(labels)} outside 0..{num_classes - 1}")
    by_class: Dict[int, List[int]] = {c: [] for c in range(num_classes)}
    for i, label in enumerate(labels):
        by_class[label].append(i)
    for c, members in by_class.items():
        if not members:
            raise InsufficientSamplesError(c, 0, labeled_per_class or 1)

    if labeled_per_class is not None:
        wanted = {c: labeled_per_class for c in by_class}
    else:
        wanted = _fraction_counts({c: len(m) for c, m in by_class.items()}, labeled_fraction)

    rng = make_rng(seed)
    chosen = set()
    for c in range(num_classes):
        members = by_class[c]
        if wanted[c] > len(members):
            raise InsufficientSamplesError(c, len(members), wanted[c])
        picks = rng.permutation(len(members))[: wanted[c]]
        chosen.update(members[int(p)] for p in picks)

    labeled_idx = tuple(i for i in range(len(data)) if i in chosen)
    unlabeled_idx = tuple(i for i in range(len(data)) if i not in chosen)
    split = SplitDataset.build(
        labeled=[data[i] for i in labeled_idx],
        unlabeled=[data[i].unlabeled() for i in unlabeled_idx],
        test=list(test or []),
        num_classes=num_classes,
        dim=data[0].dim,
        labeled_indices=labeled_idx,
        unlabeled_indices=unlabeled_idx,
        unlabeled_truth=tuple(labels[i] for i in unlabeled_idx),
    )
    logger.info(
        f"Split {len(data)} samples: {len(labeled_idx)} labeled, {len(unlabeled_idx)} unlabeled, "
        f"{len(split.test)} test, seed {seed}"
    )
    return split


def audit_unlabeled_truth(split: SplitDataset) -> Tuple[int, ...]:
    """Ground-truth labels of the unlabeled pool. Reporting code only."""
    return split._unlabeled_truth
