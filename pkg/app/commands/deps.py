import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import ValidationError

from app.core.config import parse_sigma_grid, settings
from app.core.errors import BadArgumentsError, DatasetError
from app.schemas import RunSpec, Sample, SplitDataset
from app.service.dataset import (
    USPS_CLASSES,
    derive_seed,
    generate_two_moons,
    load_labeled_file,
    load_usps,
    split_semi_supervised,
)

logger = logging.getLogger(__name__)

TEST_STREAM = 1


# --- 1. Spec files & precedence (flags > file > defaults) ---
def read_spec_file(path: str) -> Dict[str, str]:
    """Flat `key=value` lines; `#` starts a comment, dashes in keys read as underscores."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BadArgumentsError(f"cannot read spec file {path}: {exc}")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise BadArgumentsError(f"{path}:{line_no}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def build_run_spec(file_values: Optional[Dict[str, str]] = None, **flags) -> RunSpec:
    merged = dict(file_values or {})
    merged.update({k: v for k, v in flags.items() if v is not None})
    grid = merged.get("sigma_grid")
    try:
        if isinstance(grid, str):
            merged["sigma_grid"] = parse_sigma_grid(grid)
        return RunSpec(**merged)
    except (ValidationError, ValueError, TypeError) as exc:
        raise BadArgumentsError(f"invalid run specification: {exc}")


# --- 2. Data for one trial ---
def dataset_paths(spec: RunSpec) -> Tuple[Path, Optional[Path]]:
    data_dir = Path(settings.USPS_DATA_DIR)
    if spec.experiment == "usps":
        train = Path(spec.train_path) if spec.train_path else data_dir / "usps"
        test = Path(spec.test_path) if spec.test_path else data_dir / "usps.t"
        return train, test
    train = Path(spec.train_path)
    if not train.is_absolute() and not train.exists():
        train = data_dir / train
    test = None
    if spec.test_path:
        test = Path(spec.test_path)
        if not test.is_absolute() and not test.exists():
            test = data_dir / test
    return train, test


class TrialData:
    """Loads file-backed datasets once and hands out a seeded split per trial."""

    def __init__(self, spec: RunSpec):
        self.spec = spec
        self._files: Optional[Tuple[List[Sample], List[Sample], Optional[int]]] = None
        self._lock = threading.Lock()

    def _load_files(self) -> Tuple[List[Sample], List[Sample], Optional[int]]:
        with self._lock:
            if self._files is None:
                self._files = self._read_files()
        return self._files

    def _read_files(self) -> Tuple[List[Sample], List[Sample], Optional[int]]:
        train_path, test_path = dataset_paths(self.spec)
        if self.spec.experiment == "usps":
            train, test = load_usps(train_path, test_path, label_offset=self.spec.label_offset)
            return train, test, USPS_CLASSES
        if test_path is None:
            raise BadArgumentsError("custom-file experiments need a test file")
        train = load_labeled_file(train_path, label_offset=self.spec.label_offset)
        test = load_labeled_file(test_path, dim=train[0].dim, label_offset=self.spec.label_offset)
        num_classes = max(s.label for s in train + test) + 1
        return train, test, num_classes

    def split(self, trial_seed: int) -> SplitDataset:
        spec = self.spec
        if spec.experiment == "two-moons":
            train = generate_two_moons(spec.n_per_class, spec.noise_std, trial_seed)
            test = generate_two_moons(spec.test_per_class, spec.noise_std, derive_seed(trial_seed, TEST_STREAM))
            num_classes = 2
        else:
            train, test, num_classes = self._load_files()
            if any(s.dim != train[0].dim for s in test):
                raise DatasetError("train and test files differ in dimension")
        return split_semi_supervised(
            train,
            labeled_per_class=spec.labeled_per_class,
            labeled_fraction=spec.labeled_fraction,
            seed=trial_seed,
            test=test,
            num_classes=num_classes,
        )


def trial_seeds(spec: RunSpec) -> List[int]:
    return [spec.seed + t for t in range(spec.repeats)]
