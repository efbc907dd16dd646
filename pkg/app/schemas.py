import math
from typing import ClassVar, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from app.core.config import settings

Method = Literal["pnn-training", "self-training", "supervised"]
Experiment = Literal["two-moons", "usps", "custom-file"]


# --- 1. Samples & Splits ---
class Sample(BaseModel):
    model_config = ConfigDict(frozen=True)

    features: Tuple[float, ...]
    label: Optional[int] = Field(default=None, ge=0)

    @field_validator("features")
    @classmethod
    def finite_and_non_empty(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not v:
            raise ValueError("features cannot be empty")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("features must be finite")
        return v

    @property
    def dim(self) -> int:
        return len(self.features)

    def unlabeled(self) -> "Sample":
        return Sample.model_construct(features=self.features, label=None)


class SplitDataset(BaseModel):
    """
    Labeled / unlabeled / test partition of one dataset.
    The unlabeled pool carries no labels; its ground truth is kept in a private
    attribute that only `dataset.audit_unlabeled_truth` reads.
    """
    labeled: List[Sample]
    unlabeled: List[Sample]
    test: List[Sample]
    num_classes: int = Field(ge=2)
    dim: int = Field(ge=1)
    labeled_indices: Tuple[int, ...] = ()
    unlabeled_indices: Tuple[int, ...] = ()

    _unlabeled_truth: Tuple[int, ...] = PrivateAttr(default=())

    @model_validator(mode="after")
    def check_partition(self) -> "SplitDataset":
        for name in ("labeled", "test"):
            for s in getattr(self, name):
                if s.label is None or s.label >= self.num_classes:
                    raise ValueError(f"{name} sample with invalid label {s.label}")
        if any(s.label is not None for s in self.unlabeled):
            raise ValueError("unlabeled pool must not carry labels")
        for s in (*self.labeled, *self.unlabeled, *self.test):
            if s.dim != self.dim:
                raise ValueError(f"sample of dimension {s.dim} in a dataset of dimension {self.dim}")
        present = {s.label for s in self.labeled}
        missing = [c for c in range(self.num_classes) if c not in present]
        if missing:
            raise ValueError(f"labeled set has no sample of class {missing[0]}")
        if set(self.labeled_indices) & set(self.unlabeled_indices):
            raise ValueError("labeled and unlabeled splits overlap")
        return self

    @classmethod
    def build(cls, unlabeled_truth: Tuple[int, ...] = (), **fields) -> "SplitDataset":
        split = cls(**fields)
        if unlabeled_truth and len(unlabeled_truth) != len(split.unlabeled):
            raise ValueError("ground truth does not match the unlabeled pool")
        split._unlabeled_truth = tuple(unlabeled_truth)
        return split


# --- 2. Model configuration ---
class KernelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["linear", "rbf"] = "rbf"
    # None means 1/d, resolved once the data dimension is known
    gamma: Optional[float] = Field(default=None, gt=0, allow_inf_nan=False)

    def resolved(self, dim: int) -> "KernelSpec":
        if self.family == "rbf" and self.gamma is None:
            return KernelSpec(family="rbf", gamma=1.0 / dim)
        return self


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(default=settings.DEFAULT_SIGMA, gt=0, allow_inf_nan=False)
    sigma_grid: Optional[Tuple[float, ...]] = None
    center_features: bool = settings.PNN_CENTER_FEATURES
    kernel: KernelSpec = KernelSpec()
    c: float = Field(default=settings.DEFAULT_C, gt=0, allow_inf_nan=False)
    tol: float = Field(default=settings.DEFAULT_TOL, gt=0)
    max_iter: Optional[int] = Field(default=None, gt=0)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    debug: bool = False

    @field_validator("sigma_grid")
    @classmethod
    def positive_grid(cls, v):
        if v is not None and (not v or any(s <= 0 for s in v)):
            raise ValueError("sigma grid must hold positive values")
        return v


# --- 3. Classifier outputs ---
class CategoryScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    g: Tuple[float, ...]
    predicted: int = Field(ge=0)


class SolverDiagnostics(BaseModel):
    model_config = ConfigDict(frozen=True)

    iterations: int
    kkt_gap: float
    objective: float
    converged: bool
    n_support: int


# --- 4. Experiment reports ---
class CountsSummary(BaseModel):
    labeled: int
    unlabeled: int
    test: int
    num_classes: int
    dim: int


class ExperimentReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: Method
    test_error_percent: float = Field(ge=0, le=100)
    counts: CountsSummary
    config: PipelineConfig
    seed: int
    confusion: List[List[int]]
    method_params: Dict[str, Union[int, float]] = {}
    pseudo_label_accuracy: Optional[float] = None
    pseudo_labels: List[int] = []
    pseudo_scores: List[List[float]] = []
    solver: List[SolverDiagnostics] = []
    slack: Optional[List[float]] = None

    @model_validator(mode="after")
    def error_matches_confusion(self) -> "ExperimentReport":
        total = sum(sum(row) for row in self.confusion)
        wrong = total - sum(self.confusion[i][i] for i in range(len(self.confusion)))
        if total != self.counts.test:
            raise ValueError("confusion matrix does not cover the test set")
        if total and abs(100.0 * wrong / total - self.test_error_percent) > 1e-9:
            raise ValueError("test error does not match the confusion matrix")
        return self

    @property
    def converged(self) -> bool:
        return all(d.converged for d in self.solver)

    def outcome(self) -> dict:
        """Everything except the fields naming the method that produced it."""
        return self.model_dump(exclude={"method", "method_params"})

    def to_document(self) -> str:
        return self.model_dump_json(indent=2)

    CSV_HEADER: ClassVar[str] = "method,seed,error_percent,labeled,unlabeled,test,num_classes,dim,sigma,c,gamma,converged"

    def to_csv_row(self) -> str:
        gamma = "" if self.config.kernel.gamma is None else repr(self.config.kernel.gamma)
        return ",".join([
            self.method, str(self.seed), repr(self.test_error_percent),
            str(self.counts.labeled), str(self.counts.unlabeled), str(self.counts.test),
            str(self.counts.num_classes), str(self.counts.dim),
            repr(self.config.sigma), repr(self.config.c), gamma,
            "1" if self.converged else "0",
        ])


# --- 5. CLI run specification ---
class RunSpec(BaseModel):
    experiment: Experiment
    method: Method = "pnn-training"

    sigma: float = Field(default=settings.DEFAULT_SIGMA, gt=0, allow_inf_nan=False)
    sigma_grid: Optional[Tuple[float, ...]] = None
    center_features: bool = settings.PNN_CENTER_FEATURES
    kernel: Literal["linear", "rbf"] = "rbf"
    c: float = Field(default=settings.DEFAULT_C, gt=0, allow_inf_nan=False)
    gamma: Optional[float] = Field(default=None, gt=0, allow_inf_nan=False)
    tol: float = Field(default=settings.DEFAULT_TOL, gt=0)
    max_iter: Optional[int] = Field(default=None, gt=0)

    labeled_per_class: Optional[int] = Field(default=None, ge=1)
    labeled_fraction: Optional[float] = Field(default=None, gt=0, le=1)
    n_per_class: int = Field(default=50, ge=1)
    test_per_class: int = Field(default=500, ge=1)
    noise_std: float = Field(default=0.1, ge=0, allow_inf_nan=False)

    train_path: Optional[str] = None
    test_path: Optional[str] = None
    label_offset: int = 0

    confidence_quantile: float = Field(default=0.1, gt=0, le=1)
    max_rounds: int = Field(default=50, ge=1)

    seed: int = Field(default=1, ge=0)
    repeats: Optional[int] = Field(default=None, ge=1)
    output_dir: str = settings.OUTPUT_DIR
    run_name: Optional[str] = None
    strict: bool = False
    workers: int = Field(default=settings.WORKERS, ge=1)
    debug: bool = False

    @model_validator(mode="after")
    def fill_experiment_defaults(self) -> "RunSpec":
        if self.labeled_per_class is not None and self.labeled_fraction is not None:
            raise ValueError("give either labeled_per_class or labeled_fraction, not both")
        if self.labeled_per_class is None and self.labeled_fraction is None:
            if self.experiment == "two-moons":
                self.labeled_per_class = 10
            else:
                self.labeled_fraction = 0.10
        if self.repeats is None:
            self.repeats = 20 if self.experiment == "two-moons" else 1
        if self.experiment == "custom-file" and not self.train_path:
            raise ValueError("custom-file experiments need a train path")
        return self

    def pipeline_config(self, seed: int) -> PipelineConfig:
        return PipelineConfig(
            sigma=self.sigma,
            sigma_grid=self.sigma_grid,
            center_features=self.center_features,
            kernel=KernelSpec(family=self.kernel, gamma=self.gamma),
            c=self.c,
            tol=self.tol,
            max_iter=self.max_iter,
            seed=seed,
            workers=self.workers,
            debug=self.debug,
        )

    def dataset_key(self) -> tuple:
        """Fields that must agree for two specs to see the same splits."""
        return (
            self.experiment, self.labeled_per_class, self.labeled_fraction,
            self.n_per_class, self.test_per_class, self.noise_std,
            self.train_path, self.test_path, self.label_offset,
        )
