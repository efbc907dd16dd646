from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from app.schemas import KernelSpec, SolverDiagnostics


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# --- 1. Parzen network ---
@dataclass(frozen=True)
class PnnModel:
    """
    Stored pattern units of a trained PNN.
    Row j of `weights` is the unit-normalized training vector w_j; `categories[j]`
    is the class unit that pattern j feeds.
    """
    weights: np.ndarray
    categories: np.ndarray
    sigma: float
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, np.float64))
        object.__setattr__(self, "categories", _frozen(self.categories, np.int64))
        if self.weights.ndim != 2 or self.weights.shape[0] < 1:
            raise ValueError("a PNN needs at least one stored pattern")
        if self.categories.shape != (self.weights.shape[0],):
            raise ValueError("one category per stored pattern")
        if self.sigma <= 0 or not np.isfinite(self.sigma):
            raise ValueError("sigma must be positive")
        if self.num_classes < 2 or self.categories.min() < 0 or self.categories.max() >= self.num_classes:
            raise ValueError("category ids must lie in 0..num_classes-1")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_patterns(self) -> int:
        return self.weights.shape[0]


# --- 2. Support vector machines ---
@dataclass(frozen=True)
class SvmBinaryModel:
    """Kernel expansion f(x) = sum_i sv_coeffs[i] * k(sv_i, x) + bias, sv_coeffs = alpha_i * y_i."""
    sv_features: np.ndarray
    sv_coeffs: np.ndarray
    bias: float
    kernel: KernelSpec
    c: float
    diagnostics: Optional[SolverDiagnostics] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sv_features", _frozen(self.sv_features, np.float64))
        object.__setattr__(self, "sv_coeffs", _frozen(self.sv_coeffs, np.float64))
        if self.sv_features.ndim != 2 or self.sv_features.shape[0] != self.sv_coeffs.shape[0]:
            raise ValueError("one coefficient per support vector")
        if self.kernel.family == "rbf" and self.kernel.gamma is None:
            raise ValueError("a trained rbf model needs a resolved gamma")

    @property
    def dim(self) -> int:
        return self.sv_features.shape[1]

    @property
    def n_support(self) -> int:
        return self.sv_features.shape[0]


@dataclass(frozen=True)
class MulticlassModel:
    """One-vs-all composition: binaries[k] separates class k (+1) from the rest (-1)."""
    binaries: Tuple[SvmBinaryModel, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "binaries", tuple(self.binaries))
        if self.num_classes < 2 or len(self.binaries) != self.num_classes:
            raise ValueError("one binary model per class")
        families = {b.kernel.family for b in self.binaries}
        dims = {b.dim for b in self.binaries}
        if len(families) > 1 or len(dims) > 1:
            raise ValueError("all binary models must share kernel family and dimension")

    @property
    def dim(self) -> int:
        return self.binaries[0].dim
