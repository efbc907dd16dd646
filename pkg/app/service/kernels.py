import logging
import threading
from collections import OrderedDict
from typing import Optional

import numpy as np

from app.core.config import settings
from app.core.errors import DimensionMismatchError
from app.schemas import KernelSpec

logger = logging.getLogger(__name__)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatchError(x.size, y.size)
    if spec.family == "linear":
        return float(np.dot(x, y))
    diff = x - y
    return float(np.exp(-spec.gamma * np.dot(diff, diff)))


def kernel_matrix(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """K[i, j] = k(X[i], Y[j]) for row-stacked inputs."""
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError(X.shape[1], Y.shape[1])
    cross = X @ Y.T
    if spec.family == "linear":
        return cross
    sq = np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", Y, Y)[None, :] - 2.0 * cross
    return np.exp(-spec.gamma * np.maximum(sq, 0.0))


class KernelCache:
    """
    Gram-matrix access for the SMO solver.
    Up to `full_limit` samples the whole matrix is computed once; above that,
    rows are computed on demand and kept in an LRU of `max_rows` entries.
    The matrix depends on features only, so one cache serves every
    one-vs-all subproblem over the same samples.
    """

    def __init__(self, spec: KernelSpec, X: np.ndarray, full_limit: Optional[int] = None, max_rows: Optional[int] = None):
        self.spec = spec
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.n = self.X.shape[0]
        self.full_limit = settings.FULL_KERNEL_CACHE_LIMIT if full_limit is None else full_limit
        self.max_rows = settings.KERNEL_CACHE_ROWS if max_rows is None else max_rows
        self._sq = np.einsum("ij,ij->i", self.X, self.X)
        self._rows: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()
        self.full: Optional[np.ndarray] = None
        if self.n <= self.full_limit:
            self.full = kernel_matrix(spec, self.X, self.X)
            if spec.family == "rbf":
                np.fill_diagonal(self.full, 1.0)
            self.full.setflags(write=False)
        else:
            logger.info(f"Gram matrix of {self.n} rows exceeds {self.full_limit}; caching {self.max_rows} rows")
        self.diagonal = self._compute_diagonal()

    def _compute_diagonal(self) -> np.ndarray:
        if self.spec.family == "rbf":
            return np.ones(self.n)
        return self._sq.copy()

    def _compute_row(self, i: int) -> np.ndarray:
        cross = self.X @ self.X[i]
        if self.spec.family == "linear":
            row = cross
        else:
            row = np.exp(-self.spec.gamma * np.maximum(self._sq + self._sq[i] - 2.0 * cross, 0.0))
            row[i] = 1.0
        row.setflags(write=False)
        return row

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        with self._lock:
            cached = self._rows.get(i)
            if cached is not None:
                self._rows.move_to_end(i)
                return cached
        row = self._compute_row(i)
        with self._lock:
            self._rows[i] = row
            if len(self._rows) > self.max_rows:
                self._rows.popitem(last=False)
        return row

    def matrix(self) -> np.ndarray:
        if self.full is not None:
            return self.full
        return np.vstack([self.row(i) for i in range(self.n)])
