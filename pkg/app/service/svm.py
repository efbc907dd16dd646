"""
Soft-margin kernel SVM trained by SMO on the dual

    max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
    s.t. sum_i a_i y_i = 0,  0 <= a_i <= C

The solver works on b_i = y_i a_i, box A_i <= b_i <= B_i, and keeps the gradient
g_i = 1 - y_i (K b)_i up to date. Each step moves the maximal violating pair
(i, j) along b_i += lam, b_j -= lam, which leaves sum_i b_i unchanged.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import IO, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DimensionMismatchError, EmptyClassError, SemiSupError, SingleClassError
from app.models import MulticlassModel, SvmBinaryModel
from app.schemas import KernelSpec, Sample, SolverDiagnostics
from app.service.dataset import as_labels, as_matrix
from app.service.kernels import KernelCache, kernel_eval, kernel_matrix

logger = logging.getLogger(__name__)

# curvature floor for pairs with k_ii + k_jj - 2 k_ij <= 0
TAU = 1e-12
FORMAT_VERSION = "v1"

SvmModel = Union[SvmBinaryModel, MulticlassModel]


def default_max_iter(n: int, num_classes: int = 2) -> int:
    return max(10 * n * num_classes, 1000)


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    beta = alpha * y
    return float(alpha.sum() - 0.5 * beta @ K @ beta)


# --- 1. SMO solver ---
def solve_dual(
    X,
    y,
    kernel: KernelSpec,
    c: float,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
    cache: Optional[KernelCache] = None,
    debug_every: Optional[int] = None,
) -> SvmBinaryModel:
    """
    Returns the support-vector expansion for labels y in {-1, +1}.
    Hitting `max_iter` is not an error: the model is returned with
    `diagnostics.converged = False` and the final KKT gap.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x d with one label per row")
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("binary labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassError("both labels -1 and +1 are needed to train an SVM")
    if c <= 0 or tol <= 0:
        raise ValueError("c and tol must be positive")

    n = y.shape[0]
    kernel = kernel.resolved(X.shape[1])
    if cache is None:
        cache = KernelCache(kernel, X)
    if max_iter is None:
        max_iter = default_max_iter(n)

    lower = np.where(y > 0, 0.0, -c)
    upper = np.where(y > 0, c, 0.0)
    beta = np.zeros(n)
    grad = np.ones(n)
    diag = cache.diagonal

    iterations = 0
    gap = math.inf
    last_objective = 0.0
    converged = False
    while True:
        yg = y * grad
        up = np.where(beta < upper, yg, -np.inf)
        low = np.where(beta > lower, yg, np.inf)
        i = int(np.argmax(up))
        j = int(np.argmin(low))
        gap = float(up[i] - low[j])
        if not gap >= tol:
            converged = True
            break
        if iterations >= max_iter:
            break

        Ki = cache.row(i)
        Kj = cache.row(j)
        curvature = diag[i] + diag[j] - 2.0 * Ki[j]
        if curvature <= 0:
            curvature = TAU
        room_i = upper[i] - beta[i]
        room_j = beta[j] - lower[j]
        lam = min(room_i, room_j, gap / curvature)

        beta[i] += lam
        beta[j] -= lam
        if lam == room_i:
            beta[i] = upper[i]
        if lam == room_j:
            beta[j] = lower[j]
        grad += lam * y * (Kj - Ki)
        iterations += 1

        if debug_every and iterations % debug_every == 0:
            objective = _objective_from_gradient(beta, y, grad)
            if objective < last_objective - 1e-12 * max(1.0, abs(last_objective)):
                raise SemiSupError(
                    f"dual objective decreased from {last_objective} to {objective} at iteration {iterations}"
                )
            last_objective = objective

    beta = np.clip(beta, lower, upper)
    alpha = y * beta
    bias = _bias(alpha, y * grad, beta, lower, upper, c)
    support = alpha > 0

    if not converged:
        logger.warning(f"SMO stopped at the iteration limit {max_iter}, KKT gap {gap:.3e} (tol {tol})")
    diagnostics = SolverDiagnostics(
        iterations=iterations,
        kkt_gap=max(gap, 0.0) if math.isfinite(gap) else 0.0,
        objective=_objective_from_gradient(beta, y, grad),
        converged=converged,
        n_support=int(support.sum()),
    )
    logger.debug(f"SMO: {iterations} iterations, {diagnostics.n_support} support vectors, gap {diagnostics.kkt_gap:.3e}")
    return SvmBinaryModel(
        sv_features=X[support],
        sv_coeffs=beta[support],
        bias=bias,
        kernel=kernel,
        c=float(c),
        diagnostics=diagnostics,
    )


def _objective_from_gradient(beta: np.ndarray, y: np.ndarray, grad: np.ndarray) -> float:
    # (K b)_k = y_k (1 - g_k), so the dual objective is 1/2 sum_k a_k (1 + g_k)
    alpha = y * beta
    return float(0.5 * np.dot(alpha, 1.0 + grad))


def _bias(alpha, yg, beta, lower, upper, c) -> float:
    free = (alpha > 0) & (alpha < c)
    if np.any(free):
        return float(yg[free].mean())
    up = yg[beta < upper]
    low = yg[beta > lower]
    bounds = [v for v in (up.max() if up.size else None, low.min() if low.size else None) if v is not None]
    return float(sum(bounds) / len(bounds)) if bounds else 0.0


# --- 2. Decision functions ---
def _check_dim(model: SvmBinaryModel, x: np.ndarray) -> None:
    if x.shape[-1] != model.dim:
        raise DimensionMismatchError(model.dim, x.shape[-1])


def decision_value(model: SvmBinaryModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("decision_value takes one vector")
    _check_dim(model, x)
    if model.kernel.family == "linear":
        k = model.sv_features @ x
    else:
        diff = model.sv_features - x
        k = np.exp(-model.kernel.gamma * np.einsum("ij,ij->i", diff, diff))
    return float(np.dot(model.sv_coeffs, k) + model.bias)


def decision_value_naive(model: SvmBinaryModel, x) -> float:
    """Term-by-term sum over support vectors; reference for `decision_value`."""
    total = 0.0
    for coeff, sv in zip(model.sv_coeffs, model.sv_features):
        total += coeff * kernel_eval(model.kernel, sv, x)
    return total + model.bias


def decision_values(model: SvmBinaryModel, X, chunk: int = 4096) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return np.zeros(0)
    _check_dim(model, X)
    if model.n_support == 0:
        return np.full(X.shape[0], model.bias)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        out[start:start + chunk] = kernel_matrix(model.kernel, block, model.sv_features) @ model.sv_coeffs
    return out + model.bias


def predict_binary(model: SvmBinaryModel, x) -> int:
    return 1 if decision_value(model, x) >= 0 else -1


def slack_variables(model: SvmBinaryModel, X, y) -> np.ndarray:
    """xi_i = max(0, 1 - y_i f(x_i)) of the primal soft-margin problem."""
    return np.maximum(0.0, 1.0 - np.asarray(y, dtype=np.float64) * decision_values(model, X))


# --- 3. Binary and one-vs-all training on Samples ---
def train_binary(
    samples: Sequence[Sample],
    kernel: KernelSpec,
    c: float,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
    positive_class: int = 1,
    debug_every: Optional[int] = None,
) -> SvmBinaryModel:
    """Class `positive_class` becomes +1, every other class -1."""
    X = as_matrix(samples)
    y = np.where(as_labels(samples) == positive_class, 1.0, -1.0)
    return solve_dual(X, y, kernel, c, tol=tol, max_iter=max_iter, debug_every=debug_every)


def train_one_vs_all(
    samples: Sequence[Sample],
    num_classes: int,
    kernel: KernelSpec,
    c: float,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
    workers: int = 1,
    debug_every: Optional[int] = None,
) -> MulticlassModel:
    if num_classes < 2:
        raise ValueError("one-vs-all needs at least two classes")
    labels = as_labels(samples)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in 0..{num_classes - 1}")
    counts = np.bincount(labels, minlength=num_classes)
    for k in range(num_classes):
        if counts[k] == 0:
            raise EmptyClassError(k)

    X = as_matrix(samples)
    kernel = kernel.resolved(X.shape[1])
    cache = KernelCache(kernel, X)
    if max_iter is None:
        max_iter = default_max_iter(len(samples), num_classes)

    def train_class(k: int) -> SvmBinaryModel:
        y = np.where(labels == k, 1.0, -1.0)
        model = solve_dual(X, y, kernel, c, tol=tol, max_iter=max_iter, cache=cache, debug_every=debug_every)
        logger.info(f"class {k} vs rest: {model.n_support} support vectors, {model.diagnostics.iterations} iterations")
        return model

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            binaries = list(pool.map(train_class, range(num_classes)))
    else:
        binaries = [train_class(k) for k in range(num_classes)]
    return MulticlassModel(binaries=tuple(binaries), num_classes=num_classes)


def decision_matrix(model: MulticlassModel, X) -> np.ndarray:
    """Column k holds the class-k-vs-rest decision values."""
    return np.column_stack([decision_values(b, X) for b in model.binaries])


def predict_multiclass(model: MulticlassModel, x) -> int:
    values = [decision_value(b, x) for b in model.binaries]
    return int(np.argmax(values))


# --- 4. Uniform access for the pipelines (class ids in, class ids out) ---
def train_svm(
    samples: Sequence[Sample],
    num_classes: int,
    kernel: KernelSpec,
    c: float,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
    workers: int = 1,
    debug_every: Optional[int] = None,
) -> SvmModel:
    """A single binary machine (class 1 positive) for two classes, one-vs-all above."""
    if num_classes == 2:
        return train_binary(samples, kernel, c, tol=tol, max_iter=max_iter, debug_every=debug_every)
    return train_one_vs_all(samples, num_classes, kernel, c, tol, max_iter, workers, debug_every)


def predict_classes(model: SvmModel, X) -> np.ndarray:
    if isinstance(model, MulticlassModel):
        return np.argmax(decision_matrix(model, X), axis=1)
    return (decision_values(model, X) >= 0).astype(np.int64)


def confidence_scores(model: SvmModel, X) -> np.ndarray:
    """|f(x)| for a binary machine, the winning one-vs-all value otherwise."""
    if isinstance(model, MulticlassModel):
        return decision_matrix(model, X).max(axis=1)
    return np.abs(decision_values(model, X))


def decision_surface(model: SvmModel, X) -> np.ndarray:
    if isinstance(model, MulticlassModel):
        return decision_matrix(model, X).max(axis=1)
    return decision_values(model, X)


def solver_diagnostics(model: SvmModel) -> List[SolverDiagnostics]:
    binaries = model.binaries if isinstance(model, MulticlassModel) else (model,)
    return [b.diagnostics for b in binaries if b.diagnostics is not None]


# --- 5. Model text format ---
def _dump_binary(model: SvmBinaryModel) -> List[str]:
    gamma = "none" if model.kernel.gamma is None else repr(model.kernel.gamma)
    lines = [
        f"svm-binary {FORMAT_VERSION} kernel={model.kernel.family} gamma={gamma} c={model.c!r} "
        f"d={model.dim} m={model.n_support} bias={model.bias!r}"
    ]
    for coeff, sv in zip(model.sv_coeffs.tolist(), model.sv_features.tolist()):
        lines.append(" ".join(repr(v) for v in [coeff, *sv]))
    return lines


def dumps_model(model: SvmModel) -> str:
    if isinstance(model, MulticlassModel):
        lines = [f"svm-one-vs-all {FORMAT_VERSION} k={model.num_classes}"]
        for binary in model.binaries:
            lines.extend(_dump_binary(binary))
    else:
        lines = _dump_binary(model)
    return "\n".join(lines) + "\n"


def _parse_header(line: str, kind: str) -> dict:
    parts = line.split()
    if len(parts) < 2 or parts[0] != kind:
        raise ValueError(f"expected a {kind} header, got {line!r}")
    if parts[1] != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {parts[1]}")
    return dict(p.split("=", 1) for p in parts[2:])


def _load_binary(lines: List[str], pos: int) -> Tuple[SvmBinaryModel, int]:
    fields = _parse_header(lines[pos], "svm-binary")
    d, m = int(fields["d"]), int(fields["m"])
    rows = [[float(v) for v in lines[pos + 1 + r].split()] for r in range(m)]
    if any(len(r) != d + 1 for r in rows):
        raise ValueError("support vector row does not match the header dimension")
    data = np.asarray(rows, dtype=np.float64).reshape(m, d + 1)
    gamma = None if fields["gamma"] == "none" else float(fields["gamma"])
    model = SvmBinaryModel(
        sv_features=data[:, 1:],
        sv_coeffs=data[:, 0],
        bias=float(fields["bias"]),
        kernel=KernelSpec(family=fields["kernel"], gamma=gamma),
        c=float(fields["c"]),
    )
    return model, pos + 1 + m


def loads_model(text: str) -> SvmModel:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty model text")
    if lines[0].startswith("svm-one-vs-all"):
        k = int(_parse_header(lines[0], "svm-one-vs-all")["k"])
        pos, binaries = 1, []
        for _ in range(k):
            binary, pos = _load_binary(lines, pos)
            binaries.append(binary)
        return MulticlassModel(binaries=tuple(binaries), num_classes=k)
    model, _ = _load_binary(lines, 0)
    return model


def save_model(model: SvmModel, fh: IO[str]) -> None:
    fh.write(dumps_model(model))


def load_model(fh: IO[str]) -> SvmModel:
    return loads_model(fh.read())
