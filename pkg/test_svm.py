import io
import math

import numpy as np
import pytest

from app.core.errors import DimensionMismatchError, EmptyClassError, SingleClassError
from app.models import MulticlassModel, SvmBinaryModel
from app.schemas import KernelSpec, Sample
from app.service.kernels import KernelCache, kernel_eval, kernel_matrix
from app.service.svm import (
    decision_value,
    decision_value_naive,
    decision_values,
    dual_objective,
    dumps_model,
    load_model,
    loads_model,
    predict_binary,
    predict_classes,
    predict_multiclass,
    save_model,
    slack_variables,
    solve_dual,
    train_binary,
    train_one_vs_all,
)

LINEAR = KernelSpec(family="linear")
RBF = KernelSpec(family="rbf", gamma=0.5)


def blobs(centers, n_per_class, std, seed):
    rng = np.random.default_rng(seed)
    samples = []
    for label, center in enumerate(centers):
        for point in rng.normal(center, std, size=(n_per_class, len(center))):
            samples.append(Sample(features=tuple(point.tolist()), label=label))
    return samples


def constant_model(bias, dim=2):
    return SvmBinaryModel(
        sv_features=np.zeros((0, dim)), sv_coeffs=np.zeros(0), bias=bias, kernel=LINEAR, c=1.0
    )


def dual_value(model):
    """Dual objective recomputed from the stored expansion alone."""
    K = kernel_matrix(model.kernel, model.sv_features, model.sv_features)
    return dual_objective(np.abs(model.sv_coeffs), np.sign(model.sv_coeffs), K)


def grid_oracle(K, y, c, steps=50, sweeps=40):
    """
    Pairwise coordinate ascent over alphas restricted to multiples of c/steps.
    Every visited point is feasible, so the result bounds the optimum from below.
    """
    n = len(y)
    alpha = np.zeros(n)
    Q = (y[:, None] * y[None, :]) * K
    best = 0.0
    moves = np.arange(-steps, steps + 1) * (c / steps)
    for _ in range(sweeps):
        improved = False
        for i in range(n):
            for j in range(i + 1, n):
                cand = np.tile(alpha, (moves.size, 1))
                cand[:, i] += moves
                cand[:, j] -= y[i] * y[j] * moves
                ok = np.all((cand >= -1e-12) & (cand <= c + 1e-12), axis=1)
                values = cand.sum(axis=1) - 0.5 * np.einsum("ki,ij,kj->k", cand, Q, cand)
                values[~ok] = -np.inf
                k = int(np.argmax(values))
                if values[k] > best + 1e-12:
                    best, alpha, improved = float(values[k]), cand[k].copy(), True
        if not improved:
            break
    return best


@pytest.fixture
def one_dim_model():
    return solve_dual(np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0]), LINEAR, c=10.0)


# --- 1. Kernels ---
def test_kernel_examples():
    assert kernel_eval(RBF, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert kernel_eval(LINEAR, [1.0, 2.0], [3.0, 4.0]) == 11.0
    assert kernel_eval(RBF, [0.3, -2.0], [0.3, -2.0]) == 1.0


def test_kernel_symmetry_and_range():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.normal(size=4), rng.normal(size=4)
        for spec in (LINEAR, RBF):
            assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)
        assert 0.0 < kernel_eval(RBF, x, y) < 1.0


def test_kernel_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        kernel_eval(LINEAR, [1.0, 2.0], [1.0, 2.0, 3.0])


def test_kernel_matrix_matches_pointwise():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    for spec in (LINEAR, RBF):
        K = kernel_matrix(spec, X, Y)
        for i in range(6):
            for j in range(4):
                assert K[i, j] == pytest.approx(kernel_eval(spec, X[i], Y[j]), rel=1e-12, abs=1e-15)


def test_row_cache_matches_full_matrix():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 3))
    full = KernelCache(RBF, X)
    rows = KernelCache(RBF, X, full_limit=0, max_rows=3)
    assert full.full is not None and rows.full is None
    assert np.allclose(rows.matrix(), full.matrix(), rtol=1e-12, atol=1e-15)
    assert len(rows._rows) == 3
    assert np.array_equal(rows.diagonal, np.ones(12))


# --- 2. SMO solver ---
def test_one_dimensional_analytic_solution(one_dim_model):
    model = one_dim_model
    alpha = np.abs(model.sv_coeffs)
    assert alpha == pytest.approx([0.5, 0.5], abs=1e-9)
    assert model.bias == pytest.approx(0.0, abs=1e-9)
    assert decision_value(model, [2.0]) == pytest.approx(2.0, abs=1e-9)
    assert decision_value(model, [0.0]) == pytest.approx(0.0, abs=1e-3)
    assert model.diagnostics.converged


def test_predict_binary_signs_and_tie():
    assert predict_binary(constant_model(2.0), [0.0, 0.0]) == 1
    assert predict_binary(constant_model(-0.3), [0.0, 0.0]) == -1
    assert predict_binary(constant_model(0.0), [0.0, 0.0]) == 1


def test_tiny_box_collapses_the_dual():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(10, 2))
    y = np.array([1.0, -1.0] * 5)
    c = 1e-12
    model = solve_dual(X, y, RBF, c=c)
    alpha = np.abs(model.sv_coeffs)
    assert np.all(np.isclose(alpha, c, rtol=1e-6) | (alpha == 0))
    assert 0.0 <= model.diagnostics.objective <= 10 * c


def test_single_class_is_rejected():
    with pytest.raises(SingleClassError):
        solve_dual(np.array([[0.0], [1.0]]), np.array([1.0, 1.0]), LINEAR, c=1.0)


def test_feasibility_and_oracle_on_random_problems():
    rng = np.random.default_rng(2025)
    for trial in range(50):
        n = int(rng.integers(2, 9))
        X = rng.normal(size=(n, 2))
        y = rng.choice([-1.0, 1.0], size=n)
        y[0], y[1] = 1.0, -1.0
        spec = RBF if trial % 2 == 0 else LINEAR
        c = float(rng.choice([0.1, 1.0, 10.0]))

        model = solve_dual(X, y, spec, c=c, tol=1e-6, max_iter=100000)
        assert model.diagnostics.converged
        assert model.diagnostics.kkt_gap < 1e-6
        assert np.all(np.abs(model.sv_coeffs) <= c)
        assert np.all(np.abs(model.sv_coeffs) > 0)
        assert abs(model.sv_coeffs.sum()) <= 1e-10

        oracle = grid_oracle(kernel_matrix(spec, X, X), y, c)
        solver = dual_value(model)
        assert solver >= oracle - 0.02 * abs(oracle) - 1e-9
        assert solver == pytest.approx(model.diagnostics.objective, rel=1e-6, abs=1e-9)


def test_debug_mode_checks_ascent():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 2))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=30) > 0, 1.0, -1.0)
    model = solve_dual(X, y, RBF, c=1.0, debug_every=1)
    assert model.diagnostics.converged


def test_separable_data_with_large_c_has_no_training_error():
    samples = blobs([(-2.0, -2.0), (2.0, 2.0)], 25, 0.3, seed=5)
    model = train_binary(samples, LINEAR, c=1e6, max_iter=100000)
    X = np.array([s.features for s in samples])
    y = np.array([1 if s.label == 1 else -1 for s in samples])
    assert np.array_equal(np.where(decision_values(model, X) >= 0, 1, -1), y)
    assert np.all(slack_variables(model, X, y) < 1e-2)


def test_iteration_limit_returns_unconverged_model():
    samples = blobs([(0.0, 0.0), (0.5, 0.5)], 20, 0.5, seed=6)
    model = train_binary(samples, RBF, c=1.0, max_iter=1)
    assert not model.diagnostics.converged
    assert model.diagnostics.iterations == 1
    assert model.diagnostics.kkt_gap >= 1e-3


def test_margin_scaling_gives_identical_alphas():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(20, 3))
    y = np.where(X[:, 1] > 0, 1.0, -1.0)
    base = solve_dual(X, y, KernelSpec(family="rbf", gamma=0.4), c=1.0)
    scaled = solve_dual(2.0 * X, y, KernelSpec(family="rbf", gamma=0.1), c=1.0)
    assert np.array_equal(base.sv_coeffs, scaled.sv_coeffs)
    assert base.bias == scaled.bias


def test_row_cache_solver_agrees_with_full_cache():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(25, 2))
    y = np.where(X[:, 0] * X[:, 1] > 0, 1.0, -1.0)
    full = solve_dual(X, y, RBF, c=1.0, tol=1e-6)
    lru = solve_dual(X, y, RBF, c=1.0, tol=1e-6, cache=KernelCache(RBF, X, full_limit=0, max_rows=4))
    query_points = rng.normal(size=(10, 2))
    assert np.allclose(decision_values(full, query_points), decision_values(lru, query_points), atol=1e-4)


# --- 3. Decision values ---
def test_naive_and_vectorized_decisions_agree():
    samples = blobs([(0.0, 0.0), (1.0, 1.0)], 15, 0.6, seed=9)
    rng = np.random.default_rng(9)
    for spec in (LINEAR, RBF):
        model = train_binary(samples, spec, c=1.0)
        for x in rng.normal(size=(20, 2)):
            fast = decision_value(model, x)
            assert fast == pytest.approx(decision_value_naive(model, x), rel=1e-12, abs=1e-12)
            assert fast == pytest.approx(decision_values(model, x[None, :])[0], rel=1e-12, abs=1e-12)


def test_decision_dimension_mismatch(one_dim_model):
    with pytest.raises(DimensionMismatchError):
        decision_value(one_dim_model, [1.0, 2.0])


# --- 4. One-vs-all ---
def test_two_class_one_vs_all_agrees_with_binary():
    samples = blobs([(-1.5, 0.0), (1.5, 0.0)], 20, 0.4, seed=10)
    binary = train_binary(samples, RBF, c=1.0)
    multi = train_one_vs_all(samples, 2, RBF, c=1.0)
    X = np.array([s.features for s in samples])
    assert len(multi.binaries) == 2
    assert np.array_equal(predict_classes(multi, X), predict_classes(binary, X))
    for x in X[:10]:
        assert predict_multiclass(multi, x) == (1 if predict_binary(binary, x) == 1 else 0)
    assert np.allclose(decision_values(multi.binaries[0], X), -decision_values(multi.binaries[1], X), atol=1e-2)


def test_three_class_one_vs_all():
    samples = blobs([(0.0, 3.0), (3.0, 0.0), (-3.0, -3.0)], 15, 0.3, seed=11)
    model = train_one_vs_all(samples, 3, RBF, c=1.0)
    assert len(model.binaries) == 3
    X = np.array([s.features for s in samples])
    assert predict_classes(model, X).tolist() == [s.label for s in samples]


def test_concurrent_one_vs_all_matches_sequential():
    samples = blobs([(0.0, 1.0), (1.0, 0.0), (-1.0, -1.0)], 10, 0.5, seed=12)
    sequential = train_one_vs_all(samples, 3, RBF, c=1.0)
    parallel = train_one_vs_all(samples, 3, RBF, c=1.0, workers=3)
    for a, b in zip(sequential.binaries, parallel.binaries):
        assert np.array_equal(a.sv_coeffs, b.sv_coeffs)
        assert a.bias == b.bias


def test_empty_class_is_named():
    samples = [s for s in blobs([(0, 0), (1, 1), (2, 2)], 5, 0.1, seed=13) if s.label != 1]
    with pytest.raises(EmptyClassError) as exc:
        train_one_vs_all(samples, 3, RBF, c=1.0)
    assert exc.value.class_id == 1


def test_multiclass_ties_and_negative_values():
    biases = [-1.0, -1.0, -1.0, 0.5, -1.0, -1.0, -1.0, 0.5, -1.0, -1.0]
    model = MulticlassModel(binaries=tuple(constant_model(b) for b in biases), num_classes=10)
    assert predict_multiclass(model, [0.0, 0.0]) == 3
    negative = MulticlassModel(binaries=(constant_model(-3.0), constant_model(-1.0), constant_model(-2.0)), num_classes=3)
    assert predict_multiclass(negative, [0.0, 0.0]) == 1


# --- 5. Model text format ---
def test_text_format_round_trip():
    samples = blobs([(0.0, 2.0), (2.0, 0.0), (-2.0, -2.0)], 8, 0.5, seed=14)
    query_points = np.random.default_rng(14).normal(size=(15, 2))
    for model in (train_binary(samples, RBF, c=1.0, positive_class=2), train_one_vs_all(samples, 3, LINEAR, c=1.0)):
        restored = loads_model(dumps_model(model))
        assert type(restored) is type(model)
        binaries = model.binaries if isinstance(model, MulticlassModel) else (model,)
        restored_binaries = restored.binaries if isinstance(restored, MulticlassModel) else (restored,)
        for a, b in zip(binaries, restored_binaries):
            assert np.array_equal(decision_values(a, query_points), decision_values(b, query_points))


def test_save_and_load_through_a_file(one_dim_model):
    buffer = io.StringIO()
    save_model(one_dim_model, buffer)
    buffer.seek(0)
    restored = load_model(buffer)
    assert restored.kernel == LINEAR
    assert restored.c == 10.0
    assert decision_value(restored, [2.0]) == decision_value(one_dim_model, [2.0])


def test_unknown_format_version_is_rejected(one_dim_model):
    text = dumps_model(one_dim_model).replace("svm-binary v1", "svm-binary v9")
    with pytest.raises(ValueError):
        loads_model(text)
