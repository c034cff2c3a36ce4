import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from oracles import kkt_violation, qp_dual_oracle
from pedattr.ingest import Sample
from pedattr.unary import (ConvergenceError, Jitter, TrainConfig, augment_positives,
                           fit_sigmoid, intersection_kernel, intersection_kernel_matrix,
                           jitter_image, load_model, predict_proba, save_model, solve_dual,
                           train_iksvm)

hist = hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.just(6)),
                  elements=st.floats(0, 1, allow_subnormal=False))


def test_kernel_value():
    assert intersection_kernel([0.2, 0.5, 0.3], [0.4, 0.1, 0.5]) == pytest.approx(0.6)


def test_kernel_dim_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        intersection_kernel([1, 0], [1, 0, 0])
    with pytest.raises(ValueError, match="dimension"):
        intersection_kernel_matrix(np.zeros((2, 3)), np.zeros((2, 4)))


@given(A=hist)
def test_kernel_matrix_properties(A):
    K = intersection_kernel_matrix(A)
    np.testing.assert_allclose(K, K.T)
    assert np.all(K >= 0)
    assert np.all(np.diag(K)[:, None] >= K - 1e-12)
    naive = np.array([[intersection_kernel(a, b) for b in A] for a in A])
    np.testing.assert_allclose(K, naive, atol=1e-12)


def test_kernel_matrix_chunking(rng):
    A, B = rng.random((37, 11)), rng.random((9, 11))
    np.testing.assert_allclose(intersection_kernel_matrix(A, B, chunk_bytes=64),
                               intersection_kernel_matrix(A, B))


def test_separable_1d_fits_training_set():
    X = np.array([[0.1], [0.2], [0.3], [0.7], [0.8], [0.9]])
    y = np.array([0, 0, 0, 1, 1, 1])
    m = train_iksvm(X, y, TrainConfig(C=10.0))
    assert np.all((m.decision(X) > 0).astype(int) == y)
    assert predict_proba(m, X[-1]) > 0.5


def test_four_point_dual_matches_oracle():
    X = np.array([[0.9, 0.1], [0.7, 0.3], [0.2, 0.8], [0.4, 0.6]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    K = intersection_kernel_matrix(X)
    for C in (0.5, 1.0, 10.0):
        sol = solve_dual(K, y, C, TrainConfig().kkt_tol)
        np.testing.assert_allclose(sol.alpha, qp_dual_oracle(K, y, C), atol=1e-3)


def test_single_class_rejected():
    with pytest.raises(ValueError, match="single class"):
        train_iksvm(np.eye(3), [1, 1, 1])


def test_non_convergence_carries_diagnostics(rng):
    X = rng.random((30, 5))
    y = np.where(rng.random(30) < 0.5, 1.0, -1.0)
    with pytest.raises(ConvergenceError) as err:
        solve_dual(intersection_kernel_matrix(X), y, 1.0, 1e-9, max_iter=2)
    assert err.value.iterations == 2 and err.value.gap > 0


def test_config_validation():
    for bad in ({"C": 0}, {"calib_eps": 0.0}, {"kkt_tol": 0}, {"max_passes": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_symmetric_calibration_half_at_zero(rng):
    f = rng.normal(size=200)
    scores = np.concatenate([f, -f])
    labels = np.concatenate([f > 0, -f > 0]).astype(int)
    A, B = fit_sigmoid(scores, labels)
    assert 1.0 / (1.0 + np.exp(B)) == pytest.approx(0.5, abs=1e-3)
    assert A < 0  # higher scores mean more likely positive


def test_calibration_matches_logistic_fit(rng):
    f = rng.normal(size=300)
    labels = (rng.random(300) < 1 / (1 + np.exp(-2 * f))).astype(int)
    A, B = fit_sigmoid(f, labels)
    n1, n0 = labels.sum(), (1 - labels).sum()
    t = np.where(labels == 1, (n1 + 1) / (n1 + 2), 1 / (n0 + 2))
    from scipy.optimize import minimize

    def nll(ab):
        z = ab[0] * f + ab[1]
        return np.sum(t * z + np.logaddexp(0, -z))

    ref = minimize(nll, [0.0, 0.0], method="BFGS", options={"gtol": 1e-9}).x
    np.testing.assert_allclose([A, B], ref, atol=1e-3)


@pytest.fixture(scope="module")
def toy_model():
    rng = np.random.default_rng(7)
    X = rng.random((40, 6))
    y = (X[:, 0] > X[:, 1]).astype(int)
    return train_iksvm(X, y, TrainConfig(C=5.0)), X, y


@given(u=hnp.arrays(np.float64, 6, elements=st.floats(0, 1e6)))
def test_probability_strictly_inside(toy_model, u):
    p = predict_proba(toy_model[0], u)
    assert 0.0 < p < 1.0


def test_predict_proba_dim_mismatch(toy_model):
    with pytest.raises(ValueError, match="dimension"):
        predict_proba(toy_model[0], np.zeros(5))


def test_retraining_bit_identical(toy_model):
    m, X, y = toy_model
    m2 = train_iksvm(X, y, TrainConfig(C=5.0))
    np.testing.assert_array_equal(m.dual_coefs, m2.dual_coefs)
    assert (m.bias, m.calib_A, m.calib_B) == (m2.bias, m2.calib_A, m2.calib_B)


def test_verify_calibration_and_precomputed_kernels(toy_model):
    _, X, y = toy_model
    Xt, yt, Xv, yv = X[:30], y[:30], X[30:], y[30:]
    a = train_iksvm(Xt, yt, calibration=(Xv, yv))
    b = train_iksvm(Xt, yt, gram=intersection_kernel_matrix(Xt),
                    calibration_kernel=(intersection_kernel_matrix(Xv, Xt), yv))
    np.testing.assert_allclose(a.dual_coefs, b.dual_coefs)
    assert a.calib_A == pytest.approx(b.calib_A) and a.calib_B == pytest.approx(b.calib_B)


def test_model_round_trip(tmp_path, toy_model):
    m, X, _ = toy_model
    save_model(tmp_path / "m.npz", m)
    back = load_model(tmp_path / "m.npz")
    np.testing.assert_array_equal(predict_proba(m, X), predict_proba(back, X))


def _positives(n, rng):
    return [Sample(f"p{i}", rng.integers(0, 256, (32, 16, 3), dtype=np.uint8), {"A": 1},
                   rng.random((32, 16)) < 0.5) for i in range(n)]


def test_augment_to_negative_count(rng):
    out = augment_positives(_positives(100, rng), 400, seed=3)
    assert len(out) == 400
    assert len({s.id for s in out}) == 400
    assert all(s.labels == {"A": 1} for s in out)


def test_augment_noop_at_target(rng):
    pos = _positives(5, rng)
    out = augment_positives(pos, 5)
    assert [s.id for s in out] == [s.id for s in pos]
    assert all(a is b for a, b in zip(out, pos))


def test_zero_range_jitter_is_identity(rng):
    pos = _positives(3, rng)
    out = augment_positives(pos, 9, Jitter((1.0, 1.0), (0.0, 0.0)))
    for j, s in enumerate(out[3:]):
        np.testing.assert_array_equal(s.image, pos[j % 3].image)
        np.testing.assert_array_equal(s.mask, pos[j % 3].mask)


def test_augment_errors(rng):
    with pytest.raises(ValueError):
        augment_positives([], 4)
    with pytest.raises(ValueError):
        augment_positives(_positives(3, rng), 2)


def test_jitter_rotates_content():
    img = np.zeros((41, 41, 3), np.uint8)
    img[20, 25:35] = 255  # horizontal bar right of centre
    out, _ = jitter_image(img, None, 1.0, 90.0)
    assert out[:, 20].max() > 0 and out[20, 25:35].max() == 0
