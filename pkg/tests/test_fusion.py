import numpy as np
import pytest

from biofuse.fusion import (
    FusionModel,
    explained_variance,
    jacobi_eigh,
    pca_fit,
    pca_inverse_transform,
    pca_transform,
)

from oracles import charpoly_eigvals_ref, power_iteration_eigh_ref


def _random_symmetric(rng, n, scale=1.0):
    m = rng.standard_normal((n, n)) * scale
    return 0.5 * (m + m.T)


# --- the Jacobi solver itself ----------------------------------------------

def test_jacobi_matches_characteristic_polynomial_2x2_3x3():
    rng = np.random.default_rng(0)
    for n in (2, 3):
        for _ in range(20):
            a = _random_symmetric(rng, n, scale=2.0)
            vals, vecs = jacobi_eigh(a)
            got = np.sort(vals)[::-1]
            want = charpoly_eigvals_ref(a)
            assert np.allclose(got, want, atol=1e-9)
            # eigenpair residuals
            for j in range(n):
                res = a @ vecs[:, j] - vals[j] * vecs[:, j]
                assert np.linalg.norm(res) < 1e-10


def test_jacobi_eigenvectors_orthonormal():
    rng = np.random.default_rng(1)
    a = _random_symmetric(rng, 12)
    vals, vecs = jacobi_eigh(a)
    assert np.allclose(vecs.T @ vecs, np.eye(12), atol=1e-10)
    # reconstruction
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-9)


def test_jacobi_rejects_nonsymmetric_and_nonsquare():
    with pytest.raises(ValueError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        jacobi_eigh(np.ones((2, 3)))


def test_jacobi_diagonal_is_instant():
    vals, vecs = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(np.sort(vals), [1.0, 2.0, 3.0])
    assert np.allclose(np.abs(vecs), np.eye(3), atol=1e-12)


# --- pca_fit ----------------------------------------------------------------

def test_two_point_example_by_hand():
    # points (1,1) and (-1,-1): mean 0, covariance [[2,2],[2,2]],
    # eigenvalues 4 and 0, leading direction (1,1)/sqrt(2)
    data = np.array([[1.0, 1.0], [-1.0, -1.0]])
    model = pca_fit(data, k=1)
    assert model.eigenvalues[0] == pytest.approx(4.0, abs=1e-12)
    assert np.allclose(model.components[:, 0],
                       [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-12)
    proj = pca_transform(np.array([1.0, 1.0]), model)
    assert abs(proj[0]) == pytest.approx(np.sqrt(2), abs=1e-12)
    assert np.allclose(pca_transform(model.mean, model), 0.0, atol=1e-12)


def test_whitened_data_gives_unit_eigenvalues():
    rng = np.random.default_rng(2)
    raw = rng.standard_normal((40, 5))
    centered = raw - raw.mean(axis=0)
    cov = centered.T @ centered / (raw.shape[0] - 1)
    white = centered @ np.linalg.inv(np.linalg.cholesky(cov)).T
    model = pca_fit(white, k=5)
    assert np.allclose(model.eigenvalues, 1.0, atol=1e-8)


def test_duplicating_rows_rescales_eigenvalues_only():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((8, 4)) * np.array([3.0, 2.0, 1.0, 0.5])
    doubled = np.vstack([data, data])
    a = pca_fit(data, k=3)
    b = pca_fit(doubled, k=3)
    assert np.allclose(a.components, b.components, atol=1e-8)
    n = data.shape[0]
    ratio = 2.0 * (n - 1) / (2 * n - 1)
    assert np.allclose(b.eigenvalues, ratio * a.eigenvalues, rtol=1e-10)


def test_fitted_model_invariants():
    rng = np.random.default_rng(4)
    data = rng.standard_normal((30, 7)) * np.linspace(3, 0.5, 7)
    model = pca_fit(data, k=6)
    w = model.components
    assert np.allclose(w.T @ w, np.eye(6), atol=1e-8)
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)
    assert np.all(model.eigenvalues >= 0)
    # sign convention: largest-magnitude entry of each column positive
    for j in range(w.shape[1]):
        assert w[np.argmax(np.abs(w[:, j])), j] > 0


def test_projection_variance_equals_eigenvalues():
    rng = np.random.default_rng(5)
    data = rng.standard_normal((60, 6)) * np.linspace(4, 1, 6)
    model = pca_fit(data, k=4)
    proj = pca_transform(data, model)
    var = proj.var(axis=0, ddof=1)
    assert np.allclose(var, model.eigenvalues, rtol=1e-6)


def test_matches_power_iteration_oracle():
    rng = np.random.default_rng(6)
    for trial in range(10):
        data = rng.standard_normal((40, 10)) * np.linspace(3.0, 0.6, 10)
        model = pca_fit(data, k=4)
        centered = data - data.mean(axis=0)
        cov = centered.T @ centered / (data.shape[0] - 1)
        vals, vecs = power_iteration_eigh_ref(cov, 4, seed=trial)
        assert np.allclose(model.eigenvalues, vals, atol=1e-8)
        for j in range(4):
            dot = abs(vecs[:, j] @ model.components[:, j])
            assert dot == pytest.approx(1.0, abs=1e-7)


def test_translation_invariance_of_projection():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((25, 5))
    shift = rng.standard_normal(5) * 10
    a = pca_fit(data, k=3)
    b = pca_fit(data + shift, k=3)
    pa = pca_transform(data, a)
    pb = pca_transform(data + shift, b)
    assert np.allclose(pa, pb, atol=1e-9)


def test_full_rank_round_trip():
    rng = np.random.default_rng(8)
    data = rng.standard_normal((12, 5))
    model = pca_fit(data, k=5)
    rebuilt = pca_inverse_transform(pca_transform(data, model), model)
    assert np.allclose(rebuilt, data, atol=1e-8)


def test_gram_route_matches_direct_covariance_route():
    # more dimensions than samples: the fit must go through the Gram
    # matrix yet deliver the same eigenpairs as the D x D covariance path
    rng = np.random.default_rng(9)
    data = rng.standard_normal((8, 20)) * np.linspace(2, 0.5, 20)
    model = pca_fit(data, k=5)
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / 7.0
    vals, vecs = jacobi_eigh(cov)
    order = np.argsort(-vals)
    vals = vals[order][:5]
    vecs = vecs[:, order][:, :5]
    assert np.allclose(model.eigenvalues, vals, atol=1e-9)
    for j in range(5):
        assert abs(vecs[:, j] @ model.components[:, j]) == \
            pytest.approx(1.0, abs=1e-9)
    assert np.allclose(model.components.T @ model.components, np.eye(5),
                       atol=1e-9)


def test_default_k_hits_variance_target():
    rng = np.random.default_rng(10)
    # heavily anisotropic: two strong directions carry nearly everything
    base = rng.standard_normal((50, 2)) * np.array([10.0, 5.0])
    noise = rng.standard_normal((50, 6)) * 0.01
    data = np.hstack([base, noise])
    model = pca_fit(data)
    fractions = explained_variance(model)
    assert np.cumsum(fractions)[-1] >= 0.95
    assert model.k <= 3
    shaved = pca_fit(data, k=model.k)
    if model.k > 1:
        assert np.cumsum(explained_variance(shaved))[-2] < 0.95


def test_explained_variance_properties():
    rng = np.random.default_rng(11)
    iso = rng.standard_normal((200, 4))
    model = pca_fit(iso, k=4)
    frac = explained_variance(model)
    assert np.all(np.diff(frac) <= 1e-12)
    assert frac.sum() <= 1.0 + 1e-12
    assert np.allclose(frac, 0.25, atol=0.08)

    rank1 = np.outer(rng.standard_normal(30), np.array([1.0, 2.0, 3.0]))
    model1 = pca_fit(rank1, k=1)
    assert explained_variance(model1)[0] == pytest.approx(1.0, abs=1e-9)


def test_pca_fit_argument_errors():
    rng = np.random.default_rng(12)
    data = rng.standard_normal((6, 4))
    with pytest.raises(ValueError):
        pca_fit(data[:1])
    with pytest.raises(ValueError):
        pca_fit(data, k=0)
    with pytest.raises(ValueError):
        pca_fit(data, k=6)          # exceeds min(n-1, D) = 4... n-1 = 5, D = 4
    with pytest.raises(ValueError):
        pca_transform(np.ones(9), pca_fit(data, k=2))
    with pytest.raises(ValueError):
        pca_inverse_transform(np.ones(3), pca_fit(data, k=2))


def test_transform_accepts_batches():
    rng = np.random.default_rng(13)
    data = rng.standard_normal((10, 4))
    model = pca_fit(data, k=2)
    batch = pca_transform(data, model)
    singles = np.array([pca_transform(row, model) for row in data])
    assert np.allclose(batch, singles, atol=1e-12)
