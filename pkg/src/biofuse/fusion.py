"""PCA over integrated feature vectors.

Fitting centers the features, forms the sample covariance with the 1/(n-1)
divisor, and eigendecomposes it with cyclic Jacobi rotations. When the
feature dimension exceeds n-1 the decomposition runs on the n x n Gram
matrix instead and the eigenvectors are mapped back; the retained eigenpairs
are identical and the work stays proportional to the sample count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class FusionModel:
    """Fitted PCA basis: projection is (f - mean) @ components."""

    mean: np.ndarray          # (D,)
    components: np.ndarray    # (D, k), orthonormal columns, descending order
    eigenvalues: np.ndarray   # (k,), descending, nonnegative
    total_variance: float     # trace of the full covariance

    @property
    def k(self) -> int:
        return self.components.shape[1]

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]


def jacobi_eigh(matrix, tol: float = 1e-12,
                max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns, in no
    particular order. Stops when the off-diagonal Frobenius mass falls below
    tol relative to the matrix norm.
    """
    a = np.asarray(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1:
        return a.reshape(1).copy(), v
    norm = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * norm:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = 1.0 / (tau - np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    raise ArithmeticError("Jacobi eigendecomposition failed to converge")


def _descending_order(values: np.ndarray) -> np.ndarray:
    # stable: equal eigenvalues keep their original relative order
    return np.argsort(-values, kind="stable")


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for j in range(out.shape[1]):
        lead = np.argmax(np.abs(out[:, j]))
        if out[lead, j] < 0:
            out[:, j] = -out[:, j]
    return out


def pca_fit(features, k: int | None = None,
            variance_target: float = 0.95) -> FusionModel:
    """Fit a PCA basis to an n x D feature matrix.

    When k is omitted it becomes the smallest dimension whose cumulative
    explained variance reaches ``variance_target``. k may never exceed
    min(n-1, D): the sample covariance of n points has rank at most n-1.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"features must be n x D, got shape {f.shape}")
    n, d = f.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples to fit, got {n}")
    max_k = min(n - 1, d)
    if k is not None and not 1 <= k <= max_k:
        raise ValueError(f"k={k} out of range [1, {max_k}] for {n} samples "
                         f"of dimension {d}")
    mean = f.mean(axis=0)
    centered = f - mean
    total_variance = float(np.sum(centered * centered)) / (n - 1)

    if d > n - 1:
        # dual route: same nonzero spectrum from the small Gram matrix
        gram = centered @ centered.T / (n - 1)
        raw_vals, raw_vecs = jacobi_eigh(gram)
        order = _descending_order(raw_vals)
        raw_vals = raw_vals[order]
        raw_vecs = raw_vecs[:, order]
        floor = 1e-12 * max(raw_vals[0], 1.0)
        usable = int(np.sum(raw_vals > floor))
        keep = min(max_k, usable) if k is None else k
        if keep > usable:
            raise ValueError(f"k={k} exceeds the data rank ({usable})")
        vals = raw_vals[:keep]
        vecs = centered.T @ raw_vecs[:, :keep] / np.sqrt(vals * (n - 1))
    else:
        cov = centered.T @ centered / (n - 1)
        raw_vals, raw_vecs = jacobi_eigh(cov)
        order = _descending_order(raw_vals)
        vals = raw_vals[order][:max_k]
        vecs = raw_vecs[:, order][:, :max_k]

    vals = np.maximum(vals, 0.0)
    if k is None:
        cum = np.cumsum(vals)
        reached = np.nonzero(cum >= variance_target * total_variance)[0]
        k = int(reached[0]) + 1 if reached.size else vals.size
    return FusionModel(mean=mean, components=_fix_signs(vecs[:, :k]),
                       eigenvalues=vals[:k].copy(),
                       total_variance=total_variance)


def pca_transform(feature, model: FusionModel) -> np.ndarray:
    """Project one feature vector (or an n x D batch) onto the basis."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape[-1] != model.input_dim:
        raise ValueError(f"feature length {f.shape[-1]} != model dimension "
                         f"{model.input_dim}")
    return (f - model.mean) @ model.components


def pca_inverse_transform(projected, model: FusionModel) -> np.ndarray:
    """Map projected coordinates back to the original feature space."""
    p = np.asarray(projected, dtype=np.float64)
    if p.shape[-1] != model.k:
        raise ValueError(f"projection length {p.shape[-1]} != k={model.k}")
    return p @ model.components.T + model.mean


def explained_variance(model: FusionModel) -> np.ndarray:
    """Fraction of total variance captured by each retained component."""
    if model.total_variance <= 0:
        return np.zeros(model.k)
    return model.eigenvalues / model.total_variance
