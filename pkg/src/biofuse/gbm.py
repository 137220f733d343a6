"""Least-squares gradient boosting on regression trees, plus the
verification pairing that turns projected features into trainable examples.

The ensemble starts at the target mean and repeatedly fits a small tree to
the current residuals:

    M_0 = mean(y);   M_t(x) = M_{t-1}(x) + nu * h_t(x)

Trees split greedily on squared-error reduction. A probe is authenticated
by the sign of the final score, with 0 rejected (fail closed).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class _Node:
    """Internal tree node; a leaf has feature None and holds a value."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature=None, threshold=0.0, left=None, right=None,
                 value=0.0):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value


@dataclass
class RegressionTree:
    root: _Node
    n_features: int

    def predict(self, x: np.ndarray) -> float:
        node = self.root
        while node.feature is not None:
            node = node.left if x[node.feature] <= node.threshold \
                else node.right
        return node.value


@dataclass
class GbmConfig:
    n_trees: int = 100        # T boosting iterations
    shrinkage: float = 0.1    # nu
    max_depth: int = 3
    min_leaf: int = 2


@dataclass
class GbmModel:
    base_score: float                      # M_0, mean of the targets
    shrinkage: float
    n_features: int
    trees: list = field(default_factory=list)


def _best_split(values: np.ndarray, residuals: np.ndarray,
                min_leaf: int) -> tuple[float, float] | None:
    """Best (gain, threshold) for one feature column, or None.

    Candidates are midpoints between consecutive distinct sorted values,
    restricted so both sides keep at least min_leaf points. The gain is the
    squared-error reduction
        S_i^2/i + (S_n - S_i)^2/(n - i) - S_n^2/n
    with S the residual prefix sums in sorted order.
    """
    order = np.argsort(values, kind="stable")
    xs = values[order]
    n = xs.size
    prefix = np.cumsum(residuals[order])
    total = prefix[-1]
    cut = np.arange(min_leaf, n - min_leaf + 1)
    if cut.size == 0:
        return None
    cut = cut[xs[cut - 1] < xs[cut]]
    if cut.size == 0:
        return None
    s_left = prefix[cut - 1]
    gain = (s_left ** 2 / cut + (total - s_left) ** 2 / (n - cut)
            - total ** 2 / n)
    # zero-gain splits are allowed: stopping is governed by depth, min_leaf
    # and zero variance, and a zero-gain cut can still enable useful child
    # splits (crossed patterns have no first-level gain at all)
    best = int(np.argmax(gain))
    i = int(cut[best])
    threshold = 0.5 * (xs[i - 1] + xs[i])
    if threshold >= xs[i]:
        # midpoint of adjacent floats rounded up to the right value; fall
        # back to the left value so the partition stays {<=i-1 | >=i}
        threshold = xs[i - 1]
    return float(gain[best]), float(threshold)


def _grow(x: np.ndarray, residuals: np.ndarray, idx: np.ndarray, depth: int,
          max_depth: int, min_leaf: int) -> _Node:
    r = residuals[idx]
    if depth >= max_depth or idx.size < 2 * min_leaf or r.max() == r.min():
        return _Node(value=float(r.mean()))
    best = None
    for f in range(x.shape[1]):
        found = _best_split(x[idx, f], r, min_leaf)
        if found is not None and (best is None or found[0] > best[0]):
            best = (found[0], f, found[1])
    if best is None:
        return _Node(value=float(r.mean()))
    _, feature, threshold = best
    goes_left = x[idx, feature] <= threshold
    return _Node(
        feature=feature, threshold=threshold,
        left=_grow(x, residuals, idx[goes_left], depth + 1, max_depth,
                   min_leaf),
        right=_grow(x, residuals, idx[~goes_left], depth + 1, max_depth,
                    min_leaf),
    )


def fit_tree(x, residuals, max_depth: int = 3,
             min_leaf: int = 2) -> RegressionTree:
    """Greedy squared-error regression tree on the given residuals."""
    x = np.asarray(x, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    if x.ndim != 2 or residuals.shape != (x.shape[0],):
        raise ValueError(f"want x as n x k with n residuals, got "
                         f"{x.shape} and {residuals.shape}")
    if x.shape[0] < 1:
        raise ValueError("need at least one training point")
    if max_depth < 1 or min_leaf < 1:
        raise ValueError("max_depth and min_leaf must be positive")
    root = _grow(x, residuals, np.arange(x.shape[0]), 0, max_depth, min_leaf)
    return RegressionTree(root=root, n_features=x.shape[1])


def _predict_batch(tree: RegressionTree, x: np.ndarray) -> np.ndarray:
    return np.array([tree.predict(row) for row in x])


def gbm_fit(x, y, config: GbmConfig = GbmConfig()) -> GbmModel:
    """Boost regression trees against +-1 verification targets."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError(f"want x as n x k with n targets, got {x.shape} "
                         f"and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 training pairs")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("targets must be +1 (genuine) or -1 (impostor)")
    if len(np.unique(y)) < 2:
        raise ValueError("training needs both genuine and impostor pairs")
    if not 0.0 < config.shrinkage <= 1.0:
        raise ValueError(f"shrinkage must be in (0, 1], got "
                         f"{config.shrinkage}")
    if config.n_trees < 0:
        raise ValueError(f"n_trees must be nonnegative, got {config.n_trees}")

    model = GbmModel(base_score=float(y.mean()),
                     shrinkage=config.shrinkage, n_features=x.shape[1])
    current = np.full(y.shape, model.base_score)
    for _ in range(config.n_trees):
        tree = fit_tree(x, y - current, config.max_depth, config.min_leaf)
        model.trees.append(tree)
        current += config.shrinkage * _predict_batch(tree, x)
    return model


def gbm_predict(model: GbmModel, x) -> float:
    """Raw ensemble score M_T(x) for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ValueError(f"feature length {x.shape} != trained length "
                         f"({model.n_features},)")
    return model.base_score + model.shrinkage * \
        sum(tree.predict(x) for tree in model.trees)


def authenticate_decision(model: GbmModel, f_pca) -> tuple[str, float]:
    """Sign readout of the ensemble score; exactly 0 rejects (fail closed)."""
    score = gbm_predict(model, f_pca)
    return ("authentic" if score > 0.0 else "not_authentic"), score


def make_pairs(features, subject_ids, templates, *, seed: int = 0,
               impostor_ratio: float | None = 3.0):
    """Build |probe - template| difference features with +-1 labels.

    Every sample yields one genuine pair against its own subject's template.
    Impostor pairs (sample vs every other template) are subsampled with a
    seeded PRNG to ``impostor_ratio`` times the genuine count; pass None to
    keep them all (evaluation mode).

    Returns (pair_features, labels, pair_ids) where pair_ids holds
    (sample_index, template_subject) for traceability.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != len(subject_ids):
        raise ValueError("features must be n x k aligned with subject_ids")
    template_subjects = sorted(templates)
    rows = []
    labels = []
    pair_ids = []
    impostor_slots = []
    for i, sid in enumerate(subject_ids):
        if sid not in templates:
            raise ValueError(f"no template for subject {sid!r}")
        rows.append(np.abs(features[i] - templates[sid]))
        labels.append(1.0)
        pair_ids.append((i, sid))
        for other in template_subjects:
            if other != sid:
                impostor_slots.append((i, other))

    if impostor_ratio is None:
        chosen = range(len(impostor_slots))
    else:
        want = min(len(impostor_slots),
                   int(round(impostor_ratio * len(labels))))
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(len(impostor_slots), size=want,
                                    replace=False))
    for j in chosen:
        i, other = impostor_slots[j]
        rows.append(np.abs(features[i] - templates[other]))
        labels.append(-1.0)
        pair_ids.append((i, other))
    return np.array(rows), np.array(labels), pair_ids
