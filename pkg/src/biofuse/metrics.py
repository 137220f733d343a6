"""Verification error metrics: FAR/FRR, EER, ROC and AUC, plus plain
classification accuracy.

Convention throughout: a trial is accepted when its score is at or above
the threshold. FAR is the accepted fraction of impostor trials, FRR the
rejected fraction of genuine trials.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoredTrial:
    score: float
    genuine: bool

    def __post_init__(self):
        self.score = float(self.score)
        if not np.isfinite(self.score):
            raise ValueError(f"trial score must be finite, got {self.score}")
        self.genuine = bool(self.genuine)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def csv_text(self) -> str:
        lines = ["fpr,tpr,threshold"]
        for f, t, thr in zip(self.fpr, self.tpr, self.thresholds):
            lines.append(f"{float(f)!r},{float(t)!r},{float(thr)!r}")
        return "\n".join(lines) + "\n"


def _split_scores(trials) -> tuple[np.ndarray, np.ndarray]:
    genuine = np.array([t.score for t in trials if t.genuine])
    impostor = np.array([t.score for t in trials if not t.genuine])
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("need at least one genuine and one impostor trial")
    return genuine, impostor


def far_frr(trials, threshold: float) -> tuple[float, float]:
    """Error rates at one operating point (accept iff score >= threshold)."""
    genuine, impostor = _split_scores(trials)
    far = float(np.count_nonzero(impostor >= threshold)) / impostor.size
    frr = float(np.count_nonzero(genuine < threshold)) / genuine.size
    return far, frr


def eer(trials) -> tuple[float, float]:
    """Equal error rate and the threshold achieving it.

    Sweeps every distinct score as a threshold; any real threshold is
    equivalent to one of these since the counts only change when the
    threshold crosses a score. At the threshold minimizing |FAR - FRR|
    (lowest such threshold on ties) the EER is reported as (FAR + FRR)/2.
    """
    genuine, impostor = _split_scores(trials)
    gen_sorted = np.sort(genuine)
    imp_sorted = np.sort(impostor)
    n_gen, n_imp = gen_sorted.size, imp_sorted.size
    candidates = np.unique(np.concatenate([genuine, impostor]))
    accepts = n_imp - np.searchsorted(imp_sorted, candidates, "left")
    rejects = np.searchsorted(gen_sorted, candidates, "left")
    # compare |FAR - FRR| in exact integer arithmetic so thresholds that
    # are mathematically tied cannot be ranked by rounding noise
    key = np.abs(accepts * n_gen - rejects * n_imp)
    best = int(np.argmin(key))                 # first minimum = lowest thr
    value = 0.5 * (accepts[best] / n_imp + rejects[best] / n_gen)
    return float(value), float(candidates[best])


def roc_auc(trials) -> RocCurve:
    """ROC sweep from the strictest threshold down, with trapezoidal AUC.

    Thresholds are +inf, the distinct scores in descending order, then
    -inf, so the curve always starts at (0,0) and ends at (1,1).
    """
    genuine, impostor = _split_scores(trials)
    gen_sorted = np.sort(genuine)
    imp_sorted = np.sort(impostor)
    distinct = np.unique(np.concatenate([genuine, impostor]))[::-1]
    thresholds = np.concatenate([[np.inf], distinct, [-np.inf]])
    fpr = (imp_sorted.size
           - np.searchsorted(imp_sorted, thresholds, "left")) / imp_sorted.size
    tpr = (gen_sorted.size
           - np.searchsorted(gen_sorted, thresholds, "left")) / gen_sorted.size
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * 0.5 * (tpr[1:] + tpr[:-1])))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


def accuracy(predictions, labels) -> float:
    """Fraction of positions where prediction equals label."""
    predictions = list(predictions)
    labels = list(labels)
    if not predictions or len(predictions) != len(labels):
        raise ValueError(f"need equal nonempty prediction/label lists, got "
                         f"{len(predictions)} and {len(labels)}")
    hits = sum(1 for p, l in zip(predictions, labels) if p == l)
    return hits / len(labels)
