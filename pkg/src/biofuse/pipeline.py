"""End-to-end orchestration: preprocess, train, enroll, verify, report.

One training run draws the whole chain together: the backbone is trained on
the train split's subject labels, every sample is mapped to its integrated
feature, the fusion basis and verifier are fitted on those features, and a
per-subject enrollment template (mean projected feature) is stored. The
resulting bundle scores probe/claim pairs; a score above zero accepts.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig, backbone_config, config_text, train_config
from .datamodel import BiometricSample, PreprocessedSample, preprocess_sample
from .fusion import FusionModel, pca_fit, pca_transform
from .gbm import (GbmConfig, GbmModel, authenticate_decision, gbm_fit,
                  gbm_predict, make_pairs)
from .metrics import RocCurve, ScoredTrial, eer, far_frr, roc_auc
from .network import (MODALITIES, BackboneModel, TrainingHistory,
                      _init_from_rng, extract_integrated, train_backbone)
from .serialize import PipelineBundle

DECISION_THRESHOLD = 0.0

# feature components carrying each modality, used to score a modality alone
MODALITY_COMPONENTS = {
    "face": ("shared_face", "refined_face"),
    "sig_image": ("shared_sig_image", "refined_sig_image"),
    "sig_sequence": ("rnn_sig_sequence", "refined_sig_sequence"),
    "audio": ("rnn_audio", "refined_audio"),
}


def preprocess_all(samples, cfg: PipelineConfig) -> list[PreprocessedSample]:
    return [preprocess_sample(s, image_size=cfg.image_size,
                              seq_len=cfg.seq_len, audio_len=cfg.audio_len,
                              window=cfg.window, hop=cfg.hop)
            for s in samples]


def subject_labels(samples) -> tuple[list[str], list[int]]:
    """Sorted distinct subject ids and each sample's index into them."""
    subjects = sorted({s.subject_id for s in samples})
    index = {sid: i for i, sid in enumerate(subjects)}
    return subjects, [index[s.subject_id] for s in samples]


def extract_features(model: BackboneModel, samples) -> np.ndarray:
    """Integrated feature matrix, one row per preprocessed sample."""
    return np.array([extract_integrated(s, model).vector for s in samples])


def component_columns(model: BackboneModel, names) -> np.ndarray:
    """Column indices of the named integrated-feature components."""
    from .network import COMPONENT_NAMES

    lengths = model.config.component_lengths
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    cols = []
    for name in names:
        i = COMPONENT_NAMES.index(name)
        cols.extend(range(offsets[i], offsets[i + 1]))
    return np.array(cols, dtype=np.intp)


# ---------------------------------------------------------------------------
# verifier fitting and scoring


def fit_verifier(features: np.ndarray, subject_ids, cfg: PipelineConfig
                 ) -> tuple[FusionModel, GbmModel, dict[str, np.ndarray]]:
    """Fit the fusion basis and verifier; enroll per-subject templates.

    The template for a subject is the mean projected feature over that
    subject's rows. Verifier training pairs every sample with its own
    template (genuine) and a seeded subsample of the others (impostor).
    """
    fusion = pca_fit(features, k=cfg.pca_components or None,
                     variance_target=cfg.variance_target)
    projected = np.array([pca_transform(f, fusion) for f in features])
    templates = {}
    ids = np.asarray(subject_ids)
    for sid in sorted(set(subject_ids)):
        templates[sid] = projected[ids == sid].mean(axis=0)
    pair_x, pair_y, _ = make_pairs(projected, subject_ids, templates,
                                   seed=cfg.seed,
                                   impostor_ratio=cfg.impostor_ratio)
    gbm = gbm_fit(pair_x, pair_y,
                  GbmConfig(n_trees=cfg.n_trees, shrinkage=cfg.shrinkage,
                            max_depth=cfg.max_depth, min_leaf=cfg.min_leaf))
    return fusion, gbm, templates


def score_trials(fusion: FusionModel, gbm: GbmModel, templates,
                 features: np.ndarray, subject_ids) -> list[ScoredTrial]:
    """Score every probe against every template (exhaustive pairing)."""
    projected = np.array([pca_transform(f, fusion) for f in features])
    pair_x, pair_y, _ = make_pairs(projected, subject_ids, templates,
                                   impostor_ratio=None)
    return [ScoredTrial(score=gbm_predict(gbm, x), genuine=y > 0)
            for x, y in zip(pair_x, pair_y)]


@dataclass
class EvalResult:
    """Verification metrics over one set of scored trials."""

    far: float                 # at the fixed decision threshold
    frr: float
    eer_value: float
    eer_threshold: float
    auc: float
    decision_accuracy: float   # accept/reject correctness at the threshold
    n_genuine: int
    n_impostor: int
    roc: RocCurve
    trials: list[ScoredTrial]

    def metrics_dict(self) -> dict[str, float]:
        return {
            "far": self.far,
            "frr": self.frr,
            "eer": self.eer_value,
            "eer_threshold": self.eer_threshold,
            "auc": self.auc,
            "decision_accuracy": self.decision_accuracy,
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
        }


def evaluate_trials(trials) -> EvalResult:
    far, frr = far_frr(trials, DECISION_THRESHOLD)
    eer_value, eer_threshold = eer(trials)
    roc = roc_auc(trials)
    hits = sum(1 for t in trials
               if (t.score >= DECISION_THRESHOLD) == t.genuine)
    n_genuine = sum(1 for t in trials if t.genuine)
    return EvalResult(far=far, frr=frr, eer_value=eer_value,
                      eer_threshold=eer_threshold, auc=roc.auc,
                      decision_accuracy=hits / len(trials),
                      n_genuine=n_genuine,
                      n_impostor=len(trials) - n_genuine, roc=roc,
                      trials=list(trials))


def evaluate_bundle(bundle: PipelineBundle, samples) -> EvalResult:
    """Score a bundle on raw samples: all probe/template pairs."""
    if not samples:
        raise ValueError("evaluation needs at least one sample")
    pre = preprocess_all(samples, bundle.config)
    features = extract_features(bundle.backbone, pre)
    ids = [s.subject_id for s in samples]
    unknown = sorted(set(ids) - set(bundle.templates))
    if unknown:
        raise ValueError(f"no enrolled template for subjects {unknown}")
    trials = score_trials(bundle.fusion, bundle.gbm, bundle.templates,
                          features, ids)
    return evaluate_trials(trials)


def authenticate(bundle: PipelineBundle, sample: BiometricSample,
                 claimed_subject: str) -> dict:
    """Verify one probe against one enrolled identity claim."""
    if claimed_subject not in bundle.templates:
        known = ", ".join(sorted(bundle.templates))
        raise ValueError(f"unknown subject {claimed_subject!r}; enrolled: "
                         f"{known}")
    pre = preprocess_all([sample], bundle.config)[0]
    feature = extract_integrated(pre, bundle.backbone).vector
    projected = pca_transform(feature, bundle.fusion)
    diff = np.abs(projected - bundle.templates[claimed_subject])
    decision, score = authenticate_decision(bundle.gbm, diff)
    return {"decision": decision, "score": score,
            "threshold": DECISION_THRESHOLD}


# ---------------------------------------------------------------------------
# full training runs


@dataclass
class ExperimentReport:
    """Everything a run measured, in JSON-stable keys."""

    config: str
    subjects: list[str]
    n_train: int
    n_eval: int
    loss: list[float] = field(default_factory=list)
    accuracy: dict[str, list[float]] = field(default_factory=dict)
    epoch_far: list[float] = field(default_factory=list)
    epoch_frr: list[float] = field(default_factory=list)
    final: dict[str, float] = field(default_factory=dict)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "subjects": list(self.subjects),
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "loss": list(self.loss),
            "accuracy": {k: list(v) for k, v in self.accuracy.items()},
            "epoch_far": list(self.epoch_far),
            "epoch_frr": list(self.epoch_frr),
            "final": dict(self.final),
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _empty_history() -> TrainingHistory:
    return TrainingHistory(accuracy={k: [] for k in
                                     list(MODALITIES) + ["integrated"]})


def train_pipeline(train_samples, cfg: PipelineConfig, eval_samples=None,
                   track_epochs: bool = False
                   ) -> tuple[PipelineBundle, ExperimentReport]:
    """Run the whole chain on raw samples and return bundle plus report.

    With ``track_epochs`` and an eval split, the fusion basis and verifier
    are refitted after every epoch and the eval split's FAR/FRR at the
    decision threshold are recorded, tracing how the error rates fall as
    the representation trains. Deterministic for a fixed config.
    """
    started = time.perf_counter()
    if not train_samples:
        raise ValueError("training needs at least one sample")
    subjects, labels = subject_labels(train_samples)
    bcfg = backbone_config(cfg, n_classes=len(subjects))
    pre_train = preprocess_all(train_samples, cfg)
    pre_eval = preprocess_all(eval_samples or [], cfg)
    eval_ids = [s.subject_id for s in (eval_samples or [])]

    epoch_far: list[float] = []
    epoch_frr: list[float] = []

    def measure(model: BackboneModel):
        feats = extract_features(model, pre_train)
        fusion, gbm, templates = fit_verifier(feats, [s.subject_id for s in
                                                      train_samples], cfg)
        trials = score_trials(fusion, gbm, templates,
                              extract_features(model, pre_eval), eval_ids)
        far, frr = far_frr(trials, DECISION_THRESHOLD)
        epoch_far.append(far)
        epoch_frr.append(frr)

    hook = None
    if track_epochs and pre_eval:
        hook = lambda epoch, model: measure(model)

    if cfg.epochs == 0:
        # baseline: keep the seeded random initialization untouched
        init_seq, _ = np.random.SeedSequence(cfg.seed).spawn(2)
        model = _init_from_rng(bcfg, np.random.default_rng(init_seq))
        history = _empty_history()
    else:
        model, history = train_backbone(pre_train, labels, bcfg,
                                        train=train_config(cfg),
                                        epoch_hook=hook)

    features = extract_features(model, pre_train)
    fusion, gbm, templates = fit_verifier(
        features, [s.subject_id for s in train_samples], cfg)
    bundle = PipelineBundle(config=cfg, backbone=model, fusion=fusion,
                            gbm=gbm, templates=templates)

    report = ExperimentReport(config=config_text(cfg), subjects=subjects,
                              n_train=len(train_samples),
                              n_eval=len(eval_samples or []),
                              loss=history.loss, accuracy=history.accuracy,
                              epoch_far=epoch_far, epoch_frr=epoch_frr)
    if eval_samples:
        result = evaluate_bundle(bundle, eval_samples)
        report.final = result.metrics_dict()
    report.wall_time_s = time.perf_counter() - started
    return bundle, report


def modality_eval(train_samples, eval_samples, cfg: PipelineConfig,
                  bundle: PipelineBundle = None) -> dict[str, EvalResult]:
    """Verification results per single modality and for the full feature.

    Each modality's verifier is refitted on only that modality's columns of
    the integrated feature, so the comparison isolates what fusing all
    components adds. Keys: the four modality names plus "integrated".
    """
    if bundle is None:
        bundle, _ = train_pipeline(train_samples, cfg)
    pre_train = preprocess_all(train_samples, cfg)
    pre_eval = preprocess_all(eval_samples, cfg)
    feats_train = extract_features(bundle.backbone, pre_train)
    feats_eval = extract_features(bundle.backbone, pre_eval)
    ids_train = [s.subject_id for s in train_samples]
    ids_eval = [s.subject_id for s in eval_samples]

    results: dict[str, EvalResult] = {}
    views = {m: component_columns(bundle.backbone, MODALITY_COMPONENTS[m])
             for m in MODALITIES}
    views["integrated"] = np.arange(feats_train.shape[1])
    for name, cols in views.items():
        fusion, gbm, templates = fit_verifier(feats_train[:, cols],
                                              ids_train, cfg)
        trials = score_trials(fusion, gbm, templates, feats_eval[:, cols],
                              ids_eval)
        results[name] = evaluate_trials(trials)
    return results
