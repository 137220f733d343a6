import json

import numpy as np
import pytest

from biofuse.config import PipelineConfig
from biofuse.fusion import pca_transform
from biofuse.metrics import ScoredTrial, far_frr
from biofuse.network import COMPONENT_NAMES, MODALITIES
from biofuse.pipeline import (
    DECISION_THRESHOLD,
    MODALITY_COMPONENTS,
    authenticate,
    component_columns,
    evaluate_bundle,
    evaluate_trials,
    extract_features,
    modality_eval,
    preprocess_all,
    score_trials,
    subject_labels,
    train_pipeline,
)
from biofuse.synthgen import GenConfig, gen_samples


def _tiny_cfg(seed=0, epochs=1):
    return PipelineConfig(image_size=8, seq_len=8, audio_len=32, window=8,
                          hop=4, n_subjects=3, samples_per_subject=4,
                          conv1_channels=2, conv2_channels=3, rnn_hidden=3,
                          seq_refine=2, image_refine=3, epochs=epochs,
                          batch_size=4, n_trees=5, seed=seed)


def _split(samples, per_subject=4, train_per=2):
    train, evaluation = [], []
    for i, s in enumerate(samples):
        (train if i % per_subject < train_per else evaluation).append(s)
    return train, evaluation


@pytest.fixture(scope="module")
def tiny_run():
    cfg = _tiny_cfg(epochs=2)
    samples = gen_samples(GenConfig(n_subjects=3, samples_per_subject=4,
                                    seed=0))
    train, evaluation = _split(samples)
    bundle, report = train_pipeline(train, cfg, eval_samples=evaluation,
                                    track_epochs=True)
    return cfg, train, evaluation, bundle, report


# --- bookkeeping helpers ------------------------------------------------------

def test_subject_labels_sorted_distinct():
    samples = gen_samples(GenConfig(n_subjects=3, samples_per_subject=2,
                                    seed=1))
    subjects, labels = subject_labels(samples)
    assert subjects == sorted(subjects)
    assert len(set(subjects)) == 3
    assert [subjects[i] for i in labels] == [s.subject_id for s in samples]


def test_component_columns_partition_the_feature(tiny_run):
    cfg, train, _, bundle, _ = tiny_run
    total = sum(bundle.backbone.config.component_lengths)
    seen = []
    for names in MODALITY_COMPONENTS.values():
        seen.extend(component_columns(bundle.backbone, names).tolist())
    assert sorted(seen) == list(range(total))

    feats = extract_features(bundle.backbone, preprocess_all(train, cfg))
    assert feats.shape == (len(train), total)


def test_component_columns_match_component_order(tiny_run):
    _, _, _, bundle, _ = tiny_run
    lengths = bundle.backbone.config.component_lengths
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    for i, name in enumerate(COMPONENT_NAMES):
        cols = component_columns(bundle.backbone, [name])
        assert cols.tolist() == list(range(offsets[i], offsets[i + 1]))


# --- verifier fitting ----------------------------------------------------------

def test_templates_are_mean_projected_features(tiny_run):
    cfg, train, _, bundle, _ = tiny_run
    feats = extract_features(bundle.backbone, preprocess_all(train, cfg))
    ids = np.array([s.subject_id for s in train])
    projected = np.array([pca_transform(f, bundle.fusion) for f in feats])
    for sid, template in bundle.templates.items():
        expected = projected[ids == sid].mean(axis=0)
        assert np.allclose(template, expected, atol=1e-12)


def test_score_trials_pair_every_probe_with_every_template(tiny_run):
    cfg, _, evaluation, bundle, _ = tiny_run
    feats = extract_features(bundle.backbone,
                             preprocess_all(evaluation, cfg))
    ids = [s.subject_id for s in evaluation]
    trials = score_trials(bundle.fusion, bundle.gbm, bundle.templates,
                          feats, ids)
    assert len(trials) == len(evaluation) * len(bundle.templates)
    assert sum(t.genuine for t in trials) == len(evaluation)


def test_train_pipeline_is_deterministic():
    samples = gen_samples(GenConfig(n_subjects=3, samples_per_subject=4,
                                    seed=3))
    train, evaluation = _split(samples)
    results = []
    for _ in range(2):
        bundle, _ = train_pipeline(train, _tiny_cfg(seed=3))
        results.append(evaluate_bundle(bundle, evaluation))
    scores_a = [t.score for t in results[0].trials]
    scores_b = [t.score for t in results[1].trials]
    assert scores_a == scores_b


def test_epochs_zero_keeps_the_seeded_random_init():
    samples = gen_samples(GenConfig(n_subjects=3, samples_per_subject=4,
                                    seed=2))
    train, _ = _split(samples)
    runs = []
    for _ in range(2):
        bundle, report = train_pipeline(train, _tiny_cfg(seed=2, epochs=0))
        runs.append((bundle, report))
    feats = [extract_features(b.backbone,
                              preprocess_all(train, b.config))
             for b, _ in runs]
    assert np.array_equal(feats[0], feats[1])
    assert runs[0][1].loss == []
    assert all(v == [] for v in runs[0][1].accuracy.values())


def test_train_pipeline_rejects_empty_input():
    with pytest.raises(ValueError, match="at least one sample"):
        train_pipeline([], _tiny_cfg())


# --- evaluation ----------------------------------------------------------------

def test_evaluate_trials_matches_far_frr_at_the_threshold():
    rng = np.random.default_rng(7)
    trials = [ScoredTrial(score=float(rng.normal()), genuine=bool(i % 3 == 0))
              for i in range(60)]
    result = evaluate_trials(trials)
    far, frr = far_frr(trials, DECISION_THRESHOLD)
    assert result.far == far
    assert result.frr == frr
    hits = sum((t.score >= DECISION_THRESHOLD) == t.genuine for t in trials)
    assert result.decision_accuracy == hits / len(trials)
    assert result.n_genuine + result.n_impostor == len(trials)


def test_evaluate_bundle_rejects_empty_samples(tiny_run):
    _, _, _, bundle, _ = tiny_run
    with pytest.raises(ValueError, match="at least one sample"):
        evaluate_bundle(bundle, [])


def test_evaluate_bundle_rejects_unenrolled_subjects(tiny_run):
    cfg, _, evaluation, bundle, _ = tiny_run
    stranger = gen_samples(GenConfig(n_subjects=5, samples_per_subject=2,
                                     seed=0))[-1]
    assert stranger.subject_id not in bundle.templates
    with pytest.raises(ValueError, match=stranger.subject_id):
        evaluate_bundle(bundle, evaluation + [stranger])


def test_modality_eval_reports_each_channel_and_the_fused_feature(tiny_run):
    cfg, train, evaluation, bundle, _ = tiny_run
    results = modality_eval(train, evaluation, cfg, bundle=bundle)
    assert sorted(results) == sorted(list(MODALITIES) + ["integrated"])
    for r in results.values():
        assert 0.0 <= r.auc <= 1.0
        assert r.n_genuine == len(evaluation)


def test_modality_eval_integrated_agrees_with_evaluate_bundle(tiny_run):
    # the "integrated" view refits the verifier on the same features the
    # bundle was fitted on, so both scoring paths must coincide exactly
    cfg, train, evaluation, bundle, _ = tiny_run
    via_views = modality_eval(train, evaluation, cfg, bundle=bundle)
    direct = evaluate_bundle(bundle, evaluation)
    assert via_views["integrated"].metrics_dict() == direct.metrics_dict()


# --- authentication -------------------------------------------------------------

def test_authenticate_decision_follows_the_threshold(tiny_run):
    _, _, evaluation, bundle, _ = tiny_run
    for sample in evaluation[:4]:
        for claimed in bundle.templates:
            outcome = authenticate(bundle, sample, claimed)
            expected = ("authentic" if outcome["score"] >= DECISION_THRESHOLD
                        else "not_authentic")
            assert outcome["decision"] == expected
            assert outcome["threshold"] == DECISION_THRESHOLD


def test_authenticate_matches_batch_scoring(tiny_run):
    cfg, _, evaluation, bundle, _ = tiny_run
    sample = evaluation[0]
    feats = extract_features(bundle.backbone, preprocess_all([sample], cfg))
    trials = score_trials(bundle.fusion, bundle.gbm, bundle.templates,
                          feats, [sample.subject_id])
    genuine = [t for t in trials if t.genuine]
    outcome = authenticate(bundle, sample, sample.subject_id)
    assert outcome["score"] == pytest.approx(genuine[0].score, abs=1e-12)


def test_authenticate_unknown_subject_lists_the_enrolled_ids(tiny_run):
    _, _, evaluation, bundle, _ = tiny_run
    with pytest.raises(ValueError) as err:
        authenticate(bundle, evaluation[0], "nobody")
    message = str(err.value)
    assert "nobody" in message
    for sid in bundle.templates:
        assert sid in message


# --- reporting -------------------------------------------------------------------

def test_tracked_run_records_far_frr_for_every_epoch(tiny_run):
    cfg, _, _, _, report = tiny_run
    assert len(report.epoch_far) == cfg.epochs
    assert len(report.epoch_frr) == cfg.epochs
    for v in report.epoch_far + report.epoch_frr:
        assert 0.0 <= v <= 1.0


def test_report_final_metrics_come_from_the_eval_split(tiny_run):
    cfg, _, evaluation, bundle, report = tiny_run
    assert report.n_eval == len(evaluation)
    direct = evaluate_bundle(bundle, evaluation)
    assert report.final == direct.metrics_dict()


def test_report_json_round_trips(tiny_run):
    _, _, _, _, report = tiny_run
    decoded = json.loads(report.to_json())
    assert decoded == report.to_dict()
    assert decoded["n_train"] + decoded["n_eval"] == 12
    assert sorted(decoded["accuracy"]) == sorted(list(MODALITIES)
                                                 + ["integrated"])


def test_untracked_run_leaves_epoch_series_empty():
    samples = gen_samples(GenConfig(n_subjects=3, samples_per_subject=4,
                                    seed=4))
    train, evaluation = _split(samples)
    _, report = train_pipeline(train, _tiny_cfg(seed=4),
                               eval_samples=evaluation, track_epochs=False)
    assert report.epoch_far == []
    assert report.epoch_frr == []
    assert report.final  # final eval metrics still present
