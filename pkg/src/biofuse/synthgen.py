"""Seeded generator of identity-conditioned multi-modal capture sets.

Every subject is a latent Gaussian vector; each modality renders a smooth
function of a slice of that vector, and every sample adds nuisance drawn
from a per-sample stream (spatial shift, brightness and contrast wobble,
stroke jitter, loudness and phase, timing wobble) whose magnitude scales
with one noise multiplier. Noise 0 therefore reproduces the identity core
exactly, and fixed seeds reproduce files byte for byte. PRNG streams are
spawned per subject and per sample, so generation order cannot change the
output.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import BiometricSample
from .dataio import load_manifest, save_sample, write_manifest

LATENT_DIM = 40
FACE_SIZE = 40
SIG_SIZE = 48
SEQ_STEPS = 40
AUDIO_SAMPLES = 2048
SAMPLE_RATE = 16000

# per-modality nuisance magnitudes at noise=1, frozen after calibrating the
# end-to-end experiments: strong enough that raw captures of one subject
# scatter, weak enough that the identity core stays learnable
NOISE_SCALES = {
    "face": 1.0,
    "sig_image": 1.0,
    "sig_sequence": 1.0,
    "audio": 1.0,
}


@dataclass(frozen=True)
class GenConfig:
    n_subjects: int = 7
    samples_per_subject: int = 20
    seed: int = 0
    noise: float = 1.0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be >= 2")
        if self.samples_per_subject < 2:
            raise ValueError("samples_per_subject must be >= 2")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


TRAIT_DIM = 12
_TRAIT_STEPS = np.sqrt(np.array([2.0, 3.0, 5.0, 7.0, 11.0, 13.0,
                                 17.0, 19.0, 23.0, 29.0, 31.0, 37.0])) % 1.0


@dataclass(frozen=True)
class IdentitySpec:
    """One subject: spread trait coordinates, a latent vector, noise scales.

    Traits are the coarse anatomy each renderer keys on. They follow a
    seeded Weyl sequence (irrational stride per coordinate), so any cohort
    is spread evenly across trait space and two subjects who sit close in
    one modality's traits almost surely sit far apart in another's. That
    population diversity is what makes combining modalities worthwhile.
    """

    subject_id: str
    traits: np.ndarray
    latent: np.ndarray
    noise_scales: dict[str, float]


def _unit(v) -> np.ndarray:
    """Logistic squash of a latent coordinate into (0, 1)."""
    return 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=np.float64)))


def make_identity(seed: int, index: int, noise: float = 1.0) -> IdentitySpec:
    """Subject ``index`` of the generator stream for ``seed``.

    Depends only on (seed, index), never on how many other subjects exist.
    """
    offsets = np.random.default_rng(np.random.SeedSequence(seed)
                                    ).uniform(size=TRAIT_DIM)
    traits = (offsets + (index + 1) * _TRAIT_STEPS) % 1.0
    child = np.random.SeedSequence(seed).spawn(index + 1)[index]
    z_rng = np.random.default_rng(child.spawn(1)[0])
    scales = {k: v * noise for k, v in NOISE_SCALES.items()}
    return IdentitySpec(subject_id=f"subject{index:02d}",
                        traits=traits,
                        latent=z_rng.standard_normal(LATENT_DIM),
                        noise_scales=scales)


def _sample_streams(seed: int, index: int, n_samples: int
                    ) -> list[np.random.Generator]:
    child = np.random.SeedSequence(seed).spawn(index + 1)[index]
    return [np.random.default_rng(s) for s in child.spawn(1 + n_samples)[1:]]


# ---------------------------------------------------------------------------
# per-modality renderers


def _face_image(z: np.ndarray, rng: np.random.Generator, noise: float
                ) -> np.ndarray:
    """Smooth radial/angular sinusoid field, shifted and re-exposed per
    sample.

    The subject lives in the pattern's structure (radial frequency, lobe
    count, phases); exposure is deliberately unstable across captures, so
    first-order image statistics carry almost no identity. Face patterns
    draw from the raw latent, not the spread traits, so naturally similar
    faces occur and leave room for the other channels to tell them apart.
    """
    n = FACE_SIZE
    cx = (n - 1) / 2.0 + noise * 3.0 * rng.normal()
    cy = (n - 1) / 2.0 + noise * 3.0 * rng.normal()
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    r = np.hypot(dx, dy) / (n / 2.0)
    phi = np.arctan2(dy, dx)
    img = np.empty((n, n, 3))
    for c in range(3):
        a = 1.0 + 1.6 * float(_unit(z[4 * c]))
        lobes = int(1 + round(3.999 * float(_unit(z[4 * c + 1]))))
        p = np.pi * float(z[4 * c + 2])
        q = np.pi * float(z[4 * c + 3])
        img[:, :, c] = (0.5 + 0.25 * np.sin(2 * np.pi * a * r + p)
                        + 0.16 * np.sin(lobes * phi + q))
    contrast = 1.0 + noise * 0.45 * rng.normal()
    brightness = noise * 0.3 * rng.normal()
    img = 0.5 + (img - 0.5) * contrast + brightness
    img += noise * 0.16 * rng.normal(size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _control_points(z: np.ndarray, rng: np.random.Generator, noise: float
                    ) -> np.ndarray:
    """Eight stroke control points in the unit square, jittered per sample."""
    k = 8
    base_x = np.linspace(0.12, 0.88, k) + 0.06 * np.tanh(z[0:k])
    base_y = 0.5 + 0.30 * np.tanh(z[k:2 * k])
    pts = np.stack([base_x, base_y], axis=1)
    return pts + noise * 0.04 * rng.normal(size=pts.shape)


def _polyline(points: np.ndarray, count: int) -> np.ndarray:
    """``count`` positions tracing the piecewise-linear path through
    ``points`` at uniform parameter spacing."""
    k = points.shape[0]
    u = np.linspace(0.0, 1.0, count)
    x = np.interp(u, np.linspace(0.0, 1.0, k), points[:, 0])
    y = np.interp(u, np.linspace(0.0, 1.0, k), points[:, 1])
    return np.stack([x, y], axis=1)


def _stroke_path(points: np.ndarray, zw: np.ndarray, count: int
                 ) -> np.ndarray:
    """Stroke trace with a subject-characteristic ripple across the pen
    direction.

    The ripple's size, repeat count and phase come from the latent: the
    habitual sway of one signer's hand. It is too fine for the rasterized
    image but shows plainly in the recorded pen coordinates.
    """
    path = _polyline(points, count)
    u = np.linspace(0.0, 1.0, count)
    tangent = np.gradient(path, axis=0)
    norm = np.hypot(tangent[:, 0], tangent[:, 1])
    norm = np.maximum(norm, 1e-12)
    normal = np.stack([-tangent[:, 1] / norm, tangent[:, 0] / norm], axis=1)
    amp = 0.02 + 0.035 * float(_unit(zw[0]))
    repeats = 2 + int(round(1.999 * float(_unit(zw[1]))))
    phase = np.pi * float(zw[2])
    ripple = amp * np.sin(2 * np.pi * repeats * u + phase)
    return path + normal * ripple[:, None]


def _render_signature(points: np.ndarray, rng: np.random.Generator,
                      noise: float) -> np.ndarray:
    """Dark Gaussian brush along the stroke on a white page.

    Pen width and ink darkness wander per capture; the stroke's geometry is
    what stays characteristic of the subject.
    """
    n = SIG_SIZE
    trace = _polyline(points, 160) * (n - 1)
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    ink = np.zeros((n, n))
    sigma = (0.012 + 0.009 * noise * rng.uniform()) * n
    depth = 1.0 - 0.35 * noise * rng.uniform()
    for px, py in trace:
        ink += np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2 * sigma ** 2))
    img = 1.0 - depth * ink / max(ink.max(), 1e-12)
    return np.clip(img, 0.0, 1.0)


def _signature_sequence(points: np.ndarray, zw: np.ndarray,
                        traits: np.ndarray, z: np.ndarray,
                        rng: np.random.Generator, noise: float) -> np.ndarray:
    """The same stroke sampled over time: x, y, pressure arch, step dt.

    Each capture re-times the pen (a smooth monotone warp of the path
    parameter), slants the trace by a fresh angle, and wobbles the per-point
    measurements, imitating how no two signings run at the same pace or
    lean the same way.
    """
    t = SEQ_STEPS
    u = np.linspace(0.0, 1.0, t)
    warp_amount = noise * 0.10 * rng.normal()
    warp_phase = 2 * np.pi * rng.uniform()
    warped = np.clip(u + warp_amount * np.sin(2 * np.pi * u + warp_phase),
                     0.0, 1.0)
    dense = _stroke_path(points, zw, 4 * t)
    grid = np.linspace(0.0, 1.0, 4 * t)
    xy = np.stack([np.interp(warped, grid, dense[:, 0]),
                   np.interp(warped, grid, dense[:, 1])], axis=1)
    theta = noise * 0.65 * rng.normal()
    center = xy.mean(axis=0)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    xy = (xy - center) @ rot.T + center
    xy += noise * 0.025 * rng.normal(size=xy.shape)
    shape = 0.5 + 1.5 * float(traits[0])
    press_scale = 1.0 + noise * 0.15 * rng.normal()
    arch_exp = max(0.25, 1.0 + noise * 0.3 * rng.normal())
    arch_u = np.clip(u ** arch_exp, 0.0, 1.0)
    arch = np.sin(np.pi * arch_u) ** shape
    sway = (0.10 + 0.10 * float(_unit(z[3]))) * np.sin(
        2 * np.pi * arch_u + np.pi * float(z[4]))
    pressure = (0.3 + 0.6 * arch + sway) * press_scale
    pressure += noise * 0.10 * rng.normal(size=t)
    pressure = np.clip(pressure, 0.05, 1.5)
    depth = 0.10 + 0.25 * float(traits[1])
    phase = 2 * np.pi * float(traits[2]) + noise * 0.85 * rng.normal()
    stretch = 1.0 + noise * 0.2 * rng.normal()
    dt = 0.02 * (1.0 + depth * np.sin(2 * np.pi * u + phase)) * abs(stretch)
    dt += noise * 0.008 * np.abs(rng.normal(size=t))
    dt = np.maximum(dt, 1e-4)
    return np.stack([xy[:, 0], xy[:, 1], pressure, dt], axis=1)


def _audio_wave(traits: np.ndarray, rng: np.random.Generator, noise: float
                ) -> np.ndarray:
    """Three subject-pitched sinusoids under per-sample pitch shift, phase,
    spectral tilt, additive noise and recording level.

    The whole line comb rides a per-capture pitch offset, the way a voice
    sits higher or lower day to day, so the subject is the spacing between
    the lines rather than their absolute position. The level is applied
    after peak normalization, so overall magnitude is a pure capture
    artifact.
    """
    t = np.arange(AUDIO_SAMPLES) / SAMPLE_RATE
    freqs = (400.0 + 7000.0 * traits[0:3] + noise * 900.0 * rng.normal()
             + noise * 55.0 * rng.normal(3))
    tilt = 1.0 + noise * 0.35 * rng.normal()
    amps = np.array([0.5, 0.35, 0.25]) * tilt ** np.arange(3)
    wave = np.zeros(AUDIO_SAMPLES)
    for f, a in zip(freqs, amps):
        phase = noise * 2 * np.pi * rng.uniform()
        wave += a * np.sin(2 * np.pi * f * t + phase)
    wave += noise * 0.38 * rng.normal(size=AUDIO_SAMPLES)
    wave *= 0.95 / max(np.max(np.abs(wave)), 1e-12)
    wave *= 1.0 - 0.55 * noise * rng.uniform()
    return wave


def render_sample(identity: IdentitySpec, rng: np.random.Generator
                  ) -> BiometricSample:
    """One capture of a subject; all nuisance comes from ``rng``.

    Each renderer gets its own child stream so the modalities' nuisance
    draws are independent of one another and of renderer internals.
    """
    z = identity.latent
    traits = identity.traits
    r_points, r_face, r_image, r_seq, r_audio = rng.spawn(5)
    points = _control_points(z[12:28], r_points,
                             identity.noise_scales["sig_image"])
    ripple = z[28:31]
    return BiometricSample(
        subject_id=identity.subject_id,
        face=_face_image(z[0:12], r_face, identity.noise_scales["face"]),
        sig_image=_render_signature(points, r_image,
                                    identity.noise_scales["sig_image"]),
        sig_sequence=_signature_sequence(points, ripple, traits[6:9],
                                         z[31:36], r_seq,
                                         identity.noise_scales["sig_sequence"]),
        audio=_audio_wave(traits[9:12], r_audio,
                          identity.noise_scales["audio"]),
        sample_rate=SAMPLE_RATE,
    )


def gen_samples(config: GenConfig) -> list[BiometricSample]:
    """All captures of all subjects, in subject-major order."""
    out: list[BiometricSample] = []
    for i in range(config.n_subjects):
        identity = make_identity(config.seed, i, config.noise)
        for rng in _sample_streams(config.seed, i,
                                   config.samples_per_subject):
            out.append(render_sample(identity, rng))
    return out


def gen_dataset(config: GenConfig, directory) -> Path:
    """Render the configured captures into ``directory`` and write the
    manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    index_within: dict[str, int] = {}
    for sample in gen_samples(config):
        j = index_within.get(sample.subject_id, 0)
        index_within[sample.subject_id] = j + 1
        stem = f"{sample.subject_id}_r{j:02d}"
        records.append(save_sample(directory, stem, sample))
    manifest = directory / "manifest.json"
    write_manifest(manifest, records)
    return manifest


def gen_split(manifest_path, train_fraction: float, seed: int
              ) -> tuple[Path, Path]:
    """Per-subject stratified split into train and eval manifests.

    Both splits contain every subject; per subject the train share is
    round(fraction * count) clamped to keep at least one sample on each
    side. Output manifests sit next to the input so relative paths keep
    resolving.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    manifest_path = Path(manifest_path)
    records = load_manifest(manifest_path)
    by_subject: dict[str, list] = {}
    for rec in records:
        by_subject.setdefault(rec.subject_id, []).append(rec)
    rng = np.random.default_rng(seed)
    train, evaluation = [], []
    for subject in sorted(by_subject):
        group = by_subject[subject]
        if len(group) < 2:
            raise ValueError(
                f"subject {subject!r} has {len(group)} sample(s); the split "
                f"needs at least 2"
            )
        order = rng.permutation(len(group))
        n_train = int(round(train_fraction * len(group)))
        n_train = min(max(n_train, 1), len(group) - 1)
        train.extend(group[i] for i in order[:n_train])
        evaluation.extend(group[i] for i in order[n_train:])
    train_path = manifest_path.with_name(manifest_path.stem + "_train.json")
    eval_path = manifest_path.with_name(manifest_path.stem + "_eval.json")
    write_manifest(train_path, train)
    write_manifest(eval_path, evaluation)
    return train_path, eval_path
