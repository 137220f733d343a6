"""Sample containers and raw-signal preprocessing.

A raw capture session is a BiometricSample: one face photo, one static
signature scan, one dynamic pen trace, one voice clip. Preprocessing maps it
to fixed-extent tensors so every downstream consumer sees uniform shapes
regardless of capture geometry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BlankImageError(ValueError):
    """Signature image contains no ink (no pixel darker than 0.5)."""


@dataclass
class BiometricSample:
    """One enrollment/probe capture across all four modalities.

    face: H x W x 3 RGB, values in [0, 1]
    sig_image: H x W grayscale, values in [0, 1], dark ink on light ground
    sig_sequence: T1 x 4 pen trace, channels (x, y, pressure, dt)
    audio: mono PCM in [-1, 1] at sample_rate Hz
    """

    subject_id: str
    face: np.ndarray
    sig_image: np.ndarray
    sig_sequence: np.ndarray
    audio: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got "
                             f"{self.sample_rate}")
        if self.face.ndim != 3 or self.face.shape[2] != 3 or \
                min(self.face.shape[:2]) < 1:
            raise ValueError(f"face must be HxWx3, got {self.face.shape}")
        if self.sig_image.ndim != 2 or min(self.sig_image.shape) < 1:
            raise ValueError(f"sig_image must be HxW, got "
                             f"{self.sig_image.shape}")


@dataclass
class PreprocessedSample:
    """Fixed-extent tensors ready for the feature extractor.

    face and sig_image are channel-first 3 x S x S (the grayscale signature
    is replicated across channels so both image paths share kernel shapes);
    sig_sequence is T x 4; audio_spectrogram is F x Ta magnitudes.
    """

    subject_id: str
    face: np.ndarray
    sig_image: np.ndarray
    sig_sequence: np.ndarray
    audio_spectrogram: np.ndarray


# ---------------------------------------------------------------------------
# image resampling


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray,
                     fill: float | None = None) -> np.ndarray:
    """Sample a 2-D image at fractional (row, col) coordinates.

    Coordinates outside the grid are edge-clamped, or replaced by ``fill``
    when one is given.
    """
    h, w = img.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0

    def at(rr, cc):
        return img[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]

    val = (at(y0, x0) * (1 - wy) * (1 - wx)
           + at(y0, x0 + 1) * (1 - wy) * wx
           + at(y0 + 1, x0) * wy * (1 - wx)
           + at(y0 + 1, x0 + 1) * wy * wx)
    if fill is not None:
        outside = (ys < 0) | (ys > h - 1) | (xs < 0) | (xs > w - 1)
        val = np.where(outside, fill, val)
    return val


def resize_image(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an HxW or HxWxC image to out_h x out_w.

    Corners map to corners (the source grid spans [0, H-1] x [0, W-1]), so
    resizing to the same extents is the identity and constants stay constant.
    """
    img = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target extents must be positive, got "
                         f"{out_h}x{out_w}")
    if img.ndim == 3:
        return np.stack(
            [resize_image(img[:, :, c], out_h, out_w)
             for c in range(img.shape[2])], axis=2)
    if img.ndim != 2:
        raise ValueError(f"expected HxW or HxWxC image, got shape {img.shape}")
    h, w = img.shape
    if h < 1 or w < 1:
        raise ValueError("source image has an empty extent")
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(img, grid_y, grid_x)


def _rotate_image(img: np.ndarray, phi: float, fill: float = 1.0) -> np.ndarray:
    """Rotate image content by ``phi`` radians about its center.

    Angles follow array coordinates (x = column, y = row): positive phi turns
    the +x direction toward +y. Vacated pixels get ``fill``.
    """
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.indices((h, w))
    dx = cols - cx
    dy = rows - cy
    c, s = np.cos(phi), np.sin(phi)
    src_x = cx + c * dx + s * dy
    src_y = cy - s * dx + c * dy
    return _bilinear_sample(img, src_y, src_x, fill=fill)


# ---------------------------------------------------------------------------
# audio


def trim_or_pad_audio(pcm, target_len: int) -> np.ndarray:
    """Force a PCM vector to exactly target_len samples.

    Longer inputs keep their first target_len samples; shorter ones get
    zeros appended.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be positive, got {target_len}")
    pcm = np.asarray(pcm, dtype=np.float64).reshape(-1)
    if pcm.size >= target_len:
        return pcm[:target_len].copy()
    return np.concatenate([pcm, np.zeros(target_len - pcm.size)])


def spectrogram(pcm, window: int, hop: int) -> np.ndarray:
    """Magnitude spectrogram with a Hann window: F x Ta, F = window//2 + 1.

    Frame t covers samples [t*hop, t*hop + window); trailing samples that do
    not fill a frame are dropped, so Ta = (len - window)//hop + 1.
    """
    pcm = np.asarray(pcm, dtype=np.float64).reshape(-1)
    if window < 2:
        raise ValueError(f"window must be at least 2, got {window}")
    if hop < 1:
        raise ValueError(f"hop must be positive, got {hop}")
    if window > pcm.size:
        raise ValueError(f"window {window} exceeds signal length {pcm.size}")
    n_frames = (pcm.size - window) // hop + 1
    idx = hop * np.arange(n_frames)[:, None] + np.arange(window)[None, :]
    frames = pcm[idx] * np.hanning(window)
    return np.abs(np.fft.rfft(frames, axis=1)).T


# ---------------------------------------------------------------------------
# dynamic signature sequences


def standardize_sequence(seq, target_t: int) -> np.ndarray:
    """Normalize pen-trace channels, then resample to exactly target_t rows.

    x and y become zero-mean with unit range (divisor 1 when the channel is
    constant), pressure is min-max scaled to [0, 1] (constant channel maps
    to all zeros), dt is divided by the total duration. Resampling is linear
    over a uniform arc parameter, so an already-standardized length-target_t
    sequence passes through unchanged.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != 4:
        raise ValueError(f"sequence must be Tx4, got shape {seq.shape}")
    if seq.shape[0] < 2:
        raise ValueError(f"sequence needs at least 2 rows, got {seq.shape[0]}")
    if target_t < 2:
        raise ValueError(f"target_t must be at least 2, got {target_t}")
    x, y, pressure, dt = (seq[:, i].copy() for i in range(4))
    for pos in (x, y):
        pos -= pos.mean()
        span = pos.max() - pos.min()
        pos /= span if span > 0 else 1.0
    p_span = pressure.max() - pressure.min()
    pressure = (pressure - pressure.min()) / (p_span if p_span > 0 else 1.0)
    total = dt.sum()
    if total != 0:
        dt = dt / total
    old_pos = np.linspace(0.0, 1.0, seq.shape[0])
    new_pos = np.linspace(0.0, 1.0, target_t)
    return np.stack([np.interp(new_pos, old_pos, col)
                     for col in (x, y, pressure, dt)], axis=1)


# ---------------------------------------------------------------------------
# static signature images


def _ink_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def _ink_orientation(mask: np.ndarray) -> float:
    """Principal-axis angle of the ink pixels, from second central moments."""
    ys, xs = np.nonzero(mask)
    if ys.size < 2:
        return 0.0
    x = xs - xs.mean()
    y = ys - ys.mean()
    mu20 = float(x @ x)
    mu02 = float(y @ y)
    mu11 = float(x @ y)
    return 0.5 * np.arctan2(2.0 * mu11, mu20 - mu02)


def normalize_signature_image(img, out_size: int,
                              margin_frac: float = 0.1) -> np.ndarray:
    """Standardize a signature scan's position, scale and orientation.

    The ink (pixels below 0.5) is cropped to its bounding box first, so the
    result is exactly invariant to where the signature sat on the page. The
    crop is then rotated so the ink's principal axis runs horizontally, and
    rescaled preserving aspect ratio into an out_size x out_size white square
    with a margin.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"signature image must be HxW, got {img.shape}")
    margin = max(1, int(round(out_size * margin_frac)))
    box = out_size - 2 * margin
    if box < 1:
        raise ValueError(f"out_size {out_size} leaves no room inside the "
                         f"margin")
    ink = img < 0.5
    if not ink.any():
        raise BlankImageError("no ink found (no pixel below 0.5)")
    r0, r1, c0, c1 = _ink_bbox(ink)
    crop = img[r0:r1, c0:c1]

    # rotate on a comfortably padded white canvas so nothing clips
    h, w = crop.shape
    side = int(np.ceil(np.hypot(h, w))) + 2
    canvas = np.ones((side, side))
    pr, pc = (side - h) // 2, (side - w) // 2
    canvas[pr:pr + h, pc:pc + w] = crop
    theta = _ink_orientation(canvas < 0.5)
    if abs(theta) > 1e-3:
        canvas = _rotate_image(canvas, -theta, fill=1.0)
        mask = canvas < 0.5
        if not mask.any():
            # interpolation washed the ink out; fall back to anything dark
            mask = canvas < 0.9
        if mask.any():
            r0, r1, c0, c1 = _ink_bbox(mask)
            canvas = canvas[r0:r1, c0:c1]
    else:
        canvas = crop

    h, w = canvas.shape
    scale = min(box / h, box / w)
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    resized = resize_image(canvas, nh, nw)
    out = np.ones((out_size, out_size))
    top = (out_size - nh) // 2
    left = (out_size - nw) // 2
    out[top:top + nh, left:left + nw] = resized
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# full per-sample pipeline


def preprocess_sample(sample: BiometricSample, *, image_size: int,
                      seq_len: int, audio_len: int, window: int,
                      hop: int) -> PreprocessedSample:
    """Map a raw sample to fixed-extent tensors.

    Output extents depend only on the arguments, never on the capture sizes,
    and the whole map is deterministic.
    """
    face = resize_image(sample.face, image_size, image_size)
    face = np.transpose(face, (2, 0, 1))
    sig = normalize_signature_image(sample.sig_image, image_size)
    sig = np.repeat(sig[None, :, :], 3, axis=0)
    seq = standardize_sequence(sample.sig_sequence, seq_len)
    pcm = trim_or_pad_audio(sample.audio, audio_len)
    spec = spectrogram(pcm, window, hop)
    return PreprocessedSample(subject_id=sample.subject_id, face=face,
                              sig_image=sig, sig_sequence=seq,
                              audio_spectrogram=spec)
