"""On-disk formats for datasets: PGM/PPM images, WAV audio, CSV pen traces,
and the JSON manifest tying one subject's files together.

All image pixel values are stored 8-bit (maxval 255) and exposed as floats
in [0, 1]; audio is 16-bit PCM mono exposed as floats in [-1, 1]. Manifest
paths are relative to the manifest file's directory.
"""
from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import BiometricSample


class ManifestError(ValueError):
    """Manifest file is missing, malformed, or references bad records."""


@dataclass
class ManifestRecord:
    subject_id: str
    face_path: str
    sig_image_path: str
    sig_sequence_path: str
    audio_path: str


# ---------------------------------------------------------------------------
# netpbm images (P5 grayscale, P6 color), maxval 255


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM wants an HxW image, got {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_ppm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM wants an HxWx3 image, got {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_netpbm_tokens(f, count: int) -> list[int]:
    """Read whitespace-separated header integers, skipping # comments."""
    tokens: list[int] = []
    current = b""
    while len(tokens) < count:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated netpbm header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
        elif ch.isspace():
            if current:
                tokens.append(int(current))
                current = b""
        else:
            current += ch
    return tokens


def read_image(path) -> np.ndarray:
    """Read a P5 or P6 netpbm file to floats in [0, 1] (HxW or HxWx3)."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: not a P5/P6 netpbm file "
                             f"(magic {magic!r})")
        w, h, maxval = _read_netpbm_tokens(f, 3)
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got "
                             f"{maxval}")
        channels = 1 if magic == b"P5" else 3
        raw = f.read(w * h * channels)
        if len(raw) != w * h * channels:
            raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return data.reshape(h, w)
    return data.reshape(h, w, 3)


# ---------------------------------------------------------------------------
# audio (WAV, PCM-16, mono)


def write_wav(path, pcm: np.ndarray, sample_rate: int):
    pcm = np.asarray(pcm, dtype=np.float64).reshape(-1)
    ints = np.clip(np.rint(pcm * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(ints.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM, got "
                             f"{f.getnchannels()} ch x "
                             f"{f.getsampwidth() * 8} bit")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return pcm, rate


# ---------------------------------------------------------------------------
# pen-trace sequences (CSV)

_SEQ_HEADER = "x,y,pressure,dt"


def write_sequence_csv(path, seq: np.ndarray):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != 4:
        raise ValueError(f"sequence must be Tx4, got {seq.shape}")
    lines = [_SEQ_HEADER]
    for row in seq:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sequence_csv(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0].strip() != _SEQ_HEADER:
        raise ValueError(f"{path}: expected header '{_SEQ_HEADER}'")
    rows = [[float(v) for v in line.split(",")] for line in text[1:]]
    seq = np.array(rows, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != 4:
        raise ValueError(f"{path}: malformed sequence rows")
    return seq


# ---------------------------------------------------------------------------
# manifest


def write_manifest(path, records: list[ManifestRecord]):
    payload = {"records": [vars(r) for r in records]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n",
                          encoding="utf-8")


def load_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON at line {e.lineno}: "
                            f"{e.msg}")
    if not isinstance(payload, dict) or "records" not in payload:
        raise ManifestError(f"{path}: top-level 'records' list missing")
    records = []
    keys = ("subject_id", "face_path", "sig_image_path", "sig_sequence_path",
            "audio_path")
    for i, rec in enumerate(payload["records"]):
        missing = [k for k in keys if k not in rec]
        if missing:
            raise ManifestError(f"{path}: record {i} missing keys {missing}")
        records.append(ManifestRecord(**{k: str(rec[k]) for k in keys}))
    return records


def load_samples(manifest_path) -> list[BiometricSample]:
    """Load every record of a manifest into memory as BiometricSamples."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    samples = []
    for rec in load_manifest(manifest_path):
        audio, rate = read_wav(base / rec.audio_path)
        face = read_image(base / rec.face_path)
        if face.ndim != 3:
            raise ManifestError(f"{rec.face_path}: face image must be color "
                                f"(P6)")
        samples.append(BiometricSample(
            subject_id=rec.subject_id,
            face=face,
            sig_image=read_image(base / rec.sig_image_path),
            sig_sequence=read_sequence_csv(base / rec.sig_sequence_path),
            audio=audio,
            sample_rate=rate,
        ))
    return samples


def save_sample(directory, stem: str, sample: BiometricSample) -> ManifestRecord:
    """Write one sample's four files under ``directory``; paths in the
    returned record are relative to that directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rec = ManifestRecord(
        subject_id=sample.subject_id,
        face_path=f"{stem}_face.ppm",
        sig_image_path=f"{stem}_sig.pgm",
        sig_sequence_path=f"{stem}_seq.csv",
        audio_path=f"{stem}_audio.wav",
    )
    write_ppm(directory / rec.face_path, sample.face)
    write_pgm(directory / rec.sig_image_path, sample.sig_image)
    write_sequence_csv(directory / rec.sig_sequence_path, sample.sig_sequence)
    write_wav(directory / rec.audio_path, sample.audio, sample.sample_rate)
    return rec
