"""Flat key=value run configuration with a canonical text rendering.

One file carries every hyperparameter of a run. The canonical rendering
(fixed key order, one ``key = value`` line each) feeds a sha256 fingerprint
that model bundles embed and verify on load, so any bundle can be traced to
the exact settings that produced it. ``BIOFUSE_SEED`` in the environment
supplies the seed when neither the file nor the caller sets one.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .network import BackboneConfig, TrainConfig

SEED_ENV_VAR = "BIOFUSE_SEED"


class ConfigFileError(ValueError):
    """A config file or override could not be parsed."""


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of a full run, desk-scale defaults."""

    # capture preprocessing
    image_size: int = 32
    seq_len: int = 32
    audio_len: int = 256
    window: int = 16
    hop: int = 8
    # synthetic data
    n_subjects: int = 7
    samples_per_subject: int = 20
    noise: float = 1.0
    train_fraction: float = 0.5
    # backbone widths
    conv1_channels: int = 64
    conv2_channels: int = 128
    rnn_hidden: int = 16
    seq_refine: int = 16
    image_refine: int = 32
    # backbone training
    epochs: int = 46
    learning_rate: float = 0.05
    batch_size: int = 8
    # fusion (0 components selects the smallest count reaching the target)
    pca_components: int = 0
    variance_target: float = 0.95
    # verifier
    n_trees: int = 100
    shrinkage: float = 0.1
    max_depth: int = 3
    min_leaf: int = 2
    impostor_ratio: float = 3.0
    # global determinism
    seed: int = 0

    def __post_init__(self):
        for name in ("image_size", "seq_len", "audio_len", "window", "hop",
                     "n_subjects", "samples_per_subject", "conv1_channels",
                     "conv2_channels", "rnn_hidden", "seq_refine",
                     "image_refine", "batch_size", "max_depth", "min_leaf"):
            if getattr(self, name) < 1:
                raise ConfigFileError(f"{name} must be >= 1")
        # epochs 0 keeps the randomly initialized backbone (baseline runs)
        if self.epochs < 0:
            raise ConfigFileError("epochs must be >= 0")
        if self.window > self.audio_len:
            raise ConfigFileError("window must not exceed audio_len")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigFileError("train_fraction must lie in (0, 1)")
        if self.pca_components < 0 or self.n_trees < 0:
            raise ConfigFileError("pca_components and n_trees must be >= 0")
        if self.noise < 0 or self.learning_rate <= 0:
            raise ConfigFileError("noise must be >= 0 and learning_rate > 0")

    @property
    def audio_bins(self) -> int:
        """Spectrogram rows produced by the configured window."""
        return self.window // 2 + 1


def desk() -> PipelineConfig:
    """The default desk-scale configuration."""
    return PipelineConfig()


def paper() -> PipelineConfig:
    """Published-scale sizes (224 px, 256-wide refinement, 256/128 window).

    For structural accounting only; training at this scale is out of reach
    of the test environment.
    """
    return PipelineConfig(image_size=224, window=256, hop=128,
                          audio_len=16000, rnn_hidden=128, seq_refine=128,
                          image_refine=256)


def backbone_config(cfg: PipelineConfig, n_classes: int) -> BackboneConfig:
    return BackboneConfig(
        image_size=cfg.image_size,
        n_classes=n_classes,
        conv1_channels=cfg.conv1_channels,
        conv2_channels=cfg.conv2_channels,
        rnn_hidden=cfg.rnn_hidden,
        seq_refine=cfg.seq_refine,
        image_refine=cfg.image_refine,
        seq_input_dim=4,
        audio_input_dim=cfg.audio_bins,
    )


def train_config(cfg: PipelineConfig) -> TrainConfig:
    return TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                       batch_size=cfg.batch_size, seed=cfg.seed)


# ---------------------------------------------------------------------------
# canonical text and fingerprint


def config_text(cfg: PipelineConfig) -> str:
    """Canonical rendering: declared key order, ``key = value`` lines."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def fingerprint(cfg: PipelineConfig) -> bytes:
    """32-byte sha256 digest of the canonical text."""
    return hashlib.sha256(config_text(cfg).encode("utf-8")).digest()


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, text: str, where: str):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ConfigFileError(f"{where}: unknown config key {key!r}")
    text = text.strip()
    try:
        if kind == "int" or kind is int:
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigFileError(f"{where}: cannot parse {key} value {text!r}")


def parse_config_text(text: str, source: str = "<config>"
                      ) -> dict[str, int | float]:
    """Parse ``key = value`` lines into a typed mapping.

    Blank lines and ``#`` comments are skipped; unknown keys, duplicate
    keys and malformed lines are reported with their line number.
    """
    values: dict[str, int | float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigFileError(f"{where}: expected 'key = value', got "
                                  f"{raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigFileError(f"{where}: duplicate key {key!r}")
        values[key] = _coerce(key, value, where)
    return values


def load_config(path=None, overrides: Mapping[str, str] | None = None
                ) -> PipelineConfig:
    """Resolve a configuration from file, overrides and the environment.

    Precedence per key: override, then file, then (for the seed only) the
    BIOFUSE_SEED environment variable, then the desk default.
    """
    values: dict[str, int | float] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigFileError(f"config file not found: {path}")
        values.update(parse_config_text(text, source=str(path)))
    for key, raw in (overrides or {}).items():
        values[key] = _coerce(key, str(raw), "<override>")
    if "seed" not in values and SEED_ENV_VAR in os.environ:
        raw = os.environ[SEED_ENV_VAR]
        try:
            values["seed"] = int(raw)
        except ValueError:
            raise ConfigFileError(f"{SEED_ENV_VAR} must be an integer, got "
                                  f"{raw!r}")
    return PipelineConfig(**values)
