"""Binary model bundles with a byte-exact round trip.

Layout: magic ``BFM1``, format version as little-endian u16, a u32 section
count, then length-prefixed (u64) sections in fixed order: canonical config
text, backbone weights, fusion basis, verifier trees, enrollment templates,
and the 32-byte sha256 fingerprint of the config text. All floats are
little-endian 64-bit, all writers iterate in deterministic order, so equal
models produce equal bytes.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path

import numpy as np

from .config import PipelineConfig, backbone_config, config_text, fingerprint
from .config import parse_config_text
from .fusion import FusionModel
from .gbm import GbmModel, RegressionTree, _Node
from .network import BackboneModel, init_backbone

MAGIC = b"BFM1"
FORMAT_VERSION = 1
_SECTION_COUNT = 6


class BundleError(ValueError):
    """A model bundle could not be read or is internally inconsistent."""


class BundleMagicError(BundleError):
    """The file does not start with the bundle magic."""


class BundleVersionError(BundleError):
    """The bundle's format version is not supported."""


class BundleTruncatedError(BundleError):
    """The file ended before a declared structure was complete."""


class BundleFingerprintError(BundleError):
    """The stored fingerprint does not match the stored config."""


class BundleFormatError(BundleError):
    """A section's content violates the format or the dimension chain."""


@dataclass
class PipelineBundle:
    """Everything needed to evaluate or authenticate: the trained weights,
    the projection basis, the verifier, and per-subject templates."""

    config: PipelineConfig
    backbone: BackboneModel
    fusion: FusionModel
    gbm: GbmModel
    templates: dict[str, np.ndarray]
    version: int = FORMAT_VERSION

    def fingerprint(self) -> bytes:
        return fingerprint(self.config)


def validate_bundle(bundle: PipelineBundle):
    """Check the feature dimension chain backbone -> fusion -> verifier."""
    d = bundle.backbone.config.feature_dim
    if bundle.fusion.input_dim != d:
        raise BundleFormatError(
            f"fusion expects {bundle.fusion.input_dim}-dim features, "
            f"backbone produces {d}"
        )
    if bundle.gbm.n_features != bundle.fusion.k:
        raise BundleFormatError(
            f"verifier expects {bundle.gbm.n_features} features, fusion "
            f"projects to {bundle.fusion.k}"
        )
    if not bundle.templates:
        raise BundleFormatError("bundle holds no enrollment templates")
    for sid, vec in bundle.templates.items():
        if vec.shape != (bundle.fusion.k,):
            raise BundleFormatError(
                f"template for {sid!r} has shape {vec.shape}, expected "
                f"({bundle.fusion.k},)"
            )


# ---------------------------------------------------------------------------
# low-level packing


def _pack_floats(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise BundleTruncatedError(
                f"{self.name}: needed {n} bytes at offset {self.pos}, only "
                f"{len(self.data) - self.pos} remain"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(
            np.float64)

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def done(self):
        if self.pos != len(self.data):
            raise BundleFormatError(
                f"{self.name}: {len(self.data) - self.pos} trailing bytes"
            )


# ---------------------------------------------------------------------------
# sections


def _backbone_section(backbone: BackboneModel) -> bytes:
    out = BytesIO()
    named = backbone.named_parameters()
    out.write(struct.pack("<I", backbone.config.n_classes))
    out.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        out.write(_pack_str(name))
        out.write(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            out.write(struct.pack("<I", dim))
        out.write(_pack_floats(tensor.data))
    return out.getvalue()


def _read_backbone(section: bytes, cfg: PipelineConfig) -> BackboneModel:
    r = _Reader(section, "backbone section")
    n_classes = r.u32()
    if n_classes < 1:
        raise BundleFormatError("backbone section: n_classes must be >= 1")
    model = init_backbone(backbone_config(cfg, n_classes), seed=0)
    expected = model.named_parameters()
    n_tensors = r.u32()
    if n_tensors != len(expected):
        raise BundleFormatError(
            f"backbone section: {n_tensors} tensors, expected "
            f"{len(expected)} for this config"
        )
    for want_name, tensor in expected:
        name = r.string()
        if name != want_name:
            raise BundleFormatError(
                f"backbone section: tensor {name!r} where {want_name!r} was "
                f"expected"
            )
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        if shape != tensor.shape:
            raise BundleFormatError(
                f"backbone section: {name} has shape {shape}, config "
                f"implies {tensor.shape}"
            )
        tensor.data = r.floats(int(np.prod(shape, dtype=np.int64))
                               ).reshape(shape)
    r.done()
    return model


def _fusion_section(fusion: FusionModel) -> bytes:
    out = BytesIO()
    d, k = fusion.components.shape
    out.write(struct.pack("<II", d, k))
    out.write(_pack_floats(fusion.mean))
    out.write(_pack_floats(fusion.components))
    out.write(_pack_floats(fusion.eigenvalues))
    out.write(struct.pack("<d", fusion.total_variance))
    return out.getvalue()


def _read_fusion(section: bytes) -> FusionModel:
    r = _Reader(section, "fusion section")
    d = r.u32()
    k = r.u32()
    if d < 1 or k < 1 or k > d:
        raise BundleFormatError(f"fusion section: bad dimensions D={d} k={k}")
    mean = r.floats(d)
    components = r.floats(d * k).reshape(d, k)
    eigenvalues = r.floats(k)
    total_variance = r.f64()
    r.done()
    return FusionModel(mean=mean, components=components,
                       eigenvalues=eigenvalues, total_variance=total_variance)


def _write_tree(out: BytesIO, node: _Node):
    if node.feature is None:
        out.write(struct.pack("<B", 0))
        out.write(struct.pack("<d", node.value))
    else:
        out.write(struct.pack("<Bid", 1, node.feature, node.threshold))
        _write_tree(out, node.left)
        _write_tree(out, node.right)


def _read_tree(r: _Reader) -> _Node:
    tag = r.u8()
    if tag == 0:
        node = _Node()
        node.value = r.f64()
        return node
    if tag != 1:
        raise BundleFormatError(f"verifier section: unknown node tag {tag}")
    node = _Node()
    feature, threshold = struct.unpack("<id", r.take(12))
    node.feature = feature
    node.threshold = threshold
    node.left = _read_tree(r)
    node.right = _read_tree(r)
    return node


def _gbm_section(gbm: GbmModel) -> bytes:
    out = BytesIO()
    out.write(struct.pack("<ddII", gbm.base_score, gbm.shrinkage,
                          gbm.n_features, len(gbm.trees)))
    for tree in gbm.trees:
        _write_tree(out, tree.root)
    return out.getvalue()


def _read_gbm(section: bytes) -> GbmModel:
    r = _Reader(section, "verifier section")
    base_score, shrinkage, n_features, n_trees = struct.unpack(
        "<ddII", r.take(24))
    trees = [RegressionTree(root=_read_tree(r), n_features=n_features)
             for _ in range(n_trees)]
    r.done()
    return GbmModel(base_score=base_score, shrinkage=shrinkage,
                    n_features=n_features, trees=trees)


def _templates_section(templates: dict[str, np.ndarray]) -> bytes:
    out = BytesIO()
    out.write(struct.pack("<I", len(templates)))
    for sid in sorted(templates):
        vec = np.asarray(templates[sid], dtype=np.float64)
        out.write(_pack_str(sid))
        out.write(struct.pack("<I", vec.shape[0]))
        out.write(_pack_floats(vec))
    return out.getvalue()


def _read_templates(section: bytes) -> dict[str, np.ndarray]:
    r = _Reader(section, "templates section")
    count = r.u32()
    templates: dict[str, np.ndarray] = {}
    for _ in range(count):
        sid = r.string()
        k = r.u32()
        if sid in templates:
            raise BundleFormatError(
                f"templates section: duplicate subject {sid!r}")
        templates[sid] = r.floats(k)
    r.done()
    return templates


# ---------------------------------------------------------------------------
# whole files


def save_bundle(path, bundle: PipelineBundle) -> Path:
    """Write the bundle; equal models always produce equal bytes."""
    validate_bundle(bundle)
    if bundle.version != FORMAT_VERSION:
        raise BundleVersionError(
            f"can only write format version {FORMAT_VERSION}, bundle says "
            f"{bundle.version}"
        )
    text = config_text(bundle.config)
    sections = [
        text.encode("utf-8"),
        _backbone_section(bundle.backbone),
        _fusion_section(bundle.fusion),
        _gbm_section(bundle.gbm),
        _templates_section(bundle.templates),
        hashlib.sha256(text.encode("utf-8")).digest(),
    ]
    out = BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    out.write(struct.pack("<I", len(sections)))
    for section in sections:
        out.write(struct.pack("<Q", len(section)))
        out.write(section)
    path = Path(path)
    path.write_bytes(out.getvalue())
    return path


def load_bundle(path) -> PipelineBundle:
    """Read and fully validate a bundle written by save_bundle."""
    path = Path(path)
    data = path.read_bytes()
    r = _Reader(data, str(path))
    if r.take(len(MAGIC)) != MAGIC:
        raise BundleMagicError(f"{path}: not a model bundle (bad magic)")
    version = r.u16()
    if version != FORMAT_VERSION:
        raise BundleVersionError(
            f"{path}: unsupported format version {version}; this build "
            f"reads version {FORMAT_VERSION}"
        )
    n_sections = r.u32()
    if n_sections != _SECTION_COUNT:
        raise BundleFormatError(
            f"{path}: {n_sections} sections, expected {_SECTION_COUNT}"
        )
    sections = [r.take(r.u64()) for _ in range(n_sections)]
    r.done()

    text_bytes, backbone_raw, fusion_raw, gbm_raw, templates_raw, digest = \
        sections
    if digest != hashlib.sha256(text_bytes).digest():
        raise BundleFingerprintError(
            f"{path}: config fingerprint mismatch; the bundle is corrupt or "
            f"was edited"
        )
    try:
        text = text_bytes.decode("utf-8")
        cfg = PipelineConfig(**parse_config_text(text, source=f"{path}#config"))
    except (UnicodeDecodeError, ValueError) as e:
        raise BundleFormatError(f"{path}: embedded config is invalid: {e}")

    backbone = _read_backbone(backbone_raw, cfg)
    fusion = _read_fusion(fusion_raw)
    gbm = _read_gbm(gbm_raw)
    templates = _read_templates(templates_raw)
    bundle = PipelineBundle(config=cfg, backbone=backbone, fusion=fusion,
                            gbm=gbm, templates=templates, version=version)
    try:
        validate_bundle(bundle)
    except BundleFormatError as e:
        raise BundleFormatError(f"{path}: {e}")
    return bundle
