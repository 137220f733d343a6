"""Shared-trunk feature extraction backbone with per-modality refinement.

The two image channels (face, signature image) run through one pair of
convolution kernel tensors, and the two sequence channels (dynamic signature,
audio spectrogram frames) drive one hidden-to-hidden recurrent matrix, so the
trunk weights are literally shared storage. Each channel then owns a small
refinement stack and a classification head used during training. The eight
shared and refined component vectors, concatenated in a fixed order, form the
integrated feature consumed by the fusion stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datamodel import PreprocessedSample
from .tensor import (
    GradTape,
    ShapeError,
    Tensor,
    add,
    conv2d,
    dense,
    flatten,
    global_avg_pool,
    matmul,
    maxpool2d,
    relu,
    softmax_cross_entropy,
    softmax_probs,
    tanh,
)

IMAGE_MODALITIES = ("face", "sig_image")
SEQUENCE_MODALITIES = ("sig_sequence", "audio")
MODALITIES = IMAGE_MODALITIES + SEQUENCE_MODALITIES

# concatenation order of the integrated feature: the four shared components
# (pooled image maps, final hidden states) followed by the four refined ones
COMPONENT_NAMES = (
    "shared_face",
    "shared_sig_image",
    "rnn_sig_sequence",
    "rnn_audio",
    "refined_face",
    "refined_sig_image",
    "refined_sig_sequence",
    "refined_audio",
)


class ConfigError(ValueError):
    """Configuration or dataset shape makes the requested run impossible."""


@dataclass(frozen=True)
class BackboneConfig:
    """Static sizes of the backbone.

    ``image_size`` must be divisible by 4 (two halving pools). The default
    widths are the desk-scale working set; the published-scale variant uses
    image_size=224 and image_refine=256 with the same channel chain.
    """

    image_size: int = 32
    n_classes: int = 7
    conv1_channels: int = 64
    conv2_channels: int = 128
    rnn_hidden: int = 16
    seq_refine: int = 16
    image_refine: int = 32
    seq_input_dim: int = 4
    audio_input_dim: int = 9

    def __post_init__(self):
        if self.image_size < 4 or self.image_size % 4 != 0:
            raise ConfigError(
                f"image_size must be a positive multiple of 4, got "
                f"{self.image_size}"
            )
        for name in ("n_classes", "conv1_channels", "conv2_channels",
                     "rnn_hidden", "seq_refine", "image_refine",
                     "seq_input_dim", "audio_input_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def pooled_size(self) -> int:
        """Spatial extent of the image map after both pooling stages."""
        return self.image_size // 4

    @property
    def flat_dim(self) -> int:
        """Length of the flattened image map feeding the refinement dense."""
        return self.conv2_channels * self.pooled_size * self.pooled_size

    @property
    def component_lengths(self) -> tuple[int, ...]:
        """Lengths of the integrated-feature components, in order."""
        return (
            self.conv2_channels,
            self.conv2_channels,
            self.rnn_hidden,
            self.rnn_hidden,
            self.image_refine,
            self.image_refine,
            self.seq_refine,
            self.seq_refine,
        )

    @property
    def feature_dim(self) -> int:
        """Total integrated feature length D."""
        return sum(self.component_lengths)


class BackboneModel:
    """Parameter tensors of the backbone, with shared trunk storage.

    The conv kernel tensors and the recurrent matrix appear exactly once;
    both image paths and both sequence paths read the same objects. Biases,
    input projections, refinement stacks and heads are per modality.
    """

    def __init__(self, config: BackboneConfig, *, conv1_kernels: Tensor,
                 conv1_bias: dict[str, Tensor], conv2_kernels: Tensor,
                 conv2_bias: dict[str, Tensor], rnn_shared: Tensor,
                 rnn_in: dict[str, Tensor], rnn_bias: dict[str, Tensor],
                 refine_w: dict[str, Tensor], refine_b: dict[str, Tensor],
                 head_w: dict[str, Tensor], head_b: dict[str, Tensor]):
        self.config = config
        self.conv1_kernels = conv1_kernels
        self.conv1_bias = conv1_bias
        self.conv2_kernels = conv2_kernels
        self.conv2_bias = conv2_bias
        self.rnn_shared = rnn_shared
        self.rnn_in = rnn_in
        self.rnn_bias = rnn_bias
        self.refine_w = refine_w
        self.refine_b = refine_b
        self.head_w = head_w
        self.head_b = head_b

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """All distinct parameter tensors in a fixed, serialization-stable
        order; shared tensors appear exactly once."""
        named: list[tuple[str, Tensor]] = [
            ("conv1_kernels", self.conv1_kernels),
            ("conv1_bias_face", self.conv1_bias["face"]),
            ("conv1_bias_sig_image", self.conv1_bias["sig_image"]),
            ("conv2_kernels", self.conv2_kernels),
            ("conv2_bias_face", self.conv2_bias["face"]),
            ("conv2_bias_sig_image", self.conv2_bias["sig_image"]),
            ("rnn_shared", self.rnn_shared),
        ]
        for m in SEQUENCE_MODALITIES:
            named.append((f"rnn_in_{m}", self.rnn_in[m]))
            named.append((f"rnn_bias_{m}", self.rnn_bias[m]))
        for m in MODALITIES:
            named.append((f"refine_w_{m}", self.refine_w[m]))
            named.append((f"refine_b_{m}", self.refine_b[m]))
        for m in MODALITIES:
            named.append((f"head_w_{m}", self.head_w[m]))
            named.append((f"head_b_{m}", self.head_b[m]))
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def init_backbone(config: BackboneConfig, seed: int = 0) -> BackboneModel:
    """Fresh model with 1/sqrt(fan_in)-scaled normal weights, zero biases."""
    return _init_from_rng(config, np.random.default_rng(seed))


def _init_from_rng(config: BackboneConfig, rng: np.random.Generator
                   ) -> BackboneModel:
    c1, c2 = config.conv1_channels, config.conv2_channels
    h, hs, r = config.rnn_hidden, config.seq_refine, config.image_refine

    def w(shape, fan_in):
        arr = rng.standard_normal(shape) / np.sqrt(fan_in)
        return Tensor(arr, requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n), requires_grad=True)

    refine_in = {"face": config.flat_dim, "sig_image": config.flat_dim,
                 "sig_sequence": h, "audio": h}
    refine_out = {"face": r, "sig_image": r, "sig_sequence": hs, "audio": hs}
    seq_in = {"sig_sequence": config.seq_input_dim,
              "audio": config.audio_input_dim}
    return BackboneModel(
        config,
        conv1_kernels=w((c1, 3, 3, 3), 3 * 9),
        conv1_bias={m: b(c1) for m in IMAGE_MODALITIES},
        conv2_kernels=w((c2, c1, 3, 3), c1 * 9),
        conv2_bias={m: b(c2) for m in IMAGE_MODALITIES},
        rnn_shared=w((h, h), h),
        rnn_in={m: w((h, seq_in[m]), seq_in[m]) for m in SEQUENCE_MODALITIES},
        rnn_bias={m: b(h) for m in SEQUENCE_MODALITIES},
        refine_w={m: w((refine_out[m], refine_in[m]), refine_in[m])
                  for m in MODALITIES},
        refine_b={m: b(refine_out[m]) for m in MODALITIES},
        head_w={m: w((config.n_classes, refine_out[m]), refine_out[m])
                for m in MODALITIES},
        head_b={m: b(config.n_classes) for m in MODALITIES},
    )


# ---------------------------------------------------------------------------
# forward paths


def _as_input(value, ndim: int, what: str) -> Tensor:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{what} must be {ndim}-D, got shape {arr.shape}")
    return Tensor(arr)


def shared_cnn_forward(model: BackboneModel, img, modality: str) -> Tensor:
    """Two conv+relu+pool stages over a 3xSxS image; kernels are the shared
    tensors, the bias vectors belong to ``modality``."""
    if modality not in IMAGE_MODALITIES:
        raise ValueError(f"unknown image modality {modality!r}; expected one "
                         f"of {IMAGE_MODALITIES}")
    s = model.config.image_size
    x = _as_input(img, 3, "image input")
    if x.shape != (3, s, s):
        raise ShapeError(f"image input must be 3x{s}x{s}, got {x.shape}")
    x = conv2d(x, model.conv1_kernels, model.conv1_bias[modality], padding=1)
    x = maxpool2d(relu(x), 2, 2)
    x = conv2d(x, model.conv2_kernels, model.conv2_bias[modality], padding=1)
    x = maxpool2d(relu(x), 2, 2)
    return x


def shared_rnn_forward(model: BackboneModel, seq, modality: str) -> Tensor:
    """Tanh recurrence h_t = tanh(W_rnn h_{t-1} + W_x x_t + b) from h_0 = 0,
    returning the final hidden state. The hidden-to-hidden matrix is the
    shared tensor; the input projection and bias belong to ``modality``."""
    if modality not in SEQUENCE_MODALITIES:
        raise ValueError(f"unknown sequence modality {modality!r}; expected "
                         f"one of {SEQUENCE_MODALITIES}")
    x = _as_input(seq, 2, "sequence input")
    steps, d_in = x.shape
    if steps < 1:
        raise ValueError("sequence input must contain at least one step")
    expected = model.rnn_in[modality].shape[1]
    if d_in != expected:
        raise ShapeError(f"sequence input width {d_in} does not match the "
                         f"{modality} projection width {expected}")
    w_in, bias = model.rnn_in[modality], model.rnn_bias[modality]
    h = Tensor(np.zeros(model.config.rnn_hidden))
    for t in range(steps):
        x_t = Tensor(x.data[t])
        pre = add(add(matmul(model.rnn_shared, h), matmul(w_in, x_t)), bias)
        h = tanh(pre)
    return h


def modality_refine(model: BackboneModel, feature: Tensor, modality: str
                    ) -> Tensor:
    """Per-modality refinement: images flatten their map through a relu
    dense layer, sequences pass the hidden state through a tanh dense."""
    if modality in IMAGE_MODALITIES:
        if feature.ndim != 3:
            raise ShapeError(f"{modality} refinement expects a 3-D map, got "
                             f"shape {feature.shape}")
        x = flatten(feature)
        if x.size != model.config.flat_dim:
            raise ShapeError(
                f"{modality} map flattens to {x.size}, expected "
                f"{model.config.flat_dim}"
            )
        return relu(dense(x, model.refine_w[modality],
                          model.refine_b[modality]))
    if modality in SEQUENCE_MODALITIES:
        if feature.ndim != 1:
            raise ShapeError(f"{modality} refinement expects a 1-D hidden "
                             f"state, got shape {feature.shape}")
        return tanh(dense(feature, model.refine_w[modality],
                          model.refine_b[modality]))
    raise ValueError(f"unknown modality {modality!r}; expected one of "
                     f"{MODALITIES}")


def head_logits(model: BackboneModel, refined: Tensor, modality: str
                ) -> Tensor:
    """Classification logits of a refined feature under the modality head."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of "
                         f"{MODALITIES}")
    return dense(refined, model.head_w[modality], model.head_b[modality])


def _forward_components(model: BackboneModel, sample: PreprocessedSample
                        ) -> dict[str, Tensor]:
    """All eight integrated-feature components plus per-modality refined
    features, as tensors (shared image maps already average-pooled)."""
    face_map = shared_cnn_forward(model, sample.face, "face")
    sig_map = shared_cnn_forward(model, sample.sig_image, "sig_image")
    h_seq = shared_rnn_forward(model, sample.sig_sequence, "sig_sequence")
    h_audio = shared_rnn_forward(model, sample.audio_spectrogram.T, "audio")
    return {
        "shared_face": global_avg_pool(face_map),
        "shared_sig_image": global_avg_pool(sig_map),
        "rnn_sig_sequence": h_seq,
        "rnn_audio": h_audio,
        "refined_face": modality_refine(model, face_map, "face"),
        "refined_sig_image": modality_refine(model, sig_map, "sig_image"),
        "refined_sig_sequence": modality_refine(model, h_seq, "sig_sequence"),
        "refined_audio": modality_refine(model, h_audio, "audio"),
    }


_REFINED_OF = {"face": "refined_face", "sig_image": "refined_sig_image",
               "sig_sequence": "refined_sig_sequence",
               "audio": "refined_audio"}


def branch_logits(model: BackboneModel, sample: PreprocessedSample
                  ) -> dict[str, Tensor]:
    """Head logits for all four modalities of one sample."""
    comps = _forward_components(model, sample)
    return {m: head_logits(model, comps[_REFINED_OF[m]], m)
            for m in MODALITIES}


def branch_probabilities(model: BackboneModel, sample: PreprocessedSample
                         ) -> dict[str, np.ndarray]:
    """Per-modality softmax class distributions (plain arrays, no tape)."""
    return {m: softmax_probs(t.data)
            for m, t in branch_logits(model, sample).items()}


# ---------------------------------------------------------------------------
# integrated feature


@dataclass(frozen=True)
class IntegratedFeature:
    """Concatenation of the eight component vectors with recorded offsets.

    ``offsets`` holds nine fence posts; component i of COMPONENT_NAMES spans
    vector[offsets[i]:offsets[i + 1]].
    """

    vector: np.ndarray
    offsets: tuple[int, ...]

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def component(self, name: str) -> np.ndarray:
        if name not in COMPONENT_NAMES:
            raise KeyError(f"unknown component {name!r}; expected one of "
                           f"{COMPONENT_NAMES}")
        i = COMPONENT_NAMES.index(name)
        return self.vector[self.offsets[i]:self.offsets[i + 1]]


def extract_integrated(sample: PreprocessedSample, model: BackboneModel
                       ) -> IntegratedFeature:
    """Run all four paths and concatenate the eight components in the fixed
    COMPONENT_NAMES order."""
    comps = _forward_components(model, sample)
    parts = [comps[name].data for name in COMPONENT_NAMES]
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])
    return IntegratedFeature(vector=np.concatenate(parts),
                             offsets=tuple(int(o) for o in offsets))


# ---------------------------------------------------------------------------
# training


def joint_loss(model: BackboneModel, samples: Sequence[PreprocessedSample],
               labels: Sequence[int]) -> Tensor:
    """Mean over the batch of the average of the four per-modality
    cross-entropies against the subject label."""
    if len(samples) == 0:
        raise ValueError("joint_loss requires a nonempty batch")
    if len(samples) != len(labels):
        raise ValueError(f"{len(samples)} samples vs {len(labels)} labels")
    total: Tensor | None = None
    for sample, label in zip(samples, labels):
        for m, logits in branch_logits(model, sample).items():
            term = softmax_cross_entropy(logits, label)
            total = term if total is None else add(total, term)
    return total * (1.0 / (4 * len(samples)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 < self.learning_rate:
            raise ConfigError("learning_rate must be positive")


@dataclass
class TrainingHistory:
    """Per-epoch train loss and accuracy series (one per modality plus the
    mean-pooled integrated readout)."""

    loss: list[float] = field(default_factory=list)
    accuracy: dict[str, list[float]] = field(default_factory=dict)


def _epoch_accuracies(model: BackboneModel,
                      samples: Sequence[PreprocessedSample],
                      labels: Sequence[int]) -> dict[str, float]:
    hits = {m: 0 for m in MODALITIES}
    hits["integrated"] = 0
    for sample, label in zip(samples, labels):
        probs = branch_probabilities(model, sample)
        pooled = np.mean([probs[m] for m in MODALITIES], axis=0)
        for m in MODALITIES:
            hits[m] += int(np.argmax(probs[m]) == label)
        hits["integrated"] += int(np.argmax(pooled) == label)
    return {k: v / len(samples) for k, v in hits.items()}


def train_backbone(samples: Sequence[PreprocessedSample],
                   labels: Sequence[int], config: BackboneConfig,
                   train: TrainConfig | None = None, epoch_hook=None
                   ) -> tuple[BackboneModel, TrainingHistory]:
    """Mini-batch gradient descent on the joint loss.

    Deterministic under a fixed TrainConfig.seed, which drives both the
    weight initialization and the per-epoch shuffles. ``epoch_hook``, when
    given, is called as hook(epoch_index, model) after each epoch; it must
    not mutate the model.
    """
    train = train or TrainConfig()
    labels = [int(v) for v in labels]
    if len(samples) != len(labels):
        raise ConfigError(f"{len(samples)} samples vs {len(labels)} labels")
    if len(labels) == 0 or any(v < 0 or v >= config.n_classes for v in labels):
        raise ConfigError("labels must be nonempty and within n_classes")
    counts = np.bincount(labels, minlength=config.n_classes)
    present = np.nonzero(counts)[0]
    if present.size < 2 or counts[present].min() < 2:
        raise ConfigError("training needs >= 2 subjects with >= 2 samples "
                          "each")

    init_seq, shuffle_seq = np.random.SeedSequence(train.seed).spawn(2)
    model = _init_from_rng(config, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    params = model.parameters()
    n = len(samples)
    history = TrainingHistory(accuracy={k: [] for k in
                                        list(MODALITIES) + ["integrated"]})
    for epoch in range(train.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train.batch_size):
            idx = order[start:start + train.batch_size]
            batch = [samples[i] for i in idx]
            batch_labels = [labels[i] for i in idx]
            with GradTape() as tape:
                loss = joint_loss(model, batch, batch_labels)
                tape.backward(loss, params)
            for p in params:
                p.data = p.data - train.learning_rate * p.grad
            loss_sum += loss.item() * len(idx)
        history.loss.append(loss_sum / n)
        for key, value in _epoch_accuracies(model, samples, labels).items():
            history.accuracy[key].append(value)
        if epoch_hook is not None:
            epoch_hook(epoch, model)
    return model, history


# ---------------------------------------------------------------------------
# parameter accounting


def parameter_counts(config: BackboneConfig) -> dict[str, int]:
    """Layer-by-layer parameter arithmetic; no tensors are allocated.

    The per-branch image totals view the shared conv stack from one branch
    (kernels plus that branch's biases), matching how a per-branch summary
    tabulates them; ``model_distinct_total`` counts every stored tensor
    exactly once.
    """
    c1, c2 = config.conv1_channels, config.conv2_channels
    h, hs, r = config.rnn_hidden, config.seq_refine, config.image_refine
    nc = config.n_classes
    conv1_w = c1 * 3 * 3 * 3
    conv2_w = c2 * c1 * 3 * 3
    conv1 = conv1_w + c1
    conv2 = conv2_w + c2
    shared_cnn_total = conv1 + conv2
    image_dense = r * config.flat_dim + r
    image_head = nc * r + nc
    seq_dense = hs * h + hs
    seq_head = nc * hs + nc
    rnn_shared = h * h
    rnn_sig = h * config.seq_input_dim + h
    rnn_audio = h * config.audio_input_dim + h
    distinct = (
        conv1_w + 2 * c1 + conv2_w + 2 * c2
        + rnn_shared + rnn_sig + rnn_audio
        + 2 * (image_dense + image_head)
        + 2 * (seq_dense + seq_head)
    )
    return {
        "conv1": conv1,
        "conv2": conv2,
        "shared_cnn_total": shared_cnn_total,
        "image_refine_dense": image_dense,
        "image_head": image_head,
        "image_branch_total": shared_cnn_total + image_dense + image_head,
        "rnn_shared": rnn_shared,
        "seq_refine_dense": seq_dense,
        "seq_head": seq_head,
        "model_distinct_total": distinct,
    }


def count_parameters(model: BackboneModel) -> int:
    """Entries across all distinct parameter tensors (shared counted once)."""
    return sum(t.size for _, t in model.named_parameters())
