"""
From-scratch feedforward network stack used by the pathway ranking models.

Two architectures are used throughout: the one-step ranker (1024 -> 256
relu + dropout -> 1 sigmoid, 262657 parameters) and the two-step ranker
(1536 -> 512 relu + dropout -> 128 relu + dropout -> 1 sigmoid, 852737
parameters). Everything is plain numpy float32: dense layers, relu/sigmoid,
inverted dropout (inference needs no rescaling), weighted binary
cross-entropy and Adam.

Training is bit-reproducible given (seed, data order): initialization,
epoch shuffles and dropout masks all derive from one seeded generator.
Weight files are an exact little-endian binary format (magic "NNPR"), so
save/load round-trips models bit-identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RELU",
    "SIGMOID",
    "NONE",
    "DenseLayer",
    "MlpModel",
    "LayerSpec",
    "TrainConfig",
    "TrainingHistory",
    "GradientCheckReport",
    "DimensionMismatch",
    "EmptyDataset",
    "SingleClassDataset",
    "GradientMismatch",
    "BadMagic",
    "VersionMismatch",
    "TruncatedFile",
    "DimChainBroken",
    "nn1pr_spec",
    "nn2pr_spec",
    "initialize",
    "forward",
    "bce_loss",
    "train",
    "gradient_check",
    "save_weights",
    "load_weights",
]

RELU = "relu"
SIGMOID = "sigmoid"
NONE = "none"

_ACT_CODES = {RELU: 0, SIGMOID: 1, NONE: 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

LOSS_EPS = 1e-7


class DimensionMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class SingleClassDataset(ValueError):
    pass


class GradientMismatch(AssertionError):
    pass


class BadMagic(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class DimChainBroken(ValueError):
    pass


@dataclass(frozen=True)
class DenseLayer:
    """One dense layer: out = activation(x @ weights + biases).

    ``dropout`` is the inverted-dropout rate applied to this layer's output
    during training only; 0 disables it.
    """

    weights: np.ndarray  # shape (in_dim, out_dim), float32
    biases: np.ndarray  # shape (out_dim,), float32
    activation: str = NONE
    dropout: float = 0.0

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def parameter_count(self) -> int:
        return self.weights.size + self.biases.size


@dataclass(frozen=True)
class MlpModel:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimChainBroken(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(
            tuple(
                DenseLayer(
                    l.weights.astype(dtype), l.biases.astype(dtype),
                    l.activation, l.dropout,
                )
                for l in self.layers
            )
        )


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str
    dropout: float = 0.0


def nn1pr_spec(dropout: float = 0.2) -> tuple[LayerSpec, ...]:
    """One-step ranker: 1024 -> 256 relu (dropout) -> 1 sigmoid."""
    return (
        LayerSpec(1024, 256, RELU, dropout),
        LayerSpec(256, 1, SIGMOID, 0.0),
    )


def nn2pr_spec(dropout: float = 0.2) -> tuple[LayerSpec, ...]:
    """Two-step ranker: 1536 -> 512 relu -> 128 relu -> 1 sigmoid."""
    return (
        LayerSpec(1536, 512, RELU, dropout),
        LayerSpec(512, 128, RELU, dropout),
        LayerSpec(128, 1, SIGMOID, 0.0),
    )


def initialize(
    spec: tuple[LayerSpec, ...], rng: np.random.Generator
) -> MlpModel:
    """Glorot-uniform weights, zero biases, drawn from ``rng`` in layer order."""
    layers = []
    for s in spec:
        limit = np.sqrt(6.0 / (s.in_dim + s.out_dim))
        w = rng.uniform(-limit, limit, size=(s.in_dim, s.out_dim))
        layers.append(
            DenseLayer(
                w.astype(np.float32),
                np.zeros(s.out_dim, dtype=np.float32),
                s.activation,
                s.dropout,
            )
        )
    return MlpModel(tuple(layers))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == RELU:
        return np.maximum(z, 0)
    if name == SIGMOID:
        # Saturation-safe: exp only ever sees non-positive arguments.
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _forward_full(
    model: MlpModel,
    x: np.ndarray,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray | None]]:
    """Forward pass keeping per-layer activations and dropout masks."""
    activations = [x]
    masks: list[np.ndarray | None] = []
    h = x
    for layer in model.layers:
        z = h @ layer.weights + layer.biases
        h = _activate(layer.activation, z)
        if rng is not None and layer.dropout > 0.0:
            keep = 1.0 - layer.dropout
            mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        activations.append(h)
    return h, activations, masks


def forward(
    model: MlpModel,
    inputs: np.ndarray,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Score inputs of shape (d,) or (n, d).

    Inference (rng None) is deterministic with dropout disabled; passing a
    generator enables inverted dropout for training. Scores are strictly
    inside (0, 1).
    """
    arr = np.asarray(inputs, dtype=model.layers[0].weights.dtype)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.shape[1] != model.input_dim:
        raise DimensionMismatch(
            f"input width {arr.shape[1]} != model input {model.input_dim}"
        )
    out, _, _ = _forward_full(model, arr, rng)
    out = np.clip(out, LOSS_EPS, 1.0 - LOSS_EPS)
    return float(out[0, 0]) if squeeze and out.shape[1] == 1 else (
        out[:, 0] if out.shape[1] == 1 else out
    )


def bce_loss(prediction: float, label: int, weight: float = 1.0) -> float:
    """Weighted binary cross-entropy with the prediction clamped away
    from 0 and 1."""
    p = min(max(float(prediction), LOSS_EPS), 1.0 - LOSS_EPS)
    y = float(label)
    return -weight * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    positive_weight: float | None = None  # per-example weight on label 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class TrainingHistory:
    """Per-epoch (loss, accuracy) measured on the training data."""

    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)


def _bce_output_delta(p_raw: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """d(weighted bce with clamped input)/d(raw network output).

    Inside the clamp this is w(p - y)/(p(1 - p)), which the sigmoid
    derivative in the backward pass collapses to the familiar w(p - y).
    Where the output saturates beyond the clamp, the clamped loss is flat,
    so the exact derivative is zero; keeping that consistency is what lets
    finite differences validate the analytic gradients everywhere.
    """
    inside = (p_raw > LOSS_EPS) & (p_raw < 1.0 - LOSS_EPS)
    denominator = np.where(inside, p_raw * (1.0 - p_raw), 1.0)
    return np.where(inside, w * (p_raw - y) / denominator, 0.0)


def _backward(
    model: MlpModel,
    activations: list[np.ndarray],
    masks: list[np.ndarray | None],
    delta_out: np.ndarray,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients per layer given d(loss)/d(pre-sigmoid output is NOT assumed);
    ``delta_out`` is d(loss)/d(final activation output)."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    delta = delta_out
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        h_out = activations[k + 1]
        if masks[k] is not None:
            delta = delta * masks[k]
            # h_out = act(z) * mask; recover act(z) where the unit was kept
            # (delta is already zero where it was not).
            safe = np.where(masks[k] == 0, 1, masks[k])
            act_out = np.where(masks[k] > 0, h_out / safe, 0)
        else:
            act_out = h_out
        if layer.activation == SIGMOID:
            delta = delta * act_out * (1.0 - act_out)
        elif layer.activation == RELU:
            delta = delta * (act_out > 0)
        grads[k] = (
            activations[k].T @ delta,
            delta.sum(axis=0),
        )
        if k:
            delta = delta @ layer.weights.T
    return grads


def train(
    model_spec: tuple[LayerSpec, ...] | MlpModel,
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    sample_weights: np.ndarray | None = None,
) -> tuple[MlpModel, TrainingHistory]:
    """Initialize and train; returns the trained model and epoch history.

    ``model_spec`` may be a layer specification or an existing model whose
    shape is reused (its weights are re-initialized from the seed). The run
    is bit-reproducible for a fixed (seed, data order); epochs=0 returns the
    bare initialization with an empty history.
    """
    if isinstance(model_spec, MlpModel):
        spec = tuple(
            LayerSpec(l.in_dim, l.out_dim, l.activation, l.dropout)
            for l in model_spec.layers
        )
    else:
        spec = model_spec
    if spec[-1].out_dim != 1 or spec[-1].activation != SIGMOID:
        raise ValueError(
            "binary cross-entropy training needs a single sigmoid output"
        )
    x = np.asarray(features, dtype=np.float32)
    y = np.asarray(labels, dtype=np.float32).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch("features and labels disagree in length")
    if x.shape[0] == 0:
        raise EmptyDataset("training data is empty")
    if len(np.unique(y)) < 2:
        raise SingleClassDataset("training data needs both classes")
    if x.shape[1] != spec[0].in_dim:
        raise DimensionMismatch(
            f"feature width {x.shape[1]} != model input {spec[0].in_dim}"
        )
    w = (
        np.ones_like(y)
        if sample_weights is None
        else np.asarray(sample_weights, dtype=np.float32).reshape(-1)
    )
    if config.positive_weight is not None:
        w = np.where(y == 1.0, w * np.float32(config.positive_weight), w)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    model = initialize(spec, rng)
    history = TrainingHistory()
    if config.epochs == 0:
        return model, history

    weights = [l.weights.copy() for l in model.layers]
    biases = [l.biases.copy() for l in model.layers]
    m_w = [np.zeros_like(a) for a in weights]
    v_w = [np.zeros_like(a) for a in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    beta1, beta2 = config.adam_beta1, config.adam_beta2
    eps = config.adam_epsilon
    step = 0
    n = x.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            xb, yb, wb = x[batch], y[batch], w[batch]
            current = MlpModel(
                tuple(
                    DenseLayer(weights[k], biases[k], l.activation, l.dropout)
                    for k, l in enumerate(model.layers)
                )
            )
            out, acts, masks = _forward_full(current, xb, rng)
            delta = _bce_output_delta(out[:, 0], yb, wb)[:, None] / len(batch)
            grads = _backward(current, acts, masks, delta.astype(np.float32))
            step += 1
            correction1 = 1.0 - beta1**step
            correction2 = 1.0 - beta2**step
            for k, (gw, gb) in enumerate(grads):
                m_w[k] = beta1 * m_w[k] + (1 - beta1) * gw
                v_w[k] = beta2 * v_w[k] + (1 - beta2) * gw * gw
                m_b[k] = beta1 * m_b[k] + (1 - beta1) * gb
                v_b[k] = beta2 * v_b[k] + (1 - beta2) * gb * gb
                weights[k] -= (
                    config.learning_rate
                    * (m_w[k] / correction1)
                    / (np.sqrt(v_w[k] / correction2) + eps)
                ).astype(np.float32)
                biases[k] -= (
                    config.learning_rate
                    * (m_b[k] / correction1)
                    / (np.sqrt(v_b[k] / correction2) + eps)
                ).astype(np.float32)
        trained = MlpModel(
            tuple(
                DenseLayer(
                    weights[k].copy(), biases[k].copy(), l.activation, l.dropout
                )
                for k, l in enumerate(model.layers)
            )
        )
        scores = forward(trained, x)
        losses = -(
            w * (y * np.log(np.clip(scores, LOSS_EPS, None))
                 + (1 - y) * np.log(np.clip(1 - scores, LOSS_EPS, None)))
        )
        history.loss.append(float(losses.mean()))
        history.accuracy.append(float(((scores >= 0.5) == (y == 1.0)).mean()))
    return trained, history


@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_error: float
    worst_layer: int
    worst_parameter: str  # e.g. "W[3,1]" or "b[0]"
    tolerance: float


def gradient_check(
    model: MlpModel,
    inputs: np.ndarray,
    label: int,
    tolerance: float = 1e-4,
    weight: float = 1.0,
    backward=None,
) -> GradientCheckReport:
    """Compare analytic gradients of bce(forward(x)) against central finite
    differences (step 1e-4) in float64, dropout disabled.

    Raises GradientMismatch naming the worst parameter when any relative
    error exceeds the tolerance. ``backward`` may override the analytic
    gradient routine (used by negative-control tests). Checks are only
    meaningful away from relu kinks: a pre-activation exactly at zero has
    no two-sided derivative, so probe models should carry random biases.
    """
    m64 = model.astype(np.float64)
    x = np.asarray(inputs, dtype=np.float64).reshape(1, -1)
    y = float(label)
    backward = backward or _backward

    out, acts, masks = _forward_full(m64, x, None)
    delta = _bce_output_delta(
        out[0:1, 0], np.array([y]), np.array([weight])
    )[:, None].astype(np.float64)
    analytic = backward(m64, acts, masks, delta)

    def loss_with(layers) -> float:
        candidate = MlpModel(tuple(layers))
        out2, _, _ = _forward_full(candidate, x, None)
        return bce_loss(out2[0, 0], label, weight)

    step = 1e-4
    worst = (0.0, -1, "")
    for k, layer in enumerate(m64.layers):
        for kind, arr, grad in (
            ("W", layer.weights, analytic[k][0]),
            ("b", layer.biases, analytic[k][1]),
        ):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                original = arr[idx]
                arr[idx] = original + step
                up = loss_with(m64.layers)
                arr[idx] = original - step
                down = loss_with(m64.layers)
                arr[idx] = original
                numeric = (up - down) / (2 * step)
                a = float(grad[idx])
                rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-8)
                if rel > worst[0]:
                    name = f"{kind}[{','.join(map(str, idx))}]"
                    worst = (rel, k, name)
    report = GradientCheckReport(worst[0], worst[1], worst[2], tolerance)
    if worst[0] > tolerance:
        raise GradientMismatch(
            f"gradient mismatch at layer {worst[1]} {worst[2]}: "
            f"relative error {worst[0]:.3e} > {tolerance:g}"
        )
    return report


# ---------------------------------------------------------------------------
# Weight files

MAGIC = b"NNPR"
FORMAT_VERSION = 1


def save_weights(model: MlpModel) -> bytes:
    """Serialize to the exact little-endian layout:

    magic "NNPR" | u32 version | u32 layer_count | per layer:
    u32 in_dim | u32 out_dim | u8 activation (0=relu 1=sigmoid 2=none) |
    f32 dropout | f32 weights row-major (input index major) | f32 biases.
    """
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(model.layers))]
    for layer in model.layers:
        chunks.append(
            struct.pack(
                "<IIBf",
                layer.in_dim,
                layer.out_dim,
                _ACT_CODES[layer.activation],
                layer.dropout,
            )
        )
        chunks.append(
            np.ascontiguousarray(layer.weights, dtype="<f4").tobytes()
        )
        chunks.append(np.ascontiguousarray(layer.biases, dtype="<f4").tobytes())
    return b"".join(chunks)


def load_weights(blob: bytes) -> MlpModel:
    """Inverse of save_weights; load(save(m)) reproduces m bit-for-bit."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic("not a weight file (bad magic)")
    if len(blob) < 12:
        raise TruncatedFile("header truncated")
    version, layer_count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported weight file version {version}")
    offset = 12
    layers = []
    for _ in range(layer_count):
        if offset + 13 > len(blob):
            raise TruncatedFile("layer header truncated")
        in_dim, out_dim, act_code, dropout = struct.unpack_from(
            "<IIBf", blob, offset
        )
        offset += 13
        if act_code not in _ACT_NAMES:
            raise ValueError(f"unknown activation code {act_code}")
        w_bytes = 4 * in_dim * out_dim
        b_bytes = 4 * out_dim
        if offset + w_bytes + b_bytes > len(blob):
            raise TruncatedFile("layer parameters truncated")
        w = np.frombuffer(blob, dtype="<f4", count=in_dim * out_dim,
                          offset=offset).reshape(in_dim, out_dim).copy()
        offset += w_bytes
        b = np.frombuffer(blob, dtype="<f4", count=out_dim, offset=offset).copy()
        offset += b_bytes
        layers.append(DenseLayer(w, b, _ACT_NAMES[act_code], dropout))
    if offset != len(blob):
        raise TruncatedFile("trailing bytes after final layer")
    return MlpModel(tuple(layers))  # raises DimChainBroken on a bad chain
