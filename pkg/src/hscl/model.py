"""Feature-vector encoder and its two task heads.

The encoder is an MLP applied per scan; sequence inputs (batch, time, feature)
are encoded per time step and the embeddings pooled (mean or last). The
regression head predicts the scalar health score during pre-training; the
classifier head maps a concatenated pair of embeddings [u_prev ; u_next] to
three change logits (improved / same / deteriorated).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, affine, concat_last

ACTIVATIONS = ("relu", "tanh")
POOLINGS = ("mean", "last")

DEFAULT_HIDDEN = (64, 32, 16)
DEFAULT_CLS_HIDDEN = (32,)
N_CLASSES = 3


@dataclass
class EncoderParams:
    """MLP encoder weights; ``widths`` includes the input width."""

    widths: list[int]
    activation: str
    pooling: str
    weights: list[Tensor] = field(repr=False)
    biases: list[Tensor] = field(repr=False)

    @property
    def embedding_dim(self) -> int:
        return self.widths[-1]

    def trainable(self) -> list[Tensor]:
        return [*self.weights, *self.biases]


@dataclass
class RegressionHead:
    weight: Tensor
    bias: Tensor

    def trainable(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class ClassifierHead:
    """MLP over [u_prev ; u_next]; hidden layers activated, logits linear."""

    widths: list[int]
    activation: str
    weights: list[Tensor] = field(repr=False)
    biases: list[Tensor] = field(repr=False)

    def trainable(self) -> list[Tensor]:
        return [*self.weights, *self.biases]


def _glorot_layers(widths: list[int], rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-s, s, size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return weights, biases


def init_encoder(
    widths: list[int],
    seed: int,
    activation: str = "tanh",
    pooling: str = "mean",
) -> EncoderParams:
    """Glorot-uniform weights, zero biases, reproducible per seed."""
    if len(widths) < 2:
        raise ConfigError("init_encoder: need at least input and output widths")
    if any(w <= 0 for w in widths):
        raise ConfigError(f"init_encoder: widths must be positive, got {widths}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"init_encoder: unknown activation {activation!r}")
    if pooling not in POOLINGS:
        raise ConfigError(f"init_encoder: unknown pooling {pooling!r}")
    weights, biases = _glorot_layers(list(widths), np.random.default_rng(seed))
    return EncoderParams(list(widths), activation, pooling, weights, biases)


def init_regression_head(embedding_dim: int, seed: int) -> RegressionHead:
    rng = np.random.default_rng(seed)
    s = np.sqrt(6.0 / (embedding_dim + 1))
    return RegressionHead(
        weight=Tensor(rng.uniform(-s, s, size=(embedding_dim, 1)), requires_grad=True),
        bias=Tensor(np.zeros(1), requires_grad=True),
    )


def init_classifier_head(
    embedding_dim: int,
    seed: int,
    hidden: tuple[int, ...] = DEFAULT_CLS_HIDDEN,
) -> ClassifierHead:
    widths = [2 * embedding_dim, *hidden, N_CLASSES]
    weights, biases = _glorot_layers(widths, np.random.default_rng(seed))
    return ClassifierHead(widths, "relu", weights, biases)


def _activate(x: Tensor, kind: str) -> Tensor:
    return x.relu() if kind == "relu" else x.tanh()


def _encode_2d(params: EncoderParams, x: Tensor) -> Tensor:
    if x.shape[1] != params.widths[0]:
        raise ShapeError(
            f"encode: feature width {x.shape[1]} != encoder input width {params.widths[0]}"
        )
    for w, b in zip(params.weights, params.biases):
        x = _activate(affine(x, w, b), params.activation)
    return x


def encode(params: EncoderParams, batch) -> Tensor:
    """Map a (B, F) or (B, T, F) batch to (B, embedding_dim) embeddings.

    Sequence inputs are encoded per time step and pooled afterwards.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float64))
    if x.data.ndim == 2:
        return _encode_2d(params, x)
    if x.data.ndim == 3:
        n_steps = x.shape[1]
        if n_steps < 1:
            raise ShapeError("encode: sequence input needs at least one time step")
        if params.pooling == "last":
            return _encode_2d(params, x.frame(n_steps - 1))
        pooled = _encode_2d(params, x.frame(0))
        for t in range(1, n_steps):
            pooled = pooled + _encode_2d(params, x.frame(t))
        return pooled * (1.0 / n_steps)
    raise ShapeError(f"encode: expected 2-D or 3-D input, got shape {x.shape}")


def predict_hs(head: RegressionHead, embeddings: Tensor) -> Tensor:
    """Scalar health-score prediction per row, returned as a length-B vector."""
    if embeddings.shape[1] != head.weight.shape[0]:
        raise ShapeError(
            f"predict_hs: embedding width {embeddings.shape[1]} != head width {head.weight.shape[0]}"
        )
    return affine(embeddings, head.weight, head.bias).reshape((embeddings.shape[0],))


def classify_pairs(head: ClassifierHead, u_prev, u_next) -> Tensor:
    """Logits (B, 3) for a batch of embedding pairs."""
    up = u_prev if isinstance(u_prev, Tensor) else Tensor(np.asarray(u_prev, dtype=np.float64))
    un = u_next if isinstance(u_next, Tensor) else Tensor(np.asarray(u_next, dtype=np.float64))
    if up.shape != un.shape or up.data.ndim != 2:
        raise ShapeError(f"classify_pairs: expected matching (B, D) inputs, got {up.shape} and {un.shape}")
    x = concat_last([up, un])
    if x.shape[1] != head.widths[0]:
        raise ShapeError(
            f"classify_pairs: pair width {x.shape[1]} != classifier input width {head.widths[0]}"
        )
    last = len(head.weights) - 1
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        x = affine(x, w, b)
        if i < last:
            x = _activate(x, head.activation)
    return x


def classify_pair(head: ClassifierHead, u_prev, u_next) -> Tensor:
    """Logits (3,) for a single embedding pair."""
    up = u_prev if isinstance(u_prev, Tensor) else Tensor(np.asarray(u_prev, dtype=np.float64))
    un = u_next if isinstance(u_next, Tensor) else Tensor(np.asarray(u_next, dtype=np.float64))
    if up.data.ndim != 1 or up.shape != un.shape:
        raise ShapeError(f"classify_pair: expected matching vectors, got {up.shape} and {un.shape}")
    d = up.shape[0]
    logits = classify_pairs(head, up.reshape((1, d)), un.reshape((1, d)))
    return logits.reshape((N_CLASSES,))


def predict_classes(logits: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)
