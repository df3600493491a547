"""Optimization: Adam, cosine-annealed learning rate, training loops, checkpoints.

Pre-training runs the regression-plus-contrastive objective over seeded
shuffled batches (last partial batch dropped, since mining needs a fixed
batch size); fine-tuning trains the 3-way pair classifier on top of a loaded
encoder, optionally frozen. Both loops are single-threaded and bit-for-bit
deterministic given the same config and seed.

Checkpoints are a little-endian binary format: magic ``GCCK``, u32 version,
length-prefixed JSON metadata, then name-sorted tensors (u32 name length,
name, u32 rank, u32 dims, float64 payload) and a trailing CRC32.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigError,
    ShapeError,
    TrainingAbort,
)
from .losses import LossConfig, combined_loss_terms, cross_entropy, loss_gradients, mine_batch
from .metrics import compute_metrics
from .model import (
    ClassifierHead,
    EncoderParams,
    RegressionHead,
    classify_pairs,
    encode,
    init_classifier_head,
    init_encoder,
    init_regression_head,
    predict_classes,
    predict_hs,
)
from .tensor import Tensor

CHECKPOINT_MAGIC = b"GCCK"
CHECKPOINT_VERSION = 1

# seed-stream tags so the different random uses never collide
_STREAM_ENCODER, _STREAM_REG_HEAD, _STREAM_CLS_HEAD, _STREAM_SHUFFLE = 0, 1, 2, 3

TRACE_KEYS = ("epoch", "lr", "loss", "mse", "contrast", "val_mse")
HISTORY_KEYS = ("epoch", "lr", "train_ce", "val_accuracy", "val_macro_f1")


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr: float = 0.001
    epochs: int = 100
    eta_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    freeze_encoder: bool = True

    def __post_init__(self) -> None:
        if self.batch_size < 3:
            raise ConfigError(f"batch_size must be >= 3, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError(
            f"adam_step: got {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adam_step: shape mismatch {g.shape} vs param {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Cosine-annealed rate over [0, epochs]; exact endpoints, clamped beyond."""
    if epoch < 0:
        raise ConfigError(f"cosine_lr: epoch must be non-negative, got {epoch}")
    t_max = config.epochs
    if epoch > t_max:
        return config.eta_min
    cos = math.cos(math.pi * epoch / t_max)
    return config.eta_min + (config.lr - config.eta_min) * (1.0 + cos) / 2.0


# -- checkpoints ---------------------------------------------------------------


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict
    version: int = CHECKPOINT_VERSION


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", ck.version)
    meta = json.dumps(ck.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf += struct.pack("<I", len(meta))
    buf += meta
    names = sorted(ck.tensors)
    buf += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(ck.tensors[name], dtype="<f8")
        buf += struct.pack("<I", len(raw))
        buf += raw
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise CheckpointIntegrityError(f"{path}: truncated checkpoint ({len(blob)} bytes)")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointIntegrityError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    body = blob[:-4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointIntegrityError(f"{path}: checksum mismatch")

    offset = 8

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(body):
            raise CheckpointIntegrityError(f"{path}: truncated checkpoint body")
        piece = body[offset : offset + n]
        offset += n
        return piece

    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: corrupt metadata block: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims)
        tensors[name] = np.array(data, dtype=np.float64)
    if offset != len(body):
        raise CheckpointIntegrityError(f"{path}: trailing data after tensor block")
    return Checkpoint(tensors, meta, version)


# -- parameter <-> checkpoint plumbing -------------------------------------------


def _encoder_entries(encoder: EncoderParams) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        out[f"encoder.w{i}"] = w.data.copy()
        out[f"encoder.b{i}"] = b.data.copy()
    return out


def encoder_from_checkpoint(ck: Checkpoint) -> EncoderParams:
    model = ck.meta.get("model")
    if not model:
        raise CheckpointIntegrityError("checkpoint has no model metadata")
    widths = [int(w) for w in model["widths"]]
    n_layers = len(widths) - 1
    weights, biases = [], []
    for i in range(n_layers):
        try:
            w = ck.tensors[f"encoder.w{i}"]
            b = ck.tensors[f"encoder.b{i}"]
        except KeyError as exc:
            raise CheckpointIntegrityError(f"checkpoint missing tensor {exc}") from None
        if w.shape != (widths[i], widths[i + 1]):
            raise ShapeError(
                f"checkpoint encoder.w{i} has shape {w.shape}, expected {(widths[i], widths[i + 1])}"
            )
        weights.append(Tensor(w.copy(), requires_grad=True))
        biases.append(Tensor(b.copy(), requires_grad=True))
    return EncoderParams(widths, model["activation"], model["pooling"], weights, biases)


def classifier_from_checkpoint(ck: Checkpoint) -> ClassifierHead:
    model = ck.meta.get("model", {})
    widths = model.get("cls_widths")
    if not widths:
        raise CheckpointIntegrityError("checkpoint has no classifier metadata")
    widths = [int(w) for w in widths]
    weights, biases = [], []
    for i in range(len(widths) - 1):
        try:
            w = ck.tensors[f"cls.w{i}"]
            b = ck.tensors[f"cls.b{i}"]
        except KeyError as exc:
            raise CheckpointIntegrityError(f"checkpoint missing tensor {exc}") from None
        weights.append(Tensor(w.copy(), requires_grad=True))
        biases.append(Tensor(b.copy(), requires_grad=True))
    return ClassifierHead(widths, model.get("cls_activation", "relu"), weights, biases)


def _named_params(
    encoder: EncoderParams | None,
    reg: RegressionHead | None = None,
    cls: ClassifierHead | None = None,
) -> list[tuple[str, Tensor]]:
    named: list[tuple[str, Tensor]] = []
    if encoder is not None:
        for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
            named.append((f"encoder.w{i}", w))
            named.append((f"encoder.b{i}", b))
    if reg is not None:
        named.append(("reg.w", reg.weight))
        named.append(("reg.b", reg.bias))
    if cls is not None:
        for i, (w, b) in enumerate(zip(cls.weights, cls.biases)):
            named.append((f"cls.w{i}", w))
            named.append((f"cls.b{i}", b))
    return named


def _snapshot(
    all_named: list[tuple[str, Tensor]],
    trained_named: list[tuple[str, Tensor]],
    state: AdamState,
    meta: dict,
) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in all_named}
    for (name, _), m, v in zip(trained_named, state.m, state.v):
        tensors[f"adam.m.{name}"] = m.copy()
        tensors[f"adam.v.{name}"] = v.copy()
    return Checkpoint(tensors, meta)


def _sub_seed(seed: int, *stream: int) -> int:
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1)[0])


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_SHUFFLE, epoch]))
    return rng.permutation(n)


def format_trace_line(entry: dict, keys=TRACE_KEYS) -> str:
    parts = []
    for key in keys:
        value = entry[key]
        parts.append(f"{key}={value if isinstance(value, int) else repr(float(value))}")
    return " ".join(parts)


def write_trace(entries: list[dict], path, keys=TRACE_KEYS) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(format_trace_line(entry, keys) + "\n")


def parse_trace(path, keys=TRACE_KEYS) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            fields = dict(part.split("=", 1) for part in line.split())
            entry: dict = {}
            for key in keys:
                raw = fields[key]
                entry[key] = int(raw) if key == "epoch" else float(raw)
            entries.append(entry)
    return entries


# -- pre-training loop ------------------------------------------------------------


@dataclass
class PretrainResult:
    final: Checkpoint
    best: Checkpoint
    best_epoch: int
    trace: list[dict]


def _val_mse(encoder: EncoderParams, reg: RegressionHead, x_val, y_val) -> float:
    if len(x_val) == 0:
        return float("nan")
    pred = predict_hs(reg, encode(encoder, x_val)).data
    return float(np.mean((pred - y_val) ** 2))


def pretrain(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig,
    hidden: tuple[int, ...] = (64, 32, 16),
    activation: str = "tanh",
    pooling: str = "mean",
    data_meta: dict | None = None,
) -> PretrainResult:
    """Regression pre-training with optional contrastive augmentation.

    Per batch: encode, predict the score, mine positives/negatives by label
    distance, combine the losses, backprop, Adam step. Targets must already
    be on the normalized scale. Returns the final checkpoint, the lowest
    validation-MSE checkpoint, and the per-epoch trace (the trace carries a
    terminal entry at epoch == epochs showing the fully annealed rate).
    """
    n = len(x_train)
    if n < config.batch_size:
        raise ConfigError(
            f"pretrain: training split has {n} records, smaller than batch size {config.batch_size}"
        )
    if len(x_train) != len(y_train):
        raise ShapeError(f"pretrain: {len(x_train)} feature rows vs {len(y_train)} targets")

    n_features = x_train.shape[-1]
    widths = [int(n_features), *hidden]
    encoder = init_encoder(widths, _sub_seed(config.seed, _STREAM_ENCODER), activation, pooling)
    reg = init_regression_head(encoder.embedding_dim, _sub_seed(config.seed, _STREAM_REG_HEAD))

    named = _named_params(encoder, reg)
    params = [t for _, t in named]
    state = AdamState.for_params(params)
    needs_mining = config.loss.contrastive and config.loss.alpha > 0.0

    def meta_for(epoch: int) -> dict:
        return {
            "stage": "pretrain",
            "epoch": epoch,
            "adam_step": state.step,
            "model": {"widths": widths, "activation": activation, "pooling": pooling},
            "train": asdict(config),
            "data": data_meta or {},
        }

    trace: list[dict] = []
    best: Checkpoint | None = None
    best_epoch = -1
    best_val = math.inf
    sums = {"loss": 0.0, "mse": 0.0, "contrast": 0.0}

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        order = _epoch_order(config.seed, epoch, n)
        sums = {"loss": 0.0, "mse": 0.0, "contrast": 0.0}
        n_batches = 0
        for start in range(0, n - config.batch_size + 1, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            embeddings = encode(encoder, xb)
            y_hat = predict_hs(reg, embeddings)
            mining = mine_batch(yb) if needs_mining else None
            total, mse_term, con_term = combined_loss_terms(
                yb, y_hat, embeddings, mining, yb, config.loss
            )
            loss_val = total.item()
            mse_val = mse_term.item()
            con_val = con_term.item() if con_term is not None else 0.0
            if not math.isfinite(loss_val):
                raise TrainingAbort(
                    f"pretrain: non-finite loss at epoch {epoch} batch {n_batches}: "
                    f"loss={loss_val} mse={mse_val} contrast={con_val}"
                )
            grads = loss_gradients(total, params)
            adam_step(params, grads, state, lr, config.beta1, config.beta2, config.adam_eps)
            sums["loss"] += loss_val
            sums["mse"] += mse_val
            sums["contrast"] += con_val
            n_batches += 1

        val_mse = _val_mse(encoder, reg, x_val, y_val)
        trace.append(
            {
                "epoch": epoch,
                "lr": lr,
                "loss": sums["loss"] / n_batches,
                "mse": sums["mse"] / n_batches,
                "contrast": sums["contrast"] / n_batches,
                "val_mse": val_mse,
            }
        )
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best = _snapshot(named, named, state, meta_for(epoch))

    final_val = trace[-1]["val_mse"]
    trace.append(
        {
            "epoch": config.epochs,
            "lr": cosine_lr(config.epochs, config),
            "loss": trace[-1]["loss"],
            "mse": trace[-1]["mse"],
            "contrast": trace[-1]["contrast"],
            "val_mse": final_val,
        }
    )
    final = _snapshot(named, named, state, meta_for(config.epochs - 1))
    if best is None:  # no finite validation MSE ever observed
        best, best_epoch = final, config.epochs - 1
    return PretrainResult(final=final, best=best, best_epoch=best_epoch, trace=trace)


# -- fine-tuning loop --------------------------------------------------------------


@dataclass
class FinetuneResult:
    final: Checkpoint
    best: Checkpoint
    best_epoch: int
    history: list[dict]


def _pair_logits(
    encoder: EncoderParams, cls: ClassifierHead, xp: np.ndarray, xn: np.ndarray
) -> np.ndarray:
    return classify_pairs(cls, encode(encoder, xp).data, encode(encoder, xn).data).data


def finetune(
    pretrained: Checkpoint,
    xp_train: np.ndarray,
    xn_train: np.ndarray,
    y_train: np.ndarray,
    xp_val: np.ndarray,
    xn_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig,
    cls_hidden: tuple[int, ...] = (32,),
) -> FinetuneResult:
    """Train the 3-way change classifier on top of a pre-trained encoder.

    With ``config.freeze_encoder`` the encoder weights are untouched and the
    pair embeddings are computed once up front. Model selection is by
    validation macro-F1.
    """
    if not (len(xp_train) == len(xn_train) == len(y_train)):
        raise ShapeError("finetune: prev/next/label lengths differ")
    if len(xp_train) == 0:
        raise ConfigError("finetune: no training pairs")

    encoder = encoder_from_checkpoint(pretrained)
    if xp_train.shape[-1] != encoder.widths[0]:
        raise ShapeError(
            f"finetune: pair feature width {xp_train.shape[-1]} != encoder input width {encoder.widths[0]}"
        )
    cls = init_classifier_head(
        encoder.embedding_dim, _sub_seed(config.seed, _STREAM_CLS_HEAD), cls_hidden
    )

    frozen = config.freeze_encoder
    named_trained = _named_params(None, cls=cls) if frozen else _named_params(encoder, cls=cls)
    named_all = _named_params(encoder, cls=cls)
    params = [t for _, t in named_trained]
    state = AdamState.for_params(params)

    if frozen:
        up_train = encode(encoder, xp_train).data
        un_train = encode(encoder, xn_train).data
        up_val = encode(encoder, xp_val).data if len(xp_val) else np.zeros((0, encoder.embedding_dim))
        un_val = encode(encoder, xn_val).data if len(xn_val) else np.zeros((0, encoder.embedding_dim))

    def val_metrics() -> tuple[float, float]:
        if len(y_val) == 0:
            return float("nan"), float("nan")
        if frozen:
            logits = classify_pairs(cls, up_val, un_val).data
        else:
            logits = _pair_logits(encoder, cls, xp_val, xn_val)
        report = compute_metrics(predict_classes(logits), y_val)
        return report.accuracy, report.macro_f1

    def meta_for(epoch: int) -> dict:
        return {
            "stage": "finetune",
            "epoch": epoch,
            "adam_step": state.step,
            "model": {
                "widths": encoder.widths,
                "activation": encoder.activation,
                "pooling": encoder.pooling,
                "cls_widths": cls.widths,
                "cls_activation": cls.activation,
            },
            "train": asdict(config),
            "pretrain_train": pretrained.meta.get("train"),
            "data": pretrained.meta.get("data", {}),
        }

    n = len(y_train)
    history: list[dict] = []
    best: Checkpoint | None = None
    best_epoch = -1
    best_f1 = -math.inf

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        order = _epoch_order(config.seed, epoch, n)
        ce_sum = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if frozen:
                logits = classify_pairs(cls, up_train[idx], un_train[idx])
            else:
                logits = classify_pairs(
                    cls, encode(encoder, xp_train[idx]), encode(encoder, xn_train[idx])
                )
            ce = cross_entropy(logits, y_train[idx])
            ce_val = ce.item()
            if not math.isfinite(ce_val):
                raise TrainingAbort(
                    f"finetune: non-finite loss at epoch {epoch} batch {n_batches}: ce={ce_val}"
                )
            grads = loss_gradients(ce, params)
            adam_step(params, grads, state, lr, config.beta1, config.beta2, config.adam_eps)
            ce_sum += ce_val
            n_batches += 1

        accuracy, macro_f1 = val_metrics()
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_ce": ce_sum / n_batches,
                "val_accuracy": accuracy,
                "val_macro_f1": macro_f1,
            }
        )
        if macro_f1 > best_f1:
            best_f1 = macro_f1
            best_epoch = epoch
            best = _snapshot(named_all, named_trained, state, meta_for(epoch))

    history.append(
        {
            "epoch": config.epochs,
            "lr": cosine_lr(config.epochs, config),
            "train_ce": history[-1]["train_ce"],
            "val_accuracy": history[-1]["val_accuracy"],
            "val_macro_f1": history[-1]["val_macro_f1"],
        }
    )
    final = _snapshot(named_all, named_trained, state, meta_for(config.epochs - 1))
    if best is None:
        best, best_epoch = final, config.epochs - 1
    return FinetuneResult(final=final, best=best, best_epoch=best_epoch, history=history)
