"""Training objectives and health-score-driven batch mining.

Pre-training minimizes a summed squared error on the predicted health score,
optionally augmented with a contrastive term over batch pairs mined by label
distance: for each anchor, the floor((B-1)/2) label-nearest batch members are
positives and the floor((B-1)/2) label-farthest are negatives. The contrastive
term sums log-similarities so that minimizing it pulls positives together and
pushes negatives apart; the weighted variant scales each pair's term by its
label distance.

Similarities are remapped into (0, 1] and clamped to a small floor before the
log, which keeps both loss branches finite for antipodal or distant pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor, backward, dot, softmax_last, zero_grads

MODES = ("mse", "mse+cl", "mse+wcl")
SIMILARITIES = ("cos", "l2")

_PROB_FLOOR = 1e-12  # cross-entropy probability floor before the log


@dataclass
class LossConfig:
    mode: str = "mse"
    similarity: str = "cos"
    eps: float = 1e-2        # offset added to label distances used as weights
    sim_floor: float = 1e-6  # clamp floor applied to similarities before log
    alpha: float = 1.0       # weight of the contrastive term

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"loss mode must be one of {MODES}, got {self.mode!r}")
        if self.similarity not in SIMILARITIES:
            raise ConfigError(f"similarity must be one of {SIMILARITIES}, got {self.similarity!r}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not 0 < self.sim_floor < 1:
            raise ConfigError(f"sim_floor must lie in (0, 1), got {self.sim_floor}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def contrastive(self) -> bool:
        return self.mode != "mse"

    @property
    def weighted(self) -> bool:
        return self.mode == "mse+wcl"


@dataclass
class MiningResult:
    """Per-anchor positive/negative index sets plus all pairwise label distances."""

    positives: list[list[int]]
    negatives: list[list[int]]
    distances: np.ndarray = field(repr=False)  # (B, B), |hs_i - hs_j|
    per_side: int

    @property
    def batch_size(self) -> int:
        return len(self.positives)


def mine_batch(hs) -> MiningResult:
    """Select label-nearest positives and label-farthest negatives per anchor.

    Candidates j != i are sorted by (|hs_i - hs_j| ascending, j ascending);
    the first floor((B-1)/2) become positives, the last floor((B-1)/2)
    negatives. When B is even the single middle candidate is unused.
    """
    scores = np.asarray(hs, dtype=np.float64).reshape(-1)
    b = scores.shape[0]
    if b < 3:
        raise ConfigError(f"mine_batch: need at least 3 scores for a positive/negative split, got {b}")
    distances = np.abs(scores[:, None] - scores[None, :])
    k = (b - 1) // 2
    positives, negatives = [], []
    for i in range(b):
        others = sorted((j for j in range(b) if j != i), key=lambda j: (distances[i, j], j))
        positives.append(others[:k])
        negatives.append(others[len(others) - k:])
    return MiningResult(positives, negatives, distances, k)


def similarity(u_i: Tensor, u_j: Tensor, kind: str, sim_floor: float = 1e-6) -> Tensor:
    """Pair similarity in (0, 1]: shifted cosine or inverse L2 distance, clamped."""
    if kind == "cos":
        ni, nj = u_i.norm(), u_j.norm()
        if ni.item() == 0.0 or nj.item() == 0.0:
            raise DomainError("similarity: cosine undefined for a zero vector")
        cos = dot(u_i, u_j) * (ni * nj).reciprocal()
        return ((cos + 1.0) * 0.5).clamp(sim_floor, 1.0)
    if kind == "l2":
        return ((u_i - u_j).norm() + 1.0).reciprocal().clamp(sim_floor, 1.0)
    raise ConfigError(f"similarity: unknown kind {kind!r}")


def mse_loss(y, y_pred: Tensor) -> Tensor:
    """Summed squared error (no mean normalization)."""
    target = np.asarray(y, dtype=np.float64).reshape(-1)
    if y_pred.data.ndim != 1 or y_pred.shape[0] != target.shape[0]:
        raise ShapeError(f"mse_loss: target length {target.shape[0]} != prediction shape {y_pred.shape}")
    if target.shape[0] < 1:
        raise ShapeError("mse_loss: need at least one element")
    return (Tensor(target) - y_pred).square().sum()


def _check_mining(name: str, embeddings: Tensor, mining: MiningResult) -> None:
    if embeddings.data.ndim != 2:
        raise ShapeError(f"{name}: expected (B, D) embeddings, got shape {embeddings.shape}")
    if mining.batch_size != embeddings.shape[0]:
        raise ShapeError(
            f"{name}: mining built for batch {mining.batch_size}, embeddings have {embeddings.shape[0]} rows"
        )


def cl_loss(embeddings: Tensor, mining: MiningResult, config: LossConfig) -> Tensor:
    """Unweighted contrastive loss over the mined pairs."""
    _check_mining("cl_loss", embeddings, mining)
    rows = [embeddings.row(i) for i in range(mining.batch_size)]
    total = Tensor(0.0)
    for i in range(mining.batch_size):
        for j in mining.negatives[i]:
            total = total + similarity(rows[i], rows[j], config.similarity, config.sim_floor).log()
        for j in mining.positives[i]:
            total = total - similarity(rows[i], rows[j], config.similarity, config.sim_floor).log()
    return total


def wcl_loss(embeddings: Tensor, mining: MiningResult, hs, config: LossConfig) -> Tensor:
    """Contrastive loss with each pair's term scaled by its label distance.

    Negative pairs contribute log(sim * (d_ij + eps)); positive pairs
    contribute -log(sim) / (d_ij + eps). ``hs`` must be on the normalized
    scale so that eps is comparable across datasets.
    """
    _check_mining("wcl_loss", embeddings, mining)
    scores = np.asarray(hs, dtype=np.float64).reshape(-1)
    if scores.shape[0] != mining.batch_size:
        raise ShapeError(f"wcl_loss: got {scores.shape[0]} scores for batch {mining.batch_size}")
    rows = [embeddings.row(i) for i in range(mining.batch_size)]
    total = Tensor(0.0)
    for i in range(mining.batch_size):
        for j in mining.negatives[i]:
            sim = similarity(rows[i], rows[j], config.similarity, config.sim_floor)
            weight = abs(scores[i] - scores[j]) + config.eps
            total = total + (sim * weight).log()
        for j in mining.positives[i]:
            sim = similarity(rows[i], rows[j], config.similarity, config.sim_floor)
            weight = abs(scores[i] - scores[j]) + config.eps
            total = total - sim.log() * (1.0 / weight)
    return total


def combined_loss_terms(
    y,
    y_pred: Tensor,
    embeddings: Tensor | None,
    mining: MiningResult | None,
    hs,
    config: LossConfig,
) -> tuple[Tensor, Tensor, Tensor | None]:
    """(total, mse term, contrastive term or None).

    With alpha == 0 or plain MSE mode the total *is* the MSE tensor, so the
    resulting graph and gradients are bit-identical to pure MSE training.
    """
    mse = mse_loss(y, y_pred)
    if not config.contrastive or config.alpha == 0.0:
        return mse, mse, None
    if embeddings is None or mining is None:
        raise ConfigError(f"combined_loss: mode {config.mode!r} needs embeddings and a mining result")
    if config.weighted:
        con = wcl_loss(embeddings, mining, hs, config)
    else:
        con = cl_loss(embeddings, mining, config)
    return mse + con * config.alpha, mse, con


def combined_loss(y, y_pred, embeddings, mining, hs, config: LossConfig) -> Tensor:
    total, _, _ = combined_loss_terms(y, y_pred, embeddings, mining, hs, config)
    return total


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class."""
    target = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected (B, C) logits, got shape {logits.shape}")
    n, c = logits.shape
    if target.ndim != 1 or target.shape[0] != n:
        raise ShapeError(f"cross_entropy: got {target.shape} labels for {n} rows")
    if target.size and (target.min() < 0 or target.max() >= c):
        raise DomainError(f"cross_entropy: labels must lie in [0, {c}), got {sorted(set(target.tolist()))}")
    mask = np.zeros((n, c))
    mask[np.arange(n), target.astype(int)] = 1.0
    picked = (softmax_last(logits) * Tensor(mask)).sum(axis=-1)
    return picked.clamp(_PROB_FLOOR, 1.0).log().mean() * -1.0


def loss_gradients(loss: Tensor, params: list[Tensor]) -> list[np.ndarray]:
    """Backward convenience: zero param grads, backprop, return grad copies."""
    zero_grads(params)
    backward(loss)
    return [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
