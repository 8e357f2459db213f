"""Training loop: focal classification loss, prototype margins, attention
entropy regularization, and counterfactual perturbation consistency.

Each step forwards a sampled mini-batch, perturbs the key instance of every
positive bag (zeroing its embedding row), forwards the perturbed bags again,
and backpropagates the combined loss through BOTH passes; only the key-index
selection itself is treated as a constant. Instance labels are never read on
any code path in this module.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .bagging import Bag, BagDataset
from .errors import ConfigError, InvalidIndex, NonFiniteLoss, SingleClass
from .ingest import fnv1a64
from .model import (
    LogMilpModel,
    masked_attention_entropy,
    select_key_instance,
    select_key_instances,
)

__all__ = [
    "TrainConfig",
    "EpochReport",
    "focal_loss",
    "proto_loss",
    "attention_entropy_loss",
    "select_key_instance",
    "perturb_bag",
    "consistency_loss",
    "weighted_sampler",
    "batch_losses",
    "train_epoch",
    "fit",
    "score_dataset",
    "derive_seed",
]


@dataclass
class TrainConfig:
    lambda_p: float = 0.1  # prototype loss weight
    lambda_a: float = 0.01  # attention entropy weight
    lambda_c: float = 0.5  # consistency loss weight
    delta_p: float = 0.7  # positive-bag similarity margin
    delta_e: float = 0.5  # negative-bag assignment-entropy margin
    w_ent: float = 1.0  # weight of the negative-bag term inside proto_loss
    delta_c: float = 0.3  # consistency (confidence-drop) margin
    eps: float = 1e-8
    gamma: float = 2.0  # focal focusing exponent
    alpha: float = 0.25  # focal positive-class weight
    use_consistency: bool = True
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        non_negative = (
            ("lambda_p", self.lambda_p), ("lambda_a", self.lambda_a),
            ("lambda_c", self.lambda_c), ("delta_p", self.delta_p),
            ("delta_e", self.delta_e), ("w_ent", self.w_ent),
            ("gamma", self.gamma), ("eps", self.eps),
        )
        for name, value in non_negative:
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if not 0.0 <= self.delta_c <= 1.0:
            raise ConfigError(f"delta_c must be in [0,1], got {self.delta_c}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0,1), got {self.alpha}")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 0:
            raise ConfigError("epochs/patience must be >= 0 and batch_size >= 1")


@dataclass
class EpochReport:
    epoch: int
    l_cls: float
    l_proto: float
    l_attn: float
    l_con: float
    l_total: float
    n_bags: int
    n_pos: int
    wall_time: float


def derive_seed(seed: int, tag: str) -> int:
    """Stable per-stream sub-seed: FNV-1a over the run seed plus a tag."""
    data = (seed & ((1 << 64) - 1)).to_bytes(8, "little") + tag.encode("utf-8")
    return fnv1a64(data) & 0x7FFFFFFFFFFFFFFF


def collate(bags: Sequence[Bag]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack bags into (X, mask, Y) tensors. Instance labels stay behind."""
    X = torch.from_numpy(np.stack([b.embeddings for b in bags]))
    mask = torch.from_numpy(np.stack([b.mask for b in bags])).bool()
    Y = torch.tensor([float(b.bag_label) for b in bags])
    return X, mask, Y


def focal_loss(P: torch.Tensor, Y: torch.Tensor, gamma: float = 2.0, alpha: float = 0.25) -> torch.Tensor:
    """Mean of -alpha_t (1-p_t)^gamma ln(p_t); p_t floored at 1e-12 so a
    float32-saturated probability cannot produce ln(0)."""
    pos = Y.to(P.dtype)
    p_t = (pos * P + (1.0 - pos) * (1.0 - P)).clamp_min(1e-12)
    alpha_t = pos * alpha + (1.0 - pos) * (1.0 - alpha)
    return (-alpha_t * (1.0 - p_t) ** gamma * torch.log(p_t)).mean()


def proto_loss(
    M_bag: torch.Tensor,
    E_bag: torch.Tensor,
    Y: torch.Tensor,
    delta_p: float = 0.7,
    delta_e: float = 0.5,
    w_ent: float = 1.0,
) -> torch.Tensor:
    """Positive bags: hinge pushing max prototype similarity above delta_p.
    Negative bags: hinge pushing assignment entropy above delta_e."""
    pos = Y.bool()
    zero = M_bag.sum() * 0.0
    l_pos = torch.relu(delta_p - M_bag[pos]).mean() if pos.any() else zero
    l_neg = torch.relu(delta_e - E_bag[~pos]).mean() if (~pos).any() else zero
    return l_pos + w_ent * l_neg


def attention_entropy_loss(A: torch.Tensor, mask: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Mean over bags and heads of the normalized attention entropy."""
    return masked_attention_entropy(A, mask, eps).mean()


def perturb_bag(bag: Bag, i_star: int) -> Bag:
    """Copy of `bag` with embedding row i_star zeroed; mask untouched."""
    if not 0 <= i_star < bag.mask.shape[0] or not bag.mask[i_star]:
        raise InvalidIndex(f"instance {i_star} is not a valid position")
    embeddings = bag.embeddings.copy()
    embeddings[i_star] = 0.0
    return Bag(
        embeddings=embeddings,
        mask=bag.mask.copy(),
        bag_label=bag.bag_label,
        instance_labels=bag.instance_labels.copy(),
        source_span=bag.source_span,
    )


def consistency_loss(
    P_orig: torch.Tensor, P_pert: torch.Tensor, Y: torch.Tensor, delta_c: float = 0.3
) -> torch.Tensor:
    """Hinge on the confidence drop of positive bags; 0 with no positives."""
    pos = Y.bool()
    if not pos.any():
        return P_orig.sum() * 0.0
    drop = P_orig[pos] - P_pert[pos]
    return torch.relu(delta_c - drop).mean()


def weighted_sampler(labels: np.ndarray, seed: int, num_samples: int | None = None) -> np.ndarray:
    """Index stream with per-bag weight inversely proportional to class
    frequency (uniform when only one class is present); with replacement."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if num_samples is None:
        num_samples = n
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        weights = torch.ones(n, dtype=torch.float64)
    else:
        weights = torch.where(
            torch.from_numpy(labels.astype(np.int64)) == 1,
            torch.tensor(1.0 / n_pos, dtype=torch.float64),
            torch.tensor(1.0 / n_neg, dtype=torch.float64),
        )
    gen = torch.Generator().manual_seed(seed)
    idx = torch.multinomial(weights, num_samples, replacement=True, generator=gen)
    return idx.numpy()


def batch_losses(
    model: LogMilpModel,
    X: torch.Tensor,
    mask: torch.Tensor,
    Y: torch.Tensor,
    cfg: TrainConfig,
) -> dict[str, torch.Tensor]:
    """All per-batch loss terms; shared by the training step and the
    finite-difference gradient check."""
    out = model(X, mask, eps=cfg.eps)
    l_cls = focal_loss(out.P, Y, cfg.gamma, cfg.alpha)
    l_proto = proto_loss(out.stats.M_bag, out.stats.E_bag, Y, cfg.delta_p, cfg.delta_e, cfg.w_ent)
    l_attn = attention_entropy_loss(out.A, mask, cfg.eps)
    pos = Y.bool()
    if cfg.use_consistency and bool(pos.any()):
        _, i_star = select_key_instances(out.A.detach(), mask, cfg.eps)
        X_pos = X[pos].clone()
        rows = torch.arange(X_pos.shape[0])
        X_pos[rows, i_star[pos]] = 0.0
        out_pert = model(X_pos, mask[pos], eps=cfg.eps)
        l_con = torch.relu(cfg.delta_c - (out.P[pos] - out_pert.P)).mean()
    else:
        l_con = out.P.sum() * 0.0
    l_total = l_cls + cfg.lambda_p * l_proto + cfg.lambda_a * l_attn + cfg.lambda_c * l_con
    return {
        "l_cls": l_cls,
        "l_proto": l_proto,
        "l_attn": l_attn,
        "l_con": l_con,
        "l_total": l_total,
    }


def train_epoch(
    model: LogMilpModel,
    dataset: BagDataset,
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    epoch: int = 0,
) -> EpochReport:
    """One pass of `len(dataset)` sampled bags in seeded mini-batches."""
    start = time.perf_counter()
    labels = dataset.labels()
    order = weighted_sampler(labels, derive_seed(cfg.seed, f"sampler:{epoch}"))
    sums = {"l_cls": 0.0, "l_proto": 0.0, "l_attn": 0.0, "l_con": 0.0, "l_total": 0.0}
    n_batches = 0
    n_pos = 0
    for lo in range(0, len(order), cfg.batch_size):
        batch = [dataset.bags[i] for i in order[lo : lo + cfg.batch_size]]
        X, mask, Y = collate(batch)
        losses = batch_losses(model, X, mask, Y, cfg)
        if not torch.isfinite(losses["l_total"]):
            parts = {k: float(v.detach()) for k, v in losses.items()}
            raise NonFiniteLoss(f"epoch {epoch}, batch {n_batches}: {parts}")
        optimizer.zero_grad()
        losses["l_total"].backward()
        optimizer.step()
        for key in sums:
            sums[key] += float(losses[key].detach())
        n_batches += 1
        n_pos += int(Y.sum())
    inv = 1.0 / max(n_batches, 1)
    return EpochReport(
        epoch=epoch,
        l_cls=sums["l_cls"] * inv,
        l_proto=sums["l_proto"] * inv,
        l_attn=sums["l_attn"] * inv,
        l_con=sums["l_con"] * inv,
        l_total=sums["l_total"] * inv,
        n_bags=len(order),
        n_pos=n_pos,
        wall_time=time.perf_counter() - start,
    )


def score_dataset(model: LogMilpModel, dataset: BagDataset, batch_size: int = 64) -> np.ndarray:
    """Bag anomaly probabilities, in dataset order."""
    scores: list[np.ndarray] = []
    with torch.no_grad():
        for lo in range(0, len(dataset.bags), batch_size):
            X, mask, _ = collate(dataset.bags[lo : lo + batch_size])
            out = model(X, mask)
            scores.append(out.P.numpy())
    return np.concatenate(scores) if scores else np.zeros(0, dtype=np.float32)


@dataclass
class FitResult:
    model: LogMilpModel
    history: list[EpochReport] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_f1: float = float("-inf")

    def log_lines(self) -> list[str]:
        """Training-log rows: epoch then the five losses then val F1."""
        rows = []
        for rep, f1 in zip(self.history, self.val_f1):
            rows.append(
                f"{rep.epoch}\t{rep.l_cls:.6f}\t{rep.l_proto:.6f}\t{rep.l_attn:.6f}"
                f"\t{rep.l_con:.6f}\t{rep.l_total:.6f}\t{f1:.6f}"
            )
        return rows


def fit(
    model: LogMilpModel,
    train_set: BagDataset,
    val_set: BagDataset,
    cfg: TrainConfig,
) -> FitResult:
    """Train with early stopping on validation F1 (threshold re-selected on
    the validation scores each epoch); restores the best parameters."""
    from .evaluation import prf_at_threshold, select_threshold

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    result = FitResult(model=model)
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stale = 0
    val_labels = val_set.labels()
    for epoch in range(cfg.epochs):
        report = train_epoch(model, train_set, cfg, optimizer, epoch)
        scores = score_dataset(model, val_set)
        try:
            tau = select_threshold(scores, val_labels)
            _, _, f1 = prf_at_threshold(scores, val_labels, tau)
        except SingleClass:
            f1 = 0.0
        result.history.append(report)
        result.val_f1.append(f1)
        # Ties refresh both the checkpoint and the patience counter: bag-level
        # F1 saturates early on separable data while attention localization
        # keeps sharpening, so the last of the tied-best epochs is kept.
        if f1 >= result.best_val_f1:
            result.best_val_f1 = f1
            result.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return result
