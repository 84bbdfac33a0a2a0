"""AdamW training with cosine annealing and best-validation selection."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core_data import DatasetSplit, VariantRecord
from .evaluation import MetricError, auroc
from .fusion import FusionConfig, FusionModel, is_decayed
from .objectives import LAMBDA, TAU, LossBreakdown, contrastive_with_grad, cross_entropy_with_grad, total_loss


@dataclass
class TrainConfig:
    lr_max: float = 3e-4
    weight_decay: float = 1e-4
    epochs: int = 20
    lam: float = LAMBDA
    tau: float = TAU
    batch_size: int = 256
    seed: int = 0
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive loss needs negatives)")
        if self.lr_max <= 0 or self.tau <= 0 or self.lam < 0 or self.weight_decay < 0:
            raise ValueError("invalid optimisation hyperparameters")

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(t: int, total: int, lr_max: float = 3e-4, lr_min: float = 0.0) -> float:
    """Cosine annealing from ``lr_max`` at ``t = 0`` to ``lr_min`` at ``t = total``."""
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


class AdamW:
    """Adam with decoupled weight decay on the named parameters.

    Decay is applied as a multiplicative shrink before the Adam update, and
    only to weight matrices (biases and LayerNorm parameters are exempt).
    """

    def __init__(self, names: Sequence[str], params: dict, config: TrainConfig):
        self.names = list(names)
        self.config = config
        self.m = {n: np.zeros_like(params[n]) for n in params}
        self.v = {n: np.zeros_like(params[n]) for n in params}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name in self.names:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            p = params[name]
            tmp = np.multiply(g, 1.0 - c.beta1)
            m *= c.beta1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - c.beta2
            v *= c.beta2
            v += tmp
            # tmp <- sqrt(v_hat) + eps, then the bias-corrected Adam direction
            np.divide(v, bc2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += c.eps
            np.divide(m, tmp, out=tmp)
            tmp *= lr / bc1
            if c.weight_decay and is_decayed(name):
                p *= 1.0 - lr * c.weight_decay
            p -= tmp


class MissingEmbeddingError(KeyError):
    pass


class EmbeddingSet:
    """Per-modality embedding lookups keyed by ``(protein, position, wt, mut)``."""

    def __init__(self, seq: dict, str_: dict, dyn: dict):
        self.tables = {"seq": seq, "str": str_, "dyn": dyn}

    def arrays(self, records: Sequence[VariantRecord], modalities=("seq", "str", "dyn")):
        missing = [
            (m, r.key) for r in records for m in modalities if r.key not in self.tables[m]
        ]
        if missing:
            preview = ", ".join(f"{m}:{k}" for m, k in missing[:5])
            raise MissingEmbeddingError(f"{len(missing)} missing embeddings ({preview})")
        out = {}
        for m in ("seq", "str", "dyn"):
            if m in modalities:
                out[m] = np.stack([self.tables[m][r.key] for r in records]).astype(np.float64)
            else:
                out[m] = None
        return out


@dataclass
class Batch:
    seq: Optional[np.ndarray]
    str: Optional[np.ndarray]
    dyn: Optional[np.ndarray]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Batch":
        pick = lambda a: None if a is None else a[idx]
        return Batch(pick(self.seq), pick(self.str), pick(self.dyn), self.labels[idx])


def make_batch(records, embeddings: EmbeddingSet, modalities) -> Batch:
    arr = embeddings.arrays(records, modalities)
    labels = np.array([r.label for r in records], dtype=np.int64)
    if any(r.label is None for r in records):
        raise ValueError("unlabelled record in training data")
    return Batch(arr["seq"], arr["str"], arr["dyn"], labels)


def loss_and_grads(
    model: FusionModel,
    batch: Batch,
    lam: float = LAMBDA,
    tau: float = TAU,
    training: bool = True,
    rng: Optional[np.random.Generator] = None,
    with_grads: bool = True,
):
    """Forward, combined loss and (optionally) every parameter gradient."""
    out = model.forward(batch.seq, batch.str, batch.dyn, training=training, rng=rng)
    ce, dlogits = cross_entropy_with_grad(out.logits, batch.labels)
    ctr, pairs, dz = contrastive_with_grad(out.z, model.config.modalities, tau)
    breakdown = total_loss(ce, ctr, lam, pairs, tau)
    if not with_grads:
        return breakdown, None, out
    dz_scaled = {m: lam * g for m, g in dz.items()} if lam else None
    grads = model.backward(out, dlogits, dz_scaled)
    return breakdown, grads, out


def predict(model: FusionModel, batch: Batch, chunk: int = 1024):
    """Class-1 probabilities and router weights, dropout off."""
    probs, weights = [], []
    for start in range(0, len(batch), chunk):
        part = batch.take(slice(start, start + chunk))
        out = model.forward(part.seq, part.str, part.dyn, training=False)
        logits = out.logits
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        probs.append(p[:, 1])
        weights.append(out.weights)
    if not probs:
        return np.zeros(0), np.zeros((0, 4))
    return np.concatenate(probs), np.concatenate(weights)


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing singleton joins the previous batch."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train: dict
    val_auroc: Optional[float]


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "epochs": [asdict(e) for e in self.epochs]}


@dataclass
class TrainResult:
    model: FusionModel
    history: TrainHistory
    optimizer_state: dict


def _mean_breakdown(items: list[LossBreakdown]) -> dict:
    out = {}
    for key in ("ce", "nce_seq_str", "nce_seq_dyn", "nce_str_dyn", "ctr", "total"):
        vals = [getattr(b, key) for b in items if getattr(b, key) is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


def train(
    split: DatasetSplit,
    embeddings: EmbeddingSet,
    config: Optional[TrainConfig] = None,
    fusion_config: Optional[FusionConfig] = None,
    log: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Train on ``split.train`` and keep the epoch with the best validation AUROC.

    Every step logs its learning rate and loss breakdown through ``log``;
    every epoch logs mean losses and validation AUROC. Ties in validation
    AUROC keep the earliest epoch; without a usable validation set the last
    epoch is kept.
    """
    config = config or TrainConfig()
    fusion_config = fusion_config or FusionConfig()
    log = log or (lambda record: None)
    model = FusionModel(fusion_config, seed=config.seed)
    mods = fusion_config.modalities
    train_batch = make_batch(split.train, embeddings, mods)
    val_batch = make_batch(split.val, embeddings, mods) if split.val else None
    if len(train_batch) < 2:
        raise ValueError("need at least 2 training variants")

    names = model.trainable()
    opt = AdamW(names, model.params, config)
    steps_per_epoch = len(epoch_batches(len(train_batch), config.batch_size, np.random.default_rng(0)))
    total_steps = config.epochs * steps_per_epoch
    history = TrainHistory()
    best_score = -math.inf
    best_params = None
    best_state = None
    step = 0
    for epoch in range(config.epochs):
        shuffle_rng = np.random.default_rng([config.seed, epoch, 0x5F])
        records = []
        for b, idx in enumerate(epoch_batches(len(train_batch), config.batch_size, shuffle_rng)):
            lr = cosine_lr(step, total_steps, config.lr_max, config.lr_min)
            dropout_rng = np.random.default_rng([config.seed, epoch, b])
            breakdown, grads, _ = loss_and_grads(
                model, train_batch.take(idx), config.lam, config.tau, True, dropout_rng
            )
            if not math.isfinite(breakdown.total):
                raise FloatingPointError(f"non-finite loss at epoch {epoch} step {step}")
            opt.step(model.params, grads, lr)
            records.append(breakdown)
            log({"kind": "step", "epoch": epoch, "step": step, "lr": lr, **breakdown.to_dict()})
            step += 1
        val_score = None
        if val_batch is not None:
            probs, _ = predict(model, val_batch)
            try:
                val_score = auroc(probs, val_batch.labels)
            except MetricError:
                val_score = None
        history.epochs.append(EpochRecord(epoch, lr, _mean_breakdown(records), val_score))
        log({"kind": "epoch", "epoch": epoch, "val_auroc": val_score, "train": _mean_breakdown(records)})
        score = val_score if val_score is not None else -math.inf
        if best_params is None or score > best_score or (val_batch is None and epoch == config.epochs - 1):
            best_score = score
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_state = {"epoch": epoch, "step": step, "m": {k: v.copy() for k, v in opt.m.items()},
                          "v": {k: v.copy() for k, v in opt.v.items()}}
    best = FusionModel(fusion_config, params=best_params)
    return TrainResult(best, history, best_state)


def jsonl_logger(lines: list[str]) -> Callable[[dict], None]:
    def _log(record: dict) -> None:
        lines.append(json.dumps(record, sort_keys=True))

    return _log
