"""Distillation training loop: AdamW with linear warmup, dev-loss checkpoint selection."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import NumericError, Tensor, zero_grads
from .corpus import TextRecord
from .errors import ConfigError, DataError
from .losses import contrastive_loss, cosine_distance_loss
from .student import StudentModel
from .teachers import EmbeddingCache, concat_teachers
from .util import canonical_hash


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 256
    lr: float = 4e-5
    weight_decay: float = 0.01
    warmup_steps: int = 50
    dropout: float = 0.10
    epochs: int = 1
    loss: str = "cosine"
    tau: float = 0.05
    seed: int = 0
    dev_eval_every: int = 50

    def __post_init__(self) -> None:
        if self.loss not in ("cosine", "contrastive"):
            raise ConfigError(f"loss must be 'cosine' or 'contrastive', got {self.loss!r}")
        if self.loss == "contrastive" and self.batch_size < 2:
            raise ConfigError("contrastive loss needs batch_size >= 2")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_steps < 0 or self.dev_eval_every < 1:
            raise ConfigError("batch_size/epochs/warmup_steps/dev_eval_every out of range")

    def hash(self) -> str:
        return canonical_hash(asdict(self))


@dataclass
class TrainingPair:
    record: TextRecord
    target: np.ndarray  # unit-norm teacher embedding


def make_targets(records: Sequence[TextRecord], caches: Sequence[EmbeddingCache]) -> list[TrainingPair]:
    """Pair each record with its teacher target; two caches concatenate.

    Every record must be present in every selected cache; the error lists
    all missing ids at once.
    """
    if not 1 <= len(caches) <= 2:
        raise ConfigError(f"make_targets expects 1 or 2 caches, got {len(caches)}")
    missing = sorted({rec.id for rec in records for cache in caches if rec.id not in cache})
    if missing:
        raise DataError(f"records missing from teacher cache(s): {missing}")
    pairs = []
    for rec in records:
        if len(caches) == 1:
            target = caches[0].vector(rec.id)
        else:
            target = concat_teachers(caches[0].vector(rec.id), caches[1].vector(rec.id))
        pairs.append(TrainingPair(rec, target))
    return pairs


class AdamW:
    """Adam with decoupled weight decay and a linear learning-rate warmup."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        weight_decay: float = 0.01,
        warmup_steps: int = 0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def effective_lr(self, step: int) -> float:
        """Learning rate applied at 1-based update `step`: linear ramp, then constant."""
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.lr * step / self.warmup_steps
        return self.lr

    def step(self) -> None:
        self.t += 1
        lr_t = self.effective_lr(self.t)
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / (1.0 - self.beta1**self.t)
            v_hat = self._v[i] / (1.0 - self.beta2**self.t)
            p.data = p.data - lr_t * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)


@dataclass
class TrainCheckpoint:
    step: int
    dev_loss: float
    encoder_state: list[np.ndarray]
    projection_state: list[np.ndarray]
    config_hash: str

    def restore_into(self, student: StudentModel) -> None:
        enc_params = student.encoder.parameters()
        proj_params = student.projection.parameters()
        if len(enc_params) != len(self.encoder_state) or len(proj_params) != len(self.projection_state):
            raise DataError("checkpoint does not match the student's parameter layout")
        for p, saved in zip(enc_params, self.encoder_state):
            p.data = saved.copy()
        for p, saved in zip(proj_params, self.projection_state):
            p.data = saved.copy()


@dataclass
class CurvePoint:
    step: int
    train_loss: float | None
    dev_loss: float | None


@dataclass
class TrainResult:
    best: TrainCheckpoint
    curve: list[CurvePoint] = field(default_factory=list)
    aborted: bool = False
    steps: int = 0


def write_curve(path: str | Path, curve: Sequence[CurvePoint]) -> None:
    """CSV 'step,train_loss,dev_loss'; blank cells where a value was not computed."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,train_loss,dev_loss\n")
        for pt in curve:
            train = "" if pt.train_loss is None else f"{pt.train_loss:.10f}"
            dev = "" if pt.dev_loss is None else f"{pt.dev_loss:.10f}"
            fh.write(f"{pt.step},{train},{dev}\n")


def _loss_fn(cfg: TrainingConfig):
    if cfg.loss == "cosine":
        return cosine_distance_loss
    return lambda t, s: contrastive_loss(t, s, cfg.tau)


def _snapshot(student: StudentModel, step: int, dev_loss: float, cfg_hash: str) -> TrainCheckpoint:
    return TrainCheckpoint(
        step=step,
        dev_loss=dev_loss,
        encoder_state=[p.data.copy() for p in student.encoder.parameters()],
        projection_state=[p.data.copy() for p in student.projection.parameters()],
        config_hash=cfg_hash,
    )


def evaluate_loss(student: StudentModel, cfg: TrainingConfig, pairs: Sequence[TrainingPair]) -> float:
    """Mean per-element loss over pairs with dropout off."""
    loss_fn = _loss_fn(cfg)
    total = 0.0
    count = 0
    for start in range(0, len(pairs), cfg.batch_size):
        batch = pairs[start : start + cfg.batch_size]
        ids, mask = student.tokenizer.encode_batch([p.record for p in batch])
        _, final = student.embed_batch_tensors(ids, mask, train_mode=False)
        targets = np.stack([p.target for p in batch])
        loss = loss_fn(targets, final)
        total += float(loss.data) * len(batch)
        count += len(batch)
    return total / count


def train(
    student: StudentModel,
    cfg: TrainingConfig,
    train_pairs: Sequence[TrainingPair],
    dev_pairs: Sequence[TrainingPair],
) -> TrainResult:
    """Run the distillation loop and return the dev-loss-minimizing checkpoint.

    Shuffling, dropout, and therefore the whole run are deterministic in
    cfg.seed. The partial final batch of each epoch is kept. A non-finite
    loss aborts the run and returns the last good checkpoint. On return the
    student's parameters are restored to the best checkpoint.
    """
    if not train_pairs:
        raise DataError("train_pairs is empty")
    if not dev_pairs:
        raise DataError("dev_pairs is empty")
    if abs(cfg.dropout - student.encoder.config.dropout) > 1e-12:
        raise ConfigError(
            f"training dropout {cfg.dropout} does not match the encoder's "
            f"{student.encoder.config.dropout}; build the encoder with the training rate"
        )
    d_t = student.d_teacher
    for p in list(train_pairs) + list(dev_pairs):
        if p.target.shape != (d_t,):
            raise DataError(
                f"target for {p.record.id!r} has shape {p.target.shape}, expected ({d_t},)"
            )

    cfg_hash = cfg.hash()
    loss_fn = _loss_fn(cfg)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    optimizer = AdamW(
        student.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay, warmup_steps=cfg.warmup_steps
    )

    dev0 = evaluate_loss(student, cfg, dev_pairs)
    best = _snapshot(student, 0, dev0, cfg_hash)
    result = TrainResult(best=best, curve=[CurvePoint(0, None, dev0)])

    step = 0
    try:
        for _ in range(cfg.epochs):
            order = shuffle_rng.permutation(len(train_pairs))
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_pairs[i] for i in order[start : start + cfg.batch_size]]
                ids, mask = student.tokenizer.encode_batch([p.record for p in batch])
                _, final = student.embed_batch_tensors(ids, mask, train_mode=True, rng=dropout_rng)
                targets = np.stack([p.target for p in batch])
                loss = loss_fn(targets, final)
                zero_grads(student.parameters())
                loss.backward()
                optimizer.step()
                step += 1

                dev_loss = None
                if step % cfg.dev_eval_every == 0:
                    dev_loss = evaluate_loss(student, cfg, dev_pairs)
                    if dev_loss < result.best.dev_loss:
                        result.best = _snapshot(student, step, dev_loss, cfg_hash)
                result.curve.append(CurvePoint(step, float(loss.data), dev_loss))
    except NumericError:
        result.aborted = True
    else:
        if step % cfg.dev_eval_every != 0 and not result.aborted:
            dev_loss = evaluate_loss(student, cfg, dev_pairs)
            if dev_loss < result.best.dev_loss:
                result.best = _snapshot(student, step, dev_loss, cfg_hash)
            result.curve.append(CurvePoint(step, None, dev_loss))

    result.steps = step
    result.best.restore_into(student)
    return result
