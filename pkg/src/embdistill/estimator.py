"""Scikit-learn-style facade: fit on (text, teacher-embedding) pairs, transform text."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .encoder import EncoderConfig, EncoderParams, ProjectionParams
from .student import StudentModel
from .tokenizer import build_vocab
from .trainer import TrainingConfig, TrainingPair, train
from .validation import check_records, check_targets


class EmbeddingDistiller(BaseEstimator, TransformerMixin):
    """Distill teacher embeddings into a small local encoder.

    fit(X, y) trains the student so its embeddings align with the teacher
    vectors y (one unit-norm row per sample in X); transform(X) then produces
    unit-norm embeddings, in the teacher's dimension by default or in the
    encoder's own lower-dimensional space with output='bottleneck'.

    X may contain raw strings (treated as passages), (kind, text) pairs,
    or TextRecords.
    """

    def __init__(
        self,
        d_model: int = 64,
        layers: int = 2,
        heads: int = 4,
        max_len: int = 64,
        vocab_size: int = 8192,
        dropout: float = 0.1,
        lr: float = 4e-5,
        batch_size: int = 256,
        epochs: int = 1,
        weight_decay: float = 0.01,
        warmup_steps: int = 50,
        loss: str = "cosine",
        tau: float = 0.05,
        dev_fraction: float = 0.1,
        dev_eval_every: int = 50,
        output: str = "final",
        seed: int = 0,
    ):
        self.d_model = d_model
        self.layers = layers
        self.heads = heads
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.loss = loss
        self.tau = tau
        self.dev_fraction = dev_fraction
        self.dev_eval_every = dev_eval_every
        self.output = output
        self.seed = seed

    def fit(self, X, y):
        records = check_records(X)
        targets = check_targets(y, len(records))
        pairs = [TrainingPair(rec, vec) for rec, vec in zip(records, targets)]

        rng = np.random.default_rng(self.seed)
        n_dev = max(1, int(round(self.dev_fraction * len(pairs)))) if len(pairs) > 1 else 1
        n_dev = min(n_dev, len(pairs))
        order = rng.permutation(len(pairs))
        dev_idx = set(order[:n_dev].tolist())
        dev_pairs = [pairs[i] for i in sorted(dev_idx)]
        train_pairs = [pairs[i] for i in range(len(pairs)) if i not in dev_idx] or dev_pairs

        tokenizer = build_vocab(
            (p.record for p in train_pairs), self.vocab_size, max_len=self.max_len
        )
        encoder_cfg = EncoderConfig(
            vocab_size=tokenizer.vocab_size,
            d_model=self.d_model,
            layers=self.layers,
            heads=self.heads,
            max_len=self.max_len,
            dropout=self.dropout,
        )
        encoder = EncoderParams.init(encoder_cfg, seed=self.seed)
        projection = ProjectionParams.init(targets.shape[1], self.d_model, seed=self.seed + 1)
        student = StudentModel(tokenizer, encoder, projection)

        cfg = TrainingConfig(
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            warmup_steps=self.warmup_steps,
            dropout=self.dropout,
            epochs=self.epochs,
            loss=self.loss,
            tau=self.tau,
            seed=self.seed,
            dev_eval_every=self.dev_eval_every,
        )
        result = train(student, cfg, train_pairs, dev_pairs)

        self.student_ = student
        self.train_result_ = result
        self.d_teacher_ = int(targets.shape[1])
        self.n_features_out_ = self.d_teacher_ if self.output == "final" else self.d_model
        return self

    def _check_fitted(self) -> StudentModel:
        if not hasattr(self, "student_"):
            raise NotFittedError("This EmbeddingDistiller instance is not fitted yet")
        return self.student_

    def transform(self, X) -> np.ndarray:
        student = self._check_fitted()
        records = check_records(X)
        return student.embed_records(records, space=self.output)

    def score(self, X, y) -> float:
        """Mean cosine alignment between transform(X) and the teacher targets."""
        student = self._check_fitted()
        records = check_records(X)
        targets = check_targets(y, len(records))
        embeddings = student.embed_records(records, space="final")
        t_hat = targets / np.linalg.norm(targets, axis=1, keepdims=True)
        return float(np.mean(np.sum(embeddings * t_hat, axis=1)))
