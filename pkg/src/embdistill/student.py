"""The trained student: tokenizer + encoder + projection, with embedding helpers."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import TextRecord
from .encoder import EncoderParams, ProjectionParams, forward
from .errors import DataError
from .tokenizer import Tokenizer


class StudentModel:
    def __init__(self, tokenizer: Tokenizer, encoder: EncoderParams, projection: ProjectionParams):
        if tokenizer.vocab_size != encoder.config.vocab_size:
            raise DataError(
                f"tokenizer vocab ({tokenizer.vocab_size}) does not match encoder "
                f"({encoder.config.vocab_size})"
            )
        if projection.d_model != encoder.config.d_model:
            raise DataError(
                f"projection d_model ({projection.d_model}) does not match encoder "
                f"({encoder.config.d_model})"
            )
        self.tokenizer = tokenizer
        self.encoder = encoder
        self.projection = projection

    @property
    def d_model(self) -> int:
        return self.encoder.config.d_model

    @property
    def d_teacher(self) -> int:
        return self.projection.d_teacher

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.projection.parameters()

    def embed_batch_tensors(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Differentiable (bottleneck, final) unit-row batches for token ids."""
        pooled = forward(self.encoder, ids, mask, train_mode=train_mode, rng=rng)
        bottleneck = ag.l2_normalize(pooled)
        final = ag.l2_normalize(self.projection.apply(pooled))
        return bottleneck, final

    def embed_records(
        self,
        records: Sequence[TextRecord],
        space: str = "final",
        batch_size: int = 256,
    ) -> np.ndarray:
        """Unit-norm embeddings for records (eval mode), as an (n, d) array."""
        if space not in ("final", "bottleneck"):
            raise DataError(f"unknown embedding space {space!r}")
        rows: list[np.ndarray] = []
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            ids, mask = self.tokenizer.encode_batch(chunk)
            bottleneck, final = self.embed_batch_tensors(ids, mask, train_mode=False)
            rows.append((final if space == "final" else bottleneck).data.copy())
        return np.concatenate(rows, axis=0)

    def save(self, path: str | Path, manifest_extra: dict | None = None) -> dict:
        """Write <path> (checkpoint), <path>.vocab.txt, and the sidecar manifest."""
        path = Path(path)
        self.tokenizer.save(Path(str(path) + ".vocab.txt"))
        extra = {"vocab_file": str(path) + ".vocab.txt"}
        if manifest_extra:
            extra.update(manifest_extra)
        return save_checkpoint(path, self.encoder, self.projection, manifest_extra=extra)

    @classmethod
    def load(cls, path: str | Path) -> "StudentModel":
        path = Path(path)
        encoder, projection, _ = load_checkpoint(path)
        if projection is None:
            raise DataError(f"checkpoint {path} has no projection block")
        tokenizer = Tokenizer.load(Path(str(path) + ".vocab.txt"), max_len=encoder.config.max_len)
        return cls(tokenizer, encoder, projection)


def student_embed(student: StudentModel, record: TextRecord, train_mode: bool = False,
                  rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Both unit-norm views of one record: {'bottleneck': d_model, 'final': d_teacher}."""
    ids, mask = student.tokenizer.encode_batch([record])
    bottleneck, final = student.embed_batch_tensors(ids, mask, train_mode=train_mode, rng=rng)
    return {"bottleneck": bottleneck.data[0].copy(), "final": final.data[0].copy()}
