"""Small pre-norm transformer encoder that mean-pools the last layer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 8192
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.d_model % self.heads != 0:
            raise DataError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must be in [0, 1)")

    def parameter_count(self) -> int:
        per_layer = 12 * self.d_model**2 + 4 * self.d_model
        return (self.vocab_size + self.max_len) * self.d_model + self.layers * per_layer


@dataclass
class EncoderBlock:
    ln1_gain: Tensor
    ln1_shift: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor
    w_ff1: Tensor
    w_ff2: Tensor

    def parameters(self) -> list[Tensor]:
        return [
            self.ln1_gain, self.ln1_shift,
            self.wq, self.wk, self.wv, self.wo,
            self.ln2_gain, self.ln2_shift,
            self.w_ff1, self.w_ff2,
        ]


class EncoderParams:
    """All trainable encoder tensors, in the serialization order of parameters()."""

    def __init__(self, config: EncoderConfig, token_emb, pos_emb, blocks: list[EncoderBlock]):
        self.config = config
        self.token_emb = token_emb
        self.pos_emb = pos_emb
        self.blocks = blocks

    @classmethod
    def init(cls, config: EncoderConfig, seed: int = 0) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        d = config.d_model

        def gauss(*shape) -> Tensor:
            return ag.parameter(rng.normal(0.0, 0.02, size=shape))

        blocks = [
            EncoderBlock(
                ln1_gain=ag.parameter(np.ones(d)),
                ln1_shift=ag.parameter(np.zeros(d)),
                wq=gauss(d, d),
                wk=gauss(d, d),
                wv=gauss(d, d),
                wo=gauss(d, d),
                ln2_gain=ag.parameter(np.ones(d)),
                ln2_shift=ag.parameter(np.zeros(d)),
                w_ff1=gauss(d, 4 * d),
                w_ff2=gauss(4 * d, d),
            )
            for _ in range(config.layers)
        ]
        return cls(
            config,
            token_emb=gauss(config.vocab_size, d),
            pos_emb=gauss(config.max_len, d),
            blocks=blocks,
        )

    def parameters(self) -> list[Tensor]:
        params = [self.token_emb, self.pos_emb]
        for block in self.blocks:
            params.extend(block.parameters())
        return params


class ProjectionParams:
    """Linear map from the pooled d_model space to the teacher dimension."""

    def __init__(self, matrix: Tensor, bias: Tensor | None = None):
        self.matrix = matrix  # (d_teacher, d_model)
        self.bias = bias

    @classmethod
    def init(cls, d_teacher: int, d_model: int, seed: int = 0, with_bias: bool = False) -> "ProjectionParams":
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(d_model)
        matrix = ag.parameter(rng.normal(0.0, scale, size=(d_teacher, d_model)))
        bias = ag.parameter(np.zeros(d_teacher)) if with_bias else None
        return cls(matrix, bias)

    @property
    def d_teacher(self) -> int:
        return self.matrix.shape[0]

    @property
    def d_model(self) -> int:
        return self.matrix.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.matrix] if self.bias is None else [self.matrix, self.bias]

    def apply(self, pooled: Tensor) -> Tensor:
        """Map (..., d_model) vectors to (..., d_teacher)."""
        out = ag.matmul(pooled, ag.transpose(self.matrix, (1, 0)))
        if self.bias is not None:
            out = ag.add(out, self.bias)
        return out


def _attention(h: Tensor, block: EncoderBlock, mask: np.ndarray, heads: int) -> Tensor:
    n, length, d = h.shape
    dh = d // heads

    def heads_view(t: Tensor) -> Tensor:
        return ag.transpose(ag.reshape(t, (n, length, heads, dh)), (0, 2, 1, 3))

    q = heads_view(ag.matmul(h, block.wq))
    k = heads_view(ag.matmul(h, block.wk))
    v = heads_view(ag.matmul(h, block.wv))

    scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    # Padded keys get a large negative bias so their attention weight underflows to 0.
    key_bias = (1.0 - mask.astype(np.float64))[:, None, None, :] * -1e9
    probs = ag.softmax_rows(ag.add(scores, key_bias))
    context = ag.matmul(probs, v)
    merged = ag.reshape(ag.transpose(context, (0, 2, 1, 3)), (n, length, d))
    return ag.matmul(merged, block.wo)


def forward(
    params: EncoderParams,
    ids: np.ndarray,
    mask: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Pooled (n, d_model) representations for an (n, L) id batch.

    Embedding + position sum, `layers` pre-norm blocks (masked self-attention,
    GELU feed-forward, residuals), then mean pooling over unmasked positions.
    The output is not normalized. Dropout applies only in train mode.
    """
    cfg = params.config
    ids = np.atleast_2d(np.asarray(ids))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if ids.shape != mask.shape:
        raise DataError(f"ids shape {ids.shape} does not match mask shape {mask.shape}")
    if ids.shape[1] > cfg.max_len:
        raise DataError(f"sequence length {ids.shape[1]} exceeds max_len {cfg.max_len}")
    if train_mode and cfg.dropout > 0.0 and rng is None:
        raise ValueError("train_mode forward with dropout requires an rng")

    def drop(t: Tensor) -> Tensor:
        if train_mode and cfg.dropout > 0.0:
            return ag.dropout(t, cfg.dropout, rng)
        return t

    length = ids.shape[1]
    x = ag.add(ag.gather_rows(params.token_emb, ids), ag.gather_rows(params.pos_emb, np.arange(length)))
    x = drop(x)
    for block in params.blocks:
        h = ag.layer_norm(x, block.ln1_gain, block.ln1_shift)
        x = ag.add(x, drop(_attention(h, block, mask, cfg.heads)))
        h2 = ag.layer_norm(x, block.ln2_gain, block.ln2_shift)
        ff = ag.matmul(ag.gelu(ag.matmul(h2, block.w_ff1)), block.w_ff2)
        x = ag.add(x, drop(ff))
    return ag.mean_pool(x, mask)
