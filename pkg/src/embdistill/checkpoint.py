"""Binary model checkpoints: EMBH1 header, little-endian f32 parameters, sidecar manifest.

Layout: magic "EMBH1"; five little-endian uint32 fields (vocab_size, d_model,
layers, heads, max_len); all encoder parameters as little-endian float32 in
EncoderParams.parameters() order; then an optional projection block introduced
by "PROJ" (uint32 d_teacher, uint32 has_bias, matrix floats, bias floats).
A sidecar JSON manifest at <path>.manifest.json carries the content hash.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import autograd as ag
from .encoder import EncoderConfig, EncoderParams, ProjectionParams
from .errors import DataError

MAGIC = b"EMBH1"
PROJECTION_MAGIC = b"PROJ"
_HEADER = struct.Struct("<5I")


def _f32_bytes(tensor: ag.Tensor) -> bytes:
    return np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()


def save_checkpoint(
    path: str | Path,
    encoder: EncoderParams,
    projection: ProjectionParams | None = None,
    manifest_extra: dict | None = None,
) -> dict:
    """Write the checkpoint and its sidecar manifest; returns the manifest."""
    path = Path(path)
    cfg = encoder.config
    chunks = [MAGIC, _HEADER.pack(cfg.vocab_size, cfg.d_model, cfg.layers, cfg.heads, cfg.max_len)]
    chunks.extend(_f32_bytes(p) for p in encoder.parameters())
    if projection is not None:
        if projection.d_model != cfg.d_model:
            raise DataError(
                f"projection expects d_model {projection.d_model}, encoder has {cfg.d_model}"
            )
        chunks.append(PROJECTION_MAGIC)
        chunks.append(struct.pack("<2I", projection.d_teacher, 1 if projection.bias is not None else 0))
        chunks.append(_f32_bytes(projection.matrix))
        if projection.bias is not None:
            chunks.append(_f32_bytes(projection.bias))
    blob = b"".join(chunks)
    path.write_bytes(blob)

    manifest = {
        "content_sha256": hashlib.sha256(blob).hexdigest(),
        "vocab_size": cfg.vocab_size,
        "d_model": cfg.d_model,
        "layers": cfg.layers,
        "heads": cfg.heads,
        "max_len": cfg.max_len,
        "dropout": cfg.dropout,
        "has_projection": projection is not None,
    }
    if projection is not None:
        manifest["d_teacher"] = projection.d_teacher
    if manifest_extra:
        manifest.update(manifest_extra)
    manifest_path = Path(str(path) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise DataError(f"truncated checkpoint file {self.path}")
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.blob)


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, ProjectionParams | None, dict]:
    """Read a checkpoint; returns (encoder, projection-or-None, sidecar manifest)."""
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path} is not a model checkpoint (bad magic)")
    vocab_size, d_model, layers, heads, max_len = _HEADER.unpack(reader.take(_HEADER.size))

    manifest_path = Path(str(path) + ".manifest.json")
    manifest: dict = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        expected = manifest.get("content_sha256")
        actual = hashlib.sha256(reader.blob).hexdigest()
        if expected is not None and expected != actual:
            raise DataError(f"checkpoint {path} does not match its manifest content hash")

    cfg = EncoderConfig(
        vocab_size=vocab_size,
        d_model=d_model,
        layers=layers,
        heads=heads,
        max_len=max_len,
        dropout=float(manifest.get("dropout", 0.1)),
    )
    encoder = EncoderParams.init(cfg, seed=0)
    for param in encoder.parameters():
        param.data = reader.floats(param.shape)

    projection: ProjectionParams | None = None
    if not reader.exhausted:
        if reader.take(len(PROJECTION_MAGIC)) != PROJECTION_MAGIC:
            raise DataError(f"unexpected trailing bytes in checkpoint {path}")
        d_teacher, has_bias = struct.unpack("<2I", reader.take(8))
        matrix = ag.parameter(reader.floats((d_teacher, d_model)))
        bias = ag.parameter(reader.floats((d_teacher,))) if has_bias else None
        projection = ProjectionParams(matrix, bias)
    if not reader.exhausted:
        raise DataError(f"unexpected trailing bytes in checkpoint {path}")
    return encoder, projection, manifest
