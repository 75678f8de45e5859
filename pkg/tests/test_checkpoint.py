"""Checkpoint binary format: bit-exact round trips and manifest integrity."""

import numpy as np
import pytest

from embdistill.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from embdistill.corpus import TextRecord
from embdistill.encoder import EncoderConfig, EncoderParams, ProjectionParams
from embdistill.errors import DataError
from embdistill.student import StudentModel
from embdistill.tokenizer import build_vocab

CFG = EncoderConfig(vocab_size=20, d_model=8, layers=1, heads=2, max_len=6, dropout=0.05)


class TestEncoderRoundTrip:
    def test_save_load_save_is_bit_exact(self, tmp_path):
        params = EncoderParams.init(CFG, seed=1)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, params)
        loaded, proj, _ = load_checkpoint(p1)
        assert proj is None
        save_checkpoint(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_values_stable_under_reload(self, tmp_path):
        params = EncoderParams.init(CFG, seed=2)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params)
        first, _, _ = load_checkpoint(path)
        save_checkpoint(tmp_path / "m2.ckpt", first)
        second, _, _ = load_checkpoint(tmp_path / "m2.ckpt")
        for a, b in zip(first.parameters(), second.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_header_fields(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, EncoderParams.init(CFG, seed=0))
        blob = path.read_bytes()
        assert blob[:5] == MAGIC
        loaded, _, manifest = load_checkpoint(path)
        assert loaded.config.vocab_size == CFG.vocab_size
        assert loaded.config.max_len == CFG.max_len
        assert loaded.config.dropout == CFG.dropout  # restored via the sidecar manifest
        assert manifest["layers"] == CFG.layers

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)

    def test_tampered_content_detected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, EncoderParams.init(CFG, seed=3))
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="content hash"):
            load_checkpoint(path)


class TestProjectionBlock:
    def test_round_trip_with_projection(self, tmp_path):
        params = EncoderParams.init(CFG, seed=4)
        proj = ProjectionParams.init(12, CFG.d_model, seed=5)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, proj)
        _, loaded_proj, manifest = load_checkpoint(path)
        assert loaded_proj is not None
        assert loaded_proj.d_teacher == 12
        assert manifest["has_projection"] is True
        np.testing.assert_array_equal(
            loaded_proj.matrix.data, proj.matrix.data.astype(np.float32).astype(np.float64)
        )

    def test_projection_with_bias(self, tmp_path):
        proj = ProjectionParams.init(5, CFG.d_model, seed=6, with_bias=True)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, EncoderParams.init(CFG, seed=4), proj)
        _, loaded_proj, _ = load_checkpoint(path)
        assert loaded_proj.bias is not None
        np.testing.assert_allclose(loaded_proj.bias.data, proj.bias.data, atol=1e-7)


class TestStudentModelIO:
    def test_save_and_load_round_trip(self, tmp_path):
        corpus = [TextRecord(f"r{i}", "passage", f"word{i} common text") for i in range(5)]
        tok = build_vocab(corpus, 16, max_len=CFG.max_len)
        cfg = EncoderConfig(vocab_size=tok.vocab_size, d_model=8, layers=1, heads=2, max_len=6, dropout=0.0)
        student = StudentModel(tok, EncoderParams.init(cfg, seed=7), ProjectionParams.init(10, 8, seed=8))
        path = tmp_path / "student.ckpt"
        student.save(path, manifest_extra={"config_hash": "abc123"})

        loaded = StudentModel.load(path)
        assert loaded.tokenizer.vocab == tok.vocab
        assert loaded.d_teacher == 10
        vecs_a = student.embed_records(corpus[:2])
        vecs_b = loaded.embed_records(corpus[:2])
        np.testing.assert_allclose(vecs_a, vecs_b, atol=1e-6)
