"""Word-level tokenizer: lowercase, split on whitespace/punctuation, [UNK] fallback."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import QUERY, TextRecord
from .errors import DataError

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
PAD_ID = 0
UNK_ID = 1

QUERY_PREFIX = "query: "
PASSAGE_PREFIX = "document: "

# Words are alphanumeric runs; every other non-space character is its own token.
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def count_tokens(text: str) -> int:
    return len(split_words(text))


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Keep the first max_tokens tokens, rejoined with single spaces."""
    words = split_words(text)
    if len(words) <= max_tokens:
        return text
    return " ".join(words[:max_tokens])


@dataclass
class Tokenizer:
    """Fixed vocabulary mapping tokens to ids; [PAD]=0 and [UNK]=1 are reserved."""

    vocab: dict[str, int]
    max_len: int
    lowercase: bool = True
    _id_to_token: list[str] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.vocab.get(PAD_TOKEN) != PAD_ID or self.vocab.get(UNK_TOKEN) != UNK_ID:
            raise DataError("vocabulary must map [PAD]->0 and [UNK]->1")
        if self.max_len < 1:
            raise DataError("max_len must be positive")
        self._id_to_token = [""] * len(self.vocab)
        for token, idx in self.vocab.items():
            self._id_to_token[idx] = token

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def encode(self, record: TextRecord) -> tuple[np.ndarray, np.ndarray]:
        """Token ids and validity mask, prefixed by kind and padded to max_len."""
        prefix = QUERY_PREFIX if record.kind == QUERY else PASSAGE_PREFIX
        words = split_words(prefix + record.text)
        if not words:
            words = [UNK_TOKEN]
        ids = [self.vocab.get(w, UNK_ID) for w in words[: self.max_len]]
        mask = np.zeros(self.max_len, dtype=bool)
        mask[: len(ids)] = True
        padded = np.full(self.max_len, PAD_ID, dtype=np.int64)
        padded[: len(ids)] = ids
        return padded, mask

    def encode_batch(self, records: Iterable[TextRecord]) -> tuple[np.ndarray, np.ndarray]:
        """Encode records into (n, L) id and mask matrices, L = longest sequence."""
        pairs = [self.encode(r) for r in records]
        if not pairs:
            raise DataError("cannot encode an empty batch")
        longest = max(int(m.sum()) for _, m in pairs)
        ids = np.stack([i[:longest] for i, _ in pairs])
        masks = np.stack([m[:longest] for _, m in pairs])
        return ids, masks

    def save(self, path: str | Path) -> None:
        """One token per line; the line number is the id."""
        Path(path).write_text("\n".join(self._id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, max_len: int) -> "Tokenizer":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(vocab={tok: i for i, tok in enumerate(lines)}, max_len=max_len)


def build_vocab(corpus: Iterable[TextRecord], vocab_size: int, max_len: int = 64) -> Tokenizer:
    """Most-frequent-word vocabulary (ties broken lexicographically) plus specials."""
    if vocab_size < 16:
        raise DataError(f"vocab_size must be at least 16, got {vocab_size}")
    counts: dict[str, int] = {}
    seen_any = False
    for rec in corpus:
        seen_any = True
        for w in split_words(rec.text):
            counts[w] = counts.get(w, 0) + 1
    if not seen_any:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for token, _ in ranked[: vocab_size - 2]:
        vocab[token] = len(vocab)
    return Tokenizer(vocab=vocab, max_len=max_len)
