"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .corpus import PASSAGE, QUERY, TextRecord
from .errors import DataError


def check_records(X) -> list[TextRecord]:
    """Coerce estimator input into TextRecords.

    Accepts TextRecord sequences, (kind, text) pairs, or plain strings
    (treated as passages). Synthetic ids are assigned positionally.
    """
    if isinstance(X, (str, TextRecord)):
        raise DataError("X must be a sequence of texts or records, not a single item")
    records: list[TextRecord] = []
    for i, item in enumerate(X):
        if isinstance(item, TextRecord):
            records.append(item)
        elif isinstance(item, str):
            records.append(TextRecord(id=f"x{i}", kind=PASSAGE, text=item))
        elif isinstance(item, (tuple, list)) and len(item) == 2:
            kind, text = item
            if kind not in (QUERY, PASSAGE):
                raise DataError(f"X[{i}]: kind must be 'query' or 'passage', got {kind!r}")
            records.append(TextRecord(id=f"x{i}", kind=kind, text=text))
        else:
            raise DataError(f"X[{i}]: expected a string, (kind, text) pair, or TextRecord")
    if not records:
        raise DataError("X is empty")
    return records


def check_targets(y, n_samples: int) -> np.ndarray:
    """Validate teacher targets: (n_samples, d) finite float matrix, no zero rows."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise DataError(f"y must be 2-d (n_samples, dim), got shape {y.shape}")
    if y.shape[0] != n_samples:
        raise DataError(f"y has {y.shape[0]} rows for {n_samples} samples")
    if y.shape[1] < 1:
        raise DataError("y must have at least one column")
    if not np.all(np.isfinite(y)):
        raise DataError("y contains non-finite values")
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms == 0.0):
        raise DataError("y contains zero rows; teacher embeddings must have direction")
    return y
