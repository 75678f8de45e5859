"""Distillation objectives: cosine distance (primary) and contrastive (ablation)."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError


def _as_batch(x, name: str) -> Tensor:
    t = ag.ensure_tensor(x)
    if t.ndim != 2:
        raise DataError(f"{name} batch must be 2-d, got shape {t.shape}")
    return t


def cosine_distance_loss(teacher, student) -> Tensor:
    """Negative mean cosine similarity between matched rows; -1 at perfect alignment.

    Both sides are normalized row-wise, so the value lies in [-1, 1].
    Differentiable with respect to the student batch; zero rows are an error.
    """
    t = _as_batch(teacher, "teacher")
    s = _as_batch(student, "student")
    if t.shape != s.shape:
        raise DataError(f"teacher batch {t.shape} does not match student batch {s.shape}")
    t_hat = ag.l2_normalize(t)
    s_hat = ag.l2_normalize(s)
    return ag.neg(ag.tmean(ag.tsum(ag.mul(t_hat, s_hat), axis=-1)))


def contrastive_loss(teacher, student, tau: float) -> Tensor:
    """Temperature-scaled contrastive objective over a batch.

    Row i's positive is its own teacher vector; the denominator sums
    exp(sim(t_j, s_i)/tau) over all j plus exp(sim(s_j, s_i)/tau) over j != i.
    Rows are normalized internally; the value is >= 0 and exactly 0 for n=1.
    """
    if tau <= 0:
        raise DataError(f"temperature must be positive, got {tau}")
    t = _as_batch(teacher, "teacher")
    s = _as_batch(student, "student")
    if t.shape != s.shape:
        raise DataError(f"teacher batch {t.shape} does not match student batch {s.shape}")
    n = t.shape[0]
    t_hat = ag.l2_normalize(t)
    s_hat = ag.l2_normalize(s)

    sim_ts = ag.mul(ag.matmul(t_hat, ag.transpose(s_hat, (1, 0))), 1.0 / tau)  # [j, i] = sim(t_j, s_i)/tau
    sim_ss = ag.mul(ag.matmul(s_hat, ag.transpose(s_hat, (1, 0))), 1.0 / tau)  # [j, i] = sim(s_j, s_i)/tau

    eye = np.eye(n)
    off_diag = 1.0 - eye
    # Column-wise max over all denominator terms, detached, for a stable log-sum-exp.
    ss_masked = np.where(eye.astype(bool), -np.inf, sim_ss.data)
    shift = np.vstack([sim_ts.data, ss_masked]).max(axis=0)  # (n,)

    exp_ts = ag.exp(ag.sub(sim_ts, shift))
    # Replace the self-similarity diagonal with the shift so exp() stays bounded,
    # then zero it out; the j = i student term is excluded from the denominator.
    ss_sub = ag.add(ag.mul(sim_ss, off_diag), eye * shift)
    exp_ss = ag.mul(ag.exp(ag.sub(ss_sub, shift)), off_diag)

    denom = ag.add(ag.tsum(exp_ts, axis=0), ag.tsum(exp_ss, axis=0))
    log_denom = ag.add(ag.log(denom), shift)
    positives = ag.tsum(ag.mul(sim_ts, eye), axis=0)
    return ag.tmean(ag.sub(log_denom, positives))
