"""Training losses over last-layer logits: CE, Cllr and their average.

All three operate on a ``(m, N)`` logit matrix and an integer label
vector and return the loss value together with its gradient with respect
to the logits. Everything is computed in float64.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, require

LN2 = np.log(2.0)


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class ScorePartition:
    target_scores: np.ndarray
    nontarget_scores: np.ndarray


def softplus(x):
    """``log(1 + exp(x))`` without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _check(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    require(logits.ndim == 2, f"logits must be 2-D, got shape {logits.shape}")
    m, n = logits.shape
    require(m >= 1 and n >= 2, f"need m >= 1 and N >= 2, got {logits.shape}")
    require(labels.shape == (m,), f"labels shape {labels.shape} != ({m},)")
    require(np.issubdtype(labels.dtype, np.integer), "labels must be integers")
    if labels.min() < 0 or labels.max() >= n:
        raise ContractError(f"labels must lie in [0, {n})")
    require(bool(np.all(np.isfinite(logits))), "logits must be finite")
    return logits, labels.astype(np.int64)


def ce_loss(logits, labels) -> LossOutput:
    """Mean softmax cross-entropy (natural log) over the batch."""
    logits, labels = _check(logits, labels)
    m = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(m)
    value = float(np.mean(lse - shifted[rows, labels]))
    probs = np.exp(shifted - lse[:, None])
    probs[rows, labels] -= 1.0
    return LossOutput(value, probs / m)


def _target_mask(shape, labels):
    mask = np.zeros(shape, dtype=bool)
    mask[np.arange(shape[0]), labels] = True
    return mask


def partition_scores(logits, labels) -> ScorePartition:
    """Split a logit batch into target scores (one per row) and the rest.

    Both vectors follow row-major order of the logit matrix.
    """
    logits, labels = _check(logits, labels)
    mask = _target_mask(logits.shape, labels)
    return ScorePartition(logits[mask], logits[~mask])


def cllr_from_scores(part: ScorePartition) -> float:
    """Log-likelihood-ratio cost in bits of a set of target/non-target scores."""
    tar = np.asarray(part.target_scores, dtype=np.float64)
    non = np.asarray(part.nontarget_scores, dtype=np.float64)
    if tar.size == 0 or non.size == 0:
        raise ContractError("Cllr needs at least one target and one non-target score")
    c_tar = softplus(-tar).mean() / LN2
    c_non = softplus(non).mean() / LN2
    return float(0.5 * (c_tar + c_non))


def cllr_loss(logits, labels) -> LossOutput:
    """Cllr of the minibatch, reading each logit as a score.

    The logit of the true speaker is a target trial; every other logit in
    the row is a non-target trial.
    """
    logits, labels = _check(logits, labels)
    m, n = logits.shape
    mask = _target_mask(logits.shape, labels)
    value = cllr_from_scores(ScorePartition(logits[mask], logits[~mask]))
    n_tar, n_non = m, m * (n - 1)
    grad = np.where(
        mask,
        -sigmoid(-logits) / (n_tar * LN2),
        sigmoid(logits) / (n_non * LN2),
    )
    return LossOutput(value, 0.5 * grad)


def cllr_ce_loss(logits, labels) -> LossOutput:
    ce = ce_loss(logits, labels)
    cllr = cllr_loss(logits, labels)
    return LossOutput(0.5 * (cllr.value + ce.value), 0.5 * (cllr.grad + ce.grad))


LOSSES = {"ce": ce_loss, "cllr": cllr_loss, "cllr_ce": cllr_ce_loss}


def get_loss(kind: str):
    try:
        return LOSSES[kind]
    except KeyError:
        raise ContractError(f"unknown loss {kind!r}; expected one of {sorted(LOSSES)}") from None
