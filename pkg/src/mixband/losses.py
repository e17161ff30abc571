"""Composite loss kernels: masked prediction, decoder sequence loss, CTC with gradient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidConfig,
    InvalidTarget,
    LabelOutOfRange,
    LengthMismatch,
    NoMaskedFrames,
    TargetTooLong,
)
from .labeling import collapse_ids

DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 0.3
# log-domain zero; exp() of it underflows to exactly 0.0
LOG_ZERO = -1.0e30


@dataclass
class LossBreakdown:
    """Components and weighted totals of the two composite losses."""

    l_m: Optional[float] = None
    l_s: Optional[float] = None
    alpha: Optional[float] = None
    total_pretrain: Optional[float] = None
    ctc: Optional[float] = None
    attention: Optional[float] = None
    beta: Optional[float] = None
    total_finetune: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "l_m": self.l_m,
            "l_s": self.l_s,
            "alpha": self.alpha,
            "total_pretrain": self.total_pretrain,
            "ctc": self.ctc,
            "attention": self.attention,
            "beta": self.beta,
            "total_finetune": self.total_finetune,
        }


def _as_matrix(logits) -> np.ndarray:
    m = np.asarray(logits, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 2:
        raise InvalidConfig(f"logit matrix must be T x V with V >= 2, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidConfig("logit matrix contains non-finite entries")
    return m


def _label_array(labels) -> np.ndarray:
    return np.asarray(getattr(labels, "labels", labels), dtype=np.int64)


def _mask_array(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "masked", mask), dtype=bool)


def _token_list(target) -> list:
    return [int(t) for t in getattr(target, "tokens", target)]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log softmax, stable under large scores."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def masked_prediction_loss(logits, labels, mask) -> float:
    """Mean cross-entropy over masked frames against per-frame cluster labels.

    Unmasked frames do not contribute; their logits are ignored entirely.
    """
    mat = _as_matrix(logits)
    lab = _label_array(labels)
    msk = _mask_array(mask)
    if not (len(lab) == len(msk) == mat.shape[0]):
        raise LengthMismatch(
            f"frames disagree: logits {mat.shape[0]}, labels {len(lab)}, mask {len(msk)}"
        )
    if lab.min(initial=0) < 0 or (len(lab) and lab.max() >= mat.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {mat.shape[1]})")
    if not msk.any():
        raise NoMaskedFrames("mask selects no frames")
    lp = log_softmax(mat[msk])
    return float(-lp[np.arange(lp.shape[0]), lab[msk]].mean())


def masked_prediction_grad(logits, labels, mask) -> tuple[float, np.ndarray]:
    """Loss plus its gradient with respect to the raw logits."""
    mat = _as_matrix(logits)
    lab = _label_array(labels)
    msk = _mask_array(mask)
    loss = masked_prediction_loss(mat, lab, msk)
    grad = np.zeros_like(mat)
    rows = np.flatnonzero(msk)
    probs = np.exp(log_softmax(mat[rows]))
    probs[np.arange(len(rows)), lab[rows]] -= 1.0
    grad[rows] = probs / len(rows)
    return loss, grad


def sequence_loss(decoder_logits, target, smoothing: float = 0.0) -> float:
    """Mean cross-entropy of teacher-forced decoder positions against the target.

    With smoothing e > 0 the per-position target distribution becomes
    (1 - e) on the true token plus e spread uniformly over the vocabulary.
    """
    mat = _as_matrix(decoder_logits)
    tokens = _token_list(target)
    smoothing = float(smoothing)
    if not 0.0 <= smoothing < 1.0:
        raise InvalidConfig(f"smoothing must lie in [0, 1), got {smoothing}")
    if mat.shape[0] != len(tokens):
        raise LengthMismatch(f"{mat.shape[0]} logit rows for {len(tokens)} target tokens")
    idx = np.asarray(tokens, dtype=np.int64)
    if len(idx) == 0:
        raise LengthMismatch("empty target")
    if idx.min() < 0 or idx.max() >= mat.shape[1]:
        raise LabelOutOfRange(f"tokens must lie in [0, {mat.shape[1]})")
    lp = log_softmax(mat)
    picked = -lp[np.arange(len(idx)), idx].mean()
    if smoothing == 0.0:
        return float(picked)
    uniform = -lp.mean()
    return float((1.0 - smoothing) * picked + smoothing * uniform)


def _check_weight(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0 or not np.isfinite(value):
        raise InvalidConfig(f"{name} must lie in [0, 1], got {value}")
    return value


def pretrain_loss(l_m: float, l_s: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Weighted sum alpha * l_m + (1 - alpha) * l_s."""
    alpha = _check_weight(alpha, "alpha")
    if alpha == 0.0:
        return float(l_s)
    if alpha == 1.0:
        return float(l_m)
    return alpha * float(l_m) + (1.0 - alpha) * float(l_s)


def finetune_loss(ctc: float, attention: float, beta: float = DEFAULT_BETA) -> float:
    """Weighted sum beta * ctc + (1 - beta) * attention."""
    beta = _check_weight(beta, "beta")
    if beta == 0.0:
        return float(attention)
    if beta == 1.0:
        return float(ctc)
    return beta * float(ctc) + (1.0 - beta) * float(attention)


def _extended_target(target: Sequence, blank_id: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank_id, dtype=np.int64)
    ext[1::2] = target
    return ext


def _logaddexp3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.logaddexp(np.logaddexp(a, b), c)


def ctc_loss(log_probs, target, blank_id: int = 0) -> tuple[float, np.ndarray]:
    """Alignment-marginalized negative log-likelihood and its exact gradient.

    Runs the forward-backward recursion over the blank-extended target in the
    log domain. The gradient is taken with respect to the per-frame
    log-probabilities under row renormalization, i.e. it matches central
    finite differences that re-normalize each perturbed row.

    Args:
        log_probs: T x V matrix; each row must be a normalized log distribution.
        target: token sequence without blanks.
        blank_id: index reserved for the blank symbol.

    Returns:
        (loss, grad) with grad the same shape as log_probs.
    """
    lp = _as_matrix(log_probs)
    T, V = lp.shape
    row_err = np.abs(np.exp(lp).sum(axis=1) - 1.0).max()
    if row_err > 1e-6:
        raise InvalidConfig(f"rows of exp(log_probs) must sum to 1, off by {row_err:.3g}")
    if not 0 <= blank_id < V:
        raise InvalidConfig(f"blank_id {blank_id} outside [0, {V})")
    tokens = _token_list(target)
    if any(t == blank_id for t in tokens):
        raise InvalidTarget("target contains the blank symbol")
    if any(not 0 <= t < V for t in tokens):
        raise LabelOutOfRange(f"target tokens must lie in [0, {V})")
    min_frames = len(tokens) + sum(a == b for a, b in zip(tokens, tokens[1:]))
    if T < min_frames:
        raise TargetTooLong(f"{T} frames cannot align a target needing {min_frames}")

    ext = _extended_target(tokens, blank_id)
    S = len(ext)
    # skip from s-2 to s allowed only between distinct non-blank symbols
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[3::2] = ext[3::2] != ext[1:-2:2]

    emit = lp[:, ext]  # T x S

    alpha = np.full((T, S), LOG_ZERO)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        move = np.concatenate(([LOG_ZERO], prev[:-1]))
        if S > 2:
            skip = np.concatenate(([LOG_ZERO, LOG_ZERO], prev[:-2]))
            skip = np.where(can_skip, skip, LOG_ZERO)
        else:
            skip = np.full(S, LOG_ZERO)
        alpha[t] = _logaddexp3(stay, move, skip) + emit[t]

    tail = alpha[T - 1, S - 1]
    if S > 1:
        tail = np.logaddexp(tail, alpha[T - 1, S - 2])
    log_p = float(tail)
    loss = -log_p

    beta = np.full((T, S), LOG_ZERO)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        move = np.concatenate((nxt[1:], [LOG_ZERO]))
        if S > 2:
            # skip out of s allowed when s+2 is a distinct non-blank symbol
            skip = np.concatenate((nxt[2:], [LOG_ZERO, LOG_ZERO]))
            can_leave = np.zeros(S, dtype=bool)
            can_leave[:-2] = can_skip[2:]
            skip = np.where(can_leave, skip, LOG_ZERO)
        else:
            skip = np.full(S, LOG_ZERO)
        beta[t] = _logaddexp3(stay, move, skip) + emit[t]

    # occupancy: log sum over states carrying each symbol of alpha + beta,
    # with the doubly counted emission divided back out
    gamma = alpha + beta - emit
    log_q = np.full((T, V), LOG_ZERO)
    for s in range(S):
        k = ext[s]
        log_q[:, k] = np.logaddexp(log_q[:, k], gamma[:, s])
    grad = np.exp(lp) - np.exp(log_q - log_p)
    return loss, grad


def ctc_greedy_decode(log_probs, blank_id: int = 0) -> list:
    """Per-frame argmax, collapse repeats, drop blanks."""
    lp = _as_matrix(log_probs)
    path = np.argmax(lp, axis=1)
    return [int(t) for t in collapse_ids(path.tolist()) if t != blank_id]


def finite_diff_check(loss_kind: str, inputs: dict, epsilon: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    For "ctc" the perturbed rows are re-normalized in the log domain, matching
    the gradient convention of ctc_loss. For "masked_prediction" the logits
    are unnormalized and perturbed directly.
    """
    if epsilon <= 0:
        raise InvalidConfig(f"epsilon must be positive, got {epsilon}")

    if loss_kind == "ctc":
        lp = _as_matrix(inputs["log_probs"])
        target = inputs["target"]
        blank_id = inputs.get("blank_id", 0)
        _, analytic = ctc_loss(lp, target, blank_id)

        def eval_at(mat):
            return ctc_loss(log_softmax(mat), target, blank_id)[0]

    elif loss_kind == "masked_prediction":
        lp = _as_matrix(inputs["logits"])
        labels = inputs["labels"]
        mask = inputs["mask"]
        _, analytic = masked_prediction_grad(lp, labels, mask)

        def eval_at(mat):
            return masked_prediction_loss(mat, labels, mask)

    else:
        raise InvalidConfig(f"unknown loss kind {loss_kind!r}")

    fd = np.zeros_like(lp)
    for t in range(lp.shape[0]):
        for k in range(lp.shape[1]):
            plus = lp.copy()
            plus[t, k] += epsilon
            minus = lp.copy()
            minus[t, k] -= epsilon
            fd[t, k] = (eval_at(plus) - eval_at(minus)) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float((np.abs(analytic - fd) / denom).max())
