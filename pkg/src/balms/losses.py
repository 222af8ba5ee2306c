"""Softmax-family losses with analytic logit gradients.

Every loss accepts either a single logit vector with an integer label
(returning a float) or a ``(B, k)`` logit matrix with a label vector
(returning per-sample values).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import ClassCounts
from .errors import InvalidSpecError

LOSS_KINDS = ("softmax_ce", "balanced_softmax", "binary_logistic_balanced", "softmax_ce_cbw")


def _log_counts(counts) -> np.ndarray:
    if isinstance(counts, ClassCounts):
        return counts.log()
    c = np.asarray(counts, dtype=float)
    if np.any(c <= 0):
        raise InvalidSpecError("class counts must be positive")
    return np.log(c)


def _check_q(q):
    if not q > 0:
        raise InvalidSpecError(f"count exponent q must be > 0, got {q}")


def _batched(logits, y):
    logits = np.asarray(logits, dtype=float)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape[0] != z.shape[0]:
        raise InvalidSpecError("labels and logits disagree on batch size")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise InvalidSpecError("label out of range")
    return z, y, single


def _onehot(y, k):
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y] = 1.0
    return out


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def balanced_logits(logits, counts, q: float = 1.0) -> np.ndarray:
    """Logits shifted by ``q * log n_j``; softmax of these is the training-time
    posterior under the long-tailed prior."""
    _check_q(q)
    return np.asarray(logits, dtype=float) + q * _log_counts(counts)


def _centred_offsets(counts, q: float) -> np.ndarray:
    # q * log(n_j / n_max): a constant shift of q * log n_j, so every softmax
    # quantity is unchanged, and equal counts give offsets of exactly zero
    _check_q(q)
    lc = _log_counts(counts)
    return q * (lc - lc.max())


def balanced_phi(logits, counts, q: float = 1.0) -> np.ndarray:
    return softmax_probs(np.asarray(logits, dtype=float) + _centred_offsets(counts, q))


def softmax_ce(logits, y):
    z, y, single = _batched(logits, y)
    loss = -log_softmax(z)[np.arange(y.size), y]
    return float(loss[0]) if single else loss


def softmax_ce_dlogits(logits, y):
    z, y, single = _batched(logits, y)
    g = softmax_probs(z) - _onehot(y, z.shape[1])
    return g[0] if single else g


def balanced_softmax_loss(logits, y, counts, q: float = 1.0):
    """``-log phi_hat_y`` with ``phi_hat_j`` proportional to ``n_j**q * exp(eta_j)``."""
    return softmax_ce(np.asarray(logits, dtype=float) + _centred_offsets(counts, q), y)


def balanced_softmax_dlogits(logits, y, counts, q: float = 1.0):
    return softmax_ce_dlogits(np.asarray(logits, dtype=float) + _centred_offsets(counts, q), y)


def sigmoid_ce(logits, y):
    """Sum over classes of binary cross-entropy against the one-hot target."""
    z, y, single = _batched(logits, y)
    t = _onehot(y, z.shape[1])
    loss = (np.logaddexp(0.0, z) - t * z).sum(axis=1)
    return float(loss[0]) if single else loss


def sigmoid_ce_dlogits(logits, y):
    z, y, single = _batched(logits, y)
    g = _sigmoid(z) - _onehot(y, z.shape[1])
    return g[0] if single else g


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def binary_logistic_offsets(counts) -> np.ndarray:
    """Per-class logit offsets ``log[(n/k)/n_j * (n - n_j)/(n - n/k)]`` of the
    one-vs-rest balanced variant."""
    c = np.asarray(counts, dtype=float)
    n, k = c.sum(), c.size
    if k < 2:
        raise InvalidSpecError("need at least two classes")
    if np.any(c >= n):
        raise InvalidSpecError("a class holding every sample leaves the offset undefined")
    return np.log((n / k) / c) + np.log((n - c) / (n - n / k))


def binary_logistic_balanced_loss(logits, y, counts):
    return sigmoid_ce(np.asarray(logits, dtype=float) - binary_logistic_offsets(counts), y)


def binary_logistic_balanced_dlogits(logits, y, counts):
    return sigmoid_ce_dlogits(np.asarray(logits, dtype=float) - binary_logistic_offsets(counts), y)


def cbw_weights(counts) -> np.ndarray:
    """Inverse-frequency class weights ``(n/k)/n_j``; all ones when balanced."""
    c = np.asarray(counts, dtype=float)
    return (c.sum() / c.size) / c


def optimal_margins(counts, beta: float = 1.0) -> np.ndarray:
    """Margins proportional to ``n_j**(-1/4)`` that sum to ``beta``."""
    if not beta > 0:
        raise InvalidSpecError("beta must be > 0")
    w = np.asarray(counts, dtype=float) ** -0.25
    return beta * w / w.sum()


def margin_objective(gammas, counts, C: float = 1.0) -> float:
    """Dominant term ``(1/k) sum_j sqrt(C/n_j) / gamma_j`` of the balanced
    margin bound."""
    g = np.asarray(gammas, dtype=float)
    c = np.asarray(counts, dtype=float)
    if np.any(g <= 0):
        raise InvalidSpecError("margins must be positive")
    if not C > 0:
        raise InvalidSpecError("C must be positive")
    return float(np.mean(np.sqrt(C / c) / g))


def overbalance_ratio(logits, counts, y: int, j: int) -> float:
    """``phi_hat_j / phi_j`` for a negative class ``j``; tends to ``n_j/n_y``
    as the correct-class margin grows."""
    if j == y:
        raise InvalidSpecError("j must differ from the true class y")
    z = np.asarray(logits, dtype=float)
    # ratio of two softmaxes sharing the numerator exp(eta_j): keep it in log space
    off = _centred_offsets(counts, 1.0)
    log_ratio = off[j] - np.logaddexp.reduce(z + off) + np.logaddexp.reduce(z)
    return float(np.exp(log_ratio))


@dataclass(frozen=True)
class LossSpec:
    kind: str = "softmax_ce"
    counts: ClassCounts | None = None
    q: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidSpecError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        _check_q(self.q)
        if self.kind != "softmax_ce" and self.counts is None:
            raise InvalidSpecError(f"{self.kind} needs class counts")
        if self.counts is not None and not isinstance(self.counts, ClassCounts):
            object.__setattr__(self, "counts", ClassCounts(self.counts))

    @classmethod
    def softmax(cls):
        return cls("softmax_ce")

    @classmethod
    def balanced(cls, counts, q: float = 1.0):
        return cls("balanced_softmax", counts, q)

    def per_sample(self, logits, y):
        """Per-sample losses and their logit gradients for a ``(B, k)`` batch."""
        z, y, _ = _batched(logits, y)
        if self.counts is not None and self.counts.k != z.shape[1]:
            raise InvalidSpecError(f"loss has {self.counts.k} classes, model outputs {z.shape[1]}")
        if self.kind == "softmax_ce":
            return softmax_ce(z, y), softmax_ce_dlogits(z, y)
        if self.kind == "balanced_softmax":
            return (balanced_softmax_loss(z, y, self.counts, self.q),
                    balanced_softmax_dlogits(z, y, self.counts, self.q))
        if self.kind == "binary_logistic_balanced":
            return (binary_logistic_balanced_loss(z, y, self.counts),
                    binary_logistic_balanced_dlogits(z, y, self.counts))
        w = cbw_weights(self.counts)[y]
        return w * softmax_ce(z, y), w[:, None] * softmax_ce_dlogits(z, y)

    def batch(self, logits, y, weights=None):
        """Weighted batch mean ``(1/B) sum_i w_i l_i`` and its logit gradient."""
        losses, dl = self.per_sample(logits, y)
        B = losses.shape[0]
        w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
        return float(np.dot(w, losses) / B), dl * (w / B)[:, None]

    def describe(self) -> str:
        if self.kind == "balanced_softmax":
            return "balanced_softmax" if self.q == 1.0 else f"balanced_softmax_q{self.q:g}"
        return self.kind
