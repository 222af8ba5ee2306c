"""Batch construction: instance-balanced, class-balanced, and the learnable
class sample rates behind the Meta Sampler / Meta Reweighter.

There is no autodiff here. Every differentiable map comes with its
vector-Jacobian product so the meta engine can chain them by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidSpecError
from .losses import _sigmoid, softmax_probs
from .model import Batch

PSI_LIMIT = 30.0


@dataclass
class SamplerState:
    """Unconstrained class parameters ``psi``; ``rates = sigmoid(psi)``."""

    psi: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float).copy()
        if not self.tau > 0:
            raise InvalidSpecError("Gumbel temperature must be > 0")

    @classmethod
    def init(cls, k: int, tau: float = 1.0) -> SamplerState:
        """All class rates start at 0.5."""
        return cls(np.zeros(k), tau)

    @classmethod
    def from_rates(cls, rates, tau: float = 1.0) -> SamplerState:
        r = np.asarray(rates, dtype=float)
        if np.any(r <= 0) or np.any(r >= 1):
            raise InvalidSpecError("rates must lie strictly inside (0, 1)")
        return cls(np.log(r) - np.log1p(-r), tau)

    @property
    def k(self) -> int:
        return self.psi.size

    @property
    def rates(self) -> np.ndarray:
        return _sigmoid(self.psi)

    def rate_derivative(self) -> np.ndarray:
        r = self.rates
        return r * (1.0 - r)

    def clipped(self) -> SamplerState:
        # keeps sigmoid(psi) representably inside (0, 1) in float64
        return SamplerState(np.clip(self.psi, -PSI_LIMIT, PSI_LIMIT), self.tau)


def _rates_of(state_or_rates) -> np.ndarray:
    if isinstance(state_or_rates, SamplerState):
        return state_or_rates.rates
    return np.asarray(state_or_rates, dtype=float)


def instance_rates(state, labels) -> np.ndarray:
    """Per-instance probabilities ``rho_i = pi_{c(i)} / sum_t pi_{c(t)}``."""
    r = _rates_of(state)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= r.size):
        raise InvalidSpecError("labels out of range for the sampler's classes")
    w = r[labels]
    return w / w.sum()


def log_instance_rates_vjp(state: SamplerState, labels, g_log_rho) -> np.ndarray:
    """Pull a cotangent on ``log rho`` (length n) back to ``psi`` (length k).

    d log rho_i / d psi_m = (1 - r_m) [c(i) = m] - n_m r_m (1 - r_m) / S,
    with S = sum_t r_{c(t)}.
    """
    r = state.rates
    labels = np.asarray(labels, dtype=np.int64)
    g = np.asarray(g_log_rho, dtype=float)
    per_class = np.bincount(labels, weights=g, minlength=state.k)
    n_class = np.bincount(labels, minlength=state.k)
    S = float(np.dot(n_class, r))
    return (1.0 - r) * per_class - n_class * r * (1.0 - r) / S * g.sum()


def instance_batch(dataset, B: int, rng) -> Batch:
    index = rng.integers(0, len(dataset), size=B)
    return Batch.from_dataset(dataset, index)


def class_balanced_batch(dataset, B: int, seed) -> Batch:
    """Exactly ``B/k`` rows per class, uniform with replacement inside each class.

    Rows are grouped by class (class 0 first).
    """
    k = dataset.k
    if B % k:
        raise InvalidSpecError(f"batch size {B} is not divisible by k={k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    per = B // k
    parts = []
    for ix in dataset.class_index():
        if len(ix) == 0:
            raise InvalidSpecError("class-balanced sampling needs every class present")
        parts.append(ix[rng.integers(0, len(ix), size=per)])
    return Batch.from_dataset(dataset, np.concatenate(parts))


@dataclass
class SampleMatrix:
    """Straight-through Gumbel draw of ``B`` instances out of ``n``.

    ``hard`` holds the one-hot forward rows, ``soft`` the relaxed rows that
    carry gradients, ``gumbel`` the noise (kept for common random numbers).
    """

    hard: np.ndarray
    soft: np.ndarray
    chosen: np.ndarray
    gumbel: np.ndarray
    tau: float

    @property
    def B(self) -> int:
        return self.chosen.size

    def soft_chosen(self) -> np.ndarray:
        return self.soft[np.arange(self.B), self.chosen]

    def straight_through(self) -> np.ndarray:
        """Forward values of the reconnection multipliers (all exactly 1)."""
        return self.hard[np.arange(self.B), self.chosen]

    def soft_chosen_vjp(self, g_chosen) -> np.ndarray:
        """Pull cotangents on ``soft[b, chosen_b]`` back to ``log rho`` (length n).

        d soft_bc / d log rho_j = soft_bc (delta_cj - soft_bj) / tau.
        """
        g = np.asarray(g_chosen, dtype=float) * self.soft_chosen() / self.tau
        out = -(g[:, None] * self.soft).sum(axis=0)
        np.add.at(out, self.chosen, g)
        return out


def gumbel_noise(shape, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.gumbel(0.0, 1.0, size=shape)


def relax(log_rho, gumbel, tau: float) -> np.ndarray:
    """Gumbel-softmax rows ``softmax((log rho + g) / tau)``."""
    return softmax_probs((np.asarray(log_rho)[None, :] + gumbel) / tau)


def gumbel_st_sample(rho, B: int, tau: float = 1.0, seed=0, gumbel=None) -> SampleMatrix:
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise InvalidSpecError("every instance rate must be > 0 (log of zero)")
    if not tau > 0:
        raise InvalidSpecError("tau must be > 0")
    g = gumbel_noise((B, rho.size), seed) if gumbel is None else np.asarray(gumbel, dtype=float)
    log_rho = np.log(rho)
    soft = relax(log_rho, g, tau)
    # argmax of the perturbed log-rates; identical to argmax of soft for any tau
    chosen = np.argmax(log_rho[None, :] + g, axis=1)
    hard = np.zeros_like(soft)
    hard[np.arange(B), chosen] = 1.0
    return SampleMatrix(hard, soft, chosen, g, tau)


def reconnect_loss(per_sample_losses, s: SampleMatrix, chosen=None) -> float:
    """Mean of ``loss_i * s[i, chosen_i]`` using the straight-through forward
    value, so the result equals the plain mean loss."""
    chosen = s.chosen if chosen is None else np.asarray(chosen)
    if not np.array_equal(chosen, s.chosen):
        raise ContractViolation("chosen indices do not match the sample matrix")
    losses = np.asarray(per_sample_losses, dtype=float)
    return float(np.mean(losses * s.straight_through()))


def reconnect_loss_grad(per_sample_losses, s: SampleMatrix, state: SamplerState, labels) -> np.ndarray:
    """Gradient of ``reconnect_loss`` with respect to ``psi``."""
    losses = np.asarray(per_sample_losses, dtype=float)
    g_log_rho = s.soft_chosen_vjp(losses / losses.size)
    return log_instance_rates_vjp(state, labels, g_log_rho)


def meta_reweighter_weights(state, labels) -> np.ndarray:
    """Loss weight of each instance is the rate of its class."""
    return _rates_of(state)[np.asarray(labels, dtype=np.int64)]


def meta_reweighter_vjp(state: SamplerState, labels, g_weights) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    per_class = np.bincount(labels, weights=np.asarray(g_weights, dtype=float), minlength=state.k)
    return per_class * state.rate_derivative()
