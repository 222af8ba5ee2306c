"""Bi-level update of the class sample rates.

One cycle:

1. draw a batch from the current rates and take one SGD step on the
   (Balanced Softmax) training loss to get a surrogate model;
2. score the surrogate on the class-balanced meta set with plain softmax
   cross-entropy and move ``psi`` along the hypergradient with Adam;
3. update the real model on the same batch.

The inner loss is ``(1/B) sum_b w_b(psi) l_b(theta)``, linear in the
reconnection weights ``w_b``, so

    d theta_tilde / d w_b = -(inner_lr / B) grad l_b(theta)

and the hypergradient reduces to per-sample forward-mode products with the
meta gradient, chained back through the Gumbel relaxation and the rate map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, InvalidSpecError
from .losses import LossSpec, softmax_ce, softmax_ce_dlogits
from .model import Batch, ModelParams, backward, forward, jvp
from .optim import Adam
from .sampler import (
    SampleMatrix,
    SamplerState,
    gumbel_st_sample,
    instance_rates,
    log_instance_rates_vjp,
    meta_reweighter_vjp,
    meta_reweighter_weights,
)

MODES = ("sampler", "reweighter")


@dataclass
class MetaConfig:
    inner_lr: float = 0.1
    outer_lr: float = 0.01
    betas: tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 0.0
    meta_size: int = 512
    batch: int = 64
    tau: float = 1.0
    mode: str = "sampler"
    straight_through: bool = True
    follow_model_lr: bool = True
    # stop-gradient through the inner gradient; psi reaches theta_tilde only
    # through that gradient, so this ablation yields a zero hypergradient
    first_order: bool = False

    def __post_init__(self):
        if not self.inner_lr >= 0:
            raise InvalidSpecError("inner_lr must be >= 0")
        if self.outer_lr < 0:
            raise InvalidSpecError("outer_lr must be >= 0")
        if self.mode not in MODES:
            raise InvalidSpecError(f"meta mode must be one of {MODES}")
        self.betas = tuple(self.betas)

    def adam(self) -> Adam:
        return Adam(self.outer_lr, self.betas, weight_decay=self.weight_decay)


@dataclass
class MetaStep:
    batch: Batch
    sample: SampleMatrix | None
    weights: np.ndarray
    train_loss: float
    grad: ModelParams
    theta_tilde: ModelParams
    meta_loss: float
    hypergrad: np.ndarray


def _check_finite(name, value, **diag):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {name}", **diag)


def batch_gradient(theta: ModelParams, batch: Batch, loss: LossSpec):
    """Weighted mean loss on ``batch``, per-sample losses, unweighted logit
    gradients and the parameter gradient."""
    logits = forward(theta, batch)
    losses, dl = loss.per_sample(logits, batch.labels)
    value, dl_weighted = loss.batch(logits, batch.labels, batch.weights)
    grad = backward(theta, batch.features, dl_weighted)
    return value, losses, dl, grad


def sgd_step(theta: ModelParams, grad: ModelParams, lr: float) -> ModelParams:
    return theta.with_flat(theta.flat(True) - lr * grad.flat(True), trainable_only=True)


def surrogate_step(theta: ModelParams, batch: Batch, loss: LossSpec, inner_lr: float) -> ModelParams:
    """One plain gradient step; ``theta`` is left untouched."""
    if len(batch) == 0:
        raise InvalidSpecError("empty batch")
    value, _, _, grad = batch_gradient(theta, batch, loss)
    _check_finite("surrogate gradient", grad.flat(), loss=value)
    return sgd_step(theta, grad, inner_lr)


def meta_loss(theta_tilde: ModelParams, meta_set) -> float:
    """Mean standard softmax cross-entropy on the meta set."""
    if len(meta_set) == 0:
        raise InvalidSpecError("empty meta set")
    return float(np.mean(softmax_ce(forward(theta_tilde, meta_set.features), meta_set.labels)))


def meta_loss_grad(theta_tilde: ModelParams, meta_set) -> tuple[float, ModelParams]:
    logits = forward(theta_tilde, meta_set.features)
    value = float(np.mean(softmax_ce(logits, meta_set.labels)))
    dl = softmax_ce_dlogits(logits, meta_set.labels) / len(meta_set)
    return value, backward(theta_tilde, meta_set.features, dl)


def _default_loss(train, loss):
    return LossSpec.balanced(train.counts) if loss is None else loss


def meta_step(theta: ModelParams, state: SamplerState, train, meta_set, cfg: MetaConfig,
              seed, loss: LossSpec | None = None, inner_lr: float | None = None) -> MetaStep:
    """Steps 1 and 2 of the cycle, without touching ``psi``."""
    loss = _default_loss(train, loss)
    lr = cfg.inner_lr if inner_lr is None else inner_lr
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if np.any(state.rates <= 0) or np.any(state.rates >= 1):
        raise DivergenceError("sample rates left (0, 1)", psi=state.psi.tolist())

    sample = None
    if cfg.mode == "sampler":
        rho = instance_rates(state, train.labels)
        sample = gumbel_st_sample(rho, cfg.batch, state.tau, rng)
        weights = sample.straight_through() if cfg.straight_through else sample.soft_chosen()
        index = sample.chosen
    else:
        index = rng.integers(0, len(train), size=cfg.batch)
        weights = meta_reweighter_weights(state, train.labels[index])
    batch = Batch.from_dataset(train, index, weights)

    value, _, dl, grad = batch_gradient(theta, batch, loss)
    _check_finite("training loss", value)
    theta_tilde = sgd_step(theta, grad, lr)
    m_loss, g_meta = meta_loss_grad(theta_tilde, meta_set)
    _check_finite("meta loss", m_loss)

    if cfg.first_order:
        return MetaStep(batch, sample, weights, value, grad, theta_tilde, m_loss, np.zeros(state.k))
    # d meta / d w_b = -(lr/B) <g_meta, grad l_b(theta)>
    dw = -(lr / len(batch)) * np.einsum("bk,bk->b", dl, jvp(theta, batch.features, g_meta))
    if cfg.mode == "sampler":
        hyper = log_instance_rates_vjp(state, train.labels, sample.soft_chosen_vjp(dw))
    else:
        hyper = meta_reweighter_vjp(state, batch.labels, dw)
    _check_finite("hypergradient", hyper, meta_loss=m_loss)
    return MetaStep(batch, sample, weights, value, grad, theta_tilde, m_loss, hyper)


def hypergradient(theta: ModelParams, state: SamplerState, train, meta_set, cfg: MetaConfig,
                  seed, loss: LossSpec | None = None) -> np.ndarray:
    """Gradient of the meta loss of the one-step surrogate with respect to ``psi``."""
    return meta_step(theta, state, train, meta_set, cfg, seed, loss).hypergrad


def meta_cycle(theta: ModelParams, state: SamplerState, train, meta_set, cfg: MetaConfig, seed,
               loss: LossSpec | None = None, adam: Adam | None = None,
               model_step: Callable[[ModelParams, ModelParams], ModelParams] | None = None,
               inner_lr: float | None = None, it: int = 0):
    """Full three-step cycle. Returns ``(theta', state', record)``.

    ``model_step(theta, grad)`` applies the real update; by default a plain
    SGD step with the inner learning rate. ``adam`` carries the outer
    optimiser state across cycles.
    """
    lr = cfg.inner_lr if inner_lr is None else inner_lr
    step = meta_step(theta, state, train, meta_set, cfg, seed, loss, lr)
    adam = cfg.adam() if adam is None else adam
    new_state = SamplerState(adam.step(state.psi, step.hypergrad), state.tau).clipped()
    if model_step is None:
        new_theta = sgd_step(theta, step.grad, lr)
    else:
        new_theta = model_step(theta, step.grad)
    record = {
        "iter": it,
        "train_loss": step.train_loss,
        "meta_loss": step.meta_loss,
        "rate_variance": float(np.var(new_state.rates)),
    }
    return new_theta, new_state, record
