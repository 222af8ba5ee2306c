"""End-to-end and decoupled training, BALMS, and the component-ablation grid."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset, build_meta_set, split_shots
from .errors import DivergenceError, InvalidSpecError
from .evaluation import evaluate
from .losses import LOSS_KINDS, LossSpec
from .meta import MetaConfig, batch_gradient, meta_cycle
from .model import ModelParams, freeze_extractor, init_params, reinit_classifier
from .optim import SGD, cosine_lr as _cosine
from .sampler import SamplerState, class_balanced_batch, instance_batch

SAMPLERS = ("instance", "cbs", "meta_sampler", "meta_reweighter")


@dataclass
class TrainConfig:
    loss: str = "softmax_ce"
    q: float = 1.0
    sampler: str = "instance"
    lr_max: float = 0.1
    lr_min: float = 0.0
    warmup_iters: int = 0
    warmup_start: float = 0.0
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    iters: int = 2000
    batch: int = 64
    seed: int = 0
    decoupled: bool = False
    fine_tune: bool = False
    hidden: tuple[int, ...] = ()
    base_iters: int | None = None
    meta: MetaConfig = field(default_factory=MetaConfig)

    def __post_init__(self):
        if isinstance(self.meta, dict):
            self.meta = MetaConfig(**self.meta)
        # the meta step draws the same batch the model trains on
        self.meta = dataclasses.replace(self.meta, batch=self.batch)
        self.hidden = tuple(self.hidden)
        if self.loss not in LOSS_KINDS:
            raise InvalidSpecError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.sampler not in SAMPLERS:
            raise InvalidSpecError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if not self.lr_max >= self.lr_min >= 0:
            raise InvalidSpecError("need lr_max >= lr_min >= 0")
        if self.iters <= 0 or self.batch <= 0:
            raise InvalidSpecError("iters and batch must be positive")
        if not 0 <= self.warmup_iters <= self.iters:
            raise InvalidSpecError("warmup_iters must lie in [0, iters]")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidSpecError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        out["meta"]["betas"] = list(self.meta.betas)
        return out

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def loss_spec(self, dataset: Dataset) -> LossSpec:
        return LossSpec(self.loss, None if self.loss == "softmax_ce" else dataset.counts, self.q)

    def base_config(self) -> TrainConfig:
        """The instance-balanced Softmax run whose extractor a decoupled run reuses."""
        return self.replace(loss="softmax_ce", q=1.0, sampler="instance", decoupled=False,
                            fine_tune=False, iters=self.base_iters or self.iters)


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    return _cosine(t, cfg.iters, cfg.lr_max, cfg.lr_min, cfg.warmup_iters, cfg.warmup_start)


@dataclass
class History:
    records: list[dict] = field(default_factory=list)
    meta: list[dict] = field(default_factory=list)
    snapshots: list[tuple[int, ModelParams]] = field(default_factory=list)
    rates: np.ndarray | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records])


def _seeds(seed: int):
    init_ss, run_ss, meta_ss = np.random.SeedSequence(seed).spawn(3)
    return (int(init_ss.generate_state(1)[0]), np.random.default_rng(run_ss),
            int(meta_ss.generate_state(1)[0]))


def train_end_to_end(cfg: TrainConfig, dataset: Dataset, params: ModelParams | None = None,
                     snapshot_at=()) -> tuple[ModelParams, History]:
    """Run ``cfg.iters`` optimiser steps with the configured loss and sampler.

    ``params`` overrides the seeded initialisation (used by decoupled runs).
    ``snapshot_at`` lists iteration counts at which to keep parameter copies.
    """
    init_seed, rng, meta_seed = _seeds(cfg.seed)
    loss = cfg.loss_spec(dataset)
    if params is None:
        params = init_params(dataset.k, dataset.d, init_seed, cfg.hidden)
    if params.k != dataset.k:
        raise InvalidSpecError("model and dataset disagree on the number of classes")
    opt = SGD(cfg.momentum, cfg.weight_decay, cfg.nesterov)
    history = History()
    snapshot_at = set(snapshot_at)
    if 0 in snapshot_at:
        history.snapshots.append((0, params.copy()))

    meta_mode = cfg.sampler in ("meta_sampler", "meta_reweighter")
    if meta_mode:
        mcfg = dataclasses.replace(cfg.meta,
                                   mode="sampler" if cfg.sampler == "meta_sampler" else "reweighter")
        state = SamplerState.init(dataset.k, mcfg.tau)
        adam = mcfg.adam()
        meta_set = build_meta_set(dataset, mcfg.meta_size, meta_seed)

    for t in range(cfg.iters):
        lr = cosine_lr(t, cfg)

        def model_step(theta, grad, lr=lr):
            p = opt.step(theta.flat(True), grad.flat(True), lr)
            return theta.with_flat(p, trainable_only=True)

        if meta_mode:
            inner = lr if mcfg.follow_model_lr else mcfg.inner_lr
            params, state, rec = meta_cycle(params, state, dataset, meta_set, mcfg, rng, loss,
                                            adam, model_step, inner, it=t)
            value = rec["train_loss"]
            history.meta.append(rec)
        else:
            if cfg.sampler == "cbs":
                batch = class_balanced_batch(dataset, cfg.batch, rng)
            else:
                batch = instance_batch(dataset, cfg.batch, rng)
            value, _, _, grad = batch_gradient(params, batch, loss)
            if not np.isfinite(value) or not np.all(np.isfinite(grad.flat())):
                raise DivergenceError("non-finite training loss", iter=t, lr=lr, loss=value)
            params = model_step(params, grad)
        if not np.isfinite(value) or not params.is_finite():
            raise DivergenceError("training diverged", iter=t, lr=lr, loss=value)
        history.records.append({"iter": t, "lr": lr, "loss": value})
        if t + 1 in snapshot_at:
            history.snapshots.append((t + 1, params.copy()))
    if meta_mode:
        history.rates = state.rates
    return params, history


def train_decoupled(base: ModelParams, cfg: TrainConfig, dataset: Dataset,
                    snapshot_at=()) -> tuple[ModelParams, History]:
    """Freeze ``base``'s extractor and (re)train only the classifier."""
    if not base.extractor:
        raise InvalidSpecError("decoupled training needs a base model with an extractor")
    params = freeze_extractor(base.copy())
    if not cfg.fine_tune:
        params = reinit_classifier(params, _seeds(cfg.seed)[0] + 1)
    return train_end_to_end(cfg, dataset, params, snapshot_at)


def train(cfg: TrainConfig, dataset: Dataset, base: ModelParams | None = None):
    """Dispatch on ``cfg.decoupled``; trains the Softmax base when needed."""
    if not cfg.decoupled:
        return train_end_to_end(cfg, dataset)
    if base is None:
        base, _ = train_end_to_end(cfg.base_config(), dataset)
    return train_decoupled(base, cfg, dataset)


def table5_grid(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """Toy-scale analogues of the ten component-analysis rows."""
    e2e = base.replace(decoupled=False, sampler="instance")
    dt = base.replace(decoupled=True, sampler="instance")
    return [
        ("(1) Softmax", e2e.replace(loss="softmax_ce")),
        ("(2) Balanced Softmax 1/4", e2e.replace(loss="balanced_softmax", q=0.25)),
        ("(3) Balanced Softmax", e2e.replace(loss="balanced_softmax", q=1.0)),
        ("(4) Balanced Softmax 1/4+DT", dt.replace(loss="balanced_softmax", q=0.25)),
        ("(5) Balanced Softmax 1/4+DT+MS", dt.replace(loss="balanced_softmax", q=0.25, sampler="meta_sampler")),
        ("(6) Balanced Softmax+DT", dt.replace(loss="balanced_softmax")),
        ("(7) Balanced Softmax+CBS+DT", dt.replace(loss="balanced_softmax", sampler="cbs")),
        ("(8) DT+MS", dt.replace(loss="softmax_ce", sampler="meta_sampler")),
        ("(9) Balanced Softmax+DT+MR", dt.replace(loss="balanced_softmax", sampler="meta_reweighter")),
        ("(10) BALMS", dt.replace(loss="balanced_softmax", sampler="meta_sampler")),
    ]


ABLATION_COLUMNS = ["name", "loss", "q", "sampler", "decoupled", "seed", "status",
                    "overall", "many", "medium", "few", "error"]


def run_ablation_grid(dataset: Dataset, grid, test: Dataset, split=None) -> list[dict]:
    """Train and evaluate every ``(name, cfg)`` pair; failures become rows
    with ``status="failed"`` and the grid carries on."""
    split = split_shots(dataset.counts) if split is None else split
    bases: dict = {}
    rows = []
    for name, cfg in grid:
        row = {"name": name, "loss": cfg.loss, "q": cfg.q, "sampler": cfg.sampler,
               "decoupled": cfg.decoupled, "seed": cfg.seed}
        try:
            base = None
            if cfg.decoupled:
                key = tuple(sorted(cfg.base_config().to_dict().items(), key=lambda kv: kv[0]).__repr__())
                if key not in bases:
                    bases[key] = train_end_to_end(cfg.base_config(), dataset)[0]
                base = bases[key]
            params, _ = train(cfg, dataset, base)
            rep = evaluate(params, test, split)
            row.update(status="ok", overall=rep.overall_acc, error=None, **{
                g: rep.shot_accs.get(g) for g in ("many", "medium", "few")})
        except (ArithmeticError, ValueError) as exc:
            row.update(status="failed", overall=None, many=None, medium=None, few=None,
                       error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows
