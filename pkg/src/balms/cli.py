"""``balms`` command line: gen-data, train, ablate, toy2d, meta-demo.

Every command writes plain CSV/JSON into ``--out`` and is byte-for-byte
reproducible for a given config and seed. Exit codes: 0 success, 2 bad
config, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .datagen import (
    PROFILES,
    ClassCounts,
    Dataset,
    ImbalanceSpec,
    build_meta_set,
    gen_gaussian_mixture,
    split_shots,
)
from .errors import DivergenceError, InvalidSpecError
from .evaluation import evaluate
from .losses import LOSS_KINDS, LossSpec
from .meta import MetaConfig, meta_cycle
from .model import init_params
from .sampler import SamplerState
from .toy2d import run_toy2d
from .train import SAMPLERS, ABLATION_COLUMNS, TrainConfig, run_ablation_grid, table5_grid, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
LOSS_ALIASES = {"softmax": "softmax_ce", "bs": "balanced_softmax", "cbw": "softmax_ce_cbw",
                "sigmoid": "binary_logistic_balanced"}


@dataclass
class DataSpec:
    k: int = 3
    d: int = 2
    head: int = 300
    factor: float = 100.0
    profile: str = "exponential"
    alpha: float = 6.0
    counts: list[int] | None = None
    separation: float = 1.0
    test_per_class: int = 1000
    seed: int | None = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidSpecError(f"profile must be one of {PROFILES}")
        if self.test_per_class < 1:
            raise InvalidSpecError("test_per_class must be >= 1")

    def class_counts(self, seed: int) -> ClassCounts:
        if self.counts is not None:
            return ClassCounts(self.counts)
        spec = ImbalanceSpec(self.profile, self.head, self.factor, self.alpha)
        return spec.build(self.k, seed)

    def build(self, seed: int) -> tuple[Dataset, Dataset]:
        seed = self.seed if self.seed is not None else seed
        counts = self.class_counts(seed)
        k = counts.k
        trainset = gen_gaussian_mixture(k, self.d, counts, self.separation, seed=seed)
        test = gen_gaussian_mixture(k, self.d, ClassCounts([self.test_per_class] * k),
                                    self.separation, seed=1000 + seed)
        return trainset, test


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: dict = field(default_factory=lambda: {"many_gt": 100, "few_lt": 20})
    data_dir: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidSpecError(f"unknown config sections: {sorted(unknown)}")
        data = d.get("data", {})
        trainc = d.get("train", {})
        try:
            data = data if isinstance(data, DataSpec) else DataSpec(**data)
        except TypeError as exc:
            raise InvalidSpecError(f"data section: {exc}") from None
        trainc = trainc if isinstance(trainc, TrainConfig) else TrainConfig.from_dict(
            {**trainc, "loss": LOSS_ALIASES.get(trainc.get("loss"), trainc.get("loss", "softmax_ce"))})
        seeds = [int(s) for s in d.get("seeds", [trainc.seed])]
        cfg = cls(data, trainc, dict(d.get("eval", {"many_gt": 100, "few_lt": 20})),
                  d.get("data_dir"), seeds)
        if cfg.data_dir is not None and not Path(cfg.data_dir).is_dir():
            raise InvalidSpecError(f"data_dir {cfg.data_dir!r} does not exist")
        return cfg

    def to_dict(self) -> dict:
        return {"data": dataclasses.asdict(self.data), "train": self.train.to_dict(),
                "eval": self.eval, "data_dir": self.data_dir, "seeds": self.seeds}


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InvalidSpecError(f"config file {path} not found")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidSpecError(f"{path}: {exc}") from None


def _experiment(args) -> ExperimentConfig:
    raw = _load_config(args.config)
    data = dict(raw.get("data", {}))
    trainc = dict(raw.get("train", {}))
    for key in ("k", "d", "head", "factor", "profile", "separation"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    overrides = {"loss": args.loss, "q": args.q, "sampler": args.sampler, "iters": args.iters,
                 "batch": args.batch, "lr_max": args.lr, "decoupled": args.decoupled,
                 "hidden": args.hidden}
    trainc.update({k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None:
        trainc["seed"] = args.seed
        raw["seeds"] = [args.seed]
    if args.data is not None:
        raw["data_dir"] = args.data
    return ExperimentConfig.from_dict({**raw, "data": data, "train": trainc})


def _datasets(exp: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    if exp.data_dir is None:
        return exp.data.build(seed)
    root = Path(exp.data_dir)
    trainset = io.load_dataset(root / "train.csv")
    test = io.load_dataset(root / "test.csv", k=trainset.k)
    return trainset, test


def cmd_gen_data(args) -> int:
    exp = _experiment(args)
    seed = exp.train.seed
    trainset, test = exp.data.build(seed)  # validates before anything is written
    out = Path(args.out)
    io.save_counts(out / "counts.csv", trainset.counts)
    io.save_dataset(out / "train.csv", trainset)
    io.save_dataset(out / "test.csv", test)
    _dump_json(out / "data.json", {**dataclasses.asdict(exp.data), "seed": seed})
    print(f"counts {trainset.counts.tolist()} -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    exp = _experiment(args)
    cfg = exp.train
    trainset, test = _datasets(exp, cfg.seed)
    params, hist = train(cfg, trainset)
    split = split_shots(trainset.counts, **exp.eval)
    report = evaluate(params, test, split, rates=hist.rates)
    out = Path(args.out)
    _dump_json(out / "config.json", exp.to_dict())
    io.save_history(out / "history.csv", hist)
    io.save_report(out / "report.csv", report)
    io.save_marginal(out / "py_marginal.csv", report.p_y)
    io.save_checkpoint(out / "checkpoint.csv", params)
    if hist.meta:
        io.save_meta_history(out / "meta_history.csv", hist)
        io.save_rates(out / "rates.csv", hist.rates)
    print(f"overall_acc {report.overall_acc:.4f} -> {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    exp = _experiment(args)
    out = Path(args.out)
    rows = []
    for seed in exp.seeds:
        trainset, test = _datasets(exp, seed)
        grid = table5_grid(exp.train.replace(seed=seed))
        rows += run_ablation_grid(trainset, grid, test, split_shots(trainset.counts, **exp.eval))
    _dump_json(out / "config.json", exp.to_dict())
    io.write_rows(out / "ablation.csv", ABLATION_COLUMNS, ([r[c] for c in ABLATION_COLUMNS] for r in rows))
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells ({failed} failed) -> {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_toy2d(args) -> int:
    seed = 0 if args.seed is None else args.seed
    runs = run_toy2d(args.iters or 2000, args.every, seed, args.lr or 0.5, args.batch or 60,
                     args.resolution)
    out = Path(args.out)
    for name, run in runs.items():
        rows = []
        for t, probe in run.probes:
            io.save_boundary_grid(out / name / f"boundary_grid_{t:06d}.csv", probe)
            rows += [(t, lo, hi, dist, probe.area(lo)) for (lo, hi), dist in sorted(probe.distances.items())]
        io.write_rows(out / name / "boundary_distances.csv",
                      ["iter", "minority", "other", "distance", "minority_area"], rows)
    print(f"{len(runs)} configurations -> {out}")
    return EXIT_OK


def cmd_meta_demo(args) -> int:
    exp = _experiment(args)
    seed = exp.train.seed
    trainset, _ = _datasets(exp, seed)
    mcfg = exp.train.meta
    meta_set = build_meta_set(trainset, mcfg.meta_size, seed)
    out = Path(args.out)
    for name, loss in (("balanced_softmax", LossSpec.balanced(trainset.counts)),
                       ("softmax", LossSpec.softmax())):
        theta = init_params(trainset.k, trainset.d, seed, exp.train.hidden)
        state = SamplerState.init(trainset.k, mcfg.tau)
        adam = mcfg.adam()
        rng = np.random.default_rng(seed)
        rows = []
        for t in range(args.cycles):
            theta, state, rec = meta_cycle(theta, state, trainset, meta_set, mcfg, rng, loss,
                                           adam, None, mcfg.inner_lr, it=t)
            rows.append([rec[c] for c in ("iter", "train_loss", "meta_loss", "rate_variance")])
        io.write_rows(out / name / "meta_history.csv",
                      ["iter", "train_loss", "meta_loss", "rate_variance"], rows)
        io.save_rates(out / name / "rates.csv", state.rates)
        print(f"{name}: rates {np.round(state.rates, 3).tolist()} variance {np.var(state.rates):.4f}")
    return EXIT_OK


def _global_flags(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="explicit integer seed")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else "runs",
                        help="output directory")
    parser.add_argument("--config", default=default, help="JSON experiment config")


def _experiment_flags(parser) -> None:
    g = parser.add_argument_group("data")
    g.add_argument("--k", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--head", type=int)
    g.add_argument("--factor", type=float)
    g.add_argument("--profile", choices=PROFILES)
    g.add_argument("--separation", type=float)
    g.add_argument("--data", help="directory written by gen-data")
    t = parser.add_argument_group("training")
    t.add_argument("--loss", choices=sorted(set(LOSS_KINDS) | set(LOSS_ALIASES)))
    t.add_argument("--q", type=float)
    t.add_argument("--sampler", choices=SAMPLERS)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float, help="peak learning rate")
    t.add_argument("--hidden", type=int, nargs="*")
    t.add_argument("--decoupled", action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="balms", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": (cmd_gen_data, "write a long-tailed Gaussian dataset"),
        "train": (cmd_train, "train and evaluate one configuration"),
        "ablate": (cmd_ablate, "run the ten-row component grid"),
        "toy2d": (cmd_toy2d, "three-point decision-boundary toy"),
        "meta-demo": (cmd_meta_demo, "learn sample rates under both inner losses"),
    }
    for name, (fn, help_) in commands.items():
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        _experiment_flags(p)
        p.set_defaults(func=fn)
        if name == "toy2d":
            p.add_argument("--every", type=int, default=500, help="snapshot interval")
            p.add_argument("--resolution", type=int, default=100)
        if name == "meta-demo":
            p.add_argument("--cycles", type=int, default=200)
    return parser


def _limit_threads():
    n = os.environ.get("BALMS_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    try:
        return threadpool_limits(limits=int(n))
    except ValueError:
        raise InvalidSpecError(f"BALMS_THREADS must be an integer, got {n!r}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _limit_threads()
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidSpecError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
