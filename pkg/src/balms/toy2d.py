"""The three-point decision-boundary toy: one 2-D point per class with
10000/100/1 copies, a linear classifier, and four loss/sampler pairings
tracked over iterations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset, three_point_toy
from .evaluation import BoundaryProbe, boundary_probe
from .train import TrainConfig, train_end_to_end

TOY_CONFIGS = {
    "softmax": ("softmax_ce", "instance"),
    "softmax_cbs": ("softmax_ce", "cbs"),
    "balanced_softmax": ("balanced_softmax", "instance"),
    "balanced_softmax_cbs": ("balanced_softmax", "cbs"),
}
# The probe window is pinned before any run: the unit triangle plus margin.
TOY_BBOX = (-1.5, 1.5, -1.5, 1.5)


@dataclass
class ToyRun:
    name: str
    probes: list[tuple[int, BoundaryProbe]] = field(default_factory=list)

    @property
    def final(self) -> BoundaryProbe:
        return self.probes[-1][1]


def toy_config(name: str, iters: int = 2000, seed: int = 0, lr: float = 0.5,
               batch: int = 60) -> TrainConfig:
    loss, sampler = TOY_CONFIGS[name]
    # constant step size, no weight decay: the toy studies where SGD goes,
    # not how a schedule shrinks it
    return TrainConfig(loss=loss, sampler=sampler, lr_max=lr, lr_min=lr, weight_decay=0.0,
                       iters=iters, batch=batch, seed=seed)


def snapshot_iters(iters: int, every: int) -> list[int]:
    return sorted(set(range(every, iters + 1, every)) | {iters})


def run_toy2d(iters: int = 2000, every: int = 500, seed: int = 0, lr: float = 0.5,
              batch: int = 60, resolution: int = 100, dataset: Dataset | None = None,
              names=tuple(TOY_CONFIGS)) -> dict[str, ToyRun]:
    data = three_point_toy() if dataset is None else dataset
    anchors = np.array([data.features[data.labels == j][0] for j in range(data.k)])
    snaps = snapshot_iters(iters, every)
    out = {}
    for name in names:
        cfg = toy_config(name, iters, seed, lr, batch)
        _, hist = train_end_to_end(cfg, data, snapshot_at=snaps)
        run = ToyRun(name)
        for t, params in hist.snapshots:
            run.probes.append((t, boundary_probe(params, TOY_BBOX, resolution, anchors, data.counts)))
        out[name] = run
    return out
