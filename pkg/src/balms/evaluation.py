"""Balanced-test evaluation, marginal likelihood, sample-rate variance and
the 2-D decision-boundary probe."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import brentq

from .datagen import ClassCounts, Dataset, ShotSplit
from .errors import UnsupportedQueryError
from .losses import softmax_probs
from .model import ModelParams, forward


@dataclass
class EvalReport:
    overall_acc: float
    shot_accs: dict[str, float | None]
    p_y: np.ndarray
    per_class_acc: np.ndarray
    rate_variance: float | None = None

    def rows(self) -> list[tuple[str, float | None]]:
        out = [("overall_acc", self.overall_acc)]
        out += [(f"{name}_acc", acc) for name, acc in self.shot_accs.items()]
        if self.rate_variance is not None:
            out.append(("rate_variance", self.rate_variance))
        return out


def evaluate(params: ModelParams, test: Dataset, split: ShotSplit | None = None,
             rates=None) -> EvalReport:
    """Top-1 accuracy (overall and per shot group) with the plain softmax and
    the mean predicted class distribution ``p(y)``."""
    hist = test.histogram()
    if hist.min() != hist.max():
        warnings.warn("test set is not class-balanced; accuracies are sample-weighted", stacklevel=2)
    logits = forward(params, test.features)
    pred = np.argmax(logits, axis=1)
    correct = pred == test.labels
    per_class = np.array([correct[test.labels == j].mean() if hist[j] else np.nan
                          for j in range(test.k)])
    shot_accs = {}
    groups = split.as_dict() if split is not None else {}
    for name, classes in groups.items():
        mask = np.isin(test.labels, classes)
        shot_accs[name] = float(correct[mask].mean()) if mask.any() else None
    return EvalReport(
        overall_acc=float(correct.mean()),
        shot_accs=shot_accs,
        p_y=softmax_probs(logits).mean(axis=0),
        per_class_acc=per_class,
        rate_variance=None if rates is None else rate_variance(rates),
    )


def rate_variance(rates) -> float:
    """Population variance of the class sample rates."""
    return float(np.var(np.asarray(rates, dtype=float)))


def marginal_range(p_y) -> float:
    p = np.asarray(p_y)
    return float(p.max() - p.min())


@dataclass
class BoundaryProbe:
    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray  # (resolution, resolution), labels[i, j] at (xs[j], ys[i])
    distances: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def cell(self) -> float:
        """Grid spacing (the larger of the two axes)."""
        return float(max(self.xs[1] - self.xs[0], self.ys[1] - self.ys[0]))

    def area(self, cls: int) -> float:
        """Fraction of grid cells predicted as ``cls``."""
        return float(np.mean(self.labels == cls))

    def points(self):
        gx, gy = np.meshgrid(self.xs, self.ys)
        return gx.ravel(), gy.ravel(), self.labels.ravel()


def _segment_crossing(params, a, b, i, j):
    """Parameter ``t`` where the logits of classes ``i`` and ``j`` tie on
    ``a + t (b - a)``; ``nan`` when they never tie on the segment."""

    def gap(t):
        z = forward(params, (a + t * (b - a))[None, :])[0]
        return z[i] - z[j]

    if not params.extractor:
        g0, g1 = gap(0.0), gap(1.0)
        return np.nan if g0 == g1 else g0 / (g0 - g1)
    g0, g1 = gap(0.0), gap(1.0)
    if np.sign(g0) == np.sign(g1):
        return np.nan
    return brentq(gap, 0.0, 1.0, xtol=1e-12)


def boundary_probe(params: ModelParams, bbox, resolution: int = 100, anchors=None,
                   counts: ClassCounts | None = None) -> BoundaryProbe:
    """Arg-max labels on a ``resolution x resolution`` grid over
    ``bbox = (xmin, xmax, ymin, ymax)``.

    With ``anchors`` (one 2-D point per class) the probe also measures, for
    every class pair, the signed distance from the minority anchor to the
    pairwise decision boundary along the segment joining the two anchors.
    Positive means the boundary lies between the anchors.
    """
    if params.d_in != 2:
        raise UnsupportedQueryError("boundary probe needs a model with 2-D inputs")
    xmin, xmax, ymin, ymax = bbox
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)
    logits = forward(params, np.c_[gx.ravel(), gy.ravel()])
    labels = np.argmax(logits, axis=1).reshape(resolution, resolution)
    probe = BoundaryProbe(xs, ys, labels)
    if anchors is None:
        return probe
    anchors = np.asarray(anchors, dtype=float)
    sizes = np.ones(len(anchors)) if counts is None else np.asarray(counts, dtype=float)
    for i, j in combinations(range(len(anchors)), 2):
        lo, hi = (j, i) if sizes[j] < sizes[i] else (i, j)
        a, b = anchors[lo], anchors[hi]
        t = _segment_crossing(params, a, b, lo, hi)
        probe.distances[(lo, hi)] = float(t * np.linalg.norm(b - a))
    return probe
