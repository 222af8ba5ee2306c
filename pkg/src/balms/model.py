"""Linear softmax-regression head, optionally on a small ReLU MLP extractor,
with hand-written forward, reverse-mode and forward-mode passes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSpecError, ShapeError


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class ModelParams:
    """Classifier ``weight`` (k, d) and ``bias`` (k,) on top of ``extractor``,
    a list of affine+ReLU layers. ``frozen`` marks the extractor as fixed."""

    weight: np.ndarray
    bias: np.ndarray
    extractor: list[Layer] = field(default_factory=list)
    frozen: bool = False

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    @property
    def d_in(self) -> int:
        return self.extractor[0].weight.shape[1] if self.extractor else self.weight.shape[1]

    def arrays(self, trainable_only: bool = False) -> list[np.ndarray]:
        out = []
        if not (trainable_only and self.frozen):
            for layer in self.extractor:
                out += [layer.weight, layer.bias]
        return out + [self.weight, self.bias]

    def names(self, trainable_only: bool = False) -> list[str]:
        out = []
        if not (trainable_only and self.frozen):
            for i in range(len(self.extractor)):
                out += [f"extractor.{i}.weight", f"extractor.{i}.bias"]
        return out + ["classifier.weight", "classifier.bias"]

    def flat(self, trainable_only: bool = False) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays(trainable_only)])

    def with_flat(self, vec, trainable_only: bool = False) -> ModelParams:
        """New params with the (trainable) arrays replaced from ``vec``."""
        vec = np.asarray(vec, dtype=float)
        arrays = self.arrays(trainable_only)
        expected = sum(a.size for a in arrays)
        if vec.size != expected:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {expected}")
        chunks, pos = [], 0
        for a in arrays:
            chunks.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if trainable_only and self.frozen:
            return replace(self, weight=chunks[0], bias=chunks[1])
        layers = [Layer(chunks[2 * i], chunks[2 * i + 1]) for i in range(len(self.extractor))]
        return replace(self, weight=chunks[-2], bias=chunks[-1], extractor=layers)

    def copy(self) -> ModelParams:
        return self.with_flat(self.flat())

    def zeros_like(self) -> ModelParams:
        return self.with_flat(np.zeros(self.flat().size))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray | None = None
    index: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.atleast_1d(np.asarray(self.labels, dtype=np.int64))
        if self.features.shape[0] < 1:
            raise InvalidSpecError("a batch needs at least one row")
        if self.labels.shape[0] != self.features.shape[0]:
            raise ShapeError("features and labels disagree on batch size")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.labels.shape or np.any(self.weights < 0):
                raise InvalidSpecError("weights must be a non-negative vector, one per row")

    def __len__(self):
        return self.labels.shape[0]

    @classmethod
    def from_dataset(cls, dataset, index=None, weights=None):
        if index is None:
            return cls(dataset.features, dataset.labels, weights)
        index = np.asarray(index)
        return cls(dataset.features[index], dataset.labels[index], weights, index)


def init_params(k: int, d: int, seed: int = 0, hidden: tuple[int, ...] = ()) -> ModelParams:
    """Centered uniform weights with half-width ``1/sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    layers, fan_in = [], d
    for width in hidden:
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(Layer(rng.uniform(-bound, bound, (width, fan_in)), np.zeros(width)))
        fan_in = width
    bound = 1.0 / np.sqrt(fan_in)
    return ModelParams(rng.uniform(-bound, bound, (k, fan_in)), np.zeros(k), layers)


def reinit_classifier(params: ModelParams, seed: int) -> ModelParams:
    fan_in = params.weight.shape[1]
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(fan_in)
    return replace(params, weight=rng.uniform(-bound, bound, params.weight.shape),
                   bias=np.zeros(params.k))


def _inputs(x) -> np.ndarray:
    if isinstance(x, Batch):
        return x.features
    return np.atleast_2d(np.asarray(x, dtype=float))


def _extract(params: ModelParams, x: np.ndarray):
    """Feature map and the per-layer (input, pre-activation) cache."""
    if x.shape[1] != params.d_in:
        raise ShapeError(f"model expects {params.d_in} input features, got {x.shape[1]}")
    cache, h = [], x
    for layer in params.extractor:
        pre = h @ layer.weight.T + layer.bias
        cache.append((h, pre))
        h = np.maximum(pre, 0.0)
    return h, cache


def features(params: ModelParams, x) -> np.ndarray:
    return _extract(params, _inputs(x))[0]


def forward(params: ModelParams, x) -> np.ndarray:
    h, _ = _extract(params, _inputs(x))
    return h @ params.weight.T + params.bias


def backward(params: ModelParams, batch, dlogits) -> ModelParams:
    """Gradient of ``sum_i w_i <dlogits_i, logits_i>`` for every parameter.

    Extractor gradients are zero when ``params.frozen``.
    """
    x = _inputs(batch)
    dlogits = np.atleast_2d(np.asarray(dlogits, dtype=float))
    if dlogits.shape != (x.shape[0], params.k):
        raise ShapeError(f"dlogits has shape {dlogits.shape}, expected {(x.shape[0], params.k)}")
    if isinstance(batch, Batch) and batch.weights is not None:
        dlogits = dlogits * batch.weights[:, None]
    h, cache = _extract(params, x)
    g_weight = dlogits.T @ h
    g_bias = dlogits.sum(axis=0)
    layers = [Layer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.extractor]
    if params.extractor and not params.frozen:
        dh = dlogits @ params.weight
        for i in reversed(range(len(params.extractor))):
            h_in, pre = cache[i]
            dpre = dh * (pre > 0)
            layers[i] = Layer(dpre.T @ h_in, dpre.sum(axis=0))
            dh = dpre @ params.extractor[i].weight
    return ModelParams(g_weight, g_bias, layers, params.frozen)


def jvp(params: ModelParams, x, tangent: ModelParams) -> np.ndarray:
    """Directional derivative of the logits along ``tangent``, shape (B, k).

    Row ``b`` dotted with ``dlogits_b`` equals ``<tangent, grad_b>`` where
    ``grad_b`` is the per-sample parameter gradient, without forming it.
    """
    x = _inputs(x)
    h, dh = x, np.zeros_like(x)
    for layer, t in zip(params.extractor, tangent.extractor):
        pre = h @ layer.weight.T + layer.bias
        dpre = dh @ layer.weight.T + h @ t.weight.T + t.bias
        mask = pre > 0
        h, dh = np.maximum(pre, 0.0), dpre * mask
    return dh @ params.weight.T + h @ tangent.weight.T + tangent.bias


def freeze_extractor(params: ModelParams) -> ModelParams:
    """View sharing the arrays of ``params`` whose extractor receives no gradient."""
    return replace(params, frozen=True)


def predict(params: ModelParams, x) -> np.ndarray:
    """Arg-max class per row; ties go to the lowest class index."""
    return np.argmax(forward(params, x), axis=1)
