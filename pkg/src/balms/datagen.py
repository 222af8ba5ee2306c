"""Synthetic long-tailed data: class-count profiles, Gaussian blobs with a
known generative model, meta-set construction and shot splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError, UnsupportedQueryError

PROFILES = ("exponential", "pareto", "explicit")


@dataclass(frozen=True, eq=False)
class ClassCounts:
    """Per-class training sample counts ``n_j``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64).reshape(-1)
        if c.size < 2:
            raise InvalidSpecError(f"need at least 2 classes, got {c.size}")
        if np.any(c < 1):
            raise InvalidSpecError(f"every class needs >= 1 sample, got {c.tolist()}")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return int(self.counts.size)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def imbalance_factor(self) -> float:
        return float(self.counts.max() / self.counts.min())

    @property
    def prior(self) -> np.ndarray:
        return self.counts / self.n

    def log(self) -> np.ndarray:
        return np.log(self.counts.astype(float))

    def tolist(self) -> list[int]:
        return self.counts.tolist()

    def __len__(self):
        return self.k

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.counts, dtype=dtype)

    def __eq__(self, other):
        if isinstance(other, ClassCounts):
            return np.array_equal(self.counts, other.counts)
        return NotImplemented

    def __repr__(self):
        return f"ClassCounts({self.counts.tolist()})"


@dataclass(frozen=True)
class ImbalanceSpec:
    """How to lay out class sizes.

    ``exponential`` uses ``imbalance_factor``; ``pareto`` uses ``alpha`` and
    ``min_size``; ``explicit`` takes ``counts`` verbatim (must be
    non-increasing).
    """

    profile: str = "exponential"
    head_size: int = 100
    imbalance_factor: float = 1.0
    alpha: float = 6.0
    min_size: int = 1
    counts: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidSpecError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        if self.head_size < 1:
            raise InvalidSpecError("head_size must be a positive integer")
        if self.profile == "exponential" and self.imbalance_factor < 1:
            raise InvalidSpecError(f"imbalance factor must be >= 1, got {self.imbalance_factor}")
        if self.profile == "pareto" and self.alpha <= 0:
            raise InvalidSpecError(f"pareto alpha must be > 0, got {self.alpha}")
        if self.profile == "explicit":
            if self.counts is None:
                raise InvalidSpecError("explicit profile needs counts")
            if any(a < b for a, b in zip(self.counts, self.counts[1:])):
                raise InvalidSpecError("explicit counts must be non-increasing")

    def decay(self, k: int) -> float:
        """Per-class decay ``mu`` of the exponential profile."""
        return float(self.imbalance_factor ** (-1.0 / (k - 1)))

    def build(self, k: int, seed: int = 0) -> ClassCounts:
        if self.profile == "exponential":
            return make_longtail_counts(k, self.head_size, self.imbalance_factor)
        if self.profile == "pareto":
            return make_pareto_counts(k, self.head_size, self.alpha, seed, min_size=self.min_size)
        if len(self.counts) != k:
            raise InvalidSpecError(f"explicit counts have {len(self.counts)} classes, expected {k}")
        return ClassCounts(np.asarray(self.counts))


@dataclass(frozen=True, eq=False)
class GaussianOracle:
    """Generative ground truth: isotropic Gaussians sharing one scale."""

    means: np.ndarray  # (k, d)
    scale: float = 1.0

    @property
    def k(self) -> int:
        return self.means.shape[0]

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        """``log p(x | y=j)`` up to a constant shared by all classes, shape (m, k)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sq = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(-1)
        return -0.5 * sq / self.scale**2


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    k: int
    oracle: GaussianOracle | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidSpecError("features and labels disagree on the number of rows")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise InvalidSpecError(f"labels must lie in [0, {self.k})")
        if self.oracle is not None and self.oracle.k != self.k:
            raise InvalidSpecError("oracle must have exactly k components")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    @property
    def counts(self) -> ClassCounts:
        return ClassCounts(self.histogram())

    def subset(self, index) -> Dataset:
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.int64)
        return Dataset(self.features[index], self.labels[index], self.k, self.oracle)

    def class_index(self) -> list[np.ndarray]:
        """Row indices of each class, in row order."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(self.histogram())[:-1]
        return np.split(order, bounds)


@dataclass(frozen=True)
class ShotSplit:
    many: tuple[int, ...]
    medium: tuple[int, ...]
    few: tuple[int, ...]

    def as_dict(self) -> dict[str, tuple[int, ...]]:
        return {"many": self.many, "medium": self.medium, "few": self.few}


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def make_longtail_counts(k: int, head_size: int, factor: float,
                         profile: ImbalanceSpec | str = "exponential") -> ClassCounts:
    """Exponentially decaying class sizes ``head * mu**y`` with
    ``mu = factor**(-1/(k-1))``, rounded half-up and clipped to >= 1.

    >>> make_longtail_counts(3, 100, 100).tolist()
    [100, 10, 1]
    """
    if isinstance(profile, ImbalanceSpec):
        if profile.profile != "exponential":
            return profile.build(k)
    elif profile != "exponential":
        raise InvalidSpecError("make_longtail_counts only builds the exponential profile")
    if k < 2:
        raise InvalidSpecError(f"need k >= 2, got {k}")
    if not factor >= 1:
        raise InvalidSpecError(f"imbalance factor must be >= 1, got {factor}")
    if factor > head_size:
        raise InvalidSpecError(
            f"imbalance factor {factor} exceeds head size {head_size}; the tail class would be empty")
    mu = factor ** (-1.0 / (k - 1))
    counts = _round_half_up(head_size * mu ** np.arange(k))
    counts[0] = head_size
    return ClassCounts(np.maximum(counts, 1))


def make_pareto_counts(k: int, head_size: int, alpha: float, seed: int,
                       min_size: int = 1) -> ClassCounts:
    """Class sizes drawn i.i.d. from a Pareto(alpha) law (numpy's Lomax
    parameterisation), sorted descending, scaled so the largest class has
    ``head_size`` samples, rounded and floored at ``min_size``."""
    if alpha <= 0:
        raise InvalidSpecError(f"alpha must be > 0, got {alpha}")
    if k < 2:
        raise InvalidSpecError(f"need k >= 2, got {k}")
    if not 1 <= min_size <= head_size:
        raise InvalidSpecError("min_size must lie in [1, head_size]")
    rng = np.random.default_rng(seed)
    sizes = np.sort(rng.pareto(alpha, size=k))[::-1]
    counts = _round_half_up(head_size * sizes / sizes[0])
    counts[0] = head_size
    return ClassCounts(np.maximum(counts, min_size))


def blob_means(k: int, d: int, separation: float) -> np.ndarray:
    """Deterministic class centres.

    With ``d >= k - 1`` the centres are the vertices of a regular simplex at
    distance ``separation`` from the origin (for k=3, a triangle with class 0
    on the positive second axis); otherwise they are equally spaced on the
    first axis over ``[-separation, separation]``.
    """
    means = np.zeros((k, d))
    if k == 3 and d >= 2:
        ang = np.deg2rad([90.0, 210.0, 330.0])
        means[:, :2] = separation * np.c_[np.cos(ang), np.sin(ang)]
    elif k > 3 and d >= k - 1:
        centred = np.eye(k) - 1.0 / k
        basis = []
        for v in centred[:-1]:
            w = v - sum((v @ b) * b for b in basis)
            basis.append(w / np.linalg.norm(w))
        coords = centred @ np.array(basis).T
        coords /= np.linalg.norm(coords, axis=1, keepdims=True)
        means[:, : k - 1] = separation * coords
    else:
        means[:, 0] = separation * np.linspace(-1.0, 1.0, k)
    return means


def gen_gaussian_mixture(k: int, d: int, counts: ClassCounts, separation: float = 1.0,
                         seed: int = 0, scale: float = 1.0) -> Dataset:
    if separation <= 0:
        raise InvalidSpecError("separation must be > 0")
    if d < 1:
        raise InvalidSpecError("d must be >= 1")
    counts = counts if isinstance(counts, ClassCounts) else ClassCounts(counts)
    if counts.k != k:
        raise InvalidSpecError(f"counts describe {counts.k} classes, expected {k}")
    means = blob_means(k, d, separation)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(k), counts.counts)
    features = means[labels] + scale * rng.standard_normal((labels.size, d))
    return Dataset(features, labels, k, GaussianOracle(means, scale))


def oracle_posterior(dataset: Dataset, x, priors) -> np.ndarray:
    """Bayes posterior ``p(y=j | x)`` under the dataset's generative model and
    the given class priors. ``x`` may be one point or a stack of points."""
    if dataset.oracle is None:
        raise UnsupportedQueryError("dataset has no generative oracle")
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (dataset.k,) or np.any(priors < 0) or abs(priors.sum() - 1) > 1e-9:
        raise InvalidSpecError("priors must be a probability vector over the k classes")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and dataset.d > 1) or (x.ndim == 1 and x.size == 1)
    pts = x.reshape(-1, dataset.d)
    with np.errstate(divide="ignore"):
        z = dataset.oracle.log_likelihood(pts) + np.log(priors)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def build_meta_set(train: Dataset, size: int = 512, seed: int = 0) -> Dataset:
    """Class-balanced sample with replacement: draw a class uniformly, then
    an instance of it uniformly."""
    if size < train.k:
        raise InvalidSpecError(f"meta set size {size} is smaller than k={train.k}")
    rng = np.random.default_rng(seed)
    by_class = train.class_index()
    if any(len(ix) == 0 for ix in by_class):
        raise InvalidSpecError("every class needs at least one training sample")
    cls = rng.integers(0, train.k, size=size)
    sizes = np.array([len(ix) for ix in by_class])
    pos = np.floor(rng.random(size) * sizes[cls]).astype(np.int64)
    index = np.array([by_class[c][p] for c, p in zip(cls, pos)], dtype=np.int64)
    meta = train.subset(index)
    meta.meta["source_index"] = index
    return meta


def split_shots(counts: ClassCounts, many_gt: int = 100, few_lt: int = 20) -> ShotSplit:
    if few_lt > many_gt:
        raise InvalidSpecError("few threshold must not exceed the many threshold")
    c = np.asarray(counts)
    many = tuple(int(j) for j in np.flatnonzero(c > many_gt))
    few = tuple(int(j) for j in np.flatnonzero(c < few_lt))
    medium = tuple(int(j) for j in np.flatnonzero((c <= many_gt) & (c >= few_lt)))
    return ShotSplit(many, medium, few)


def three_point_toy(counts=(10000, 100, 1), radius: float = 1.0) -> Dataset:
    """Each class is a single 2-D point (repeated ``counts[j]`` times) on the
    vertices of an equilateral triangle."""
    means = blob_means(3, 2, radius)
    labels = np.repeat(np.arange(3), counts)
    return Dataset(means[labels], labels, 3, GaussianOracle(means, 1.0))

