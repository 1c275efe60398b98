"""Extreme-vector classifier over margin distances.

Each stored anchor carries a two-parameter Weibull inclusion model fitted on
scaled distances to the nearest negatives; class probability is the maximum
inclusion over the class's anchors. Greedy set cover prunes redundant
anchors. Incremental class addition fits new clusters against a labeled
feature bank plus sibling clusters, with a larger distance multiplier so
small clusters generalize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .learners import AugmentedProbs

KAPPA_MAX = 100.0
MARGIN_FLOOR = 1e-12


@dataclass(frozen=True)
class WeibullParams:
    shape: float
    scale: float

    def __post_init__(self):
        if not 0.0 < self.shape <= KAPPA_MAX:
            raise ValueError(f"shape {self.shape} outside (0, {KAPPA_MAX}]")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class ExtremeVector:
    anchor: np.ndarray
    weibull: WeibullParams
    class_id: int


@dataclass(frozen=True)
class EvmConfig:
    tail_size: int = 100
    distance_multiplier: float = 0.45
    distance_multiplier_incremental: float = 0.55
    coverage_threshold: float = 0.5
    bank_cap_per_class: int = 50  # None-like 0 means keep everything

    def __post_init__(self):
        if self.tail_size < 1:
            raise ValueError("tail_size must be >= 1")
        if self.distance_multiplier <= 0 or self.distance_multiplier_incremental <= 0:
            raise ValueError("distance multipliers must be positive")
        if not 0.0 < self.coverage_threshold <= 1.0:
            raise ValueError("coverage_threshold must lie in (0, 1]")

    def to_json(self) -> dict:
        return {
            "tail_size": self.tail_size,
            "distance_multiplier": self.distance_multiplier,
            "distance_multiplier_incremental": self.distance_multiplier_incremental,
            "coverage_threshold": self.coverage_threshold,
            "bank_cap_per_class": self.bank_cap_per_class,
        }


@dataclass(frozen=True)
class EvmModel:
    dim: int
    config: EvmConfig
    class_ids: tuple[int, ...] = ()
    extreme_vectors: dict[int, list[ExtremeVector]] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)


@dataclass
class FeatureBank:
    """Labeled features kept as negatives for later class additions."""

    dim: int
    features: np.ndarray
    labels: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "FeatureBank":
        return cls(dim, np.zeros((0, dim)), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_class_features(cls, by_class: dict[int, np.ndarray], dim: int,
                            cap_per_class: int = 0) -> "FeatureBank":
        feats, labels = [], []
        for cid, x in by_class.items():
            x = np.atleast_2d(np.asarray(x, dtype=np.float64))
            if cap_per_class:
                x = x[:cap_per_class]
            feats.append(x)
            labels.append(np.full(x.shape[0], cid, dtype=np.int64))
        if not feats:
            return cls.empty(dim)
        return cls(dim, np.concatenate(feats), np.concatenate(labels))

    def __len__(self) -> int:
        return self.features.shape[0]

    def extended(self, x: np.ndarray, class_id: int, cap: int = 0) -> "FeatureBank":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if cap:
            x = x[:cap]
        return FeatureBank(
            self.dim,
            np.concatenate([self.features, x]),
            np.concatenate([self.labels, np.full(x.shape[0], class_id, dtype=np.int64)]),
        )


def compute_margins(anchor, negatives, distance_multiplier: float,
                    tail_size: int) -> np.ndarray:
    """Ascending tail of scaled distances from the anchor to the negatives."""
    anchor = np.asarray(anchor, dtype=np.float64)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negatives.shape[0] == 0:
        raise ValueError("no negative samples for margin computation")
    dists = distance_multiplier * np.linalg.norm(negatives - anchor, axis=1)
    tail = min(tail_size, dists.size)
    return np.sort(np.partition(dists, tail - 1)[:tail])


def _weibull_loglik(x: np.ndarray, shape: float, scale: float) -> float:
    n = x.size
    return float(
        n * math.log(shape)
        - n * shape * math.log(scale)
        + (shape - 1.0) * np.log(x).sum()
        - np.sum((x / scale) ** shape)
    )


def fit_weibull(margins) -> WeibullParams:
    """Maximum-likelihood two-parameter Weibull fit.

    Solves the profile shape equation by damped Newton iteration with a
    bisection bracket as safety net; degenerate samples (single value or all
    equal) pin the scale at that value with the shape capped.
    """
    x = np.asarray(margins, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no margins to fit")
    x = np.maximum(x, MARGIN_FLOOR)
    if x.size == 1 or np.all(x == x[0]):
        return WeibullParams(KAPPA_MAX, float(x[0]))

    ln_x = np.log(x)
    mean_ln = ln_x.mean()

    def shape_eq(k):
        xk = x**k
        ratio = np.sum(xk * ln_x) / np.sum(xk)
        return ratio - 1.0 / k - mean_ln

    # shape_eq is strictly increasing with a single root; bracket then refine
    lo, hi = 1e-3, KAPPA_MAX
    if shape_eq(hi) <= 0.0:
        k = KAPPA_MAX
    else:
        while shape_eq(lo) > 0.0:
            lo *= 0.5
            if lo < 1e-12:
                break
        k = max(min(1.28 / max(ln_x.std(), 1e-12), hi), lo)
        for _ in range(200):
            xk = x**k
            sk = np.sum(xk)
            skl = np.sum(xk * ln_x)
            g = skl / sk - 1.0 / k - mean_ln
            gprime = (np.sum(xk * ln_x * ln_x) / sk - (skl / sk) ** 2) + 1.0 / (k * k)
            if g > 0.0:
                hi = min(hi, k)
            else:
                lo = max(lo, k)
            step = g / gprime
            k_new = k - step
            if not lo < k_new < hi:  # damp: fall back to bisection
                k_new = 0.5 * (lo + hi)
            if abs(k_new - k) < 1e-12:
                k = k_new
                break
            k = k_new
    k = min(k, KAPPA_MAX)
    lam = float(np.mean(x**k) ** (1.0 / k))
    return WeibullParams(float(k), lam)


def psi_inclusion(ev: ExtremeVector, f) -> float:
    """Radial inclusion probability exp(-(d/scale)^shape) of the feature."""
    f = np.asarray(f, dtype=np.float64)
    d = float(np.linalg.norm(f - ev.anchor))
    return _psi(d, ev.weibull.shape, ev.weibull.scale)


def _psi(distance: float, shape: float, scale: float) -> float:
    if distance == 0.0:
        return 1.0
    exponent = shape * (math.log(distance) - math.log(scale))
    if exponent > 700.0:  # exp would overflow; inclusion underflows to 0
        return 0.0
    return math.exp(-math.exp(exponent))


class EvmScorer:
    """Flattened view of a model's extreme vectors for fast repeated scoring."""

    def __init__(self, model: EvmModel):
        if model.n_classes == 0:
            raise ValueError("empty model")
        self.model = model
        anchors, shapes, scales, offsets = [], [], [], [0]
        for cid in model.class_ids:
            evs = model.extreme_vectors[cid]
            anchors.extend(ev.anchor for ev in evs)
            shapes.extend(ev.weibull.shape for ev in evs)
            scales.extend(ev.weibull.scale for ev in evs)
            offsets.append(offsets[-1] + len(evs))
        self.anchors = np.stack(anchors)
        self.shapes = np.asarray(shapes)
        self.scales = np.asarray(scales)
        self.offsets = np.asarray(offsets[:-1])

    def class_probabilities(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.model.dim,):
            raise ValueError(f"feature has shape {f.shape}, model dim is {self.model.dim}")
        d = np.linalg.norm(self.anchors - f, axis=1)
        exponent = self.shapes * (np.log(np.maximum(d, 1e-300)) - np.log(self.scales))
        psi = np.where(d == 0.0, 1.0, np.exp(-np.exp(np.minimum(exponent, 700.0))))
        return np.maximum.reduceat(psi, self.offsets)

    def predict(self, f) -> AugmentedProbs:
        q = self.class_probabilities(f)
        v = np.concatenate(([1.0 - q.max()], q))
        return AugmentedProbs(v[0] / v.sum(), v[1:] / v.sum())


def evm_predict(model: EvmModel, f) -> AugmentedProbs:
    """Max-inclusion class probabilities with a prepended unknown slot,
    normalized by the vector sum."""
    return EvmScorer(model).predict(f)


def reduce_model(evs: list[ExtremeVector], coverage_threshold: float) -> list[ExtremeVector]:
    """Greedy set cover over the class's own anchors: repeatedly keep the
    vector covering the most uncovered anchors at inclusion >= threshold,
    ties to the lowest index."""
    if not evs:
        return []
    anchors = np.stack([ev.anchor for ev in evs])
    n = len(evs)
    covers = np.zeros((n, n), dtype=bool)
    for i, ev in enumerate(evs):
        dists = np.linalg.norm(anchors - ev.anchor, axis=1)
        covers[i] = [
            _psi(float(d), ev.weibull.shape, ev.weibull.scale) >= coverage_threshold
            for d in dists
        ]
    uncovered = np.ones(n, dtype=bool)
    kept: list[int] = []
    while uncovered.any():
        gains = (covers & uncovered).sum(axis=1)
        best = int(np.argmax(gains))  # argmax keeps the lowest index on ties
        kept.append(best)
        uncovered &= ~covers[best]
    return [evs[i] for i in kept]


def _fit_class(anchors: np.ndarray, negatives: np.ndarray, class_id: int,
               d_m: float, tail: int, coverage: float) -> list[ExtremeVector]:
    evs = [
        ExtremeVector(a.copy(), fit_weibull(compute_margins(a, negatives, d_m, tail)), class_id)
        for a in anchors
    ]
    return reduce_model(evs, coverage)


def evm_train(features_by_class: dict[int, np.ndarray],
              config: EvmConfig | None = None) -> EvmModel:
    """Fit every class against all other classes' points and prune each
    class's vectors by greedy cover."""
    config = config or EvmConfig()
    if len(features_by_class) < 2:
        raise ValueError("training needs at least 2 classes for negatives")
    by_class = {
        cid: np.atleast_2d(np.asarray(x, dtype=np.float64))
        for cid, x in features_by_class.items()
    }
    dims = {x.shape[1] for x in by_class.values()}
    if len(dims) != 1:
        raise ValueError("inconsistent feature dims across classes")
    dim = dims.pop()
    evs: dict[int, list[ExtremeVector]] = {}
    for cid, anchors in by_class.items():
        negatives = np.concatenate([x for c, x in by_class.items() if c != cid])
        evs[cid] = _fit_class(anchors, negatives, cid, config.distance_multiplier,
                              config.tail_size, config.coverage_threshold)
    return EvmModel(dim=dim, config=config, class_ids=tuple(by_class), extreme_vectors=evs)


def evm_increment(model: EvmModel, bank: FeatureBank,
                  clusters: list[tuple[int, np.ndarray]]) -> tuple[EvmModel, FeatureBank, list[int]]:
    """Append one class per cluster, fitted against the bank plus the other
    clusters of this step, using the incremental distance multiplier.
    Existing extreme vectors are never touched; the bank absorbs every
    learned cluster. Returns the model, the bank, and the ids of clusters
    that had to be deferred because no negatives existed yet."""
    if not clusters:
        return model, bank, []
    arrays = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for _, x in clusters]
    ids = [cid for cid, _ in clusters]
    for cid in ids:
        if cid in model.class_ids:
            raise ValueError(f"duplicate class id {cid}")
    cfg = model.config
    evs = dict(model.extreme_vectors)
    class_ids = model.class_ids
    deferred: list[int] = []
    for i, (cid, anchors) in enumerate(zip(ids, arrays)):
        siblings = [a for j, a in enumerate(arrays) if j != i]
        negatives = np.concatenate([bank.features] + siblings)
        if negatives.shape[0] == 0:
            deferred.append(cid)
            continue
        tail = min(cfg.tail_size, negatives.shape[0])
        evs[cid] = _fit_class(anchors, negatives, cid,
                              cfg.distance_multiplier_incremental, tail,
                              cfg.coverage_threshold)
        class_ids = class_ids + (cid,)
    new_bank = bank
    for cid, x in zip(ids, arrays):
        if cid not in deferred:
            new_bank = new_bank.extended(x, cid, cfg.bank_cap_per_class)
    return replace(model, class_ids=class_ids, extreme_vectors=evs), new_bank, deferred
