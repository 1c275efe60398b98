"""Known-vs-unknown gating: softmax, energy, and EVM-probability detectors
calibrated to a target true-positive rate, plus an optional feature-range
clamp that forces the unknown decision outside the pretraining box."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DETECTOR_KINDS = ("softmax", "energy", "evm_score")


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "softmax"
    temperature: float = 1.0
    target_tpr: float = 0.95
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.target_tpr <= 1.0:
            raise ValueError("target_tpr must lie in (0, 1]")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "temperature": self.temperature,
            "target_tpr": self.target_tpr,
            "threshold": self.threshold,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DetectorConfig":
        return cls(**doc)


def knownness_score(config: DetectorConfig, scores) -> float:
    """Scalar confidence that the input is known; higher means more known.

    softmax: max softmax probability of the logits.
    energy: negated free energy T*log(sum(exp(logit/T))), monotone in logits.
    evm_score: max of the supplied per-class inclusion probabilities.
    """
    x = np.asarray(scores, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty score vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in score vector")
    if config.kind == "softmax":
        shifted = x - x.max()
        e = np.exp(shifted)
        return float(e.max() / e.sum())
    if config.kind == "energy":
        t = config.temperature
        z = x / t
        m = z.max()
        return float(t * (m + math.log(np.exp(z - m).sum())))
    return float(x.max())


def calibrate_threshold(config: DetectorConfig, known_scores) -> DetectorConfig:
    """Pick the largest threshold keeping at least ``target_tpr`` of the
    known validation scores at or above it (lower-percentile convention;
    ties keep the conservative threshold)."""
    scores = np.asarray(known_scores, dtype=np.float64)
    if scores.size < 20:
        raise ValueError(f"need at least 20 calibration scores, got {scores.size}")
    n = scores.size
    keep = int(math.ceil(config.target_tpr * n - 1e-12))
    threshold = float(np.sort(scores)[n - keep])
    return replace(config, threshold=threshold)


@dataclass(frozen=True)
class FeatureBounds:
    """Per-dimension acceptance box learned from pretraining features.

    Each side of the observed [min, max] range is extended by
    (slack - 1) * range, so slack 1.0 keeps the exact empirical box.
    """

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def fit(cls, features, slack: float = 1.5) -> "FeatureBounds":
        x = np.asarray(features, dtype=np.float64)
        lo = x.min(axis=0)
        hi = x.max(axis=0)
        margin = (slack - 1.0) * (hi - lo)
        return cls(lower=lo - margin, upper=hi + margin)

    def in_range(self, feature) -> bool:
        f = np.asarray(feature, dtype=np.float64)
        return bool(np.all(f >= self.lower) and np.all(f <= self.upper))


def clamp_feature_range(feature, bounds: FeatureBounds) -> bool:
    """True when the feature lies inside the acceptance box. Out-of-range
    features must be routed unknown regardless of detector score."""
    return bounds.in_range(feature)
