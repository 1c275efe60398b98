"""Open-world evaluation metrics: accuracy, B-cubed, NMI, and the combined
open-world score that mixes a supervised metric on correctly routed knowns
with a clustering metric on correctly routed unknowns."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


def accuracy(predicted: Sequence, truth: Sequence) -> float:
    """Fraction of exact label matches."""
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of empty input is undefined")
    return float(np.mean(pred == true))


def _one_hot(labels: np.ndarray) -> np.ndarray:
    """n x c hard membership matrix; columns follow first-appearance order."""
    _, inverse = np.unique(labels, return_inverse=True)
    out = np.zeros((labels.shape[0], inverse.max() + 1))
    out[np.arange(labels.shape[0]), inverse] = 1.0
    return out


def b3(cluster_labels: Sequence, true_labels: Sequence) -> tuple[float, float, float]:
    """B-cubed precision, recall and F-score between a clustering and a
    reference labeling.

    Accepts hard label sequences, or membership matrices of shape (n, c)
    for fuzzy assignments. Computed via the co-occurrence matrix
    A = mu_true^T mu_cluster: per-cluster precision sum(A^2, rows)/T^2,
    per-class recall sum(A^2, cols)/S^2, each averaged with size weights.
    """
    mu_k = np.asarray(cluster_labels)
    mu_y = np.asarray(true_labels)
    if mu_k.ndim == 1:
        if mu_k.size == 0:
            raise ValueError("b3 of empty input is undefined")
        if mu_k.shape[0] != mu_y.shape[0]:
            raise ValueError("label sequences differ in length")
        mu_k = _one_hot(mu_k)
    if mu_y.ndim == 1:
        mu_y = _one_hot(mu_y)
    if mu_y.shape[0] != mu_k.shape[0]:
        raise ValueError("membership matrices differ in row count")
    if mu_y.shape[0] == 0:
        raise ValueError("b3 of empty input is undefined")

    a = mu_y.T @ mu_k            # classes x clusters co-occurrence
    m = a * a
    t = a.sum(axis=0)            # cluster sizes
    s = a.sum(axis=1)            # class sizes
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(t > 0, m.sum(axis=0) / (t * t), 0.0)
        r = np.where(s > 0, m.sum(axis=1) / (s * s), 0.0)
    precision = float((t @ p) / t.sum())
    recall = float((s @ r) / s.sum())
    if precision + recall == 0.0:
        return precision, recall, 0.0
    f = 2.0 * precision * recall / (precision + recall)
    return precision, recall, float(f)


def b3_f(cluster_labels: Sequence, true_labels: Sequence) -> float:
    return b3(cluster_labels, true_labels)[2]


def nmi(cluster_labels: Sequence, true_labels: Sequence) -> float:
    """Mutual information normalized by the arithmetic mean of the two
    marginal entropies; 0/0 resolves to 0."""
    k = np.asarray(cluster_labels)
    y = np.asarray(true_labels)
    if k.size == 0:
        raise ValueError("nmi of empty input is undefined")
    if k.shape != y.shape:
        raise ValueError("label sequences differ in length")
    n = k.size
    _, ki = np.unique(k, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    cont = np.zeros((yi.max() + 1, ki.max() + 1))
    np.add.at(cont, (yi, ki), 1.0)
    pxy = cont / n
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    nz = pxy > 0
    mi = float(np.sum(pxy[nz] * np.log(pxy[nz] / np.outer(px, py)[nz])))
    hx = -float(np.sum(px[px > 0] * np.log(px[px > 0])))
    hy = -float(np.sum(py[py > 0] * np.log(py[py > 0])))
    denom = 0.5 * (hx + hy)
    if denom == 0.0:
        return 0.0
    return mi / denom


def macro_f1(predicted: Sequence, truth: Sequence) -> float:
    """Unweighted mean of per-class F1 over all labels seen in either input."""
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.size == 0:
        raise ValueError("macro_f1 of empty input is undefined")
    labels = np.union1d(pred, true)
    scores = []
    for lab in labels:
        tp = np.sum((pred == lab) & (true == lab))
        fp = np.sum((pred == lab) & (true != lab))
        fn = np.sum((pred != lab) & (true == lab))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


@dataclass
class OWMInputs:
    """Per-item routing outcome of one evaluation window.

    Items are split by (true, predicted) membership in the known/unknown
    dichotomy. The KK group carries known-class predictions for accuracy;
    the UU group carries cluster assignments for the clustering metric.
    """

    n_kk: int = 0
    n_ku: int = 0
    n_uk: int = 0
    n_uu: int = 0
    kk_predicted: list = field(default_factory=list)
    kk_truth: list = field(default_factory=list)
    uu_predicted: list = field(default_factory=list)
    uu_truth: list = field(default_factory=list)

    def total(self) -> int:
        return self.n_kk + self.n_ku + self.n_uk + self.n_uu


def owm(
    inputs: OWMInputs,
    known_metric: Callable[[Sequence, Sequence], float] = accuracy,
    unknown_metric: Callable[[Sequence, Sequence], float] = b3_f,
) -> float:
    """Open-world score: known-routed accuracy and unknown-routed clustering
    quality, each weighted by group size and normalized over every routing.

    The metric slots are pluggable, e.g. ``macro_f1`` with ``nmi``.
    """
    total = inputs.total()
    if total < 1:
        raise ValueError("no items to score")
    known_term = 0.0
    if inputs.n_kk > 0:
        known_term = inputs.n_kk * known_metric(inputs.kk_predicted, inputs.kk_truth)
    unknown_term = 0.0
    if inputs.n_uu > 0:
        unknown_term = inputs.n_uu * unknown_metric(inputs.uu_predicted, inputs.uu_truth)
    return (known_term + unknown_term) / total
