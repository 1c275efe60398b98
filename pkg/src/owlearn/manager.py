"""Residual-buffer management: when to cluster, which clusters to admit.

Admission runs three checks in order: the buffer must exceed the clustering
trigger, the selected partition must exceed the minimum cluster count, and
each cluster must both exceed the minimum size and pass the variance-based
quality gate. Rejected points stay buffered for future rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discovery import finch_partitions, select_partition


@dataclass(frozen=True)
class ManagerConfig:
    min_residual_to_cluster: int = 250   # buffer size that triggers discovery
    min_cluster_count: int = 4           # partitions at or below this are ignored
    min_cluster_size: int = 20           # clusters at or below this are not admitted
    n_pos: int = 1                       # positive clusters for gate calibration
    gate_enabled: bool = True
    partition_mode: str | None = None    # None = default policy, else "fp"/"sp"
    metric: str = "euclidean"

    def __post_init__(self):
        if min(self.min_residual_to_cluster, self.min_cluster_count,
               self.n_pos) < 1 or self.min_cluster_size < 2:
            raise ValueError("manager thresholds out of range")

    def to_json(self) -> dict:
        return {
            "psi": self.min_residual_to_cluster,
            "gamma": self.min_cluster_count,
            "rho": self.min_cluster_size,
            "n_pos": self.n_pos,
            "gate_enabled": self.gate_enabled,
            "partition_mode": self.partition_mode,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ManagerConfig":
        return cls(
            min_residual_to_cluster=doc.get("psi", 250),
            min_cluster_count=doc.get("gamma", 4),
            min_cluster_size=doc.get("rho", 20),
            n_pos=doc.get("n_pos", 1),
            gate_enabled=doc.get("gate_enabled", True),
            partition_mode=doc.get("partition_mode"),
        )


@dataclass(frozen=True)
class ClusterStats:
    centroid: np.ndarray
    euclidean_variance: float
    cosine_variance: float
    size: int


def cluster_stats(features) -> ClusterStats:
    """Centroid, mean squared deviation, and mean cosine dissimilarity of a
    cluster's points from its centroid."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("empty cluster")
    c = x.mean(axis=0)
    v_e = float(np.mean(np.sum((x - c) ** 2, axis=1)))
    norms = np.maximum(np.linalg.norm(x, axis=1), 1e-12)
    c_norm = max(np.linalg.norm(c), 1e-12)
    cos = (x @ c) / (norms * c_norm)
    v_c = float(np.mean(1.0 - cos))
    return ClusterStats(c, v_e, v_c, x.shape[0])


def label_entropy(labels) -> float:
    """Shannon entropy (natural log) of the label distribution."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty cluster")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


@dataclass
class QualityGate:
    """Linear separator over standardized (euclidean, cosine) variance."""

    weights: np.ndarray | None = None
    bias: float = 0.0
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def trained(self) -> bool:
        return self.weights is not None

    def decision(self, stats: ClusterStats) -> float:
        if not self.trained:
            raise ValueError("quality gate is untrained")
        x = (np.array([stats.euclidean_variance, stats.cosine_variance]) - self.mean) / self.std
        return float(self.weights @ x + self.bias)

    def accepts(self, stats: ClusterStats) -> bool:
        return self.decision(stats) > 0.0

    def to_json(self) -> dict:
        return {
            "weights": None if self.weights is None else self.weights.tolist(),
            "bias": self.bias,
            "mean": None if self.mean is None else self.mean.tolist(),
            "std": None if self.std is None else self.std.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "QualityGate":
        return cls(
            weights=None if doc["weights"] is None else np.asarray(doc["weights"]),
            bias=doc["bias"],
            mean=None if doc["mean"] is None else np.asarray(doc["mean"]),
            std=None if doc["std"] is None else np.asarray(doc["std"]),
        )


def _svm_subgradient(x: np.ndarray, y: np.ndarray, c: float = 1.0,
                     iterations: int = 10_000) -> tuple[np.ndarray, float]:
    """Primal soft-margin linear SVM by deterministic full-batch subgradient
    descent; tiny 2-D problems only."""
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for t in range(iterations):
        lr = 1.0 / (1.0 + 0.01 * t)
        margin = y * (x @ w + b)
        active = margin < 1.0
        gw = w - c * (y[active, None] * x[active]).sum(axis=0)
        gb = -c * y[active].sum()
        w = w - lr * gw / n
        b = b - lr * gb / n
    return w, b


def train_quality_svm(stats_list: list[ClusterStats], entropies,
                      n_pos: int = 1) -> QualityGate:
    """Calibrate the gate on validation clusters: the ``n_pos`` lowest-entropy
    clusters are positives (ties to the lowest index), everything else
    negative; features standardized before fitting."""
    entropies = np.asarray(entropies, dtype=np.float64)
    if len(stats_list) != entropies.size:
        raise ValueError("stats and entropies differ in length")
    if len(stats_list) < n_pos + 1:
        raise ValueError(f"need at least {n_pos + 1} clusters, got {len(stats_list)}")
    order = np.argsort(entropies, kind="stable")
    y = -np.ones(len(stats_list))
    y[order[:n_pos]] = 1.0
    x = np.array([[s.euclidean_variance, s.cosine_variance] for s in stats_list])
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-12)
    w, b = _svm_subgradient((x - mean) / std, y)
    return QualityGate(weights=w, bias=b, mean=mean, std=std)


@dataclass
class ResidualBuffer:
    """Features the agent routed unknown, keyed by opaque item ids.

    ``revision`` counts mutations so callers can skip re-clustering an
    unchanged buffer.
    """

    dim: int
    ids: list = field(default_factory=list)
    features: list = field(default_factory=list)
    revision: int = 0

    def insert(self, item_id, feature) -> None:
        f = np.asarray(feature, dtype=np.float64)
        if f.shape != (self.dim,):
            raise ValueError(f"feature has shape {f.shape}, buffer dim is {self.dim}")
        self.ids.append(item_id)
        self.features.append(f)
        self.revision += 1

    def __len__(self) -> int:
        return len(self.ids)

    def matrix(self) -> np.ndarray:
        if not self.features:
            return np.zeros((0, self.dim))
        return np.stack(self.features)

    def remove(self, indices) -> None:
        drop = set(int(i) for i in indices)
        self.ids = [v for i, v in enumerate(self.ids) if i not in drop]
        self.features = [v for i, v in enumerate(self.features) if i not in drop]
        self.revision += 1


@dataclass(frozen=True)
class AdmittedCluster:
    features: np.ndarray
    item_ids: tuple
    stats: ClusterStats


def manage_step(buffer: ResidualBuffer, config: ManagerConfig,
                gate: QualityGate | None) -> tuple[list[AdmittedCluster], ResidualBuffer]:
    """One admission round over the buffer.

    Clusters only when the buffer exceeds the trigger size; proceeds only
    when the selected partition has more clusters than the minimum; admits
    clusters that exceed the minimum size and pass the gate. Admitted points
    leave the buffer, everything else stays.
    """
    if config.gate_enabled and (gate is None or not gate.trained):
        raise ValueError("quality gate must be trained when enabled")
    if len(buffer) <= config.min_residual_to_cluster:
        return [], buffer
    points = buffer.matrix()
    partition = select_partition(
        finch_partitions(points, metric=config.metric), config.partition_mode
    )
    n_clusters = int(partition.max()) + 1
    if n_clusters <= config.min_cluster_count:
        return [], buffer
    admitted: list[AdmittedCluster] = []
    removed: list[int] = []
    for k in range(n_clusters):
        member_idx = np.flatnonzero(partition == k)
        if member_idx.size <= config.min_cluster_size:
            continue
        stats = cluster_stats(points[member_idx])
        if config.gate_enabled and not gate.accepts(stats):
            continue
        admitted.append(AdmittedCluster(
            features=points[member_idx],
            item_ids=tuple(buffer.ids[i] for i in member_idx),
            stats=stats,
        ))
        removed.extend(int(i) for i in member_idx)
    if removed:
        buffer.remove(removed)
    return admitted, buffer
