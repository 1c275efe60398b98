"""First-neighbor agglomerative clustering and the partition-selection policy
used to pick a working partition from its hierarchy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRICS = ("euclidean", "cosine")


@dataclass
class PartitionSet:
    """Hierarchy of clusterings over one point set, finest first.

    ``partitions[i]`` assigns a cluster label to every input point; cluster
    counts strictly decrease with i and each level is a coarsening of the
    previous one.
    """

    partitions: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.partitions)

    def cluster_counts(self) -> list[int]:
        return [int(p.max()) + 1 for p in self.partitions]


def _distance_matrix(points: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        sq = np.sum(points**2, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
        return np.sqrt(np.maximum(d2, 0.0))
    norms = np.linalg.norm(points, axis=1)
    norms = np.maximum(norms, 1e-12)
    sim = (points @ points.T) / np.outer(norms, norms)
    return 1.0 - sim


def _first_neighbors(points: np.ndarray, metric: str) -> np.ndarray:
    d = _distance_matrix(points, metric)
    np.fill_diagonal(d, np.inf)
    return np.argmin(d, axis=1)  # argmin takes the lowest index on ties


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[rj] = ri


def _link_components(nn: np.ndarray) -> np.ndarray:
    """Components of the graph linking i-j when j is i's first neighbor or
    both share the same first neighbor; labels in first-appearance order."""
    n = nn.shape[0]
    uf = _UnionFind(n)
    for i in range(n):
        # linking every point to its first neighbor already yields the same
        # components as the mutual/shared-neighbor adjacency: symmetric and
        # shared links are implied transitively through the hub point
        uf.union(i, int(nn[i]))
    roots = [uf.find(i) for i in range(n)]
    remap: dict[int, int] = {}
    labels = np.empty(n, dtype=np.int64)
    for i, r in enumerate(roots):
        labels[i] = remap.setdefault(r, len(remap))
    return labels


def finch_partitions(points, metric: str = "euclidean") -> PartitionSet:
    """All levels of first-neighbor clustering, finest to coarsest.

    Level 0 links mutual/shared first neighbors of the raw points; later
    levels repeat the rule on cluster means until a single cluster remains.
    Exact O(n^2) neighbor search; ties break to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two points to cluster")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")

    labels = _link_components(_first_neighbors(pts, metric))
    levels = [labels]
    while labels.max() > 0:
        k = int(labels.max()) + 1
        means = np.zeros((k, pts.shape[1]))
        np.add.at(means, labels, pts)
        means /= np.bincount(labels, minlength=k)[:, None]
        merged = _link_components(_first_neighbors(means, metric))
        labels = merged[labels]
        levels.append(labels)
    return PartitionSet(levels)


def select_partition(partitions: PartitionSet, mode: str | None = None) -> np.ndarray:
    """Choose the working partition.

    Default policy: the first partition when only one or two exist,
    otherwise the second. ``mode`` forces "fp" (first) or "sp" (second,
    falling back to first when absent).
    """
    if len(partitions) == 0:
        raise ValueError("empty partition set")
    ps = partitions.partitions
    if mode is not None:
        mode = mode.lower()
        if mode == "fp":
            return ps[0]
        if mode == "sp":
            return ps[1] if len(ps) >= 2 else ps[0]
        raise ValueError(f"unknown partition mode {mode!r}")
    if len(ps) <= 2:
        return ps[0]
    return ps[1]
