"""Distance- and linear-head incremental learners over frozen features.

Every learner predicts an augmented probability vector: an explicit
unknown-mass slot followed by per-class probabilities, renormalized to the
simplex. Learners with fewer than three classes report pure unknown to
avoid the small-model singularity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

LEARNER_KINDS = ("oncm", "onno", "ogmm", "ocbcl", "oscail", "mevm")

MIN_CLASSES = 3  # below this every distance learner reports unknown
DIST_FLOOR = 1e-12


@dataclass(frozen=True)
class AugmentedProbs:
    """Unknown mass plus per-class probabilities; sums to one."""

    p_unknown: float
    p_classes: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.p_unknown], self.p_classes))

    def argmax_class(self) -> int:
        return int(np.argmax(self.p_classes))

    @property
    def predicts_unknown(self) -> bool:
        return self.p_classes.size == 0 or self.p_unknown > float(self.p_classes.max())


def augment_probabilities(q) -> AugmentedProbs:
    """Prefix a class-probability vector with unknown mass 1 - max(q) and
    renormalize the whole vector."""
    q = np.asarray(q, dtype=np.float64)
    if q.size == 0:
        raise ValueError("empty class-probability vector")
    u = 1.0 - float(q.max())
    denom = u + float(q.sum())
    return AugmentedProbs(u / denom, q / denom)


def _softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    if not np.isfinite(m):  # all -inf cannot happen on learner paths
        raise ValueError("softmax over all-masked scores")
    e = np.exp(z - m)
    return e / e.sum()


def _all_unknown(n_classes: int) -> AugmentedProbs:
    return AugmentedProbs(1.0, np.zeros(n_classes))


def _check_dim(f: np.ndarray, dim: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (dim,):
        raise ValueError(f"feature has shape {f.shape}, model dim is {dim}")
    return f


# ---------------------------------------------------------------------------
# shared linear-head trainer (known-class head and the linear learner below)
# ---------------------------------------------------------------------------

def fit_linear_head(x, y, n_classes: int, epochs: int = 200, lr: float = 0.1,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Softmax cross-entropy linear classifier by full-batch gradient descent
    with step halving on loss increase. Deterministic given the seed."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(n_classes, d)) / np.sqrt(d)
    b = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    def evaluate(wm, bv):
        z = x @ wm.T + bv
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
        g = (p - onehot) / n
        return loss, g.T @ x, g.sum(axis=0)

    loss, gw, gb = evaluate(w, b)
    for _ in range(epochs):
        while True:
            w_new = w - lr * gw
            b_new = b - lr * gb
            loss_new, gw_new, gb_new = evaluate(w_new, b_new)
            if loss_new <= loss or lr < 1e-12:
                break
            lr *= 0.5
        w, b, loss, gw, gb = w_new, b_new, loss_new, gw_new, gb_new
    return w, b


# ---------------------------------------------------------------------------
# ONCM: per-class feature means, softmax of negative euclidean distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NcmState:
    dim: int
    class_ids: tuple[int, ...] = ()
    means: np.ndarray | None = None  # (m, dim)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)


def oncm_update(state: NcmState, cluster, class_id: int) -> NcmState:
    """Append the cluster's feature mean as a new class."""
    x = np.atleast_2d(np.asarray(cluster, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("empty cluster")
    if class_id in state.class_ids:
        raise ValueError(f"duplicate class id {class_id}")
    mean = x.mean(axis=0)[None, :]
    means = mean if state.means is None else np.vstack([state.means, mean])
    return replace(state, class_ids=state.class_ids + (class_id,), means=means)


def oncm_predict(state: NcmState, f) -> AugmentedProbs:
    f = _check_dim(f, state.dim)
    if state.n_classes < MIN_CLASSES:
        return _all_unknown(state.n_classes)
    dists = np.linalg.norm(state.means - f, axis=1)
    return augment_probabilities(_softmax(-dists))


# ---------------------------------------------------------------------------
# ONNO: low-rank metric learning with a hard acceptance gate per class
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NnoState:
    dim: int
    rank: int = 4
    scale: float = 2.0  # squared-distance acceptance radius in the metric
    class_ids: tuple[int, ...] = ()
    means: np.ndarray | None = None   # (m, dim)
    metric: np.ndarray | None = None  # (rank, dim)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)


def _ncmml_eval(w: np.ndarray, x: np.ndarray, y: np.ndarray, means: np.ndarray):
    """Mean cross-entropy of the metric softmax and its gradient in w."""
    deltas = x[:, None, :] - means[None, :, :]          # (n, m, f)
    wd = np.einsum("rf,nmf->nmr", w, deltas)            # (n, m, r)
    d = 0.5 * np.sum(wd * wd, axis=2)                   # (n, m)
    z = -d
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    q = e / e.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = -np.mean(np.log(q[np.arange(n), y] + 1e-300))
    # logits are negated distances, so d(loss)/d(distance) = (onehot - q)/n
    g = -q
    g[np.arange(n), y] += 1.0
    g /= n
    grad = np.einsum("nm,nmr,nmf->rf", g, wd, deltas)
    return loss, grad


def ncmml_loss_and_grad(w, x, y, means):
    """Public handle on the metric-learning objective for gradient checks:
    ``y`` holds row indices into ``means``."""
    return _ncmml_eval(np.asarray(w, dtype=np.float64),
                       np.asarray(x, dtype=np.float64),
                       np.asarray(y, dtype=np.int64),
                       np.asarray(means, dtype=np.float64))


def ncmml_fit(state: NnoState, x, y, epochs: int = 200, lr: float = 0.1,
              seed: int = 0) -> NnoState:
    """Learn the low-rank metric by full-batch gradient descent on the
    cross-entropy of the per-class posteriors; class means come from the
    labeled features. Loss is non-increasing across accepted steps."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    ids, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    if ids.size < MIN_CLASSES:
        raise ValueError(f"metric fit needs at least {MIN_CLASSES} classes")
    if counts.min() < 2:
        raise ValueError("every class needs at least 2 samples")
    means = np.stack([x[inverse == i].mean(axis=0) for i in range(ids.size)])
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(state.rank, state.dim)) / np.sqrt(state.dim)

    loss, grad = _ncmml_eval(w, x, inverse, means)
    for _ in range(epochs):
        while True:
            w_new = w - lr * grad
            loss_new, grad_new = _ncmml_eval(w_new, x, inverse, means)
            if loss_new <= loss or lr < 1e-12:
                break
            lr *= 0.5
        w, loss, grad = w_new, loss_new, grad_new
    return replace(state, class_ids=tuple(int(i) for i in ids), means=means, metric=w)


def onno_predict(state: NnoState, f) -> AugmentedProbs:
    """Gated posterior: classes whose squared metric distance reaches the
    acceptance radius contribute nothing; all-rejected means unknown."""
    f = _check_dim(f, state.dim)
    if state.n_classes < MIN_CLASSES:
        return _all_unknown(state.n_classes)
    deltas = state.means - f
    wd = deltas @ state.metric.T
    d2 = np.sum(wd * wd, axis=1)
    q = _softmax(-0.5 * d2)
    gate = d2 < state.scale  # boundary itself rejects
    q = np.where(gate, q, 0.0)
    total = q.sum()
    if total == 0.0:
        return _all_unknown(state.n_classes)
    return AugmentedProbs(0.0, q / total)


# ---------------------------------------------------------------------------
# OGMM: per-class gaussian with determinant-guarded covariance inverse
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GmmState:
    dim: int
    scale: float = 10.0
    det_floor: float = 1e-4
    class_ids: tuple[int, ...] = ()
    means: np.ndarray | None = None      # (m, dim)
    covariances: np.ndarray | None = None  # (m, dim, dim)
    inverses: np.ndarray | None = None   # robust inverses, same shape
    counts: tuple[int, ...] = ()

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)


def ogmm_robust_inverse(cov, det_floor: float = 1e-4) -> np.ndarray:
    """Exact inverse when the determinant clears the floor; otherwise the
    pseudo-inverse with 1000 * max-entry patched onto zero diagonal cells."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-9):
        raise ValueError("covariance must be symmetric")
    if np.linalg.det(cov) >= det_floor:
        return np.linalg.inv(cov)
    pinv = np.linalg.pinv(cov)
    bump = 1000.0 * float(pinv.max())
    zero_diag = np.abs(np.diag(pinv)) < 1e-12
    out = pinv.copy()
    out[np.diag_indices_from(out)] += np.where(zero_diag, bump, 0.0)
    return out


def ogmm_update(state: GmmState, cluster, class_id: int) -> GmmState:
    """Store the cluster's mean and population covariance as a new class."""
    x = np.atleast_2d(np.asarray(cluster, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError("covariance needs at least 2 points")
    if class_id in state.class_ids:
        raise ValueError(f"duplicate class id {class_id}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    cov = 0.5 * (cov + cov.T)
    inv = ogmm_robust_inverse(cov, state.det_floor)

    def stack(old, new):
        return new[None] if old is None else np.concatenate([old, new[None]])

    return replace(
        state,
        class_ids=state.class_ids + (class_id,),
        means=stack(state.means, mean),
        covariances=stack(state.covariances, cov),
        inverses=stack(state.inverses, inv),
        counts=state.counts + (x.shape[0],),
    )


def ogmm_predict(state: GmmState, f) -> AugmentedProbs:
    f = _check_dim(f, state.dim)
    if state.n_classes < MIN_CLASSES:
        return _all_unknown(state.n_classes)
    deltas = state.means - f
    d = np.einsum("mi,mij,mj->m", deltas, state.inverses, deltas)
    return augment_probabilities(_softmax(-d / (2.0 * state.scale)))


# ---------------------------------------------------------------------------
# OCBCL: per-class centroid agglomeration with top-k inverse-distance voting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CbclClass:
    centroids: np.ndarray  # (k, dim)
    counts: np.ndarray     # (k,)


@dataclass(frozen=True)
class CbclState:
    dim: int
    distance_threshold: float = 10.0
    top_k: int = 5
    classes: dict[int, CbclClass] = field(default_factory=dict)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(self.classes.keys())

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def ocbcl_update(state: CbclState, cluster, class_id: int) -> CbclState:
    """Fold features into the class one by one: spawn a centroid when the
    nearest one is farther than the threshold, otherwise update it with a
    count-weighted running mean."""
    x = np.atleast_2d(np.asarray(cluster, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("empty cluster")
    if class_id in state.classes:
        existing = state.classes[class_id]
        centroids = [c.copy() for c in existing.centroids]
        counts = list(existing.counts)
    else:
        centroids, counts = [], []
    for f in x:
        if centroids:
            dists = np.linalg.norm(np.asarray(centroids) - f, axis=1)
            j = int(np.argmin(dists))
            if dists[j] <= state.distance_threshold:
                centroids[j] = (counts[j] * centroids[j] + f) / (counts[j] + 1)
                counts[j] += 1
                continue
        centroids.append(f.copy())
        counts.append(1)
    classes = dict(state.classes)
    classes[class_id] = CbclClass(np.asarray(centroids), np.asarray(counts))
    return replace(state, classes=classes)


def ocbcl_predict(state: CbclState, f) -> AugmentedProbs:
    """Score each class by summed inverse distance to its centroids among
    the k nearest overall, divided by the class member total; classes absent
    from the top k score -inf."""
    f = _check_dim(f, state.dim)
    if state.n_classes < MIN_CLASSES:
        return _all_unknown(state.n_classes)
    owners, dists, class_totals = [], [], {}
    for cid, cls in state.classes.items():
        class_totals[cid] = int(cls.counts.sum())
        for centroid in cls.centroids:
            owners.append(cid)
            dists.append(np.linalg.norm(f - centroid))
    dists = np.maximum(np.asarray(dists), DIST_FLOOR)
    k = min(state.top_k, dists.size)
    top = np.argsort(dists, kind="stable")[:k]
    scores = {cid: -np.inf for cid in state.classes}
    for idx in top:
        cid = owners[idx]
        contrib = 1.0 / (class_totals[cid] * dists[idx])
        scores[cid] = contrib if scores[cid] == -np.inf else scores[cid] + contrib
    r = np.array([scores[cid] for cid in state.classes])
    with np.errstate(over="ignore"):
        q = _softmax(r)
    return augment_probabilities(q)


# ---------------------------------------------------------------------------
# OSCAIL: replayed linear head with rank-statistics weight rescaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScailInsertStats:
    weight: np.ndarray  # sorted absolute weights, nonincreasing
    bias: float


@dataclass(frozen=True)
class ScailState:
    dim: int
    buffer_cap: int = 20
    class_ids: tuple[int, ...] = ()
    weights: np.ndarray | None = None  # (m, dim)
    biases: np.ndarray | None = None
    insert_stats: dict[int, ScailInsertStats] = field(default_factory=dict)
    play_buffer: dict[int, np.ndarray] = field(default_factory=dict)
    latest_stats: ScailInsertStats | None = None
    latest_ids: tuple[int, ...] = ()

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)


def _sorted_abs(w: np.ndarray) -> np.ndarray:
    return np.sort(np.abs(w))[::-1]


def scail_insertion_stats(weights, biases) -> ScailInsertStats:
    """Mean over classifiers of their sorted absolute weights (largest
    first), and the mean absolute bias."""
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    b = np.atleast_1d(np.asarray(biases, dtype=np.float64))
    sorted_rows = np.stack([_sorted_abs(row) for row in w])
    return ScailInsertStats(sorted_rows.mean(axis=0), float(np.abs(b).mean()))


def oscail_fit_step(state: ScailState, cluster, class_id: int,
                    seed: int = 0) -> ScailState:
    """Add a class: retrain the head on the play buffer plus the new cluster,
    record the new class's sorted-absolute-weight and bias statistics, and
    buffer up to ``buffer_cap`` of its exemplars."""
    x_new = np.atleast_2d(np.asarray(cluster, dtype=np.float64))
    if x_new.shape[0] == 0:
        raise ValueError("empty cluster")
    if class_id in state.class_ids:
        raise ValueError(f"duplicate class id {class_id}")
    ids = state.class_ids + (class_id,)
    xs = [state.play_buffer[c] for c in state.class_ids] + [x_new]
    ys = [np.full(len(v), i) for i, v in enumerate(xs)]
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if len(ids) == 1:
        weights = np.zeros((1, state.dim))
        biases = np.zeros(1)
    else:
        weights, biases = fit_linear_head(x, y, len(ids), seed=seed)
    new_stats = scail_insertion_stats(weights[-1:], biases[-1:])
    insert_stats = dict(state.insert_stats)
    insert_stats[class_id] = new_stats
    buffer = dict(state.play_buffer)
    buffer[class_id] = x_new[: state.buffer_cap].copy()
    return replace(
        state,
        class_ids=ids,
        weights=weights,
        biases=biases,
        insert_stats=insert_stats,
        play_buffer=buffer,
        latest_stats=new_stats,
        latest_ids=(class_id,),
    )


def oscail_rescale(state: ScailState) -> ScailState:
    """Scale every pre-existing classifier toward the newest insertion
    statistics: weight j is multiplied by new/old stats at the rank of |w_j|
    within its own classifier, the bias by the bias-mean ratio. Ranks with a
    zero stored statistic keep factor 1."""
    if state.latest_stats is None:
        raise ValueError("no insertion statistics from the current step")
    old = [c for c in state.class_ids if c not in state.latest_ids]
    if not old:
        raise ValueError("rescale needs at least one pre-existing class")
    weights = state.weights.copy()
    biases = state.biases.copy()
    for idx, cid in enumerate(state.class_ids):
        if cid in state.latest_ids:
            continue
        stored = state.insert_stats[cid]
        w = weights[idx]
        order = np.argsort(-np.abs(w), kind="stable")
        ranks = np.empty_like(order)
        ranks[order] = np.arange(order.size)
        denom = stored.weight[ranks]
        numer = state.latest_stats.weight[ranks]
        factors = np.where(denom > 0, numer / np.where(denom > 0, denom, 1.0), 1.0)
        weights[idx] = w * factors
        if stored.bias != 0.0:
            biases[idx] = biases[idx] * (state.latest_stats.bias / stored.bias)
    return replace(state, weights=weights, biases=biases)


def oscail_predict(state: ScailState, f) -> AugmentedProbs:
    f = _check_dim(f, state.dim)
    if state.n_classes < MIN_CLASSES:
        return _all_unknown(state.n_classes)
    q = _softmax(state.weights @ f + state.biases)
    return augment_probabilities(q)
