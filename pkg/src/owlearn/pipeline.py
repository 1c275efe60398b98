"""Streaming agents and the experiment harness.

Two agent families: a linear known-class head with a detector gate and a
pluggable discovered-class learner, and a single extreme-vector model that
covers knowns and discovered classes together. Control variants: a frozen
agent that never learns, and a labeled upper bound that swaps discovery for
ground-truth labels on the items the agent itself flagged unknown.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import stdtr

from .discovery import finch_partitions, select_partition
from .evm import EvmConfig, EvmModel, EvmScorer, FeatureBank, evm_increment, evm_train
from .feature_io import BlobGeometry, FeatureSet, StreamConfig, synthesize_stream
from .learners import (
    AugmentedProbs,
    CbclState,
    GmmState,
    NcmState,
    NnoState,
    ScailState,
    fit_linear_head,
    ncmml_fit,
    ocbcl_predict,
    ocbcl_update,
    ogmm_predict,
    ogmm_update,
    oncm_predict,
    oncm_update,
    onno_predict,
    oscail_fit_step,
    oscail_predict,
    oscail_rescale,
)
from .manager import (
    ManagerConfig,
    QualityGate,
    ResidualBuffer,
    cluster_stats,
    label_entropy,
    manage_step,
    train_quality_svm,
)
from .metrics import OWMInputs, accuracy, b3_f, owm
from .ood import DetectorConfig, FeatureBounds, calibrate_threshold, knownness_score

AGENT_MODES = ("towl_lc", "towl_fevm", "no_adaption", "with_label")

UNKNOWN_LABEL = -1
DISCOVERED_BASE = 10_000  # discovered-class labels live above this offset

GATE_MIN_CLUSTER = 5  # validation clusters smaller than this skip calibration


@dataclass(frozen=True)
class AgentConfig:
    mode: str = "towl_fevm"
    learner: str = "oncm"                # discovered-class learner (lc base)
    base: str = "towl_fevm"              # architecture for control modes
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    manager: ManagerConfig = field(default_factory=ManagerConfig)
    evm: EvmConfig = field(default_factory=EvmConfig)
    clamp_enabled: bool = False
    clamp_slack: float = 1.5

    def __post_init__(self):
        if self.mode not in AGENT_MODES:
            raise ValueError(f"unknown agent mode {self.mode!r}")
        if self.base not in ("towl_lc", "towl_fevm"):
            raise ValueError(f"unknown base architecture {self.base!r}")

    @property
    def base_kind(self) -> str:
        if self.mode in ("towl_lc", "towl_fevm"):
            return self.mode
        return self.base

    @property
    def learns(self) -> bool:
        return self.mode != "no_adaption"

    @property
    def labeled(self) -> bool:
        return self.mode == "with_label"

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "learner": self.learner,
            "base": self.base,
            "detector": self.detector.to_json(),
            "manager": self.manager.to_json(),
            "evm": self.evm.to_json(),
            "clamp_enabled": self.clamp_enabled,
            "clamp_slack": self.clamp_slack,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AgentConfig":
        return cls(
            mode=doc.get("mode", "towl_fevm"),
            learner=doc.get("learner", "oncm"),
            base=doc.get("base", "towl_fevm"),
            detector=DetectorConfig.from_json(doc.get("detector", {})),
            manager=ManagerConfig.from_json(doc.get("manager", {})),
            evm=EvmConfig(**doc.get("evm", {})),
            clamp_enabled=doc.get("clamp_enabled", False),
            clamp_slack=doc.get("clamp_slack", 1.5),
        )


@dataclass
class StepOutcome:
    predicted: int                 # UNKNOWN_LABEL, a known id, or DISCOVERED_BASE + i
    probabilities: np.ndarray      # [unknown, knowns..., discovered...]
    residual_inserted: bool
    clusters_learned: int


class DiscoveredLearner:
    """Uniform wrapper for the discovered-class learners of the lc agent.

    Class labels start at DISCOVERED_BASE and are handed out in learn order.
    ``learn`` reports the positions of clusters it had to defer (no negative
    samples exist yet) so the agent can re-buffer their points.
    """

    def __init__(self, kind: str, dim: int, evm_config: EvmConfig):
        self.kind = kind
        self.dim = dim
        self.next_id = DISCOVERED_BASE
        self.features: dict[int, np.ndarray] = {}  # replay store for refits
        self.scorer: EvmScorer | None = None
        if kind == "oncm":
            self.state = NcmState(dim)
        elif kind == "onno":
            self.state = NnoState(dim)
        elif kind == "ogmm":
            self.state = GmmState(dim)
        elif kind == "ocbcl":
            self.state = CbclState(dim)
        elif kind == "oscail":
            self.state = ScailState(dim)
        elif kind == "mevm":
            self.state = EvmModel(dim=dim, config=evm_config)
            self.bank = FeatureBank.empty(dim)
        else:
            raise ValueError(f"unknown learner kind {kind!r}")

    @property
    def class_labels(self) -> tuple[int, ...]:
        return self.state.class_ids

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def predict(self, f) -> AugmentedProbs:
        if self.kind == "oncm":
            return oncm_predict(self.state, f)
        if self.kind == "onno":
            return onno_predict(self.state, f)
        if self.kind == "ogmm":
            return ogmm_predict(self.state, f)
        if self.kind == "ocbcl":
            return ocbcl_predict(self.state, f)
        if self.kind == "oscail":
            return oscail_predict(self.state, f)
        if self.state.n_classes == 0:
            return AugmentedProbs(1.0, np.zeros(0))
        return self.scorer.predict(f)

    def learn(self, clusters: list[np.ndarray]) -> list[int]:
        """Add one class per cluster; returns indices of deferred clusters."""
        if self.kind == "mevm":
            tagged = []
            for x in clusters:
                tagged.append((self.next_id, x))
                self.next_id += 1
            self.state, self.bank, deferred = evm_increment(self.state, self.bank, tagged)
            if self.state.n_classes:
                self.scorer = EvmScorer(self.state)
            return [i for i, (cid, _) in enumerate(tagged) if cid in deferred]
        for x in clusters:
            cid = self.next_id
            self.next_id += 1
            self.features[cid] = np.atleast_2d(np.asarray(x, dtype=np.float64))
            if self.kind == "oncm":
                self.state = oncm_update(self.state, x, cid)
            elif self.kind == "ogmm":
                self.state = ogmm_update(self.state, x, cid)
            elif self.kind == "ocbcl":
                self.state = ocbcl_update(self.state, x, cid)
            elif self.kind == "oscail":
                self.state = oscail_fit_step(self.state, x, cid)
                if self.state.n_classes >= 2:
                    self.state = oscail_rescale(self.state)
            elif self.kind == "onno":
                self.state = self._refit_onno()
        return []

    def _refit_onno(self) -> NnoState:
        ids = list(self.features)
        fittable = [c for c in ids if self.features[c].shape[0] >= 2]
        if len(fittable) >= 3:
            x = np.concatenate([self.features[c] for c in fittable])
            y = np.concatenate(
                [np.full(self.features[c].shape[0], c) for c in fittable]
            )
            return ncmml_fit(self.state, x, y)
        # not enough classes for the metric yet: track means only
        means = np.stack([self.features[c].mean(axis=0) for c in ids])
        return NnoState(
            dim=self.state.dim, rank=self.state.rank, scale=self.state.scale,
            class_ids=tuple(ids), means=means, metric=self.state.metric,
        )


class Agent:
    """Sequential open-world learner over one stream."""

    def __init__(self, config: AgentConfig, pretrain: FeatureSet,
                 validation: FeatureSet):
        self.config = config
        self.dim = pretrain.dim
        self.known_ids = np.unique(pretrain.labels)
        self.known_set = set(int(k) for k in self.known_ids)
        self.buffer = ResidualBuffer(self.dim)
        self._managed_revision = 0
        self.truth_lookup: dict | None = None
        self.learned_truths: set[int] = set()
        self.discovered_count = 0
        self.bounds = (
            FeatureBounds.fit(pretrain.vectors, config.clamp_slack)
            if config.clamp_enabled else None
        )

        by_class = {
            int(c): pretrain.vectors[pretrain.labels == c].astype(np.float64)
            for c in self.known_ids
        }
        if config.base_kind == "towl_lc":
            index = {int(c): i for i, c in enumerate(self.known_ids)}
            self.head_w, self.head_b = fit_linear_head(
                pretrain.vectors.astype(np.float64),
                np.array([index[int(c)] for c in pretrain.labels]),
                len(self.known_ids),
            )
            self.ood_scorer = None
            if config.detector.kind == "evm_score":
                self.ood_scorer = EvmScorer(evm_train(by_class, config.evm))
            self.detector = config.detector
            scores = [self._knownness(v.astype(np.float64)) for v in validation.vectors]
            self.detector = calibrate_threshold(config.detector, scores)
            self.learner = DiscoveredLearner(config.learner, self.dim, config.evm)
        else:
            model = evm_train(by_class, config.evm)
            self.fevm_model = model
            self.fevm_bank = FeatureBank.from_class_features(
                by_class, self.dim, config.evm.bank_cap_per_class
            )
            self.fevm_scorer = EvmScorer(model)
            self.detector = None
            self.learner = None
            self.next_discovered_id = DISCOVERED_BASE

        self.gate = None
        if config.learns and not config.labeled and config.manager.gate_enabled:
            self.gate = _calibrate_gate(validation, config.manager)

    # -- prediction -------------------------------------------------------

    def _knownness(self, f: np.ndarray) -> float:
        if self.detector.kind == "evm_score":
            return knownness_score(self.detector, self.ood_scorer.class_probabilities(f))
        return knownness_score(self.detector, self.head_w @ f + self.head_b)

    def step(self, item_id, feature) -> StepOutcome:
        f = np.asarray(feature, dtype=np.float64)
        in_range = self.bounds is None or self.bounds.in_range(f)
        if self.config.base_kind == "towl_lc":
            outcome = self._step_lc(item_id, f, in_range)
        else:
            outcome = self._step_fevm(item_id, f, in_range)
        outcome.clusters_learned = self._manage()
        return outcome

    def _step_lc(self, item_id, f: np.ndarray, in_range: bool) -> StepOutcome:
        m = self.learner.n_classes
        k = len(self.known_ids)
        logits = self.head_w @ f + self.head_b
        if in_range and self._knownness(f) >= self.detector.threshold:
            e = np.exp(logits - logits.max())
            q = e / e.sum()
            p = np.concatenate(([0.0], q, np.zeros(m)))
            predicted = int(self.known_ids[int(np.argmax(q))])
            return StepOutcome(predicted, p, False, 0)
        ap = self.learner.predict(f)
        u, d = ap.p_unknown, ap.p_classes
        p = np.concatenate(([u], np.zeros(k), d))
        if m == 0 or u >= float(d.max()):
            predicted = UNKNOWN_LABEL
            inserted = m == 0 or u > float(d.max())
        else:
            predicted = int(self.learner.class_labels[int(np.argmax(d))])
            inserted = False
        if inserted:
            inserted = self._insert(item_id, f)
        return StepOutcome(predicted, p, inserted, 0)

    def _step_fevm(self, item_id, f: np.ndarray, in_range: bool) -> StepOutcome:
        n = self.fevm_model.n_classes
        if not in_range:  # out of the pretraining box: unknown by construction
            p = np.concatenate(([1.0], np.zeros(n)))
            return StepOutcome(UNKNOWN_LABEL, p, self._insert(item_id, f), 0)
        q = self.fevm_scorer.class_probabilities(f)
        unknown_mass = 1.0 - float(q.max())
        v = np.concatenate(([unknown_mass], q))
        p = v / v.sum()
        if int(np.argmax(p)) == 0:
            predicted = UNKNOWN_LABEL
        else:
            predicted = int(self.fevm_model.class_ids[int(np.argmax(q))])
        inserted = False
        if unknown_mass > float(q.max()):
            inserted = self._insert(item_id, f)
        return StepOutcome(predicted, p, inserted, 0)

    def _insert(self, item_id, f: np.ndarray) -> bool:
        if not self.config.learns:
            return False
        if self.config.labeled:
            truth = int(self.truth_lookup[item_id])
            if truth in self.known_set or truth in self.learned_truths:
                return False  # the granted label names a class already held
        self.buffer.insert(item_id, f)
        return True

    # -- learning ---------------------------------------------------------

    def _manage(self) -> int:
        if not self.config.learns:
            return 0
        if self.buffer.revision == self._managed_revision:
            return 0  # unchanged buffer would re-cluster identically
        self._managed_revision = self.buffer.revision
        if self.config.labeled:
            admitted = self._labeled_admission()
            truths = [t for t, _, _ in admitted]
            clusters = [(ids, x) for _, ids, x in admitted]
        else:
            raw, self.buffer = manage_step(self.buffer, self.config.manager, self.gate)
            truths = [None] * len(raw)
            clusters = [(a.item_ids, a.features) for a in raw]
        if not clusters:
            return 0
        deferred = self._learn([x for _, x in clusters])
        for i in deferred:  # no negatives yet: points go back to the buffer
            ids, x = clusters[i]
            for item_id, row in zip(ids, x):
                self.buffer.insert(item_id, row)
        learned = len(clusters) - len(deferred)
        for i, truth in enumerate(truths):
            if truth is not None and i not in deferred:
                self.learned_truths.add(truth)
        self.discovered_count += learned
        return learned

    def _labeled_admission(self) -> list[tuple[int, tuple, np.ndarray]]:
        """Ground-truth grouping of the buffer; a class is admitted once its
        group outgrows the minimum cluster size."""
        if len(self.buffer) == 0:
            return []
        truths = np.array([int(self.truth_lookup[i]) for i in self.buffer.ids])
        points = self.buffer.matrix()
        admitted, removed = [], []
        for t in np.unique(truths):
            idx = np.flatnonzero(truths == t)
            if idx.size <= self.config.manager.min_cluster_size:
                continue
            ids = tuple(self.buffer.ids[i] for i in idx)
            admitted.append((int(t), ids, points[idx]))
            removed.extend(int(i) for i in idx)
        if removed:
            self.buffer.remove(removed)
        return admitted

    def _learn(self, clusters: list[np.ndarray]) -> list[int]:
        """Teach the discovered classes; returns indices of deferred clusters."""
        if self.config.base_kind == "towl_lc":
            return self.learner.learn(clusters)
        tagged = []
        for x in clusters:
            tagged.append((self.next_discovered_id, x))
            self.next_discovered_id += 1
        self.fevm_model, self.fevm_bank, deferred = evm_increment(
            self.fevm_model, self.fevm_bank, tagged
        )
        self.fevm_scorer = EvmScorer(self.fevm_model)
        return [i for i, (cid, _) in enumerate(tagged) if cid in deferred]


def _calibrate_gate(validation: FeatureSet, manager: ManagerConfig) -> QualityGate:
    """Cluster the validation set and fit the gate with the lowest-entropy
    clusters as positives.

    Clusters are pooled over every level of the hierarchy so the calibration
    set spans tight pure clusters and loose merged ones.
    """
    hierarchy = finch_partitions(validation.vectors.astype(np.float64),
                                 metric=manager.metric)
    n_known = np.unique(validation.labels).size

    def collect(max_clusters, floor):
        stats, entropies = [], []
        for partition in hierarchy.partitions:
            if int(partition.max()) + 1 > max_clusters:
                continue
            for k in range(int(partition.max()) + 1):
                idx = np.flatnonzero(partition == k)
                if idx.size < floor:
                    continue
                stats.append(cluster_stats(validation.vectors[idx]))
                entropies.append(label_entropy(validation.labels[idx]))
        return stats, entropies

    # prefer levels coarser than the class count: those clusters are mixed,
    # so entropy actually ranks them; widen only when too few clusters exist
    candidates = []
    for max_clusters in (n_known - 1, 2 * n_known, np.inf):
        for floor in (GATE_MIN_CLUSTER, 2):
            stats, entropies = collect(max_clusters, floor)
            if len(stats) > manager.n_pos:
                candidates.append((stats, entropies))
                if np.ptp(entropies) > 0:
                    return train_quality_svm(stats, entropies, manager.n_pos)
    if candidates:
        return train_quality_svm(*candidates[0], manager.n_pos)
    raise ValueError("validation clustering yields too few clusters to calibrate the gate")


# ---------------------------------------------------------------------------
# experiment harness
# ---------------------------------------------------------------------------

def _window_inputs(truths, preds, known_set) -> OWMInputs:
    inputs = OWMInputs()
    for t, p in zip(truths, preds):
        truth_known = int(t) in known_set
        pred_known = 0 <= p < DISCOVERED_BASE
        if truth_known and pred_known:
            inputs.n_kk += 1
            inputs.kk_predicted.append(int(p))
            inputs.kk_truth.append(int(t))
        elif truth_known:
            inputs.n_ku += 1
        elif pred_known:
            inputs.n_uk += 1
        else:
            inputs.n_uu += 1
            inputs.uu_predicted.append(int(p))
            inputs.uu_truth.append(int(t))
    return inputs


def _window_record(inputs: OWMInputs) -> dict:
    return {
        "n_kk": inputs.n_kk,
        "n_ku": inputs.n_ku,
        "n_uk": inputs.n_uk,
        "n_uu": inputs.n_uu,
        "acc_kk": accuracy(inputs.kk_predicted, inputs.kk_truth) if inputs.n_kk else None,
        "b3_uu": b3_f(inputs.uu_predicted, inputs.uu_truth) if inputs.n_uu else None,
        "owm": owm(inputs),
    }


def run_single(stream_config: StreamConfig, agent_config: AgentConfig,
               geometry: BlobGeometry | None, seed: int,
               final_window_batches: int = 10) -> dict:
    """One seeded run: synthesize, calibrate, stream, score."""
    pretrain, validation, batches = synthesize_stream(stream_config, geometry, seed)
    agent = Agent(agent_config, pretrain, validation)
    if agent_config.labeled:
        agent.truth_lookup = {
            sid: int(lab)
            for batch in batches
            for sid, lab in zip(batch.source_ids, batch.labels)
        }
    batch_records = []
    window_truths: list[int] = []
    window_preds: list[int] = []
    window = min(final_window_batches, len(batches))
    for b, batch in enumerate(batches):
        truths, preds = [], []
        for sid, lab, vec in zip(batch.source_ids, batch.labels, batch.vectors):
            outcome = agent.step(sid, vec)
            truths.append(int(lab))
            preds.append(outcome.predicted)
        batch_records.append(_window_record(_window_inputs(truths, preds, agent.known_set)))
        if b >= len(batches) - window:
            window_truths.extend(truths)
            window_preds.extend(preds)
    final = _window_record(_window_inputs(window_truths, window_preds, agent.known_set))
    return {
        "seed": seed,
        "batches": batch_records,
        "final_window": final,
        "discovered_classes": agent.discovered_count,
    }


def run_experiment(stream_config: StreamConfig, agent_config: AgentConfig,
                   geometry: BlobGeometry | None = None,
                   seeds: list[int] | None = None) -> dict:
    """Run every seed and aggregate the final-window open-world scores."""
    if seeds is None:
        seeds = [stream_config.seed + i for i in range(stream_config.run_count)]
    runs = [run_single(stream_config, agent_config, geometry, s) for s in seeds]
    scores = [r["final_window"]["owm"] for r in runs]
    return {
        "stream": stream_config.to_json(),
        "geometry": (geometry or BlobGeometry()).to_json(),
        "agent": agent_config.to_json(),
        "seeds": list(seeds),
        "runs": runs,
        "owm_per_run": scores,
        "owm_mean": float(np.mean(scores)),
        "owm_std": float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    p_value: float
    degenerate: bool = False


def paired_comparison(scores_a, scores_b) -> TTestResult:
    """Two-sided paired t-test over matched score sequences."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired sequences differ in length")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = a - b
    if np.all(d == 0.0):
        return TTestResult(0.0, 1.0)
    sd = float(d.std(ddof=1))
    if sd == 0.0:  # identical nonzero differences: infinitely significant
        return TTestResult(float(np.sign(d[0]) * np.inf), 0.0, degenerate=True)
    t = float(d.mean() / (sd / np.sqrt(n)))
    p = float(2.0 * stdtr(n - 1, -abs(t)))
    return TTestResult(t, p)
