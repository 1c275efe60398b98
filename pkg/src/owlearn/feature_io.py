"""Feature-file format, loading with fusion, and synthetic stream generation.

File layout: magic ``OWLF``, u32 format version, u32 dim, u64 count, then the
float32 little-endian vector payload in row-major order. Row labels and ids
live in a ``<file>.labels.tsv`` sidecar with one ``id<TAB>label`` line per
row; lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"OWLF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")

UNLABELED = -1


@dataclass
class FeatureSet:
    """Fixed-dimension real vectors with integer labels and opaque row ids.

    Labels ride along for the scorer and validation-time calibration only;
    stream-time agents never see them.
    """

    dim: int
    vectors: np.ndarray
    labels: np.ndarray
    source_ids: list[str]

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.dim:
            raise ValueError(
                f"vectors must have shape (n, {self.dim}), got {self.vectors.shape}"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("vectors contain non-finite components")
        n = self.vectors.shape[0]
        if self.labels.shape != (n,):
            raise ValueError("labels length does not match vector count")
        if len(self.source_ids) != n:
            raise ValueError("source_ids length does not match vector count")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def subset(self, index) -> "FeatureSet":
        idx = np.asarray(index)
        return FeatureSet(
            dim=self.dim,
            vectors=self.vectors[idx],
            labels=self.labels[idx],
            source_ids=[self.source_ids[i] for i in idx],
        )


def write_features(fset: FeatureSet, destination) -> None:
    """Write a feature set to ``destination`` plus its label sidecar."""
    dest = Path(destination)
    payload = fset.vectors.astype("<f4", copy=False)
    with open(dest, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, fset.dim, len(fset)))
        fh.write(payload.tobytes(order="C"))
    lines = [f"{sid}\t{lab}" for sid, lab in zip(fset.source_ids, fset.labels)]
    sidecar_path(dest).write_text("\n".join(lines) + ("\n" if lines else ""))


def sidecar_path(path) -> Path:
    return Path(str(path) + ".labels.tsv")


def _read_sidecar(path: Path, count: int) -> tuple[list[str], np.ndarray]:
    sc = sidecar_path(path)
    if not sc.exists():
        raise FileNotFoundError(f"missing label sidecar {sc}")
    ids: list[str] = []
    labels: list[int] = []
    for line in sc.read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        sid, _, lab = line.partition("\t")
        ids.append(sid)
        labels.append(int(lab))
    if len(ids) != count:
        raise ValueError(f"sidecar {sc} has {len(ids)} rows, file has {count}")
    return ids, np.asarray(labels, dtype=np.int64)


def _load_one(path: Path) -> FeatureSet:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + 4 * dim * count
    if len(raw) != expected:
        raise ValueError(f"{path}: payload size mismatch")
    vectors = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    ids, labels = _read_sidecar(path, count)
    return FeatureSet(dim=dim, vectors=vectors.copy(), labels=labels, source_ids=ids)


def load_features(*sources) -> FeatureSet:
    """Load one file, or fuse several by per-row concatenation.

    All sources must have equal row counts; row i of each file must refer to
    the same sample. Labels are taken from the first source and must agree
    across all of them.
    """
    if len(sources) == 1 and isinstance(sources[0], (list, tuple)):
        sources = tuple(sources[0])
    if not sources:
        raise ValueError("no sources given")
    sets = [_load_one(Path(p)) for p in sources]
    first = sets[0]
    if len(sets) == 1:
        return first
    for other, src in zip(sets[1:], sources[1:]):
        if len(other) != len(first):
            raise ValueError(
                f"row count mismatch: {sources[0]} has {len(first)}, {src} has {len(other)}"
            )
        if not np.array_equal(other.labels, first.labels):
            raise ValueError(f"label disagreement between {sources[0]} and {src}")
    fused = np.concatenate([s.vectors for s in sets], axis=1)
    return FeatureSet(
        dim=fused.shape[1],
        vectors=fused,
        labels=first.labels,
        source_ids=first.source_ids,
    )


@dataclass
class StreamConfig:
    """Shape of one streaming test: class pools, batching, and seeding."""

    known_class_count: int
    unknown_class_count: int
    images_per_unknown_class: int
    batch_size: int
    batch_count: int
    run_count: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("known_class_count", "images_per_unknown_class",
                     "batch_size", "batch_count", "run_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.unknown_class_count < 0:  # zero unknowns: closed-set control
            raise ValueError("unknown_class_count must be nonnegative")
        if self.unknown_total > self.stream_total:
            raise ValueError("unknown pool exceeds the stream length")

    @property
    def stream_total(self) -> int:
        return self.batch_size * self.batch_count

    @property
    def unknown_total(self) -> int:
        return self.unknown_class_count * self.images_per_unknown_class

    @property
    def known_total(self) -> int:
        return self.stream_total - self.unknown_total

    @classmethod
    def from_json(cls, doc) -> "StreamConfig":
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        return cls(**doc)

    def to_json(self) -> dict:
        return {
            "known_class_count": self.known_class_count,
            "unknown_class_count": self.unknown_class_count,
            "images_per_unknown_class": self.images_per_unknown_class,
            "batch_size": self.batch_size,
            "batch_count": self.batch_count,
            "run_count": self.run_count,
            "seed": self.seed,
        }


@dataclass
class BlobGeometry:
    """Gaussian-blob synthesis: class means on a scaled hypersphere (or an
    explicit mean list) with isotropic within-class spread.

    ``known_pair_offset`` places known classes in close pairs around shared
    sites, so neighboring classes genuinely overlap and clusterings of
    known data contain both pure and merged clusters.
    """

    dim: int = 32
    mean_radius: float = 2.0
    spread: float = 0.1
    unknown_spread: float | None = None
    known_pair_offset: float | None = None
    pretrain_per_class: int = 100
    validation_per_class: int = 50
    means: np.ndarray | None = None

    @classmethod
    def from_json(cls, doc) -> "BlobGeometry":
        doc = dict(doc)
        if doc.get("means") is not None:
            doc["means"] = np.asarray(doc["means"], dtype=np.float64)
        return cls(**doc)

    def to_json(self) -> dict:
        out = {
            "dim": self.dim,
            "mean_radius": self.mean_radius,
            "spread": self.spread,
            "unknown_spread": self.unknown_spread,
            "known_pair_offset": self.known_pair_offset,
            "pretrain_per_class": self.pretrain_per_class,
            "validation_per_class": self.validation_per_class,
        }
        if self.means is not None:
            out["means"] = np.asarray(self.means).tolist()
        return out


def _sphere_points(count: int, dim: int, radius: float, rng) -> np.ndarray:
    raw = rng.standard_normal((count, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return raw * radius


def _class_means(geometry: BlobGeometry, n_known: int, total_classes: int,
                 rng) -> np.ndarray:
    if geometry.means is not None:
        means = np.asarray(geometry.means, dtype=np.float64)
        if means.shape[0] < total_classes:
            raise ValueError(
                f"geometry provides {means.shape[0]} means for {total_classes} classes"
            )
        return means[:total_classes]
    if geometry.known_pair_offset is None:
        return _sphere_points(total_classes, geometry.dim, geometry.mean_radius, rng)
    n_sites = (n_known + 1) // 2
    sites = _sphere_points(n_sites, geometry.dim, geometry.mean_radius, rng)
    directions = rng.standard_normal((n_sites, geometry.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    known = np.empty((n_known, geometry.dim))
    half = 0.5 * geometry.known_pair_offset
    for i in range(n_known):
        sign = 1.0 if i % 2 == 0 else -1.0
        known[i] = sites[i // 2] + sign * half * directions[i // 2]
    unknown = _sphere_points(total_classes - n_known, geometry.dim,
                             geometry.mean_radius, rng)
    return np.concatenate([known, unknown])


def _sample_class(mean, spread, count, rng) -> np.ndarray:
    return mean + spread * rng.standard_normal((count, mean.shape[0]))


def _even_split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def synthesize_stream(
    config: StreamConfig, geometry: BlobGeometry | None = None, seed: int | None = None
) -> tuple[FeatureSet, FeatureSet, list[FeatureSet]]:
    """Generate (pretrain, validation, stream batches) for one run.

    Known classes appear in all three; unknown classes only in the stream.
    The stream is a seeded uniform shuffle of the known and unknown pools,
    cut into ``batch_count`` batches. Pure function of (config, geometry,
    seed); ``seed`` defaults to ``config.seed``.
    """
    geometry = geometry or BlobGeometry()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n_known = config.known_class_count
    n_unknown = config.unknown_class_count
    means = _class_means(geometry, n_known, n_known + n_unknown, rng)
    u_spread = geometry.unknown_spread
    if u_spread is None:
        u_spread = geometry.spread

    def build(counts, class_ids, spreads, tag) -> FeatureSet:
        vecs, labels, ids = [], [], []
        for cid, count, spread in zip(class_ids, counts, spreads):
            if count == 0:
                continue
            vecs.append(_sample_class(means[cid], spread, count, rng))
            labels.extend([cid] * count)
            ids.extend(f"{tag}/c{cid}/{i}" for i in range(count))
        stacked = np.concatenate(vecs, axis=0) if vecs else np.zeros((0, geometry.dim))
        return FeatureSet(geometry.dim, stacked, np.asarray(labels), ids)

    known_ids = list(range(n_known))
    pretrain = build([geometry.pretrain_per_class] * n_known, known_ids,
                     [geometry.spread] * n_known, "pretrain")
    validation = build([geometry.validation_per_class] * n_known, known_ids,
                       [geometry.spread] * n_known, "val")

    known_counts = _even_split(config.known_total, n_known)
    unknown_ids = list(range(n_known, n_known + n_unknown))
    stream_known = build(known_counts, known_ids, [geometry.spread] * n_known, "stream")
    stream_unknown = build([config.images_per_unknown_class] * n_unknown, unknown_ids,
                           [u_spread] * n_unknown, "stream")
    pool = FeatureSet(
        geometry.dim,
        np.concatenate([stream_known.vectors, stream_unknown.vectors], axis=0),
        np.concatenate([stream_known.labels, stream_unknown.labels]),
        stream_known.source_ids + stream_unknown.source_ids,
    )
    order = rng.permutation(len(pool))
    shuffled = pool.subset(order)
    batches = [
        shuffled.subset(np.arange(b * config.batch_size, (b + 1) * config.batch_size))
        for b in range(config.batch_count)
    ]
    return pretrain, validation, batches
