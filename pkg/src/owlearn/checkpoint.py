"""Versioned binary serialization of learner and model states.

Blob layout: magic ``OWLS``, u16 version, tagged module name, a JSON scalar
section, then named numpy arrays. A checkpoint file is a sequence of named
blobs, so one file can carry a head, a detector, and a model together.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .evm import EvmConfig, EvmModel, ExtremeVector, FeatureBank, WeibullParams
from .learners import (
    CbclClass,
    CbclState,
    GmmState,
    NcmState,
    NnoState,
    ScailInsertStats,
    ScailState,
)

MAGIC = b"OWLS"
VERSION = 1


def _pack_bytes(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def _unpack_bytes(buf: memoryview, offset: int) -> tuple[bytes, int]:
    (n,) = struct.unpack_from("<I", buf, offset)
    start = offset + 4
    return bytes(buf[start:start + n]), start + n


def _encode(tag: str, scalars: dict, arrays: dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", VERSION))
    out.write(_pack_bytes(tag.encode()))
    out.write(_pack_bytes(json.dumps(scalars, sort_keys=True).encode()))
    out.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        out.write(_pack_bytes(name.encode()))
        payload = io.BytesIO()
        np.save(payload, np.ascontiguousarray(arr), allow_pickle=False)
        out.write(_pack_bytes(payload.getvalue()))
    return out.getvalue()


def _decode(blob: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    buf = memoryview(blob)
    if bytes(buf[:4]) != MAGIC:
        raise ValueError("bad state blob magic")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported state blob version {version}")
    tag_b, offset = _unpack_bytes(buf, 6)
    scalars_b, offset = _unpack_bytes(buf, offset)
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_b, offset = _unpack_bytes(buf, offset)
        payload, offset = _unpack_bytes(buf, offset)
        arrays[name_b.decode()] = np.load(io.BytesIO(payload), allow_pickle=False)
    return tag_b.decode(), json.loads(scalars_b.decode()), arrays


def state_to_blob(state) -> bytes:
    if isinstance(state, NcmState):
        arrays = {"class_ids": np.asarray(state.class_ids, dtype=np.int64)}
        if state.means is not None:
            arrays["means"] = state.means
        return _encode("ncm", {"dim": state.dim}, arrays)
    if isinstance(state, NnoState):
        scalars = {"dim": state.dim, "rank": state.rank, "scale": state.scale}
        arrays = {"class_ids": np.asarray(state.class_ids, dtype=np.int64)}
        if state.means is not None:
            arrays["means"] = state.means
        if state.metric is not None:
            arrays["metric"] = state.metric
        return _encode("nno", scalars, arrays)
    if isinstance(state, GmmState):
        scalars = {"dim": state.dim, "scale": state.scale, "det_floor": state.det_floor,
                   "counts": list(state.counts)}
        arrays = {"class_ids": np.asarray(state.class_ids, dtype=np.int64)}
        if state.means is not None:
            arrays["means"] = state.means
            arrays["covariances"] = state.covariances
            arrays["inverses"] = state.inverses
        return _encode("gmm", scalars, arrays)
    if isinstance(state, CbclState):
        scalars = {"dim": state.dim, "distance_threshold": state.distance_threshold,
                   "top_k": state.top_k}
        arrays = {"class_ids": np.asarray(list(state.classes), dtype=np.int64)}
        for cid, cls in state.classes.items():
            arrays[f"c{cid}_centroids"] = cls.centroids
            arrays[f"c{cid}_counts"] = cls.counts
        return _encode("cbcl", scalars, arrays)
    if isinstance(state, ScailState):
        scalars = {"dim": state.dim, "buffer_cap": state.buffer_cap}
        arrays = {"class_ids": np.asarray(state.class_ids, dtype=np.int64)}
        if state.weights is not None:
            arrays["weights"] = state.weights
            arrays["biases"] = state.biases
        for cid, stats in state.insert_stats.items():
            arrays[f"c{cid}_stat_w"] = stats.weight
            arrays[f"c{cid}_stat_b"] = np.asarray([stats.bias])
        for cid, buf in state.play_buffer.items():
            arrays[f"c{cid}_buffer"] = buf
        return _encode("scail", scalars, arrays)
    if isinstance(state, EvmModel):
        scalars = {"dim": state.dim, "config": state.config.to_json()}
        arrays = {"class_ids": np.asarray(state.class_ids, dtype=np.int64)}
        for cid in state.class_ids:
            evs = state.extreme_vectors[cid]
            arrays[f"c{cid}_anchors"] = np.stack([ev.anchor for ev in evs])
            arrays[f"c{cid}_shapes"] = np.asarray([ev.weibull.shape for ev in evs])
            arrays[f"c{cid}_scales"] = np.asarray([ev.weibull.scale for ev in evs])
        return _encode("evm", scalars, arrays)
    if isinstance(state, FeatureBank):
        return _encode("bank", {"dim": state.dim},
                       {"features": state.features, "labels": state.labels})
    raise TypeError(f"cannot serialize state of type {type(state).__name__}")


def state_from_blob(blob: bytes):
    tag, scalars, arrays = _decode(blob)
    ids = tuple(int(i) for i in arrays.get("class_ids", []))
    if tag == "ncm":
        return NcmState(dim=scalars["dim"], class_ids=ids, means=arrays.get("means"))
    if tag == "nno":
        return NnoState(dim=scalars["dim"], rank=scalars["rank"], scale=scalars["scale"],
                        class_ids=ids, means=arrays.get("means"),
                        metric=arrays.get("metric"))
    if tag == "gmm":
        return GmmState(dim=scalars["dim"], scale=scalars["scale"],
                        det_floor=scalars["det_floor"], class_ids=ids,
                        means=arrays.get("means"), covariances=arrays.get("covariances"),
                        inverses=arrays.get("inverses"),
                        counts=tuple(scalars["counts"]))
    if tag == "cbcl":
        classes = {
            cid: CbclClass(arrays[f"c{cid}_centroids"], arrays[f"c{cid}_counts"])
            for cid in ids
        }
        return CbclState(dim=scalars["dim"],
                         distance_threshold=scalars["distance_threshold"],
                         top_k=scalars["top_k"], classes=classes)
    if tag == "scail":
        stats = {
            cid: ScailInsertStats(arrays[f"c{cid}_stat_w"],
                                  float(arrays[f"c{cid}_stat_b"][0]))
            for cid in ids if f"c{cid}_stat_w" in arrays
        }
        buffers = {cid: arrays[f"c{cid}_buffer"] for cid in ids
                   if f"c{cid}_buffer" in arrays}
        return ScailState(dim=scalars["dim"], buffer_cap=scalars["buffer_cap"],
                          class_ids=ids, weights=arrays.get("weights"),
                          biases=arrays.get("biases"), insert_stats=stats,
                          play_buffer=buffers)
    if tag == "evm":
        evs = {
            cid: [
                ExtremeVector(anchor, WeibullParams(float(shape), float(scale)), cid)
                for anchor, shape, scale in zip(
                    arrays[f"c{cid}_anchors"], arrays[f"c{cid}_shapes"],
                    arrays[f"c{cid}_scales"])
            ]
            for cid in ids
        }
        return EvmModel(dim=scalars["dim"], config=EvmConfig(**scalars["config"]),
                        class_ids=ids, extreme_vectors=evs)
    if tag == "bank":
        return FeatureBank(scalars["dim"], arrays["features"], arrays["labels"])
    raise ValueError(f"unknown state tag {tag!r}")


def save_checkpoint(path, states: dict[str, object]) -> None:
    """Write named state blobs to one checkpoint file."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(states)))
        for name, state in states.items():
            fh.write(_pack_bytes(name.encode()))
            fh.write(_pack_bytes(state_to_blob(state)))


def load_checkpoint(path) -> dict[str, object]:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = memoryview(raw)
    if bytes(buf[:4]) != MAGIC:
        raise ValueError("bad checkpoint magic")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 10
    out: dict[str, object] = {}
    for _ in range(count):
        name_b, offset = _unpack_bytes(buf, offset)
        blob, offset = _unpack_bytes(buf, offset)
        out[name_b.decode()] = state_from_blob(blob)
    return out
