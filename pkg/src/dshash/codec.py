"""Trained hash model, out-of-sample encoding and bit-level code storage.

Model file layout (all integers unsigned 64-bit little-endian, all reals
IEEE-754 float64 little-endian, matrices row-major)::

    b"DSH1"            magic
    u64 version        currently 1
    u64 r              code length
    u64 v              number of modalities
    v times:
        u64 d          raw feature dimension
        u64 M          anchor count
        f64 sigma      kernel width
        f64[d]         centering mean
        f64[d, M]      anchors (columns are anchor points)
        f64[r, M]      projection
    f64[v]             modality weights alpha
    u64 k              byte length of metadata
    u8[k]              metadata as UTF-8 JSON (sorted keys)
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ModelFormatError
from .kernel import KernelMap, kernel_features

MAGIC = b"DSH1"
VERSION = 1
WORD_BITS = 64


@dataclass
class ModalityRecord:
    projection: np.ndarray
    kernel_map: KernelMap
    mean: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class HashModel:
    r: int
    modalities: list
    alpha: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for m, rec in enumerate(self.modalities):
            M = rec.kernel_map.n_anchors
            if rec.projection.shape != (self.r, M):
                raise InvalidArgumentError(
                    f"modality {m}: projection shape {rec.projection.shape} != ({self.r}, {M})"
                )
            if rec.mean.shape != (rec.kernel_map.dim,):
                raise InvalidArgumentError(f"modality {m}: mean length does not match anchors")
        if len(self.alpha) != len(self.modalities):
            raise InvalidArgumentError("alpha needs one weight per modality")

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    def __eq__(self, other):
        if not isinstance(other, HashModel):
            return NotImplemented
        if (self.r, self.n_modalities, self.metadata) != (other.r, other.n_modalities, other.metadata):
            return False
        if not np.array_equal(self.alpha, other.alpha):
            return False
        for a, b in zip(self.modalities, other.modalities):
            if not (
                np.array_equal(a.projection, b.projection)
                and np.array_equal(a.mean, b.mean)
                and np.array_equal(a.kernel_map.anchors, b.kernel_map.anchors)
                and a.kernel_map.sigma == b.kernel_map.sigma
            ):
                return False
        return True


def _record(model: HashModel, m: int) -> ModalityRecord:
    if not 0 <= m < model.n_modalities:
        raise InvalidArgumentError(f"unknown modality index {m} (model has {model.n_modalities})")
    return model.modalities[m]


def project(model: HashModel, X, m: int) -> np.ndarray:
    """Real-valued projection ``P[m] kappa(X - mean)`` of raw ``(d, n)`` features."""
    rec = _record(model, m)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != rec.dim:
        raise InvalidArgumentError(
            f"modality {m} expects {rec.dim} features, got {X.shape[0]}"
        )
    return rec.projection @ kernel_features(rec.kernel_map, X - rec.mean[:, None])


def encode_batch(model: HashModel, X, m: int) -> np.ndarray:
    """``(r, n)`` matrix of +/-1 codes for the columns of ``X``."""
    return np.where(project(model, X, m) >= 0, 1, -1).astype(np.int8)


def encode(model: HashModel, x, m: int) -> np.ndarray:
    """Length-``r`` +/-1 code of a single raw feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError("encode expects a single feature vector; use encode_batch")
    return encode_batch(model, x, m)[:, 0]


def n_words(r: int) -> int:
    return (r + WORD_BITS - 1) // WORD_BITS


def pack(codes) -> np.ndarray:
    """Pack +/-1 codes into uint64 words, bit 1 meaning +1.

    A 1-D code of length r gives ``ceil(r/64)`` words; an ``(r, n)`` code
    matrix gives an ``(n, ceil(r/64))`` array (one row per sample). Bit ``j``
    of word ``w`` holds code index ``64 w + j``.
    """
    codes = np.asarray(codes)
    single = codes.ndim == 1
    if single:
        codes = codes[:, None]
    r, n = codes.shape
    bits = np.zeros((n, n_words(r) * WORD_BITS), dtype=np.uint8)
    bits[:, :r] = (codes.T > 0)
    packed = np.packbits(bits, axis=1, bitorder="little").view("<u8")
    return packed[0] if single else packed


def unpack(packed, r: int) -> np.ndarray:
    """Inverse of :func:`pack`; returns int8 codes in +/-1."""
    packed = np.ascontiguousarray(packed, dtype="<u8")
    single = packed.ndim == 1
    if single:
        packed = packed[None, :]
    if packed.shape[1] != n_words(r):
        raise InvalidArgumentError(
            f"{packed.shape[1]} words cannot hold exactly r={r} bits (need {n_words(r)})"
        )
    bits = np.unpackbits(packed.view(np.uint8), axis=1, bitorder="little")[:, :r]
    codes = (bits.astype(np.int8) * 2 - 1).T
    return codes[:, 0] if single else codes


def hamming_distances(query_packed, db_packed) -> np.ndarray:
    """Popcount distances between packed queries ``(q, w)`` and db ``(n, w)``.

    A 1-D query returns a length-``n`` vector.
    """
    q = np.asarray(query_packed, dtype=np.uint64)
    db = np.asarray(db_packed, dtype=np.uint64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.shape[1] != db.shape[1]:
        raise InvalidArgumentError("query and database codes have different word counts")
    dist = np.zeros((q.shape[0], db.shape[0]), dtype=np.int64)
    for w in range(q.shape[1]):
        dist += np.bitwise_count(q[:, w, None] ^ db[None, :, w])
    return dist[0] if single else dist


# -- serialization ----------------------------------------------------------


def _write_u64(fh, *values):
    fh.write(struct.pack(f"<{len(values)}Q", *values))


def _write_f64(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def dumps_model(model: HashModel) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    _write_u64(fh, VERSION, model.r, model.n_modalities)
    for rec in model.modalities:
        d, M = rec.kernel_map.anchors.shape
        _write_u64(fh, d, M)
        _write_f64(fh, [rec.kernel_map.sigma])
        _write_f64(fh, rec.mean)
        _write_f64(fh, rec.kernel_map.anchors)
        _write_f64(fh, rec.projection)
    _write_f64(fh, model.alpha)
    meta = json.dumps(model.metadata, sort_keys=True).encode("utf-8")
    _write_u64(fh, len(meta))
    fh.write(meta)
    return fh.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if size < 0 or self.pos + size > len(self.data):
            raise ModelFormatError("model file is truncated")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u64(self, count: int = 1):
        values = struct.unpack(f"<{count}Q", self.take(8 * count))
        return values[0] if count == 1 else values

    def f64(self, *shape) -> np.ndarray:
        size = int(np.prod(shape))
        return np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)


def loads_model(data: bytes) -> HashModel:
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise ModelFormatError("bad magic: not a DSH1 model file")
    version, r, v = rd.u64(3)
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version} (expected {VERSION})")
    records = []
    for m in range(v):
        d, M = rd.u64(2)
        sigma = float(rd.f64(1)[0])
        mean = rd.f64(d)
        anchors = rd.f64(d, M)
        projection = rd.f64(r, M)
        records.append(ModalityRecord(projection, KernelMap(anchors, sigma, m), mean))
    alpha = rd.f64(v)
    meta_len = rd.u64()
    try:
        metadata = json.loads(rd.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("model metadata is not valid JSON") from exc
    if rd.pos != len(data):
        raise ModelFormatError("trailing bytes after model payload")
    return HashModel(r=r, modalities=records, alpha=alpha, metadata=metadata)


def save_model(model: HashModel, path) -> None:
    Path(path).write_bytes(dumps_model(model))


def load_model(path) -> HashModel:
    return loads_model(Path(path).read_bytes())
