"""Hamming ranking and mean average precision for cross-modal tasks."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .codec import HashModel, encode_batch, hamming_distances, pack
from .errors import InvalidArgumentError


class Task(str, Enum):
    I2T = "I2T"
    T2I = "T2I"

    @property
    def modalities(self) -> tuple[int, int]:
        """(query modality, database modality) with image = 0, text = 1."""
        return (0, 1) if self is Task.I2T else (1, 0)


@dataclass
class QuerySet:
    codes: np.ndarray
    labels: np.ndarray
    task: Task = Task.I2T


@dataclass
class APResult:
    ap: np.ndarray
    map: float
    R: int


def hamming_rank(query_code, db_codes) -> np.ndarray:
    """Database indices by ascending Hamming distance, ties by index.

    ``query_code`` is a length-r +/-1 vector, ``db_codes`` an ``(r, n)`` matrix.
    """
    query_code = np.asarray(query_code)
    db_codes = np.asarray(db_codes)
    if query_code.shape[0] != db_codes.shape[0]:
        raise InvalidArgumentError(
            f"query has {query_code.shape[0]} bits, database has {db_codes.shape[0]}"
        )
    dist = hamming_distances(pack(query_code), pack(db_codes))
    return np.argsort(dist, kind="stable")


def average_precision(relevant, R: Optional[int] = None) -> float:
    """AP over the top ``R`` positions of a ranked list of 0/1 relevance flags.

    Normalized by the number of relevant items inside the cutoff; 0 when none.
    """
    rel = np.asarray(relevant, dtype=bool)
    if R is None:
        R = rel.shape[0]
    if not 0 < R <= rel.shape[0]:
        raise InvalidArgumentError(f"cutoff R={R} must lie in [1, {rel.shape[0]}]")
    rel = rel[:R]
    hits = np.cumsum(rel)
    if hits[-1] == 0:
        return 0.0
    positions = np.flatnonzero(rel) + 1
    # sequential accumulation, so results do not depend on summation blocking
    return float(np.cumsum(hits[rel] / positions)[-1] / hits[-1])


def relevance(query_labels, db_labels) -> np.ndarray:
    """``(q, n)`` boolean matrix: item shares at least one category with query."""
    return (np.asarray(query_labels).T @ np.asarray(db_labels)) > 0


def mean_ap(queries: QuerySet, db_codes, db_labels, R: Optional[int] = None) -> APResult:
    qcodes = np.asarray(queries.codes)
    db_codes = np.asarray(db_codes)
    if qcodes.shape[0] != db_codes.shape[0]:
        raise InvalidArgumentError("query and database code lengths differ")
    db_labels = np.asarray(db_labels)
    if db_labels.shape[1] != db_codes.shape[1]:
        raise InvalidArgumentError("database labels and codes disagree on n")
    if np.asarray(queries.labels).shape[1] != qcodes.shape[1]:
        raise InvalidArgumentError("query labels and codes disagree on n")
    n_db = db_codes.shape[1]
    R = n_db if R is None else R
    if not 0 < R <= n_db:
        raise InvalidArgumentError(f"cutoff R={R} must lie in [1, {n_db}]")

    dist = hamming_distances(pack(qcodes), pack(db_codes))
    order = np.argsort(dist, axis=1, kind="stable")[:, :R]
    rel = np.take_along_axis(relevance(queries.labels, db_labels), order, axis=1)

    hits = np.cumsum(rel, axis=1)
    precision = hits / np.arange(1, R + 1)
    n_rel = hits[:, -1]
    total = np.cumsum(precision * rel, axis=1)[:, -1]
    ap = np.divide(total, n_rel, out=np.zeros_like(total), where=n_rel > 0)
    return APResult(ap=ap, map=float(ap.mean()) if ap.size else 0.0, R=R)


def evaluate(model: HashModel, query_X, query_labels, db_X, db_labels,
             tasks=(Task.I2T, Task.T2I), R: Optional[int] = None) -> dict:
    """MAP of each cross-modal task; ``query_X``/``db_X`` hold one matrix per modality.

    Database items are encoded with the database modality's hash function.
    """
    out = {}
    for task in tasks:
        task = Task(task)
        qm, dm = task.modalities
        queries = QuerySet(encode_batch(model, query_X[qm], qm), query_labels, task)
        db_codes = encode_batch(model, db_X[dm], dm)
        out[task] = mean_ap(queries, db_codes, db_labels, R)
    return out


def format_table(results: dict, fmt: str = "text", title: Optional[str] = None) -> str:
    """Render ``{(task, bits): map}`` as a task x code-length table."""
    results = {(getattr(t, "value", t), int(b)): v for (t, b), v in results.items()}
    tasks = [t.value for t in Task if any(k[0] == t.value for k in results)]
    bits = sorted({b for _, b in results})
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["task"] + [str(b) for b in bits])
        for t in tasks:
            writer.writerow([t] + [f"{results[(t, b)]:.4f}" if (t, b) in results else "" for b in bits])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(
            [{"task": t, "bits": b, "map": results[(t, b)]} for t in tasks for b in bits if (t, b) in results],
            indent=2,
        ) + "\n"
    if fmt != "text":
        raise InvalidArgumentError(f"unknown report format {fmt!r}")
    lines = []
    if title:
        lines.append(title)
    lines.append("Task\t" + "\t".join(str(b) for b in bits))
    for t in tasks:
        lines.append(t + "\t" + "\t".join(
            f"{results[(t, b)]:.4f}" if (t, b) in results else "-" for b in bits
        ))
    return "\n".join(lines) + "\n"
