"""Evaluation: NMI, DCV and wall-clock timing."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, TypeVar

import numpy as np

R = TypeVar("R")

CSV_FIELDS = ("chunk_id", "n", "k_pred", "k_true", "nmi", "dcv", "runtime_ms", "variant")


@dataclass(frozen=True)
class EvalReport:
    """Per-chunk scores. ``nmi``, ``dcv`` and ``k_true`` are None for unlabeled chunks."""

    chunk_id: int
    n: int
    k_pred: int
    runtime_ms: float | None
    nmi: float | None = None
    dcv: float | None = None
    k_true: int | None = None
    variant: str | None = None
    note: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def without_runtime(self) -> "EvalReport":
        return replace(self, runtime_ms=None)

    @classmethod
    def from_csv_row(cls, row: dict) -> "EvalReport":
        def num(key, kind):
            v = row.get(key, "")
            return None if v in ("", None) else kind(v)
        return cls(num("chunk_id", int), num("n", int), num("k_pred", int),
                   num("runtime_ms", float), num("nmi", float), num("dcv", float),
                   num("k_true", int), row.get("variant") or None)

    def csv_row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return [fmt(getattr(self, f)) for f in CSV_FIELDS]


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information normalized by the geometric mean of the two
    entropies; 0 when either labelling has a single cluster."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("need at least one object")
    n = pred.size
    _, a = np.unique(pred, return_inverse=True)
    _, b = np.unique(truth, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 or hb == 0.0:
        return 0.0
    nz = table > 0
    if nz.sum() == table.shape[0] == table.shape[1]:
        return 1.0  # same partition up to relabeling; skip rounding in the log sums
    pij = table[nz] / n
    pi = (table.sum(axis=1)[:, None] / n * np.ones_like(table))[nz]
    pj = (table.sum(axis=0)[None, :] / n * np.ones_like(table))[nz]
    mi = float((pij * np.log(pij / (pi * pj))).sum())
    return float(min(max(mi / math.sqrt(ha * hb), 0.0), 1.0))


def coefficient_of_variation(sizes) -> float:
    s = np.asarray(sizes, dtype=np.float64)
    if s.size == 0:
        raise ValueError("need at least one cluster size")
    if s.size == 1:
        return 0.0
    return float(s.std() / s.mean())


def dcv(pred_sizes, true_sizes) -> float:
    """Absolute difference of the coefficients of variation of cluster sizes."""
    return abs(coefficient_of_variation(pred_sizes) - coefficient_of_variation(true_sizes))


def cluster_sizes(labels) -> np.ndarray:
    return np.unique(np.asarray(labels), return_counts=True)[1]


def timed(action: Callable[[], R]) -> tuple[R, float]:
    """Run ``action`` and return its result with elapsed monotonic milliseconds."""
    t0 = time.perf_counter()
    out = action()
    return out, (time.perf_counter() - t0) * 1000.0


def evaluate(pred, truth=None, *, chunk_id: int = 0, runtime_ms: float = 0.0,
             variant: str | None = None) -> EvalReport:
    pred = np.asarray(pred)
    k_pred = int(np.unique(pred).size)
    if truth is None:
        return EvalReport(chunk_id, int(pred.size), k_pred, runtime_ms, variant=variant)
    truth = np.asarray(truth)
    return EvalReport(chunk_id, int(pred.size), k_pred, runtime_ms, nmi(pred, truth),
                      dcv(cluster_sizes(pred), cluster_sizes(truth)),
                      int(np.unique(truth).size), variant)
