"""Per-iteration run records and their on-disk formats.

A trace holds one init row (k=0) plus one record per iteration, with
enough state per record (iterates, duals, recovered gradients, curvature
matrices, residuals) for every diagnostic to be computed after the fact.

CSV layout is fixed so external tooling can parse traces without
bespoke code: ``k``, ``active_set`` (semicolon-joined agent indices),
then flattened vectors named ``y_0..``, ``lam_<i>_<j>`` /
``lambda_<j>``, ``x_<i>_<j>``, ``g_<i>_<j>``, the residual columns, and
any extra scalar columns in sorted order. Floats are written with
``repr`` so re-running a config reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConsensusRecord",
    "ResourceRecord",
    "IterationTrace",
    "trace_max_deviation",
    "truncated",
]


@dataclass
class ConsensusRecord:
    """State after one consensus-engine iteration (k=0 is the init row)."""

    k: int
    active: tuple[int, ...] | None
    y: np.ndarray
    x: list[np.ndarray]
    g: list[np.ndarray]
    lambdas: list[np.ndarray]
    B: list[np.ndarray]
    primal_residual: float
    dual_sum_residual: float
    extras: dict[str, float] = field(default_factory=dict)


@dataclass
class ResourceRecord:
    """State after one resource-engine iteration (k=0 is the init row)."""

    k: int
    active: tuple[int, ...] | None
    lam: np.ndarray
    y_locals: list[np.ndarray]
    x: list[np.ndarray]
    g: list[np.ndarray]
    B: list[np.ndarray]
    feasibility_residual: float
    stationarity_residual: float
    extras: dict[str, float] = field(default_factory=dict)


def _flat_columns(prefix: str, vectors: list[np.ndarray]) -> list[tuple[str, float]]:
    cols = []
    for i, v in enumerate(vectors):
        for j, val in enumerate(np.atleast_1d(v)):
            cols.append((f"{prefix}_{i}_{j}", float(val)))
    return cols


def _vector_columns(prefix: str, v: np.ndarray) -> list[tuple[str, float]]:
    return [(f"{prefix}_{j}", float(val)) for j, val in enumerate(np.atleast_1d(v))]


class IterationTrace:
    """Ordered record list plus the metadata needed to reproduce the run."""

    def __init__(self, metadata: dict | None = None):
        self.metadata = dict(metadata or {})
        self.records: list = []

    def append(self, record) -> None:
        expected = 0 if not self.records else self.records[-1].k + 1
        if record.k != expected:
            raise ValueError(f"non-contiguous iteration index {record.k}, expected {expected}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def active_sets(self) -> list:
        return [r.active for r in self.records if r.active is not None]

    @property
    def final(self):
        return self.records[-1]

    def _row(self, rec) -> dict[str, float | int | str]:
        row: dict[str, float | int | str] = {
            "k": rec.k,
            "active_set": "" if rec.active is None else ";".join(str(i) for i in rec.active),
        }
        if isinstance(rec, ConsensusRecord):
            cols = (
                _vector_columns("y", rec.y)
                + _flat_columns("lam", rec.lambdas)
                + _flat_columns("x", rec.x)
                + _flat_columns("g", rec.g)
            )
            row.update(cols)
            row["primal_residual"] = rec.primal_residual
            row["dual_sum_residual"] = rec.dual_sum_residual
        else:
            cols = (
                _vector_columns("lambda", rec.lam)
                + _flat_columns("y", rec.y_locals)
                + _flat_columns("x", rec.x)
                + _flat_columns("g", rec.g)
            )
            row.update(cols)
            row["feasibility_residual"] = rec.feasibility_residual
            row["stationarity_residual"] = rec.stationarity_residual
        for key in sorted(rec.extras):
            row[key] = rec.extras[key]
        return row

    def to_rows(self) -> list[dict]:
        return [self._row(r) for r in self.records]

    def write_csv(self, path) -> None:
        rows = self.to_rows()
        fieldnames: list[str] = []
        for row in rows:
            for key in row:
                if key not in fieldnames:
                    fieldnames.append(key)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames, restval="")
            writer.writeheader()
            for row in rows:
                writer.writerow(
                    {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
                )

    def summary(self) -> dict:
        rec = self.final
        out = {"metadata": self.metadata, "iterations": rec.k}
        if isinstance(rec, ConsensusRecord):
            out["final"] = {
                "y": np.atleast_1d(rec.y).tolist(),
                "lambdas": [np.atleast_1d(l).tolist() for l in rec.lambdas],
                "primal_residual": rec.primal_residual,
                "dual_sum_residual": rec.dual_sum_residual,
            }
        else:
            out["final"] = {
                "lambda": np.atleast_1d(rec.lam).tolist(),
                "y_locals": [np.atleast_1d(y).tolist() for y in rec.y_locals],
                "feasibility_residual": rec.feasibility_residual,
                "stationarity_residual": rec.stationarity_residual,
            }
        out["final"]["extras"] = dict(rec.extras)
        return out

    def write_summary(self, path, extra: dict | None = None) -> None:
        payload = self.summary()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def trace_max_deviation(a: IterationTrace, b: IterationTrace) -> float:
    """Largest elementwise gap between two traces' iterates, duals, and gradients.

    Used by the reduction checks: a p=1 run must match a dedicated
    full-participation run exactly, record for record.
    """
    if len(a) != len(b):
        raise ValueError(f"trace lengths differ: {len(a)} vs {len(b)}")
    worst = 0.0
    for ra, rb in zip(a.records, b.records):
        if type(ra) is not type(rb):
            raise ValueError("cannot compare traces from different engines")
        pieces: list[tuple[np.ndarray, np.ndarray]] = []
        if isinstance(ra, ConsensusRecord):
            pieces.append((ra.y, rb.y))
            pieces.extend(zip(ra.lambdas, rb.lambdas))
        else:
            pieces.append((ra.lam, rb.lam))
            pieces.extend(zip(ra.y_locals, rb.y_locals))
        pieces.extend(zip(ra.x, rb.x))
        pieces.extend(zip(ra.g, rb.g))
        for va, vb in pieces:
            gap = float(np.max(np.abs(np.asarray(va) - np.asarray(vb))))
            worst = max(worst, gap)
    return worst
