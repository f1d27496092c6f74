"""Endpoint metrics (minFDE, miss rate) and transfer metrics over the stage-by-task result matrix.

Stage numbers ``c`` passed to :func:`bwt`, :func:`ct` and :func:`fwt` are
1-based: stage ``c`` is the model after training on the ``c``-th task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LATERAL_THRESHOLD = 1.0  # meters
MATRIX_SCHEMA = "syrem-result-matrix"
MATRIX_VERSION = 1


def fde_case(pred, gt) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    return float(np.min(np.hypot(*(pred - np.asarray(gt, dtype=float)).T)))


def mr_threshold(v):
    """Longitudinal miss threshold in meters for target speed ``v`` (m/s)."""
    v = np.asarray(v, dtype=float)
    th = np.clip(1.0 + (v - 1.4) / (11.0 - 1.4), 1.0, 2.0)
    return float(th) if th.ndim == 0 else th


def mr_case(pred, gt, heading_unit, v) -> float:
    """Percentage of predicted endpoints outside the lateral/longitudinal box around ``gt``."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    err = pred - np.asarray(gt, dtype=float)
    u = np.asarray(heading_unit, dtype=float)
    lon = err @ u
    lat = err @ np.array([-u[1], u[0]])
    out = (np.abs(lat) > LATERAL_THRESHOLD) | (np.abs(lon) > mr_threshold(v))
    return 100.0 * out.sum() / len(pred)


def case_metrics(preds, samples) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised per-case minFDE and MR for predictions (n, W, 2) against ``samples``."""
    preds = np.asarray(preds, dtype=float)
    gt = np.stack([s.gt_endpoint for s in samples])
    u = np.stack([s.heading_unit for s in samples])
    v = np.array([s.ta_speed for s in samples])
    err = preds - gt[:, None, :]
    fde = np.hypot(err[..., 0], err[..., 1]).min(axis=1)
    lon = np.einsum("nwk,nk->nw", err, u)
    lat = err[..., 1] * u[:, None, 0] - err[..., 0] * u[:, None, 1]
    out = (np.abs(lat) > LATERAL_THRESHOLD) | (np.abs(lon) > mr_threshold(v)[:, None])
    mr = 100.0 * out.sum(axis=1) / preds.shape[1]
    return fde, mr


def evaluate(predict, samples) -> tuple[float, float]:
    """Mean (minFDE, MR) of ``predict`` (features (n, d) -> endpoints (n, W, 2)) over ``samples``."""
    if not samples:
        raise ValueError("cannot evaluate on an empty test set")
    X = np.stack([s.features for s in samples])
    fde, mr = case_metrics(predict(X), samples)
    return float(fde.mean()), float(mr.mean())


def joint_test(predict, union_test) -> tuple[float, float]:
    """Mean metrics over the union of all tasks' test sets."""
    return evaluate(predict, union_test)


@dataclass
class ResultMatrix:
    """``fde[i, j]`` / ``mr[i, j]``: test metrics on task ``j`` after training stage ``i`` (0-based arrays)."""

    n_tasks: int
    fde: np.ndarray = None
    mr: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.n_tasks, self.n_tasks)
        self.fde = np.full(shape, np.nan) if self.fde is None else np.asarray(self.fde, dtype=float)
        self.mr = np.full(shape, np.nan) if self.mr is None else np.asarray(self.mr, dtype=float)
        if self.fde.shape != shape or self.mr.shape != shape:
            raise ValueError(f"result grids must be {shape}")

    def fill_row(self, stage: int, fde_row, mr_row) -> None:
        self.fde[stage - 1] = fde_row
        self.mr[stage - 1] = mr_row

    def rows_filled(self) -> int:
        return int(np.sum(np.all(np.isfinite(self.fde), axis=1)))

    def to_dict(self) -> dict:
        def grid(a):
            return [[None if not np.isfinite(x) else float(x) for x in row] for row in a]
        return {"schema": MATRIX_SCHEMA, "version": MATRIX_VERSION, "n_tasks": self.n_tasks,
                "fde": grid(self.fde), "mr": grid(self.mr), "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultMatrix":
        if d.get("schema") != MATRIX_SCHEMA or d.get("version") != MATRIX_VERSION:
            raise ValueError(f"unsupported result matrix schema {d.get('schema')!r} v{d.get('version')}")

        def grid(rows):
            return np.array([[np.nan if x is None else x for x in row] for row in rows], dtype=float)
        return cls(d["n_tasks"], grid(d["fde"]), grid(d["mr"]), d.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ResultMatrix":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_stage(matrix: ResultMatrix, c: int):
    if not 1 <= c <= matrix.n_tasks:
        raise ValueError(f"stage {c} outside 1..{matrix.n_tasks}")


def bwt(matrix: ResultMatrix, c: int) -> tuple[float, float]:
    """Mean change on earlier tasks between learning them and stage ``c``; positive means forgetting."""
    _check_stage(matrix, c)
    if c < 2:
        raise ValueError("backward transfer needs at least two learned tasks (c >= 2)")
    i = np.arange(c - 1)
    return (float(np.mean(matrix.fde[c - 1, i] - matrix.fde[i, i])),
            float(np.mean(matrix.mr[c - 1, i] - matrix.mr[i, i])))


def ct(matrix: ResultMatrix, c: int) -> tuple[float, float]:
    _check_stage(matrix, c)
    return float(matrix.fde[c - 1, c - 1]), float(matrix.mr[c - 1, c - 1])


def fwt(matrix: ResultMatrix, c: int, n_tasks: int | None = None) -> tuple[float, float]:
    """Mean metrics on the not-yet-seen tasks ``c+1..N`` at stage ``c``."""
    n = matrix.n_tasks if n_tasks is None else n_tasks
    _check_stage(matrix, c)
    if c >= n:
        raise ValueError(f"forward transfer needs unseen tasks (c <= {n - 1}), got c={c}")
    return (float(np.mean(matrix.fde[c - 1, c:n])), float(np.mean(matrix.mr[c - 1, c:n])))
