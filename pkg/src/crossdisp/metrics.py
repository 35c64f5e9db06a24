"""Point-wise and distributional RMSE metrics, success rate, and the CSV report."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

CSV_COLUMNS = ("regime", "variant", "metric", "value", "n", "seed")


def rmse(pred, gt) -> float:
    """Root mean over points of the squared Euclidean distance between corresponding points."""
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"rmse: shape mismatch {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("rmse: empty clouds")
    return float(np.sqrt(((pred - gt) ** 2).sum(axis=-1).mean()))


def coverage_rmse(gts: Sequence, preds: Sequence[Sequence]) -> float:
    """Mean over ground truths of the best RMSE among that ground truth's own predictions.

    ``preds[i]`` holds the samples conditioned on the input of ``gts[i]``.
    """
    if len(gts) != len(preds):
        raise ValueError(f"coverage_rmse: {len(gts)} ground truths but {len(preds)} prediction sets")
    if not gts:
        raise ValueError("coverage_rmse: no ground truths")
    best = []
    for gt, ps in zip(gts, preds):
        if len(ps) == 0:
            raise ValueError("coverage_rmse: empty prediction set")
        best.append(min(rmse(p, gt) for p in ps))
    return float(np.mean(best))


def precision_rmse(refs: Mapping | Sequence, preds: Mapping | Sequence) -> float:
    """Per cloth, mean over predictions of the best RMSE to that cloth's references; then mean over cloths.

    ``refs[c]`` is the reference set of cloth ``c`` and ``preds[c]`` all
    predictions conditioned on that cloth (pooled over its modes and inputs).
    """
    keys = list(refs.keys()) if isinstance(refs, Mapping) else list(range(len(refs)))
    if not keys:
        raise ValueError("precision_rmse: no cloths")
    per_cloth = []
    for c in keys:
        rs, ps = refs[c], preds[c]
        if len(rs) == 0:
            raise ValueError(f"precision_rmse: empty reference set for cloth {c}")
        if len(ps) == 0:
            raise ValueError(f"precision_rmse: no predictions for cloth {c}")
        per_cloth.append(np.mean([min(rmse(p, r) for r in rs) for p in ps]))
    return float(np.mean(per_cloth))


def success_rate(results: Iterable) -> float:
    """Fraction of episodes with ``success`` set (accepts results or plain booleans)."""
    flags = [bool(getattr(r, "success", r)) for r in results]
    if not flags:
        raise ValueError("success_rate: no results")
    return sum(flags) / len(flags)


@dataclass(frozen=True)
class MetricRow:
    regime: str
    variant: str
    metric: str
    value: float
    n: int
    seed: int


def format_csv(rows: Iterable[MetricRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.regime, r.variant, r.metric, repr(float(r.value)), int(r.n), int(r.seed)])
    return buf.getvalue()


def write_csv(rows: Iterable[MetricRow], path) -> None:
    with open(path, "w", newline="") as f:
        f.write(format_csv(rows))


def read_csv(path) -> list[MetricRow]:
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected metrics columns {rd.fieldnames}")
        return [MetricRow(r["regime"], r["variant"], r["metric"], float(r["value"]), int(r["n"]), int(r["seed"])) for r in rd]
