"""Detection and occlusion-prediction metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dataio import SampleRecord

DEFAULT_CED_THRESHOLDS = np.round(np.arange(0.0, 0.3001, 0.01), 4)


def normalizer_length(record: SampleRecord, normalizer: str | None = None) -> float:
    """Inter-ocular distance, or half the eye-corner to mouth-corner distance for profiles."""
    kind = normalizer or record.normalizer_kind
    i, j = record.normalizer
    if not (record.mask[i] and record.mask[j]):
        raise ValueError(f"record {record.id}: normalizer landmarks {i}, {j} are not annotated")
    dist = float(np.linalg.norm(record.landmarks[i] - record.landmarks[j]))
    if kind == "profile":
        dist *= 0.5
    elif kind != "inter-ocular":
        raise ValueError(f"unknown normalizer {kind!r}")
    if dist <= 0:
        raise ValueError(f"record {record.id}: degenerate normalizer length")
    return dist


def normalized_error(pred, record: SampleRecord, normalizer: str | None = None,
                     subset: str = "all") -> float:
    """Mean point-to-point error over annotated landmarks divided by the normalizer length.

    ``subset="visible"`` restricts the mean to annotated landmarks labeled
    visible; NaN is returned when that set is empty.
    """
    pred = np.asarray(pred, dtype=float)
    keep = record.mask.astype(bool)
    if subset == "visible":
        keep &= record.occlusion.astype(bool)
    elif subset != "all":
        raise ValueError(f"unknown subset {subset!r}")
    length = normalizer_length(record, normalizer)
    if not keep.any():
        return float("nan")
    dists = np.linalg.norm(pred[keep] - record.landmarks[keep], axis=1)
    return float(dists.mean() / length)


class RecallAtPrecision(NamedTuple):
    recall: float
    threshold: float
    achieved: bool


def recall_at_precision(scores, truth, target: float = 0.8) -> RecallAtPrecision:
    """Best recall over score thresholds whose precision reaches ``target``.

    ``scores`` are occlusion scores (e.g. ``1 - visibility``), ``truth`` is 1
    for occluded landmarks. A landmark is predicted occluded when its score
    is >= the threshold.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth).astype(bool).ravel()
    if scores.size == 0 or scores.shape != truth.shape:
        raise ValueError("scores and truth must be non-empty and of equal length")
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise ValueError("need at least one occluded landmark")
    order = np.argsort(-scores, kind="mergesort")
    s, t = scores[order], truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    ok = precision >= target - 1e-12
    if not ok.any():
        return RecallAtPrecision(0.0, float("nan"), False)
    k = np.flatnonzero(ok)[np.argmax(recall[ok] + 1e-9 * np.arange(ok.sum()))]
    return RecallAtPrecision(float(recall[k]), float(s[last[k]]), True)


def cumulative_error_distribution(errors, thresholds=DEFAULT_CED_THRESHOLDS) -> np.ndarray:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("need at least one error value")
    thresholds = np.asarray(thresholds, dtype=float)
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)


@dataclass
class EvalReport:
    n_samples: int
    mean_error_visible: float
    mean_error_all: float
    recall: float
    recall_threshold: float
    recall_achieved: bool
    target_precision: float
    ced_thresholds: np.ndarray
    ced: np.ndarray
    per_iteration_error: list = field(default_factory=list)
    per_iteration_recall: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"samples                      {self.n_samples}",
            f"mean error (visible points)  {self.mean_error_visible:.5f}",
            f"mean error (all points)      {self.mean_error_all:.5f}",
            f"occlusion recall @ P>={self.target_precision:.2f}  "
            + (f"{self.recall:.4f} (threshold {self.recall_threshold:.4f})"
               if self.recall_achieved else "0 (target precision not reached)"),
        ]
        if self.per_iteration_error:
            lines.append("")
            lines.append("iteration  error_all  recall")
            for t, (e, r) in enumerate(zip(self.per_iteration_error, self.per_iteration_recall)):
                lines.append(f"{t:9d}  {e:9.5f}  {r:6.4f}")
        lines.append("")
        lines.append("threshold  fraction")
        for th, f in zip(self.ced_thresholds, self.ced):
            lines.append(f"{th:9.3f}  {f:8.4f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> dict:
        """Write ``report.txt``, ``ced.csv`` and, with traces, ``iterations.csv``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"report": out_dir / "report.txt", "ced": out_dir / "ced.csv"}
        paths["report"].write_text(self.to_text())
        with open(paths["ced"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fraction"])
            for th, f in zip(self.ced_thresholds, self.ced):
                w.writerow([f"{th:.4f}", f"{f:.6f}"])
        if self.per_iteration_error:
            paths["iterations"] = out_dir / "iterations.csv"
            with open(paths["iterations"], "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "mean_error_all", "recall_at_precision"])
                for t, (e, r) in enumerate(zip(self.per_iteration_error, self.per_iteration_recall)):
                    w.writerow([t, f"{e:.6f}", f"{r:.6f}"])
        return paths


def _recall_or_zero(scores, truth, target):
    truth = np.asarray(truth)
    if truth.sum() == 0:
        return RecallAtPrecision(float("nan"), float("nan"), False)
    return recall_at_precision(scores, truth, target)


def evaluate(predictions, visibilities, records, traces=None, target_precision: float = 0.8,
             thresholds=DEFAULT_CED_THRESHOLDS) -> EvalReport:
    """Aggregate metrics over a test set.

    ``predictions``/``visibilities`` are per-record shapes and visibility
    vectors in record order. ``traces``, when given, holds per-record lists
    of ``(shape, visibility)`` from initialization to the last stage.
    """
    if not records:
        raise ValueError("cannot evaluate an empty dataset")
    err_all = np.array([normalized_error(p, r) for p, r in zip(predictions, records)])
    err_vis = np.array([normalized_error(p, r, subset="visible") for p, r in zip(predictions, records)])
    # only annotated landmarks have a known occlusion state
    annotated = np.concatenate([r.mask.astype(bool) for r in records])
    truth = np.concatenate([1 - r.occlusion for r in records])[annotated]
    scores = np.concatenate([1 - np.asarray(v) for v in visibilities])[annotated]
    rap = _recall_or_zero(scores, truth, target_precision)

    per_err, per_rec = [], []
    if traces:
        n_steps = min(len(tr) for tr in traces)
        for t in range(n_steps):
            per_err.append(float(np.mean([normalized_error(tr[t][0], r) for tr, r in zip(traces, records)])))
            sc = np.concatenate([1 - np.asarray(tr[t][1]) for tr in traces])[annotated]
            per_rec.append(_recall_or_zero(sc, truth, target_precision).recall)

    return EvalReport(
        n_samples=len(records),
        mean_error_visible=float(np.nanmean(err_vis)) if np.any(np.isfinite(err_vis)) else float("nan"),
        mean_error_all=float(err_all.mean()),
        recall=rap.recall,
        recall_threshold=rap.threshold,
        recall_achieved=rap.achieved,
        target_precision=target_precision,
        ced_thresholds=np.asarray(thresholds, dtype=float),
        ced=cumulative_error_distribution(err_all, thresholds),
        per_iteration_error=per_err,
        per_iteration_recall=per_rec,
    )
