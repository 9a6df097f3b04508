"""Region-based segmentation metrics: Rand index, variation of information, covering.

All three are computed from the joint label histogram (contingency table)
of two label maps, so the cost is linear in the pixel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .validation import check_label_map, check_same_shape

METRICS = ("pri", "vi", "covering")


def contingency(seg, gt) -> np.ndarray:
    """Joint histogram; rows index ``seg`` labels, columns ``gt`` labels (compacted)."""
    seg = check_label_map(seg)
    gt = check_label_map(gt)
    check_same_shape(seg, gt)
    _, a = np.unique(seg.ravel(), return_inverse=True)
    _, b = np.unique(gt.ravel(), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _pairs(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return x * (x - 1) / 2


def rand_index(seg, gt) -> float:
    """Fraction of pixel pairs on which both maps agree (same vs. different label)."""
    table = contingency(seg, gt)
    n = int(table.sum())
    if n < 2:
        return 1.0
    total = n * (n - 1) / 2
    both = _pairs(table).sum()
    same_seg = _pairs(table.sum(axis=1)).sum()
    same_gt = _pairs(table.sum(axis=0)).sum()
    disagree = same_seg + same_gt - 2 * both
    return float(1.0 - disagree / total)


def _entropy(counts: np.ndarray, n: int) -> float:
    # fsum keeps the result independent of label order
    p = counts[counts > 0] / n
    return float(-math.fsum(p * np.log(p)))


def variation_of_information(seg, gt) -> float:
    """``H(S) + H(G) - 2 I(S; G)`` in nats."""
    table = contingency(seg, gt)
    n = int(table.sum())
    h_s = _entropy(table.sum(axis=1), n)
    h_g = _entropy(table.sum(axis=0), n)
    h_sg = _entropy(table.ravel(), n)
    # I = H(S) + H(G) - H(S,G), so VI = 2 H(S,G) - H(S) - H(G)
    return float(max(2.0 * h_sg - h_s - h_g, 0.0))


def covering(seg, gt, reverse: bool = False) -> float:
    """Covering of ``gt`` by ``seg``; ``reverse=True`` swaps the roles.

    Each ground-truth region contributes its size times the best
    intersection-over-union with any segment.
    """
    table = contingency(seg, gt)
    if reverse:
        table = table.T
    n = table.sum()
    size_seg = table.sum(axis=1)[:, None]
    size_gt = table.sum(axis=0)[None, :]
    iou = table / (size_seg + size_gt - table)
    return float(math.fsum(size_gt[0] * iou.max(axis=0)) / n)


def _triple(seg, gt) -> dict[str, float]:
    return {
        "pri": rand_index(seg, gt),
        "vi": variation_of_information(seg, gt),
        "covering": covering(seg, gt),
    }


@dataclass
class MetricReport:
    """Mean scores over ground truths, with the per-ground-truth values.

    For a list of candidate segmentations, ``pri``/``vi``/``covering`` are
    the best candidate's scores per metric and ``best`` records which
    candidate index won each one.
    """

    pri: float
    vi: float
    covering: float
    per_gt: list[dict[str, float]] = field(default_factory=list)
    best: dict[str, int] = field(default_factory=dict)
    candidates: list["MetricReport"] = field(default_factory=list)

    def rows(self) -> list[list]:
        """CSV-ready rows: one per ground truth, then the mean."""
        out = [[str(i), g["pri"], g["vi"], g["covering"]] for i, g in enumerate(self.per_gt)]
        out.append(["mean", self.pri, self.vi, self.covering])
        return out

    def __str__(self) -> str:
        return f"PRI {self.pri:.4f}  VI {self.vi:.4f}  Covering {self.covering:.4f}"


def _labels_of(seg) -> np.ndarray:
    return seg.labels if hasattr(seg, "labels") else np.asarray(seg)


def _report_single(seg, gts) -> MetricReport:
    per = [_triple(seg, g) for g in gts]
    means = {k: float(np.mean([p[k] for p in per])) for k in METRICS}
    return MetricReport(means["pri"], means["vi"], means["covering"], per)


def evaluate(seg, gts) -> MetricReport:
    """Score one segmentation, or pick the best of a candidate list per metric.

    ``gts`` is a non-empty sequence of label maps. Lower is better for VI.
    """
    gts = [check_label_map(g) for g in gts]
    if not gts:
        raise ValueError("at least one ground truth is required")
    if not isinstance(seg, (list, tuple)):
        return _report_single(_labels_of(seg), gts)
    if not seg:
        raise ValueError("empty candidate list")
    reps = [_report_single(_labels_of(s), gts) for s in seg]
    best = {
        "pri": int(np.argmax([r.pri for r in reps])),
        "vi": int(np.argmin([r.vi for r in reps])),
        "covering": int(np.argmax([r.covering for r in reps])),
    }
    top = reps[best["covering"]]
    return MetricReport(
        reps[best["pri"]].pri, reps[best["vi"]].vi, top.covering, top.per_gt, best, reps
    )


def evaluate_fixed(segs, gts) -> MetricReport:
    """Fixed scheme: segmentation ``i`` was built with the k of ground truth ``i``.

    Each run is scored against its own ground truth and the scores are averaged.
    """
    gts = [check_label_map(g) for g in gts]
    if len(segs) != len(gts):
        raise ValueError("fixed scheme needs one segmentation per ground truth")
    per = [_triple(_labels_of(s), g) for s, g in zip(segs, gts)]
    means = {k: float(np.mean([p[k] for p in per])) for k in METRICS}
    return MetricReport(means["pri"], means["vi"], means["covering"], per)
