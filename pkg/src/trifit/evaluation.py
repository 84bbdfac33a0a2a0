"""Ranking, classification and calibration metrics plus per-protein reports."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    auroc: float
    auprc: float
    acc: float
    macro_f1: float
    macro_recall: float
    macro_precision: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CalibrationReport:
    ece: float
    bins: list[dict]
    confidence_histogram: dict[str, list[int]]
    confidence_edges: list[float]
    confidence_accuracy: list[dict]
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    if np.any((y != 0) & (y != 1)):
        raise MetricError("labels must be 0/1")
    return s, y


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(x)]])
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + 1 + b)
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs earn half credit."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC undefined for single-class input")
    ranks = _average_ranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Area under the step precision-recall curve (average precision).

    Thresholds sweep the distinct scores in descending order; tied scores
    enter together.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("AUPRC undefined without positives")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last = np.concatenate([np.flatnonzero(np.diff(s_sorted)), [len(s) - 1]])
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    area = 0.0
    prev_tp = 0
    for t, f in zip(tp, fp):
        if t != prev_tp:
            area += (t - prev_tp) / n_pos * (t / (t + f))
        prev_tp = t
    return float(area)


def classification_metrics(scores, labels, threshold: float = 0.5):
    """``(acc, macro_f1, macro_recall, macro_precision)`` at ``score >= threshold``.

    A class nobody predicts gets precision 0; a class absent from the labels
    gets recall 0; F1 is 0 whenever precision + recall is 0.
    """
    s, y = _as_arrays(scores, labels)
    pred = (s >= threshold).astype(np.int64)
    acc = float((pred == y).mean()) if len(y) else 0.0
    precisions, recalls, f1s = [], [], []
    for c in (0, 1):
        tp = int(((pred == c) & (y == c)).sum())
        n_pred = int((pred == c).sum())
        n_true = int((y == c).sum())
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true if n_true else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return acc, (f1s[0] + f1s[1]) / 2, (recalls[0] + recalls[1]) / 2, (precisions[0] + precisions[1]) / 2


def metric_report(scores, labels, threshold: float = 0.5) -> MetricReport:
    acc, f1, rec, prec = classification_metrics(scores, labels, threshold)
    return MetricReport(
        auroc=auroc(scores, labels),
        auprc=auprc(scores, labels),
        acc=acc,
        macro_f1=f1,
        macro_recall=rec,
        macro_precision=prec,
        n=len(np.ravel(labels)),
    )


def aggregate_reports(
    scores, labels, groups: Sequence[str], mode: str = "per-assay", threshold: float = 0.5
) -> tuple[MetricReport, dict[str, MetricReport]]:
    """Headline metrics either pooled or as the mean of per-assay reports.

    Assays with a single class are left out of the per-assay mean.
    """
    s, y = _as_arrays(scores, labels)
    groups = np.asarray(groups)
    per_assay: dict[str, MetricReport] = {}
    for g in sorted(set(groups.tolist())):
        sel = groups == g
        if 0 < y[sel].sum() < sel.sum():
            per_assay[g] = metric_report(s[sel], y[sel], threshold)
    if mode == "pooled":
        return metric_report(s, y, threshold), per_assay
    if mode != "per-assay":
        raise ValueError(f"unknown aggregation {mode!r}")
    if not per_assay:
        raise MetricError("no assay has both classes")
    fields = ("auroc", "auprc", "acc", "macro_f1", "macro_recall", "macro_precision")
    mean = {f: float(np.mean([getattr(r, f) for r in per_assay.values()])) for f in fields}
    return MetricReport(**mean, n=int(sum(r.n for r in per_assay.values()))), per_assay


def quantile_bin_ids(probs: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-count bins over sorted probabilities; ties share the bin of their lowest rank."""
    n = len(probs)
    order = np.argsort(probs, kind="mergesort")
    by_rank = (np.arange(n) * n_bins) // n
    sorted_p = probs[order]
    # propagate the bin of the first member of every tie run
    run_start = np.concatenate([[True], np.diff(sorted_p) != 0])
    first_idx = np.maximum.accumulate(np.where(run_start, np.arange(n), 0))
    ids = np.empty(n, dtype=np.int64)
    ids[order] = by_rank[first_idx]
    return ids


def ece(probs, labels, n_bins: int = 15, binning: str = "quantile", n_conf_bins: int = 10) -> CalibrationReport:
    """Expected calibration error of the positive-class probability.

    Also tabulates confidence ``max(p, 1 - p)`` over ``n_conf_bins``
    equal-width bins on [0.5, 1]: accuracy per bin and a per-label histogram.
    """
    p, y = _as_arrays(probs, labels)
    if np.any((p < 0) | (p > 1)):
        raise MetricError("probabilities must lie in [0, 1]")
    n = len(p)
    if binning == "quantile":
        ids = quantile_bin_ids(p, n_bins) if n else np.zeros(0, dtype=np.int64)
    elif binning == "uniform":
        ids = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    else:
        raise ValueError(f"unknown binning {binning!r}")
    bins = []
    total = 0.0
    for b in range(n_bins):
        sel = ids == b
        count = int(sel.sum())
        if count == 0:
            continue
        mean_p = float(p[sel].mean())
        rate = float(y[sel].mean())
        total += count / n * abs(mean_p - rate)
        bins.append({"bin": b, "mean_prob": mean_p, "positive_rate": rate, "count": count})

    conf = np.maximum(p, 1.0 - p)
    correct = (p >= 0.5).astype(np.int64) == y
    edges = np.linspace(0.5, 1.0, n_conf_bins + 1)
    conf_ids = np.minimum(((conf - 0.5) / 0.5 * n_conf_bins).astype(np.int64), n_conf_bins - 1)
    table = []
    for b in range(n_conf_bins):
        sel = conf_ids == b
        count = int(sel.sum())
        table.append(
            {
                "lo": float(edges[b]),
                "hi": float(edges[b + 1]),
                "count": count,
                "mean_confidence": float(conf[sel].mean()) if count else None,
                "accuracy": float(correct[sel].mean()) if count else None,
            }
        )
    hist = {
        str(label): np.bincount(conf_ids[y == label], minlength=n_conf_bins).astype(int).tolist()
        for label in (0, 1)
    }
    return CalibrationReport(
        ece=float(total),
        bins=bins,
        confidence_histogram=hist,
        confidence_edges=edges.tolist(),
        confidence_accuracy=table,
        n=n,
    )


@dataclass
class PositionTable:
    protein_id: str
    length: int
    window: int
    rows: list[dict] = field(default_factory=list)


def per_position_accuracy(
    probs, labels, positions, length: Optional[int] = None, protein_id: str = "", threshold: float = 0.5
) -> PositionTable:
    """Accuracy and functional rate per residue, with a centred sliding mean.

    The window is ``ceil(L / 20)`` residues, truncated at the chain ends; the
    sliding mean averages per-position accuracies of populated positions
    inside the window and is ``None`` where the window holds none.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    pos = np.asarray(positions, dtype=np.int64)
    if length is None:
        length = int(pos.max()) if len(pos) else 0
    window = max(1, math.ceil(length / 20))
    correct = ((p >= threshold).astype(np.int64) == y).astype(np.float64)
    count = np.bincount(pos, minlength=length + 1)[1 : length + 1]
    hits = np.bincount(pos, weights=correct, minlength=length + 1)[1 : length + 1]
    func = np.bincount(pos, weights=y.astype(np.float64), minlength=length + 1)[1 : length + 1]
    populated = count > 0
    acc = np.where(populated, hits / np.maximum(count, 1), np.nan)
    half = window // 2
    rows = []
    for i in range(length):
        lo, hi = max(0, i - half), min(length, i - half + window)
        vals = acc[lo:hi][populated[lo:hi]]
        rows.append(
            {
                "position": i + 1,
                "count": int(count[i]),
                "accuracy": float(acc[i]) if populated[i] else None,
                "functional_rate": float(func[i] / count[i]) if populated[i] else None,
                "sliding_accuracy": float(vals.mean()) if len(vals) else None,
            }
        )
    return PositionTable(protein_id=protein_id, length=length, window=window, rows=rows)


def router_utilization(weights, protein_ids) -> dict[str, np.ndarray]:
    """Mean router weight vector per protein, keyed in sorted protein order."""
    w = np.asarray(weights, dtype=np.float64)
    ids = np.asarray(protein_ids)
    return {pid: w[ids == pid].mean(axis=0) for pid in sorted(set(ids.tolist()))}
