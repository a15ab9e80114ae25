"""Evaluation metrics: semantic mIoU, instance coverage, detection
precision/recall/F1 and panoptic quality.

Instance-level metrics operate on index sets, so they are invariant to any
bijective relabeling of the instance ids. Segments are matched uniquely at
IoU strictly greater than 0.5, the only threshold for which greedy matching
is provably unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Instance, Labeling, SemanticTaxonomy, extract_instances, instance_iou
from .errors import ContractError

MATCH_IOU = 0.5


@dataclass(frozen=True)
class ClassPQ:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    per_class_iou: dict[int, float]
    miou: float | None
    mcov: float | None
    mwcov: float | None
    mprec: float
    mrec: float
    f1: float
    per_class_pq: dict[int, ClassPQ]
    pq: float | None
    sq: float | None
    rq: float | None
    matches: list[tuple[int, int, float]]  # (pred instance id, gt instance id, IoU)
    unmatched_pred: list[int]
    unmatched_gt: list[int]


def semantic_miou(
    pred: Labeling, gt: Labeling, taxonomy: SemanticTaxonomy
) -> tuple[dict[int, float], float | None]:
    """Per-class IoU and its mean; classes absent from both sides are
    excluded from the mean."""
    if len(pred) != len(gt):
        raise ContractError("prediction and ground truth cover different point counts")
    per_class: dict[int, float] = {}
    values = []
    for c in range(taxonomy.num_classes):
        p = pred.semantic == c
        g = gt.semantic == c
        union = int(np.sum(p | g))
        if union == 0:
            continue
        iou = float(np.sum(p & g) / union)
        per_class[c] = iou
        values.append(iou)
    return per_class, (float(np.mean(values)) if values else None)


def coverage(
    pred_instances: Sequence[Instance], gt_instances: Sequence[Instance]
) -> tuple[float | None, float | None]:
    """Mean (and point-count-weighted mean) best IoU over ground-truth
    instances; absent when there is no ground truth instance."""
    if not gt_instances:
        return None, None
    best = []
    for g in gt_instances:
        top = 0.0
        for p in pred_instances:
            top = max(top, instance_iou(g.point_ids, p.point_ids))
        best.append(top)
    best_arr = np.array(best)
    sizes = np.array([g.size for g in gt_instances], dtype=np.float64)
    return float(best_arr.mean()), float((sizes * best_arr).sum() / sizes.sum())


def _greedy_match(
    pred_instances: Sequence[Instance], gt_instances: Sequence[Instance]
) -> list[tuple[int, int, float]]:
    """Unique matching by descending IoU; returns (pred index, gt index, IoU)."""
    pairs = []
    for pi, p in enumerate(pred_instances):
        for gi, g in enumerate(gt_instances):
            iou = instance_iou(p.point_ids, g.point_ids)
            if iou > 0.0:
                pairs.append((iou, pi, gi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    matches = []
    for iou, pi, gi in pairs:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        matches.append((pi, gi, iou))
    return matches


def detection_prf(
    pred_instances: Sequence[Instance],
    gt_instances: Sequence[Instance],
    iou_threshold: float = MATCH_IOU,
) -> tuple[float, float, float, list[tuple[int, int, float]], list[int], list[int]]:
    """Precision, recall and F1 over instances; a prediction is a true
    positive iff its unique match has IoU strictly above the threshold."""
    matches = [
        (pi, gi, iou)
        for pi, gi, iou in _greedy_match(pred_instances, gt_instances)
        if iou > iou_threshold
    ]
    tp = len(matches)
    prec = tp / len(pred_instances) if pred_instances else 0.0
    rec = tp / len(gt_instances) if gt_instances else 0.0
    f1 = 2.0 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    matched_p = {pi for pi, _, _ in matches}
    matched_g = {gi for _, gi, _ in matches}
    fp = [pred_instances[i].instance_id for i in range(len(pred_instances)) if i not in matched_p]
    fn = [gt_instances[i].instance_id for i in range(len(gt_instances)) if i not in matched_g]
    named = [
        (pred_instances[pi].instance_id, gt_instances[gi].instance_id, iou)
        for pi, gi, iou in matches
    ]
    return prec, rec, f1, named, fp, fn


def _segments(labeling: Labeling, class_id: int) -> list[np.ndarray]:
    """Point sets of the (class, instance) segments for one thing class."""
    mask = (labeling.semantic == class_id) & (labeling.instance >= 0)
    if not np.any(mask):
        return []
    points = np.flatnonzero(mask)
    ids = labeling.instance[mask]
    uniq, inverse = np.unique(ids, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=uniq.size)
    return [np.sort(chunk) for chunk in np.split(points[order], np.cumsum(counts)[:-1])]


def panoptic_quality(
    pred: Labeling, gt: Labeling, taxonomy: SemanticTaxonomy
) -> tuple[dict[int, ClassPQ], float | None, float | None, float | None]:
    """Per-class and mean PQ/SQ/RQ.

    Thing-class segments are matched uniquely at IoU > 0.5. A stuff class
    forms a single segment per side and contributes its whole-class IoU the
    same way. Means run over classes present in the ground truth.
    """
    if len(pred) != len(gt):
        raise ContractError("prediction and ground truth cover different point counts")
    per_class: dict[int, ClassPQ] = {}
    mean_values = []
    for cls in taxonomy.classes:
        c = cls.class_id
        if cls.kind == "thing":
            pred_segments = _segments(pred, c)
            gt_segments = _segments(gt, c)
        else:
            pred_segments = [np.flatnonzero(pred.semantic == c)]
            pred_segments = [s for s in pred_segments if s.size]
            gt_segments = [np.flatnonzero(gt.semantic == c)]
            gt_segments = [s for s in gt_segments if s.size]
        if not pred_segments and not gt_segments:
            continue
        ious = np.zeros((len(pred_segments), len(gt_segments)))
        for pi, p in enumerate(pred_segments):
            for gi, g in enumerate(gt_segments):
                ious[pi, gi] = instance_iou(p, g)
        matched = ious > MATCH_IOU  # unique by construction at this threshold
        tp = int(matched.sum())
        fp = len(pred_segments) - tp
        fn = len(gt_segments) - tp
        iou_sum = float(ious[matched].sum())
        denom = tp + 0.5 * fp + 0.5 * fn
        pq = iou_sum / denom if denom > 0 else 0.0
        sq = iou_sum / tp if tp > 0 else 0.0
        rq = tp / denom if denom > 0 else 0.0
        per_class[c] = ClassPQ(pq, sq, rq, tp, fp, fn)
        if gt_segments:
            mean_values.append((pq, sq, rq))
    if mean_values:
        arr = np.array(mean_values)
        return per_class, float(arr[:, 0].mean()), float(arr[:, 1].mean()), float(arr[:, 2].mean())
    return per_class, None, None, None


def evaluate(pred: Labeling, gt: Labeling, taxonomy: SemanticTaxonomy) -> MetricsReport:
    """The full metric suite for one prediction/ground-truth pair."""
    per_class_iou, miou = semantic_miou(pred, gt, taxonomy)
    pred_instances = extract_instances(pred)
    gt_instances = extract_instances(gt)
    mcov, mwcov = coverage(pred_instances, gt_instances)
    mprec, mrec, f1, matches, fp, fn = detection_prf(pred_instances, gt_instances)
    per_class_pq, pq, sq, rq = panoptic_quality(pred, gt, taxonomy)
    return MetricsReport(
        per_class_iou=per_class_iou,
        miou=miou,
        mcov=mcov,
        mwcov=mwcov,
        mprec=mprec,
        mrec=mrec,
        f1=f1,
        per_class_pq=per_class_pq,
        pq=pq,
        sq=sq,
        rq=rq,
        matches=matches,
        unmatched_pred=fp,
        unmatched_gt=fn,
    )


def _fmt(value: float | None) -> str:
    return "absent" if value is None else f"{value:.9g}"


def report_items(report: MetricsReport) -> list[tuple[str, str]]:
    items: list[tuple[str, str]] = []
    for c in sorted(report.per_class_iou):
        items.append((f"iou_class_{c}", _fmt(report.per_class_iou[c])))
    items.append(("miou", _fmt(report.miou)))
    items.append(("mcov", _fmt(report.mcov)))
    items.append(("mwcov", _fmt(report.mwcov)))
    items.append(("mprec", _fmt(report.mprec)))
    items.append(("mrec", _fmt(report.mrec)))
    items.append(("f1", _fmt(report.f1)))
    for c in sorted(report.per_class_pq):
        entry = report.per_class_pq[c]
        items.append((f"pq_class_{c}", _fmt(entry.pq)))
        items.append((f"sq_class_{c}", _fmt(entry.sq)))
        items.append((f"rq_class_{c}", _fmt(entry.rq)))
    items.append(("pq", _fmt(report.pq)))
    items.append(("sq", _fmt(report.sq)))
    items.append(("rq", _fmt(report.rq)))
    for i, (pid, gid, iou) in enumerate(report.matches):
        items.append((f"match_{i}", f"{pid} {gid} {_fmt(iou)}"))
    items.append(("unmatched_pred", " ".join(str(i) for i in report.unmatched_pred)))
    items.append(("unmatched_gt", " ".join(str(i) for i in report.unmatched_gt)))
    return items


def format_report(report: MetricsReport) -> str:
    """Flat ``key = value`` rendering."""
    return "\n".join(f"{key} = {value}" for key, value in report_items(report)) + "\n"


def format_report_table(report: MetricsReport) -> str:
    """Tab-separated one-metric-per-line rendering for CI diffing."""
    return "\n".join(f"{key}\t{value}" for key, value in report_items(report)) + "\n"
