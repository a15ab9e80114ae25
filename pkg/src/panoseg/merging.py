"""Greedy block merging into a global labeling, and nearest-neighbour label
upsampling back to the original cloud."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .blocks import Block
from .core import Labeling, PointCloud, SemanticTaxonomy
from .errors import ContractError


@dataclass(frozen=True)
class GlobalPanoptic:
    """Merged per-point labels on the subsampled cloud.

    ``instance`` holds -1 for unassigned points and ids assigned contiguously
    from 1 in merge order; ``semantic`` is the fused per-point class."""

    instance: np.ndarray
    semantic: np.ndarray


def block_merge(
    blocks: Sequence[Block],
    per_block_instances: Sequence[Sequence[np.ndarray]],
    n_points: int,
    t_iou: float = 0.01,
) -> np.ndarray:
    """Stitch per-block instances into one global label vector.

    Blocks are processed in lexicographic (center_x, center_y) order and,
    within a block, instances in descending size (ties toward the lower
    minimum point id). An instance whose points are all unlabelled opens a
    fresh label; one whose points are all labelled is skipped; a mixed one is
    absorbed into the existing label with the highest IoU when that IoU
    exceeds ``t_iou``, else it opens a fresh label. Only unlabelled entries
    are ever written.
    """
    if len(blocks) != len(per_block_instances):
        raise ContractError("need one instance list per block")
    order = sorted(
        range(len(blocks)), key=lambda i: (blocks[i].center_xy[0], blocks[i].center_xy[1])
    )
    labels = np.full(n_points, -1, dtype=np.int64)
    sizes: list[int] = [0]  # sizes[r] = current point count of label r; index 0 unused
    next_label = 1
    for bi in order:
        instances = per_block_instances[bi]
        for ids in instances:
            if np.asarray(ids).size == 0:
                raise ContractError("instances fed to block merging must be non-empty")
        ranked = sorted(instances, key=lambda ids: (-np.asarray(ids).size, int(np.min(ids))))
        for ids in ranked:
            ids = np.asarray(ids, dtype=np.int64)
            current = labels[ids]
            unassigned = current == -1
            if np.all(unassigned):
                labels[ids] = next_label
                sizes.append(ids.size)
                next_label += 1
                continue
            if not np.any(unassigned):
                continue
            assigned = current[~unassigned]
            overlap_labels, overlaps = np.unique(assigned, return_counts=True)
            best_iou = -1.0
            best_label = -1
            for lab, inter in zip(overlap_labels, overlaps):
                iou = inter / (sizes[lab] + ids.size - inter)
                if iou > best_iou:  # ties stay with the smaller label
                    best_iou = iou
                    best_label = int(lab)
            if best_iou > t_iou:
                labels[ids[unassigned]] = best_label
                sizes[best_label] += int(unassigned.sum())
            else:
                labels[ids[unassigned]] = next_label
                sizes.append(int(unassigned.sum()))
                next_label += 1
    return labels


def fuse_semantics(
    n_points: int,
    votes: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    fallback_class: int = 0,
) -> np.ndarray:
    """Per-point majority over block votes (point ids, classes, confidences).

    Count ties go to the class with the highest single-vote confidence,
    remaining ties to the smaller class id. Points no block voted on get the
    fallback class.
    """
    if not votes:
        return np.full(n_points, fallback_class, dtype=np.int64)
    n_classes = 1 + max(int(v[1].max(initial=0)) for v in votes)
    counts = np.zeros((n_points, n_classes))
    best_conf = np.zeros((n_points, n_classes))
    for ids, classes, conf in votes:
        np.add.at(counts, (ids, classes), 1.0)
        np.maximum.at(best_conf, (ids, classes), conf)
    # count dominates; confidence (< 1 <= vote step) only breaks count ties;
    # argmax takes the smaller class on full ties
    fused = np.argmax(counts * 2.0 + best_conf, axis=1).astype(np.int64)
    unvoted = counts.sum(axis=1) == 0
    fused[unvoted] = fallback_class
    return fused


def enforce_stuff_unassigned(
    panoptic: GlobalPanoptic, taxonomy: SemanticTaxonomy
) -> GlobalPanoptic:
    instance = panoptic.instance.copy()
    instance[~taxonomy.thing_mask(panoptic.semantic)] = -1
    return GlobalPanoptic(instance, panoptic.semantic)


def upsample_labels(
    original: PointCloud,
    subsampled: PointCloud,
    panoptic: GlobalPanoptic,
    taxonomy: SemanticTaxonomy,
) -> Labeling:
    """Each original point takes the labels of its nearest subsampled point
    (Euclidean; exact ties go to the lower index). Stuff-class points then
    have their instance forced to -1."""
    if len(subsampled) == 0:
        raise ContractError("cannot upsample from an empty subsampled cloud")
    if len(original) == 0:
        return Labeling(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    if panoptic.instance.shape != (len(subsampled),):
        raise ContractError("panoptic labels must cover the subsampled cloud")

    tree = cKDTree(subsampled.positions)
    k = min(2, len(subsampled))
    dist, idx = tree.query(original.positions, k=k)
    if k == 1:
        nearest = np.asarray(idx, dtype=np.int64).ravel()
    else:
        nearest = idx[:, 0].astype(np.int64)
        tied = dist[:, 0] == dist[:, 1]
        for i in np.flatnonzero(tied):
            within = tree.query_ball_point(original.positions[i], dist[i, 0])
            nearest[i] = min(within)

    semantic = panoptic.semantic[nearest]
    instance = panoptic.instance[nearest].copy()
    instance[~taxonomy.thing_mask(semantic)] = -1
    return Labeling(semantic, instance)
