"""Candidate scoring and pruning.

Scorers fill in each candidate's score in [0, 1]; pruning then applies, in
order, the minimum-size filter, greedy NMS on the scores, and the score
threshold. Kept candidates may still overlap up to the NMS threshold, so
point ownership is resolved afterwards: a point belongs to the best-ranked
kept candidate containing it.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Sequence

import numpy as np

from .core import Instance, InstanceCandidate, instance_iou
from .errors import ContractError

Scorer = Callable[[Sequence[InstanceCandidate]], np.ndarray]


def oracle_score(candidate: InstanceCandidate, gt_instances: Sequence[Instance]) -> float:
    """Highest IoU between the candidate and any ground-truth instance."""
    best = 0.0
    for gt in gt_instances:
        best = max(best, instance_iou(candidate.point_ids, gt.point_ids))
    return best


def make_oracle_scorer(gt_instances: Sequence[Instance]) -> Scorer:
    def scorer(candidates: Sequence[InstanceCandidate]) -> np.ndarray:
        return np.array([oracle_score(c, gt_instances) for c in candidates])

    return scorer


def consensus_scores(candidates: Sequence[InstanceCandidate]) -> np.ndarray:
    """Cross-generator agreement as a deterministic stand-in for a learned
    candidate scorer: each candidate scores its best IoU against candidates
    of a different origin, or 1.0 when no other origin exists."""
    origins = {c.origin for c in candidates}
    scores = np.empty(len(candidates))
    for i, cand in enumerate(candidates):
        if len(origins - {cand.origin}) == 0:
            scores[i] = 1.0
            continue
        best = 0.0
        for other in candidates:
            if other.origin != cand.origin:
                best = max(best, instance_iou(cand.point_ids, other.point_ids))
        scores[i] = best
    return scores


def consensus_scorer(candidates: Sequence[InstanceCandidate]) -> np.ndarray:
    return consensus_scores(candidates)


def score_candidates(
    candidates: Sequence[InstanceCandidate], scorer: Scorer
) -> list[InstanceCandidate]:
    scores = np.asarray(scorer(candidates), dtype=np.float64)
    if scores.shape != (len(candidates),):
        raise ContractError("scorer must return one score per candidate")
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise ContractError("scores must lie in [0, 1]")
    return [replace(c, score=float(s)) for c, s in zip(candidates, scores)]


def _rank_key(item: tuple[int, InstanceCandidate]):
    index, cand = item
    # score desc, then larger candidate, then lower first point id; identical
    # point sets from two generators still tie, so origin and input order
    # complete the total order
    return (-cand.score, -cand.size, int(cand.point_ids[0]), cand.origin, index)


def prune(
    candidates: Sequence[InstanceCandidate],
    min_size: int = 10,
    score_threshold: float = 0.6,
    nms_iou: float = 0.3,
) -> list[InstanceCandidate]:
    """Minimum size filter, then greedy NMS, then score threshold.

    Returned candidates are in rank order and pairwise overlap at most
    ``nms_iou``; every survivor is one of the inputs.
    """
    sized = [c for c in candidates if c.size >= min_size]
    ranked = [c for _, c in sorted(enumerate(sized), key=_rank_key)]
    kept: list[InstanceCandidate] = []
    for cand in ranked:
        if all(instance_iou(cand.point_ids, k.point_ids) <= nms_iou for k in kept):
            kept.append(cand)
    return [c for c in kept if c.score >= score_threshold]


def assign_point_ownership(kept: Sequence[InstanceCandidate]) -> list[np.ndarray]:
    """Disjoint per-block instances: each point goes to the first candidate in
    rank order that contains it. Candidates emptied by better-ranked ones are
    dropped."""
    claimed: set[int] = set()
    out = []
    for cand in kept:
        mine = np.array([p for p in cand.point_ids.tolist() if p not in claimed], dtype=np.int64)
        if mine.size:
            claimed.update(mine.tolist())
            out.append(mine)
    return out
