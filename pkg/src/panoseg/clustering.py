"""Instance candidate generation.

Two generators feed the candidate pool: region growing over (raw or
centre-shifted) 3D coordinates, constrained to one semantic class per
cluster, and mean-shift with a flat kernel over the 5D embeddings, which
deliberately ignores the semantic predictions. The pipeline settings I-V
select which generators run:

    I    embeddings + mean-shift
    II   shifted coordinates + region growing
    III  shifted + raw coordinates, region growing
    IV   embeddings + shifted coordinates
    V    embeddings + shifted + raw coordinates
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .blocks import Block
from .core import InstanceCandidate, SemanticTaxonomy, majority_by_group
from .errors import ContractError
from .features import FeatureSet

SETTING_GENERATORS = {
    "I": ("embedding",),
    "II": ("offset",),
    "III": ("offset", "raw"),
    "IV": ("embedding", "offset"),
    "V": ("embedding", "offset", "raw"),
}


@dataclass(frozen=True)
class ClusterParams:
    region_growing_radius: float = 0.03
    meanshift_bandwidth: float = 0.6
    meanshift_max_iter: int = 300
    meanshift_tol: float = 1e-4
    setting: str = "IV"

    def __post_init__(self):
        if min(self.region_growing_radius, self.meanshift_bandwidth, self.meanshift_tol) <= 0:
            raise ContractError("clustering radii and tolerance must be > 0")
        if self.meanshift_max_iter < 1:
            raise ContractError("meanshift_max_iter must be >= 1")
        if self.setting not in SETTING_GENERATORS:
            raise ContractError(f"unknown setting {self.setting!r}")


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:  # path compression
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def region_grow(points: np.ndarray, class_of: np.ndarray, radius: float) -> list[np.ndarray]:
    """Connected components joining points at distance <= radius AND equal
    class id. Output is a partition, independent of point order; components
    are sorted by their smallest member index."""
    points = np.asarray(points, dtype=np.float64)
    class_of = np.asarray(class_of, dtype=np.int64)
    if radius <= 0:
        raise ContractError("region growing radius must be > 0")
    n = points.shape[0]
    if n == 0:
        return []
    uf = _UnionFind(n)
    for cid in np.unique(class_of):
        members = np.flatnonzero(class_of == cid)
        # exact duplicates collapse to one representative first; coincident
        # points (e.g. perfectly shifted instances) would otherwise enumerate
        # quadratically many neighbour pairs
        uniq, inverse = np.unique(points[members], axis=0, return_inverse=True)
        inverse = inverse.ravel()
        rep = np.full(uniq.shape[0], -1, dtype=np.int64)
        for local, group in enumerate(inverse):
            if rep[group] < 0:
                rep[group] = members[local]
            else:
                uf.union(int(rep[group]), int(members[local]))
        if uniq.shape[0] > 1:
            tree = cKDTree(uniq)
            for a, b in tree.query_pairs(radius, output_type="ndarray"):
                uf.union(int(rep[a]), int(rep[b]))
    roots = np.array([uf.find(i) for i in range(n)])
    clusters: dict[int, list[int]] = {}
    for i, root in enumerate(roots):
        clusters.setdefault(int(root), []).append(i)
    return [np.array(clusters[r], dtype=np.int64) for r in sorted(clusters)]


def shift_points(positions: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Apply predicted centre offsets to coordinates (elementwise sum)."""
    positions = np.asarray(positions, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if positions.shape != offsets.shape:
        raise ContractError("positions and offsets must have the same shape")
    return positions + offsets


def mean_shift(
    points: np.ndarray,
    bandwidth: float,
    max_iter: int = 300,
    tol: float = 1e-4,
) -> list[np.ndarray]:
    """Flat-kernel mean-shift with every point as a seed.

    Each mode iterates to the mean of the points within ``bandwidth`` until
    it moves less than ``tol`` or ``max_iter`` is reached. Converged modes
    closer than bandwidth/2 are merged, the lower point index winning as
    representative; each point joins the surviving mode its seed converged
    to. Deterministic, no randomness in seeding."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        return []
    if bandwidth <= 0:
        raise ContractError("bandwidth must be > 0")

    # seeds with identical coordinates follow identical trajectories
    uniq, first, inverse = np.unique(points, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first, kind="stable")  # unique seeds by first occurrence
    seeds = uniq[order]
    seed_of_group = np.empty(uniq.shape[0], dtype=np.int64)
    seed_of_group[order] = np.arange(order.size)
    group_of_point = seed_of_group[inverse]

    modes = seeds.copy()
    points_sq = (points**2).sum(axis=1)
    active = np.ones(modes.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not np.any(active):
            break
        moved = _shift_once(modes[active], points, points_sq, bandwidth)
        displacement = np.linalg.norm(moved - modes[active], axis=1)
        modes[active] = moved
        still = displacement >= tol
        active[np.flatnonzero(active)[~still]] = False

    # merge modes closer than bandwidth/2, in seed (= lowest point id) order
    reps: list[int] = []
    assign = np.empty(modes.shape[0], dtype=np.int64)
    for s in range(modes.shape[0]):
        target = -1
        for r_index, r in enumerate(reps):
            if np.linalg.norm(modes[s] - modes[r]) < bandwidth / 2.0:
                target = r_index
                break
        if target < 0:
            reps.append(s)
            target = len(reps) - 1
        assign[s] = target

    clusters: list[list[int]] = [[] for _ in reps]
    for point in range(n):
        clusters[assign[group_of_point[point]]].append(point)
    return [np.array(c, dtype=np.int64) for c in clusters]


def _shift_once(
    modes: np.ndarray, points: np.ndarray, points_sq: np.ndarray, bandwidth: float
) -> np.ndarray:
    """One flat-kernel update for every mode; O(M*N) in chunks to bound memory."""
    out = np.empty_like(modes)
    chunk = max(1, int(2_000_000 // max(1, points.shape[0])))
    bw2 = bandwidth * bandwidth
    for start in range(0, modes.shape[0], chunk):
        sub = modes[start : start + chunk]
        d2 = (sub**2).sum(axis=1)[:, None] + points_sq[None, :] - 2.0 * (sub @ points.T)
        inside = d2 <= bw2  # tiny negative round-off still counts as inside
        counts = inside.sum(axis=1)
        sums = inside.astype(np.float64) @ points
        empty = counts == 0  # only reachable through boundary round-off
        counts[empty] = 1
        sums[empty] = sub[empty]
        out[start : start + chunk] = sums / counts[:, None]
    return out


def generate_candidates(
    block: Block,
    features: FeatureSet,
    params: ClusterParams,
    taxonomy: SemanticTaxonomy,
) -> list[InstanceCandidate]:
    """Run the generators selected by ``params.setting`` over the block.

    Only points whose predicted class is a thing class enter any generator.
    The region-growing paths cluster one predicted class at a time; the
    embedding path clusters across classes, so it can recover instances that
    the semantic prediction split. Candidate class is the majority predicted
    class; scores are left at 0 for a scorer to fill in.
    """
    if len(features) != block.size:
        raise ContractError("features do not cover the block")
    pred_class = np.argmax(features.sem_probs, axis=1)
    things = taxonomy.thing_mask(pred_class)
    keep = np.flatnonzero(things)
    candidates: list[InstanceCandidate] = []
    if keep.size == 0:
        return candidates

    local_class = pred_class[keep]
    for origin in SETTING_GENERATORS[params.setting]:
        if origin == "embedding":
            clusters = mean_shift(
                features.embeddings[keep],
                params.meanshift_bandwidth,
                params.meanshift_max_iter,
                params.meanshift_tol,
            )
        elif origin == "offset":
            shifted = shift_points(block.local_positions[keep], features.offsets[keep])
            clusters = region_grow(shifted, local_class, params.region_growing_radius)
        else:  # raw coordinates
            clusters = region_grow(
                block.local_positions[keep], local_class, params.region_growing_radius
            )
        for members in clusters:
            class_id = int(majority_by_group(np.zeros(members.size, dtype=np.int64),
                                             local_class[members], 1)[0])
            candidates.append(
                InstanceCandidate(
                    np.sort(block.global_ids[keep[members]]),
                    class_id,
                    0.0,
                    origin,
                )
            )
    return candidates
