"""End-to-end segmentation: subsample, cut blocks, generate and score
candidates per block, prune, merge, upsample.

Per-block work is deterministic given (seed, block index), gathered in
canonical block order before merging, so the output is identical for any
worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blocks import Block, CylinderCutter, grid_centers, voxel_mean, voxel_subsample
from .cloudio import PipelineConfig
from .clustering import ClusterParams, generate_candidates
from .core import Labeling, PointCloud, SemanticTaxonomy, extract_instances
from .errors import ContractError
from .features import OracleNoise, file_provide, oracle_provide
from .merging import (
    GlobalPanoptic,
    block_merge,
    enforce_stuff_unassigned,
    fuse_semantics,
    upsample_labels,
)
from .selection import (
    assign_point_ownership,
    consensus_scores,
    make_oracle_scorer,
    prune,
    score_candidates,
)

PROVIDERS = ("oracle", "file")
SCORERS = ("oracle", "consensus")


@dataclass
class SegmentResult:
    labeling: Labeling  # on the original cloud
    sub_cloud: PointCloud
    panoptic: GlobalPanoptic
    stats: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class _BlockOutput:
    block: Block
    instances: list[np.ndarray]
    sem_classes: np.ndarray
    sem_conf: np.ndarray
    counts: dict[str, int]


def _block_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(index,)).generate_state(1)[0])


def run_segment(
    cloud: PointCloud,
    gt: Labeling | None,
    taxonomy: SemanticTaxonomy,
    config: PipelineConfig,
    provider: str = "oracle",
    scorer: str = "oracle",
    noise: OracleNoise = OracleNoise(),
    feature_columns: dict[str, np.ndarray] | None = None,
    step: float | None = None,
    workers: int = 1,
) -> SegmentResult:
    if provider not in PROVIDERS:
        raise ContractError(f"unknown provider {provider!r}")
    if scorer not in SCORERS:
        raise ContractError(f"unknown scorer {scorer!r}")
    if provider == "oracle" and gt is None:
        raise ContractError("the oracle provider requires ground-truth labels")
    if scorer == "oracle" and gt is None:
        raise ContractError("the oracle scorer requires ground-truth labels")
    if provider == "file" and feature_columns is None:
        raise ContractError("the file provider requires feature columns")

    timings: dict[str, float] = {}
    stats: dict[str, int] = {"points": len(cloud)}
    if len(cloud) == 0:
        empty = Labeling(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        panoptic = GlobalPanoptic(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        stats.update(subsampled=0, blocks=0)
        return SegmentResult(empty, PointCloud(np.empty((0, 3))), panoptic, stats, timings)

    t0 = time.perf_counter()
    sub_cloud, sub_gt, vmap = voxel_subsample(cloud, gt, config.voxel_size)
    sub_features = None
    if provider == "file":
        sub_features = {
            name: voxel_mean(vmap, values).ravel() for name, values in feature_columns.items()
        }
    timings["subsample"] = time.perf_counter() - t0
    stats["subsampled"] = len(sub_cloud)

    t0 = time.perf_counter()
    min_xy, max_xy = sub_cloud.bounds_xy()
    centers = grid_centers(min_xy, max_xy, step if step is not None else config.cylinder_radius)
    cutter = CylinderCutter(sub_cloud)
    blocks = [cutter.cut(c, config.cylinder_radius) for c in centers]
    blocks = [b for b in blocks if b.size > 0]
    blocks.sort(key=lambda b: b.center_xy)
    timings["blocks"] = time.perf_counter() - t0
    stats["blocks"] = len(blocks)

    params = ClusterParams(
        region_growing_radius=config.region_growing_radius,
        meanshift_bandwidth=config.meanshift_bandwidth,
        setting=config.setting,
    )
    gt_instances = extract_instances(sub_gt) if (scorer == "oracle" and sub_gt is not None) else None

    def process(index: int) -> _BlockOutput:
        block = blocks[index]
        if provider == "oracle":
            features = oracle_provide(
                block, sub_gt, taxonomy, noise, _block_seed(config.seed, index)
            )
        else:
            features = file_provide(block, sub_features, taxonomy.num_classes)
        candidates = generate_candidates(block, features, params, taxonomy)
        counts = {f"candidates_{origin}": 0 for origin in ("raw", "offset", "embedding")}
        for cand in candidates:
            counts[f"candidates_{cand.origin}"] += 1
        if scorer == "oracle":
            scored = score_candidates(candidates, make_oracle_scorer(gt_instances))
        else:
            scored = score_candidates(candidates, consensus_scores)
        kept = prune(
            scored,
            min_size=config.min_cluster_size,
            score_threshold=config.score_threshold,
            nms_iou=config.nms_iou_threshold,
        )
        counts["kept_min_size"] = sum(1 for c in scored if c.size >= config.min_cluster_size)
        after_nms = prune(scored, config.min_cluster_size, 0.0, config.nms_iou_threshold)
        counts["kept_nms"] = len(after_nms)
        counts["kept_score"] = len(kept)
        instances = assign_point_ownership(kept)
        pred_class = np.argmax(features.sem_probs, axis=1).astype(np.int64)
        conf = features.sem_probs[np.arange(block.size), pred_class]
        return _BlockOutput(block, instances, pred_class, conf, counts)

    t0 = time.perf_counter()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(process, range(len(blocks))))
    else:
        outputs = [process(i) for i in range(len(blocks))]
    timings["blocks_process"] = time.perf_counter() - t0

    for key in ("candidates_raw", "candidates_offset", "candidates_embedding",
                "kept_min_size", "kept_nms", "kept_score"):
        stats[key] = sum(o.counts[key] for o in outputs)
    stats["candidates_total"] = (
        stats["candidates_raw"] + stats["candidates_offset"] + stats["candidates_embedding"]
    )

    t0 = time.perf_counter()
    merged = block_merge(
        [o.block for o in outputs],
        [o.instances for o in outputs],
        len(sub_cloud),
        config.merge_iou_threshold,
    )
    semantic = fuse_semantics(
        len(sub_cloud),
        [(o.block.global_ids, o.sem_classes, o.sem_conf) for o in outputs],
    )
    panoptic = enforce_stuff_unassigned(GlobalPanoptic(merged, semantic), taxonomy)
    timings["merge"] = time.perf_counter() - t0
    stats["merged_instances"] = int(np.unique(panoptic.instance[panoptic.instance > 0]).size)

    t0 = time.perf_counter()
    labeling = upsample_labels(cloud, sub_cloud, panoptic, taxonomy)
    timings["upsample"] = time.perf_counter() - t0
    return SegmentResult(labeling, sub_cloud, panoptic, stats, timings)
