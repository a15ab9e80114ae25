"""Command-line front end.

Subcommands: synth, subsample, blocks, segment, merge, eval, gradcheck.
Exit code 0 on success, 2 on input or contract errors. Every run with
identical inputs and seed produces bit-identical output files.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import cloudio
from .blocks import CylinderCutter, grid_centers, voxel_subsample
from .core import Labeling, SemanticTaxonomy, taxonomy_from_pairs
from .errors import PanosegError
from .features import OracleNoise
from .losses import gradcheck_losses
from .merging import GlobalPanoptic, block_merge, enforce_stuff_unassigned
from .metrics import evaluate, format_report, format_report_table
from .pipeline import run_segment
from .synth import generate_scene, read_scene_spec

DEFAULT_TAXONOMY_SPEC = "ground:stuff,tree:thing,car:thing,pole:thing"


def _parse_taxonomy(spec: str) -> SemanticTaxonomy:
    pairs = []
    for part in spec.split(","):
        name, _, kind = part.partition(":")
        if not name or kind not in ("thing", "stuff"):
            raise PanosegError(f"bad taxonomy entry {part!r}; expected 'name:thing' or 'name:stuff'")
        pairs.append((name.strip(), kind.strip()))
    return taxonomy_from_pairs(pairs)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="pipeline config file")
    parser.add_argument("--profile", default="npm3d", choices=("npm3d", "forest"))
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")


def _add_table_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--voxel-size", type=float, default=None)
    parser.add_argument("--cylinder-radius", type=float, default=None)
    parser.add_argument("--region-growing-radius", type=float, default=None)
    parser.add_argument("--meanshift-bandwidth", type=float, default=None)
    parser.add_argument("--min-cluster-size", type=int, default=None)
    parser.add_argument("--score-threshold", type=float, default=None)
    parser.add_argument("--nms-iou-threshold", type=float, default=None)
    parser.add_argument("--merge-iou-threshold", type=float, default=None)
    parser.add_argument("--setting", default=None, choices=("I", "II", "III", "IV", "V"))


def _load_config(args) -> cloudio.PipelineConfig:
    config = cloudio.read_config(args.config, args.profile)
    overrides = dict(
        voxel_size=getattr(args, "voxel_size", None),
        cylinder_radius=getattr(args, "cylinder_radius", None),
        region_growing_radius=getattr(args, "region_growing_radius", None),
        meanshift_bandwidth=getattr(args, "meanshift_bandwidth", None),
        min_cluster_size=getattr(args, "min_cluster_size", None),
        score_threshold=getattr(args, "score_threshold", None),
        nms_iou_threshold=getattr(args, "nms_iou_threshold", None),
        merge_iou_threshold=getattr(args, "merge_iou_threshold", None),
        setting=getattr(args, "setting", None),
        seed=args.seed,
    )
    return config.override(**overrides)


def _print_kv(key: str, value) -> None:
    if isinstance(value, float):
        value = cloudio.format_float(value)
    print(f"{key} = {value}")


def cmd_synth(args) -> int:
    spec = read_scene_spec(args.scene)
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    cloud, labeling, _ = generate_scene(spec)
    cloudio.write_cloud(args.out, cloud, labeling)
    _print_kv("points", len(cloud))
    _print_kv("instances", int(np.unique(labeling.instance[labeling.instance >= 0]).size))
    return 0


def cmd_subsample(args) -> int:
    config = _load_config(args)
    cloud, labeling, _ = cloudio.read_cloud(args.input)
    sub_cloud, sub_labeling, _ = voxel_subsample(cloud, labeling, config.voxel_size)
    cloudio.write_cloud(args.out, sub_cloud, sub_labeling)
    _print_kv("points", len(cloud))
    _print_kv("subsampled", len(sub_cloud))
    return 0


def cmd_blocks(args) -> int:
    config = _load_config(args)
    cloud, _, _ = cloudio.read_cloud(args.input)
    if len(cloud) == 0:
        _print_kv("blocks", 0)
        return 0
    min_xy, max_xy = cloud.bounds_xy()
    step = args.step if args.step is not None else config.cylinder_radius
    centers = grid_centers(min_xy, max_xy, step)
    cutter = CylinderCutter(cloud)
    blocks = [cutter.cut(c, config.cylinder_radius) for c in centers]
    blocks = [b for b in blocks if b.size > 0]
    blocks.sort(key=lambda b: b.center_xy)
    _print_kv("blocks", len(blocks))
    for b in blocks:
        print(
            f"{cloudio.format_float(b.center_xy[0])} {cloudio.format_float(b.center_xy[1])} {b.size}"
        )
    return 0


def cmd_segment(args) -> int:
    config = _load_config(args)
    taxonomy = _parse_taxonomy(args.taxonomy)
    cloud, labeling, feature_columns = cloudio.read_cloud(args.input)
    if labeling is not None:
        labeling.validate(taxonomy, n_points=len(cloud), require_stuff_unassigned=False)
    noise = OracleNoise(args.sem_flip_prob, args.offset_sigma, args.embedding_sigma)
    result = run_segment(
        cloud,
        labeling,
        taxonomy,
        config,
        provider=args.provider,
        scorer=args.scorer,
        noise=noise,
        feature_columns=feature_columns,
        step=args.step,
        workers=args.workers,
    )
    cloudio.write_cloud(args.out, cloud, result.labeling)
    _print_kv("setting", config.setting)
    for key in sorted(result.stats):
        _print_kv(key, result.stats[key])
    for stage in sorted(result.timings):
        _print_kv(f"seconds_{stage}", result.timings[stage])
    return 0


def cmd_merge(args) -> int:
    config = _load_config(args)
    taxonomy = _parse_taxonomy(args.taxonomy)
    cloud, labeling, _ = cloudio.read_cloud(args.input)
    if labeling is not None:
        labeling.validate(taxonomy, n_points=len(cloud), require_stuff_unassigned=False)
    sections = cloudio.read_candidates(args.candidates)

    from .blocks import Block

    blocks = []
    instance_lists = []
    for center_xy, candidates in sections:
        ids = np.unique(np.concatenate([c.point_ids for c in candidates])) if candidates else np.empty(0, dtype=np.int64)
        local = cloud.positions[ids] - np.array([center_xy[0], center_xy[1], 0.0])
        blocks.append(Block(ids, local, center_xy, config.cylinder_radius))
        instance_lists.append([c.point_ids for c in candidates])
    merged = block_merge(blocks, instance_lists, len(cloud), config.merge_iou_threshold)
    semantic = labeling.semantic if labeling is not None else np.zeros(len(cloud), dtype=np.int64)
    panoptic = enforce_stuff_unassigned(GlobalPanoptic(merged, semantic), taxonomy)
    cloudio.write_cloud(args.out, cloud, Labeling(panoptic.semantic, panoptic.instance))
    _print_kv("blocks", len(blocks))
    _print_kv("merged_instances", int(np.unique(merged[merged > 0]).size))
    return 0


def cmd_eval(args) -> int:
    taxonomy = _parse_taxonomy(args.taxonomy)
    pred_cloud, pred_labels, _ = cloudio.read_cloud(args.pred)
    gt_cloud, gt_labels, _ = cloudio.read_cloud(args.gt)
    if pred_labels is None or gt_labels is None:
        raise PanosegError("both inputs need sem/ins columns")
    if len(pred_cloud) != len(gt_cloud):
        raise PanosegError(
            f"point count mismatch: prediction has {len(pred_cloud)}, ground truth {len(gt_cloud)}"
        )
    pred_labels.validate(taxonomy, n_points=len(pred_cloud), require_stuff_unassigned=False)
    gt_labels.validate(taxonomy, n_points=len(gt_cloud), require_stuff_unassigned=False)
    report = evaluate(pred_labels, gt_labels, taxonomy)
    text = format_report(report)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    if args.table:
        with open(args.table, "w", encoding="utf-8") as handle:
            handle.write(format_report_table(report))
    return 0


def cmd_gradcheck(args) -> int:
    worst = gradcheck_losses(trials=args.trials, seed=args.seed if args.seed is not None else 0)
    for name in sorted(worst):
        _print_kv(f"max_rel_err_{name}", worst[name])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panoseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene")
    _add_common(p)
    p.add_argument("--scene", required=True, help="scene spec file (key = value)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("subsample", help="voxel-grid subsample a cloud")
    _add_common(p)
    _add_table_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_subsample)

    p = sub.add_parser("blocks", help="list the cylinder blocks of the test grid")
    _add_common(p)
    _add_table_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--step", type=float, default=None, help="grid step (default: cylinder radius)")
    p.set_defaults(fn=cmd_blocks)

    p = sub.add_parser("segment", help="run the full segmentation pipeline")
    _add_common(p)
    _add_table_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", default="oracle", choices=("oracle", "file"))
    p.add_argument("--scorer", default="oracle", choices=("oracle", "consensus"))
    p.add_argument("--taxonomy", default=DEFAULT_TAXONOMY_SPEC)
    p.add_argument("--step", type=float, default=None, help="grid step (default: cylinder radius)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sem-flip-prob", type=float, default=0.0)
    p.add_argument("--offset-sigma", type=float, default=0.0)
    p.add_argument("--embedding-sigma", type=float, default=0.0)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("merge", help="merge per-block instances from a candidates file")
    _add_common(p)
    _add_table_flags(p)
    p.add_argument("--in", dest="input", required=True, help="the (subsampled) cloud the ids refer to")
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--taxonomy", default=DEFAULT_TAXONOMY_SPEC)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("eval", help="compare a prediction against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--taxonomy", default=DEFAULT_TAXONOMY_SPEC)
    p.add_argument("--out", default=None, help="write the key = value report here")
    p.add_argument("--table", default=None, help="write the tab-separated table here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify loss gradients against finite differences")
    _add_common(p)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PanosegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
