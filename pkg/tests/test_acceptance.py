"""Acceptance suite. Each test prints one pass/fail line for its criterion."""

import itertools
import time

import numpy as np
import pytest

from panoseg.blocks import CylinderCutter, class_balanced_centers, grid_centers
from panoseg.cli import main
from panoseg.cloudio import default_config
from panoseg.clustering import mean_shift
from panoseg.core import Labeling, PointCloud, extract_instances, instance_iou
from panoseg.features import OracleNoise, codebook_vector
from panoseg.losses import gradcheck_losses
from panoseg.merging import block_merge
from panoseg.metrics import evaluate, panoptic_quality
from panoseg.pipeline import run_segment
from panoseg.synth import DEFAULT_TAXONOMY, PrototypeSpec, SceneSpec, generate_scene


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] {name}{suffix}")


# --- 1. oracle round-trip -----------------------------------------------------


def test_criterion_1_oracle_round_trip():
    spec = SceneSpec(
        extent=36.0,
        ground_density=130.0,
        min_gap=0.5,
        base_height=0.5,
        seed=4,
        prototypes=(
            PrototypeSpec("tree", 10, (0.9, 1.3), 120.0),
            PrototypeSpec("car", 6, (1.2, 1.5), 120.0),
            PrototypeSpec("pole", 8, (3.0, 4.5), 220.0),
        ),
    )
    cloud, gt, taxonomy = generate_scene(spec)
    instances = extract_instances(gt)
    centroids = np.array([cloud.positions[i.point_ids].mean(axis=0) for i in instances])
    gaps = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=-1)
    np.fill_diagonal(gaps, np.inf)
    assert len(cloud) >= 200_000
    assert len(instances) >= 20
    assert gaps.min() > 0.03

    config = default_config("npm3d").override(seed=4, setting="IV")
    start = time.perf_counter()
    result = run_segment(cloud, gt, taxonomy, config, provider="oracle", scorer="oracle")
    elapsed = time.perf_counter() - start
    metrics = evaluate(result.labeling, gt, taxonomy)
    ok = metrics.pq == 1.0 and metrics.sq == 1.0 and metrics.rq == 1.0 and elapsed < 60.0
    report(
        "criterion 1: oracle round-trip is exact",
        ok,
        f"PQ={metrics.pq} SQ={metrics.sq} RQ={metrics.rq} in {elapsed:.1f}s",
    )
    assert metrics.pq == 1.0 and metrics.sq == 1.0 and metrics.rq == 1.0
    assert elapsed < 60.0


# --- 2. metric identities ------------------------------------------------------


def test_criterion_2_metric_identities():
    spec = SceneSpec(
        extent=16.0,
        ground_density=40.0,
        seed=6,
        prototypes=(
            PrototypeSpec("tree", 4, (0.8, 1.1), 80.0),
            PrototypeSpec("car", 3, (1.0, 1.3), 80.0),
        ),
    )
    cloud, gt, taxonomy = generate_scene(spec)
    perfect = evaluate(gt, gt, taxonomy)
    values = [
        perfect.miou, perfect.mcov, perfect.mwcov, perfect.mprec,
        perfect.mrec, perfect.f1, perfect.pq, perfect.sq, perfect.rq,
    ]
    values += list(perfect.per_class_iou.values())
    for entry in perfect.per_class_pq.values():
        values += [entry.pq, entry.sq, entry.rq]
    all_one = all(v == 1.0 for v in values)

    # the decomposition identity on an imperfect prediction with TP > 0
    rng = np.random.default_rng(0)
    noisy_instance = gt.instance.copy()
    drop = rng.random(len(gt)) < 0.1
    noisy_instance[drop & (gt.instance >= 0)] = -1
    noisy = Labeling(gt.semantic, noisy_instance)
    per_class, _, _, _ = panoptic_quality(noisy, gt, taxonomy)
    identity = all(
        abs(e.pq - e.sq * e.rq) <= 1e-12 for e in per_class.values() if e.tp > 0
    )
    report("criterion 2: metric identities", all_one and identity)
    assert all_one
    assert identity


# --- 3. hand-verified panoptic quality -----------------------------------------


def brute_force_pq(pred_segments, gt_segments):
    """Exhaustive unique matching at IoU > 0.5 (independent oracle)."""
    best = None
    for r in range(min(len(pred_segments), len(gt_segments)) + 1):
        for pred_pick in itertools.permutations(range(len(pred_segments)), r):
            for gt_pick in itertools.permutations(range(len(gt_segments)), r):
                ious = [
                    instance_iou(pred_segments[p], gt_segments[g])
                    for p, g in zip(pred_pick, gt_pick)
                ]
                if any(iou <= 0.5 for iou in ious):
                    continue
                tp, fp, fn = r, len(pred_segments) - r, len(gt_segments) - r
                denom = tp + 0.5 * fp + 0.5 * fn
                candidate = (
                    sum(ious) / denom if denom else 0.0,
                    sum(ious) / tp if tp else 0.0,
                    tp / denom if denom else 0.0,
                )
                if best is None or candidate[0] > best[0]:
                    best = candidate
    return best if best is not None else (0.0, 0.0, 0.0)


def test_criterion_3_hand_verified_pq():
    taxonomy = DEFAULT_TAXONOMY
    n = 10
    sem = np.full(n, 1)

    gt = Labeling(sem, np.zeros(n, dtype=np.int64))
    cases = []

    # prediction equals ground truth
    per_class, pq, sq, rq = panoptic_quality(gt, gt, taxonomy)
    cases.append(((pq, sq, rq), (1.0, 1.0, 1.0), brute_force_pq([np.arange(n)], [np.arange(n)])))

    # one prediction overlapping the instance at IoU 0.6
    pred_ins = np.full(n, -1)
    pred_ins[:6] = 0
    _, pq, sq, rq = panoptic_quality(Labeling(sem, pred_ins), gt, taxonomy)
    cases.append(((pq, sq, rq), (0.6, 0.6, 1.0), brute_force_pq([np.arange(6)], [np.arange(n)])))

    # no prediction at all
    _, pq, sq, rq = panoptic_quality(Labeling(sem, np.full(n, -1)), gt, taxonomy)
    cases.append(((pq, sq, rq), (0.0, 0.0, 0.0), brute_force_pq([], [np.arange(n)])))

    ok = all(got == frozen == oracle for got, frozen, oracle in cases)
    report("criterion 3: hand-verified panoptic quality", ok, f"{cases}")
    for got, frozen, oracle in cases:
        assert got == frozen
        assert got == oracle


# --- 4. gradient checks ---------------------------------------------------------


def test_criterion_4_gradient_checks():
    start = time.perf_counter()
    worst = gradcheck_losses(trials=100, seed=0, h=1e-5)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-5 and elapsed < 30.0
    report(
        "criterion 4: analytic gradients match finite differences",
        ok,
        f"max rel err {max(worst.values()):.2e} in {elapsed:.1f}s",
    )
    for name, err in worst.items():
        assert err < 1e-5, name
    assert elapsed < 30.0


# --- 5. merge correctness --------------------------------------------------------


def rand_index(a: np.ndarray, b: np.ndarray) -> float:
    """Pair-counting Rand index via the contingency table."""
    assert a.shape == b.shape
    n = a.size
    pairs = n * (n - 1) // 2
    _, a_ids = np.unique(a, return_inverse=True)
    _, b_ids = np.unique(b, return_inverse=True)
    joint = a_ids.astype(np.int64) * (b_ids.max() + 1) + b_ids
    nij = np.bincount(joint)
    ai = np.bincount(a_ids)
    bj = np.bincount(b_ids)
    same_both = (nij * (nij - 1) // 2).sum()
    same_a = (ai * (ai - 1) // 2).sum()
    same_b = (bj * (bj - 1) // 2).sum()
    return (pairs + 2 * same_both - same_a - same_b) / pairs


def test_criterion_5_merge_correctness():
    spec = SceneSpec(
        extent=24.0,
        ground_density=25.0,
        min_gap=0.3,
        seed=10,
        prototypes=(
            PrototypeSpec("tree", 8, (0.7, 1.2), 70.0),
            PrototypeSpec("car", 5, (1.0, 1.4), 70.0),
            PrototypeSpec("pole", 5, (2.5, 3.5), 150.0),
        ),
    )
    cloud, gt, _ = generate_scene(spec)
    radius = 8.0
    min_xy, max_xy = cloud.bounds_xy()
    centers = grid_centers(min_xy, max_xy, step=radius)
    cutter = CylinderCutter(cloud)
    blocks = [cutter.cut(c, radius) for c in centers]
    blocks = [b for b in blocks if b.size > 0]

    instances = extract_instances(gt)
    contained = [
        any(np.isin(inst.point_ids, b.global_ids).all() for b in blocks) for inst in instances
    ]
    assert all(contained), "precondition: every instance fully inside at least one block"

    per_block = []
    for block in blocks:
        members = gt.instance[block.global_ids]
        block_instances = [
            block.global_ids[members == iid] for iid in np.unique(members[members >= 0])
        ]
        per_block.append(block_instances)
    merged = block_merge(blocks, per_block, len(cloud), t_iou=0.01)

    thing = gt.instance >= 0
    ri = rand_index(merged[thing], gt.instance[thing])
    fully_labeled = bool(np.all(merged[thing] >= 0))
    report("criterion 5: block merging reassembles split instances", ri == 1.0 and fully_labeled,
           f"Rand index {ri}")
    assert fully_labeled
    assert ri == 1.0


# --- 6. complementarity trend -----------------------------------------------------


# Regression values computed once with this exact scene, seed and noise; the
# ordering assertions are the criterion, the pins catch silent drift.
PINNED_F1 = {"I": 0.7499999999999999, "II": 0.7636363636363636, "IV": 0.8727272727272728}


def test_criterion_6_complementarity_trend():
    spec = SceneSpec(
        extent=18.0,
        ground_density=60.0,
        min_gap=-0.2,
        base_height=0.5,
        seed=11,
        prototypes=(PrototypeSpec("tree", 30, (0.8, 1.2), 60.0),),
    )
    cloud, gt, taxonomy = generate_scene(spec)
    assert np.unique(gt.instance[gt.instance >= 0]).size == 30

    radii = []
    for inst in extract_instances(gt):
        pts = cloud.positions[inst.point_ids]
        radii.append(np.linalg.norm(pts - pts.mean(axis=0), axis=1).mean())
    mean_radius = float(np.mean(radii))
    noise = OracleNoise(
        sem_flip_prob=0.03, offset_sigma=0.3 * mean_radius, embedding_sigma=0.4
    )
    # the Table-default growing radius is tuned for near-noiseless offsets; at
    # this offset noise the shifted clusters are sparser, so the scene owns it
    config = default_config("forest").override(seed=11, region_growing_radius=0.3)

    f1 = {}
    for setting in ("I", "II", "IV"):
        result = run_segment(
            cloud, gt, taxonomy, config.override(setting=setting),
            provider="oracle", scorer="consensus", noise=noise,
        )
        f1[setting] = evaluate(result.labeling, gt, taxonomy).f1

    ordered = f1["IV"] >= f1["II"] and f1["IV"] >= f1["I"]
    pinned = all(abs(f1[s] - PINNED_F1[s]) < 1e-9 for s in f1)
    report(
        "criterion 6: combined setting beats either generator alone",
        ordered and pinned,
        " ".join(f"F1({s})={f1[s]:.4f}" for s in ("I", "II", "IV")),
    )
    assert ordered
    for setting in f1:
        assert f1[setting] == pytest.approx(PINNED_F1[setting], abs=1e-9)


# --- 7. mean-shift recovery ---------------------------------------------------------


def test_criterion_7_mean_shift_recovery():
    rng = np.random.default_rng(21)
    per_cluster = 100
    points = np.vstack(
        [codebook_vector(c) + rng.normal(0.0, 0.1, size=(per_cluster, 5)) for c in range(5)]
    )
    truth = np.repeat(np.arange(5), per_cluster)
    clusters = mean_shift(points, bandwidth=0.6)
    pure = all(np.unique(truth[c]).size == 1 for c in clusters)
    complete = sorted(int(truth[c[0]]) for c in clusters) == [0, 1, 2, 3, 4]
    ok = len(clusters) == 5 and pure and complete
    report("criterion 7: mean-shift recovers codebook clusters", ok,
           f"{len(clusters)} clusters")
    assert len(clusters) == 5
    assert pure and complete


# --- 8. determinism --------------------------------------------------------------


SCENE_8 = """\
extent = 12
ground_density = 30
min_gap = 0.5
base_height = 0.5
seed = 3
tree_count = 3
tree_size_min = 0.8
tree_size_max = 1.1
tree_density = 80
car_count = 2
car_size_min = 1.0
car_size_max = 1.2
car_density = 80
"""


def test_criterion_8_determinism(tmp_path):
    scene = tmp_path / "scene.cfg"
    scene.write_text(SCENE_8)
    cloud = tmp_path / "cloud.txt"
    assert main(["synth", "--scene", str(scene), "--out", str(cloud)]) == 0

    outputs = {}
    for name, workers in (("first", "1"), ("second", "1"), ("wide", "8")):
        out = tmp_path / f"{name}.txt"
        code = main(
            ["segment", "--in", str(cloud), "--out", str(out),
             "--seed", "7", "--workers", workers]
        )
        assert code == 0
        outputs[name] = out.read_bytes()
    ok = outputs["first"] == outputs["second"] == outputs["wide"]
    report("criterion 8: segment output is byte-identical across runs and workers", ok)
    assert ok


# --- 9. class-balanced sampling ----------------------------------------------------


def test_criterion_9_class_balanced_sampling():
    n1, n2 = 40_000, 400  # class frequency ratio 100
    positions = np.zeros((n1 + n2, 3))
    positions[n1:, 0] = 100.0  # the rare class sits apart so centers reveal it
    labeling = Labeling([0] * n1 + [1] * n2, [-1] * (n1 + n2))
    draws = 100_000
    centers = class_balanced_centers(PointCloud(positions), labeling, draws, seed=17)
    counts = np.array([(centers[:, 0] < 50.0).sum(), (centers[:, 0] >= 50.0).sum()])

    masses = np.array([n1 / np.sqrt(n1), n2 / np.sqrt(n2)])  # N_c * sqrt(1/N_c)
    expected = draws * masses / masses.sum()
    sigma = np.sqrt(draws * (masses / masses.sum()) * (1 - masses / masses.sum()))
    within = np.all(np.abs(counts - expected) <= 3.0 * sigma)
    report(
        "criterion 9: center sampling follows the sqrt inverse-frequency law",
        bool(within),
        f"counts {counts.tolist()} expected {expected.round(1).tolist()}",
    )
    assert within
