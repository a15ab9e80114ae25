"""Input data generation: voxel subsampling, cylinder block cutting, center
sampling and training-time augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import Labeling, PointCloud, majority_by_group
from .errors import ContractError


@dataclass(frozen=True)
class Block:
    """A cylindrical subset of a cloud.

    ``local_positions`` are the member coordinates shifted so the cylinder
    axis passes through the local origin; z is unchanged.
    """

    global_ids: np.ndarray
    local_positions: np.ndarray
    center_xy: tuple[float, float]
    radius: float

    @property
    def size(self) -> int:
        return self.global_ids.size


@dataclass(frozen=True)
class VoxelMap:
    """Which original points each subsampled point represents.

    ``member_ids[offsets[k]:offsets[k+1]]`` are the original ids represented
    by subsampled point k; ``group_of[i]`` is the subsampled point of original
    point i. The groups partition the original cloud.
    """

    keys: np.ndarray  # (K, 3) int voxel coordinates
    group_of: np.ndarray  # (N,) int
    member_ids: np.ndarray  # (N,) original ids grouped by subsampled point
    offsets: np.ndarray  # (K+1,) group boundaries

    def members(self, k: int) -> np.ndarray:
        return self.member_ids[self.offsets[k] : self.offsets[k + 1]]

    @property
    def n_groups(self) -> int:
        return self.keys.shape[0]


def voxel_subsample(
    cloud: PointCloud, labeling: Labeling | None, voxel: float
) -> tuple[PointCloud, Labeling | None, VoxelMap]:
    """One point per occupied voxel, placed at the barycentre of its members.

    Labels transfer by majority vote within the voxel, ties toward the smaller
    id. Voxel keys are floor(coordinate / voxel) per axis.
    """
    if voxel <= 0:
        raise ContractError("voxel size must be > 0")
    n = len(cloud)
    if n == 0:
        empty_map = VoxelMap(
            np.empty((0, 3), dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.zeros(1, dtype=np.int64),
        )
        return PointCloud(np.empty((0, 3))), labeling, empty_map

    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    uniq_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    k = uniq_keys.shape[0]

    counts = np.bincount(inverse, minlength=k).astype(np.float64)
    centers = np.column_stack(
        [np.bincount(inverse, weights=cloud.positions[:, a], minlength=k) for a in range(3)]
    )
    centers /= counts[:, None]

    order = np.argsort(inverse, kind="stable")
    offsets = np.r_[0, np.cumsum(counts.astype(np.int64))]
    vmap = VoxelMap(uniq_keys, inverse, order.astype(np.int64), offsets)

    sub_labeling = None
    if labeling is not None:
        sem = majority_by_group(inverse, labeling.semantic, k)
        ins = majority_by_group(inverse, labeling.instance, k)
        sub_labeling = Labeling(sem, ins)
    return PointCloud(centers), sub_labeling, vmap


def voxel_mean(vmap: VoxelMap, values: np.ndarray) -> np.ndarray:
    """Per-voxel mean of original per-point values (columns handled together)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    k = vmap.n_groups
    counts = np.bincount(vmap.group_of, minlength=k).astype(np.float64)
    out = np.column_stack(
        [np.bincount(vmap.group_of, weights=values[:, c], minlength=k) for c in range(values.shape[1])]
    )
    return out / counts[:, None]


def class_balanced_centers(
    cloud: PointCloud, labeling: Labeling, k: int, seed: int
) -> np.ndarray:
    """Draw k (x, y) centers, point i of class c weighted by sqrt(1 / N_c)."""
    if k < 1:
        raise ContractError("need k >= 1 centers")
    if len(cloud) == 0:
        raise ContractError("cannot sample centers from an empty cloud")
    counts = np.bincount(labeling.semantic)
    weights = 1.0 / np.sqrt(counts[labeling.semantic])
    weights /= weights.sum()
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(cloud), size=k, replace=True, p=weights)
    return cloud.positions[picks, :2].copy()


def grid_centers(min_xy: np.ndarray, max_xy: np.ndarray, step: float) -> np.ndarray:
    """Regular (x, y) grid covering the bounding box, first center at the min
    corner, spacing ``step``. Every point is within r of some center whenever
    step <= r * sqrt(2)."""
    if step <= 0:
        raise ContractError("grid step must be > 0")
    min_xy = np.asarray(min_xy, dtype=np.float64)
    max_xy = np.asarray(max_xy, dtype=np.float64)
    extents = max_xy - min_xy
    lines = [min_xy[a] + step * np.arange(int(np.ceil(extents[a] / step)) + 1) for a in (0, 1)]
    xs, ys = np.meshgrid(lines[0], lines[1], indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


class CylinderCutter:
    """Reusable 2D spatial index for cutting vertical cylinders out of a cloud."""

    def __init__(self, cloud: PointCloud):
        self._cloud = cloud
        self._tree = cKDTree(cloud.positions[:, :2]) if len(cloud) else None

    def cut(self, center_xy, radius: float) -> Block:
        if radius <= 0:
            raise ContractError("cylinder radius must be > 0")
        cx, cy = float(center_xy[0]), float(center_xy[1])
        if self._tree is None:
            ids = np.empty(0, dtype=np.int64)
        else:
            ids = np.sort(
                np.asarray(self._tree.query_ball_point([cx, cy], radius), dtype=np.int64)
            )
        local = self._cloud.positions[ids] - np.array([cx, cy, 0.0])
        return Block(ids, local, (cx, cy), radius)


def cut_cylinder(cloud: PointCloud, center_xy, radius: float) -> Block:
    """Cut a single cylinder; membership tests horizontal distance <= radius."""
    return CylinderCutter(cloud).cut(center_xy, radius)


def augment(
    block: Block,
    seed: int,
    jitter_sigma: float = 0.01,
    scale_range: tuple[float, float] = (0.9, 1.1),
    rotate: bool = True,
    reflect: bool = True,
) -> Block:
    """Randomized block augmentation, applied in order: Gaussian jitter,
    rotation about the vertical cylinder axis, per-axis scaling, reflection of
    local y with probability 0.5. Labels are untouched; deterministic in seed."""
    rng = np.random.default_rng(seed)
    pos = block.local_positions.copy()
    jitter = rng.normal(0.0, 1.0, size=pos.shape)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    scales = rng.uniform(scale_range[0], scale_range[1], size=3)
    flip = rng.random() < 0.5

    if jitter_sigma > 0:
        pos += jitter_sigma * jitter
    if rotate:
        c, s = np.cos(angle), np.sin(angle)
        x, y = pos[:, 0].copy(), pos[:, 1].copy()
        pos[:, 0] = c * x - s * y
        pos[:, 1] = s * x + c * y
    pos *= scales
    if reflect and flip:
        pos[:, 1] = -pos[:, 1]
    return Block(block.global_ids, pos, block.center_xy, block.radius)
