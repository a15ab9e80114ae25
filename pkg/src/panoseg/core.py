"""Shared domain types and index-set algebra.

Conventions used throughout the package:
  * point clouds are column-major numpy arrays, positions in metres;
  * semantic labels are small contiguous integer class ids;
  * instance id -1 means "no instance"; real instance ids are non-negative;
  * index sets are sorted, duplicate-free int64 arrays of global point ids.

All types are treated as immutable after construction and all operations here
are pure, so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

NO_INSTANCE = -1

THING = "thing"
STUFF = "stuff"

CANDIDATE_ORIGINS = ("raw", "offset", "embedding")


@dataclass(frozen=True)
class SemanticClass:
    class_id: int
    name: str
    kind: str  # "thing" or "stuff"


@dataclass(frozen=True)
class SemanticTaxonomy:
    """Ordered list of semantic classes; ids must be contiguous from 0."""

    classes: tuple[SemanticClass, ...]

    def __post_init__(self):
        if not self.classes:
            raise ContractError("taxonomy needs at least one class")
        ids = [c.class_id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ContractError(f"class ids must be contiguous from 0, got {ids}")
        for c in self.classes:
            if c.kind not in (THING, STUFF):
                raise ContractError(f"unknown kind {c.kind!r} for class {c.name!r}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def thing_ids(self) -> np.ndarray:
        return np.array([c.class_id for c in self.classes if c.kind == THING], dtype=np.int64)

    @property
    def stuff_ids(self) -> np.ndarray:
        return np.array([c.class_id for c in self.classes if c.kind == STUFF], dtype=np.int64)

    def is_thing(self, class_id: int) -> bool:
        return self.classes[class_id].kind == THING

    def thing_mask(self, semantic: np.ndarray) -> np.ndarray:
        """Boolean mask of points whose class is a thing class."""
        lookup = np.array([c.kind == THING for c in self.classes])
        return lookup[semantic]


def taxonomy_from_pairs(pairs: list[tuple[str, str]]) -> SemanticTaxonomy:
    """Build a taxonomy from (name, kind) pairs; ids follow list order."""
    return SemanticTaxonomy(
        tuple(SemanticClass(i, name, kind) for i, (name, kind) in enumerate(pairs))
    )


class PointCloud:
    """Columnar 3D positions plus optional per-point scalar attributes."""

    __slots__ = ("positions", "attributes")

    def __init__(self, positions, attributes: dict[str, np.ndarray] | None = None):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(positions)):
            raise ContractError("point coordinates must be finite")
        self.positions = positions
        self.attributes = {}
        for name, values in (attributes or {}).items():
            values = np.asarray(values)
            if values.shape != (len(positions),):
                raise ContractError(
                    f"attribute {name!r} has length {values.shape}, cloud has {len(positions)} points"
                )
            self.attributes[name] = values

    def __len__(self) -> int:
        return self.positions.shape[0]

    def bounds_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """(min_xy, max_xy) of the horizontal bounding box."""
        if len(self) == 0:
            raise ContractError("empty cloud has no bounds")
        xy = self.positions[:, :2]
        return xy.min(axis=0), xy.max(axis=0)


@dataclass(frozen=True)
class Labeling:
    """Per-point semantic class id and instance id (-1 = no instance)."""

    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "semantic", np.asarray(self.semantic, dtype=np.int64).ravel())
        object.__setattr__(self, "instance", np.asarray(self.instance, dtype=np.int64).ravel())
        if self.semantic.shape != self.instance.shape:
            raise ContractError("semantic and instance arrays must have equal length")

    def __len__(self) -> int:
        return self.semantic.size

    def validate(
        self,
        taxonomy: SemanticTaxonomy,
        n_points: int | None = None,
        require_stuff_unassigned: bool = True,
        require_things_assigned: bool = False,
    ) -> None:
        if n_points is not None and len(self) != n_points:
            raise ContractError(f"labeling covers {len(self)} points, cloud has {n_points}")
        if self.semantic.size and (
            self.semantic.min() < 0 or self.semantic.max() >= taxonomy.num_classes
        ):
            raise ContractError("semantic label outside taxonomy")
        if np.any(self.instance < NO_INSTANCE):
            raise ContractError("instance ids must be >= -1")
        stuff = ~taxonomy.thing_mask(self.semantic)
        if require_stuff_unassigned and np.any(self.instance[stuff] != NO_INSTANCE):
            raise ContractError("stuff points must carry instance -1")
        if require_things_assigned and np.any(self.instance[~stuff] == NO_INSTANCE):
            raise ContractError("thing points must carry a non-negative instance id")


def as_index_set(ids) -> np.ndarray:
    """Normalize to a sorted, duplicate-free int64 index set."""
    arr = np.unique(np.asarray(ids, dtype=np.int64))
    return arr


@dataclass(frozen=True)
class InstanceCandidate:
    """A tentative object: global point ids + majority class + score."""

    point_ids: np.ndarray
    class_id: int
    score: float = 0.0
    origin: str = "raw"

    def __post_init__(self):
        ids = np.asarray(self.point_ids, dtype=np.int64).ravel()
        if ids.size == 0:
            raise ContractError("candidate point set must be non-empty")
        if np.any(np.diff(ids) <= 0):
            raise ContractError("candidate point ids must be strictly sorted")
        object.__setattr__(self, "point_ids", ids)
        if not 0.0 <= self.score <= 1.0:
            raise ContractError(f"score {self.score} outside [0, 1]")
        if self.origin not in CANDIDATE_ORIGINS:
            raise ContractError(f"unknown candidate origin {self.origin!r}")

    @property
    def size(self) -> int:
        return self.point_ids.size


@dataclass(frozen=True)
class Instance:
    """One extracted ground-truth or predicted instance."""

    instance_id: int
    point_ids: np.ndarray
    class_id: int

    @property
    def size(self) -> int:
        return self.point_ids.size


def instance_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two sorted duplicate-free index sets."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 and b.size == 0:
        raise ContractError("IoU of two empty sets is undefined")
    inter = np.intersect1d(a, b, assume_unique=True).size
    union = a.size + b.size - inter
    return inter / union


def majority_by_group(group_index: np.ndarray, values: np.ndarray, n_groups: int) -> np.ndarray:
    """Modal value per group; ties broken toward the smaller value.

    Every group in 0..n_groups-1 must contain at least one element.
    """
    group_index = np.asarray(group_index, dtype=np.int64)
    values = np.asarray(values, dtype=np.int64)
    order = np.lexsort((values, group_index))
    g = group_index[order]
    v = values[order]
    # run-length encode the (group, value) pairs
    starts = np.flatnonzero(np.r_[True, (g[1:] != g[:-1]) | (v[1:] != v[:-1])])
    counts = np.diff(np.r_[starts, g.size])
    run_g = g[starts]
    run_v = v[starts]
    # within each group: largest count first, then smallest value
    pick = np.lexsort((run_v, -counts, run_g))
    lead = np.flatnonzero(np.r_[True, run_g[pick][1:] != run_g[pick][:-1]])
    out = np.full(n_groups, -1, dtype=np.int64)
    out[run_g[pick][lead]] = run_v[pick][lead]
    return out


def extract_instances(labeling: Labeling) -> list[Instance]:
    """One Instance per distinct non-negative instance id.

    The index sets partition the points carrying that id; the class is the
    modal semantic id within the set, ties toward the smaller class id.
    """
    mask = labeling.instance >= 0
    if not np.any(mask):
        return []
    ids = labeling.instance[mask]
    sem = labeling.semantic[mask]
    points = np.flatnonzero(mask)
    uniq, inverse = np.unique(ids, return_inverse=True)
    inverse = inverse.ravel()
    majority = majority_by_group(inverse, sem, uniq.size)
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=uniq.size)
    splits = np.split(points[order], np.cumsum(counts)[:-1])
    return [
        Instance(int(uniq[k]), np.sort(splits[k]), int(majority[k]))
        for k in range(uniq.size)
    ]
