"""Deterministic synthetic outdoor scenes with exact ground truth.

A scene is a flat ground plane (stuff) plus surface-sampled object instances:
ellipsoids ("tree"), boxes ("car") and vertical cylinders ("pole"). Object
footprints are placed by rejection sampling so that bounding circles keep at
least ``min_gap`` metres between any two instances; a negative gap forces
adjacency or overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloudio import parse_kv_lines, write_kv_lines
from .core import Labeling, PointCloud, SemanticTaxonomy, taxonomy_from_pairs
from .errors import CapacityError, ConfigError, ContractError

GROUND = 0
TREE = 1
CAR = 2
POLE = 3

DEFAULT_TAXONOMY = taxonomy_from_pairs(
    [("ground", "stuff"), ("tree", "thing"), ("car", "thing"), ("pole", "thing")]
)

PROTOTYPE_KINDS = ("tree", "car", "pole")
_CLASS_OF_KIND = {"tree": TREE, "car": CAR, "pole": POLE}


@dataclass(frozen=True)
class PrototypeSpec:
    kind: str  # tree | car | pole
    count: int
    size_range: tuple[float, float]
    density: float  # surface points per square metre

    def __post_init__(self):
        if self.kind not in PROTOTYPE_KINDS:
            raise ContractError(f"unknown prototype kind {self.kind!r}")
        if self.count < 0:
            raise ContractError("prototype count must be >= 0")
        if self.density <= 0:
            raise ContractError("surface density must be > 0")
        if not 0 < self.size_range[0] <= self.size_range[1]:
            raise ContractError("size range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class SceneSpec:
    extent: float  # square scene side, metres
    ground_density: float  # points per square metre
    prototypes: tuple[PrototypeSpec, ...] = ()
    min_gap: float = 0.5  # gap between instance hulls; may be negative
    base_height: float = 0.5  # clearance between ground plane and objects
    seed: int = 0

    def __post_init__(self):
        if self.extent <= 0:
            raise ContractError("extent must be > 0")
        if self.ground_density <= 0:
            raise ContractError("ground density must be > 0")


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, Labeling, SemanticTaxonomy]:
    """Sample a scene; identical spec (including seed) gives bit-identical output."""
    rng = np.random.default_rng(spec.seed)

    n_ground = max(1, round(spec.extent * spec.extent * spec.ground_density))
    ground_xy = rng.uniform(0.0, spec.extent, size=(n_ground, 2))
    chunks = [np.column_stack([ground_xy, np.zeros(n_ground)])]
    sems = [np.full(n_ground, GROUND, dtype=np.int64)]
    inss = [np.full(n_ground, -1, dtype=np.int64)]

    placed: list[tuple[float, float, float]] = []  # (cx, cy, bounding radius)
    total_count = sum(p.count for p in spec.prototypes)
    rejections = 0
    instance_id = 0
    for proto in spec.prototypes:
        for _ in range(proto.count):
            size = rng.uniform(proto.size_range[0], proto.size_range[1])
            foot = _footprint_radius(proto.kind, size)
            while True:
                cx, cy = rng.uniform(foot, spec.extent - foot, size=2) if spec.extent > 2 * foot else (
                    spec.extent / 2.0,
                    spec.extent / 2.0,
                )
                ok = all(
                    np.hypot(cx - px, cy - py) - foot - pr >= spec.min_gap
                    for px, py, pr in placed
                )
                if ok:
                    break
                rejections += 1
                if rejections > 10 * total_count:
                    raise CapacityError(
                        f"could not place {total_count} objects with min_gap {spec.min_gap}"
                    )
            placed.append((cx, cy, foot))
            points = _sample_surface(rng, proto.kind, size, cx, cy, spec.base_height, proto.density)
            chunks.append(points)
            sems.append(np.full(len(points), _CLASS_OF_KIND[proto.kind], dtype=np.int64))
            inss.append(np.full(len(points), instance_id, dtype=np.int64))
            instance_id += 1

    cloud = PointCloud(np.vstack(chunks))
    labeling = Labeling(np.concatenate(sems), np.concatenate(inss))
    return cloud, labeling, DEFAULT_TAXONOMY


def _footprint_radius(kind: str, size: float) -> float:
    if kind == "tree":
        return size  # horizontal semi-axis
    if kind == "car":
        length, width, _ = _car_dims(size)
        return float(np.hypot(length / 2.0, width / 2.0))
    return _POLE_RADIUS


_POLE_RADIUS = 0.1


def _car_dims(size: float) -> tuple[float, float, float]:
    return 1.8 * size, size, 0.7 * size


def _sample_surface(
    rng: np.random.Generator,
    kind: str,
    size: float,
    cx: float,
    cy: float,
    base: float,
    density: float,
) -> np.ndarray:
    if kind == "tree":
        a, b = size, 1.2 * size  # horizontal / vertical semi-axes
        area = _ellipsoid_area(a, a, b)
        n = max(1, round(area * density))
        direction = rng.normal(size=(n, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        pts = direction * np.array([a, a, b])
        pts += np.array([cx, cy, base + b])
        return pts
    if kind == "car":
        length, width, height = _car_dims(size)
        return _sample_box(rng, cx, cy, base, length, width, height, density)
    # pole: lateral surface of a vertical cylinder
    height = size
    area = 2.0 * np.pi * _POLE_RADIUS * height
    n = max(1, round(area * density))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    z = rng.uniform(0.0, height, size=n)
    return np.column_stack(
        [cx + _POLE_RADIUS * np.cos(theta), cy + _POLE_RADIUS * np.sin(theta), base + z]
    )


def _ellipsoid_area(a: float, b: float, c: float, p: float = 1.6075) -> float:
    # Thomsen's approximation; exact area is not needed, only a sane count.
    return 4.0 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3.0) ** (1.0 / p)


def _sample_box(
    rng: np.random.Generator,
    cx: float,
    cy: float,
    base: float,
    length: float,
    width: float,
    height: float,
    density: float,
) -> np.ndarray:
    areas = np.array(
        [
            width * height,  # x = -l/2 and +l/2
            width * height,
            length * height,  # y = -w/2 and +w/2
            length * height,
            length * width,  # z = base and base + h
            length * width,
        ]
    )
    n = max(1, round(areas.sum() * density))
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    pts = np.empty((n, 3))
    half = np.array([length / 2.0, width / 2.0, height / 2.0])
    for face in range(6):
        m = faces == face
        axis = face // 2
        sign = -1.0 if face % 2 == 0 else 1.0
        others = [a for a in range(3) if a != axis]
        pts[m, axis] = sign * half[axis]
        pts[m, others[0]] = u[m] * 2.0 * half[others[0]]
        pts[m, others[1]] = v[m] * 2.0 * half[others[1]]
    pts += np.array([cx, cy, base + height / 2.0])
    return pts


# ---------------------------------------------------------------------------
# scene spec files (same key = value grammar as config files)
# ---------------------------------------------------------------------------

_SCENE_SCALARS = {
    "extent": float,
    "ground_density": float,
    "min_gap": float,
    "base_height": float,
    "seed": int,
}
_PROTO_FIELDS = ("count", "size_min", "size_max", "density")


def read_scene_spec(path) -> SceneSpec:
    raw = parse_kv_lines(path)
    scalars = {}
    proto_values: dict[str, dict[str, float]] = {k: {} for k in PROTOTYPE_KINDS}
    for key, text in raw.items():
        if key in _SCENE_SCALARS:
            try:
                scalars[key] = _SCENE_SCALARS[key](text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {text!r}") from exc
            continue
        kind, _, suffix = key.partition("_")
        if kind in PROTOTYPE_KINDS and suffix in _PROTO_FIELDS:
            try:
                proto_values[kind][suffix] = int(text) if suffix == "count" else float(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {text!r}") from exc
            continue
        raise ConfigError(f"unknown scene key {key!r}")
    if "extent" not in scalars or "ground_density" not in scalars:
        raise ConfigError("scene spec needs at least 'extent' and 'ground_density'")

    prototypes = []
    for kind in PROTOTYPE_KINDS:
        values = proto_values[kind]
        if not values:
            continue
        missing = [f for f in _PROTO_FIELDS if f not in values]
        if missing:
            raise ConfigError(f"scene key {kind}_{missing[0]} is missing")
        prototypes.append(
            PrototypeSpec(
                kind,
                int(values["count"]),
                (values["size_min"], values["size_max"]),
                values["density"],
            )
        )
    return SceneSpec(prototypes=tuple(prototypes), **scalars)


def write_scene_spec(path, spec: SceneSpec) -> None:
    items: dict[str, object] = {
        "extent": spec.extent,
        "ground_density": spec.ground_density,
        "min_gap": spec.min_gap,
        "base_height": spec.base_height,
        "seed": spec.seed,
    }
    for proto in spec.prototypes:
        items[f"{proto.kind}_count"] = proto.count
        items[f"{proto.kind}_size_min"] = proto.size_range[0]
        items[f"{proto.kind}_size_max"] = proto.size_range[1]
        items[f"{proto.kind}_density"] = proto.density
    write_kv_lines(path, items)
