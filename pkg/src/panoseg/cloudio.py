"""Text file formats for clouds, labels, features, candidates and configuration.

Cloud files are UTF-8 text: a header line naming the columns, then one point
per line with space-separated decimal fields. Required columns are ``x y z``;
optional columns are ``sem ins`` (integral labels), offset columns
``off_x off_y off_z``, embedding columns ``emb_0 .. emb_4`` and per-class
probability columns ``p_0 .. p_{C-1}``. Any other column is read into the
cloud's attribute table. Floats are printed with 9 significant digits, which
round-trips bit-exactly through write -> read -> write.

Config files are flat ``key = value`` lines. Blank lines and lines starting
with ``#`` are ignored; unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import Labeling, PointCloud
from .errors import ConfigError, ContractError, FormatError, ParseError

EMBED_DIM = 5

OFFSET_COLUMNS = ("off_x", "off_y", "off_z")
EMBED_COLUMNS = tuple(f"emb_{i}" for i in range(EMBED_DIM))
LABEL_COLUMNS = ("sem", "ins")


def format_float(value: float) -> str:
    return f"{value:.9g}"


# ---------------------------------------------------------------------------
# cloud files
# ---------------------------------------------------------------------------


def read_cloud(path) -> tuple[PointCloud, Labeling | None, dict[str, np.ndarray] | None]:
    """Parse a cloud file into (cloud, labeling, feature columns).

    The labeling is present when a ``sem`` column exists (``ins`` defaults to
    -1). Feature columns (off_*, emb_*, p_*) are returned as a raw dict, or
    None when the file carries none of them.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file, expected a header line")
    columns = lines[0].split()
    if len(set(columns)) != len(columns):
        raise FormatError(f"{path}: duplicate column names in header")
    for required in ("x", "y", "z"):
        if required not in columns:
            raise FormatError(f"{path}: missing required column {required!r}")

    n_cols = len(columns)
    rows = np.empty((len(lines) - 1, n_cols), dtype=np.float64)
    for line_no, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != n_cols:
            raise ParseError(path, line_no, f"expected {n_cols} fields, got {len(fields)}")
        try:
            rows[line_no - 2] = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from exc

    by_name = {name: rows[:, i] for i, name in enumerate(columns)}
    cloud_positions = np.column_stack([by_name["x"], by_name["y"], by_name["z"]])

    labeling = None
    if "sem" in by_name:
        sem = _as_integral(by_name["sem"], path, "sem")
        if "ins" in by_name:
            ins = _as_integral(by_name["ins"], path, "ins")
        else:
            ins = np.full(sem.shape, -1, dtype=np.int64)
        labeling = Labeling(sem, ins)
    elif "ins" in by_name:
        raise FormatError(f"{path}: 'ins' column requires a 'sem' column")

    feature_names = [
        c for c in columns if c in OFFSET_COLUMNS or c in EMBED_COLUMNS or _is_prob_column(c)
    ]
    features = {name: by_name[name] for name in feature_names} or None

    known = set(("x", "y", "z") + LABEL_COLUMNS) | set(feature_names)
    attributes = {c: by_name[c] for c in columns if c not in known}
    cloud = PointCloud(cloud_positions, attributes)
    return cloud, labeling, features


def write_cloud(
    path,
    cloud: PointCloud,
    labeling: Labeling | None = None,
    features: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a cloud file; column order is x y z [sem ins] [features] [attrs]."""
    n = len(cloud)
    columns: list[tuple[str, np.ndarray, bool]] = [
        ("x", cloud.positions[:, 0], False),
        ("y", cloud.positions[:, 1], False),
        ("z", cloud.positions[:, 2], False),
    ]
    if labeling is not None:
        if len(labeling) != n:
            raise ContractError("labeling length does not match cloud")
        columns.append(("sem", labeling.semantic, True))
        columns.append(("ins", labeling.instance, True))
    if features:
        prob_names = sorted((c for c in features if _is_prob_column(c)), key=lambda c: int(c[2:]))
        ordered = [c for c in OFFSET_COLUMNS if c in features]
        ordered += [c for c in EMBED_COLUMNS if c in features]
        ordered += prob_names
        unknown = set(features) - set(ordered)
        if unknown:
            raise ContractError(f"not feature columns: {sorted(unknown)}")
        for name in ordered:
            values = np.asarray(features[name])
            if values.shape != (n,):
                raise ContractError(f"feature column {name!r} has wrong length")
            columns.append((name, values, False))
    for name in sorted(cloud.attributes):
        columns.append((name, cloud.attributes[name], False))

    with open(path, "w", encoding="utf-8") as handle:
        handle.write(" ".join(name for name, _, _ in columns) + "\n")
        cells = [
            [str(int(v)) for v in values] if integral else [format_float(v) for v in values]
            for _, values, integral in columns
        ]
        for row in zip(*cells):
            handle.write(" ".join(row) + "\n")


def _as_integral(values: np.ndarray, path, name: str) -> np.ndarray:
    rounded = np.rint(values)
    if not np.array_equal(rounded, values):
        bad = int(np.flatnonzero(rounded != values)[0]) + 2
        raise ParseError(path, bad, f"column {name!r} must be integral")
    return rounded.astype(np.int64)


def _is_prob_column(name: str) -> bool:
    return name.startswith("p_") and name[2:].isdigit()


def probability_matrix(features: dict[str, np.ndarray], n_classes: int | None = None) -> np.ndarray:
    """Stack p_0..p_{C-1} columns into an (N, C) matrix, checking completeness."""
    names = sorted((c for c in features if _is_prob_column(c)), key=lambda c: int(c[2:]))
    if not names:
        raise FormatError("no probability columns p_* present")
    indices = [int(c[2:]) for c in names]
    if indices != list(range(len(indices))):
        missing = sorted(set(range(max(indices) + 1)) - set(indices))
        raise FormatError(f"missing probability column p_{missing[0]}")
    if n_classes is not None and len(names) != n_classes:
        raise FormatError(f"expected {n_classes} probability columns, found {len(names)}")
    return np.column_stack([features[c] for c in names])


def feature_columns(
    sem_probs: np.ndarray, offsets: np.ndarray, embeddings: np.ndarray
) -> dict[str, np.ndarray]:
    """Explode feature arrays into named cloud-file columns."""
    out = {name: offsets[:, i] for i, name in enumerate(OFFSET_COLUMNS)}
    out.update({name: embeddings[:, i] for i, name in enumerate(EMBED_COLUMNS)})
    out.update({f"p_{c}": sem_probs[:, c] for c in range(sem_probs.shape[1])})
    return out


# ---------------------------------------------------------------------------
# key = value files
# ---------------------------------------------------------------------------


def parse_kv_lines(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file into an ordered dict of strings."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(path, line_no, "expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ParseError(path, line_no, "empty key")
        if key in out:
            raise ParseError(path, line_no, f"duplicate key {key!r}")
        out[key] = value
    return out


def write_kv_lines(path, items: dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for key, value in items.items():
            if isinstance(value, float):
                value = format_float(value)
            handle.write(f"{key} = {value}\n")


SETTINGS = ("I", "II", "III", "IV", "V")

PROFILES = {
    "npm3d": dict(voxel_size=0.12, cylinder_radius=16.0, score_threshold=0.6),
    "forest": dict(voxel_size=0.2, cylinder_radius=4.0, score_threshold=0.5),
}

_SHARED_DEFAULTS = dict(
    region_growing_radius=0.03,
    meanshift_bandwidth=0.6,
    min_cluster_size=10,
    nms_iou_threshold=0.3,
    merge_iou_threshold=0.01,
    seed=0,
    setting="IV",
)


@dataclass(frozen=True)
class PipelineConfig:
    voxel_size: float
    cylinder_radius: float
    region_growing_radius: float
    meanshift_bandwidth: float
    min_cluster_size: int
    score_threshold: float
    nms_iou_threshold: float
    merge_iou_threshold: float
    seed: int
    setting: str

    def __post_init__(self):
        for key in ("voxel_size", "cylinder_radius", "region_growing_radius", "meanshift_bandwidth"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be > 0")
        for key in ("score_threshold", "nms_iou_threshold", "merge_iou_threshold"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1]")
        if self.min_cluster_size < 1:
            raise ConfigError("min_cluster_size must be >= 1")
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {'/'.join(SETTINGS)}")

    def override(self, **kwargs) -> "PipelineConfig":
        set_kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **set_kwargs)


_PARSERS = {
    "voxel_size": float,
    "cylinder_radius": float,
    "region_growing_radius": float,
    "meanshift_bandwidth": float,
    "min_cluster_size": int,
    "score_threshold": float,
    "nms_iou_threshold": float,
    "merge_iou_threshold": float,
    "seed": int,
    "setting": str,
}


def default_config(profile: str = "npm3d") -> PipelineConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return PipelineConfig(**{**_SHARED_DEFAULTS, **PROFILES[profile]})


def read_config(path, profile: str = "npm3d") -> PipelineConfig:
    """Read a pipeline config; unset keys fall back to the profile defaults."""
    config = default_config(profile)
    if path is None or str(path) == "":
        return config
    raw = parse_kv_lines(path)
    values = {}
    for key, text in raw.items():
        parser = _PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {text!r}") from exc
    return config.override(**values)


# ---------------------------------------------------------------------------
# candidate dumps (debug format)
# ---------------------------------------------------------------------------


def write_candidates(path, per_block) -> None:
    """Write per-block candidates. ``per_block`` is a list of
    (center_xy, candidates); candidate lines read
    ``class score origin id_count ids...``."""
    from .core import InstanceCandidate  # local import to avoid cycle at import time

    with open(path, "w", encoding="utf-8") as handle:
        for center_xy, candidates in per_block:
            handle.write(f"block {format_float(center_xy[0])} {format_float(center_xy[1])}\n")
            for cand in candidates:
                assert isinstance(cand, InstanceCandidate)
                ids = " ".join(str(int(i)) for i in cand.point_ids)
                handle.write(
                    f"{cand.class_id} {format_float(cand.score)} {cand.origin} {cand.size} {ids}\n"
                )


def read_candidates(path):
    """Inverse of write_candidates: list of ((cx, cy), [InstanceCandidate])."""
    from .core import InstanceCandidate

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    blocks = []
    current = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if fields[0] == "block":
            if len(fields) != 3:
                raise ParseError(path, line_no, "block header needs 'block cx cy'")
            current = ((float(fields[1]), float(fields[2])), [])
            blocks.append(current)
            continue
        if current is None:
            raise ParseError(path, line_no, "candidate line before any block header")
        if len(fields) < 4:
            raise ParseError(path, line_no, "candidate line too short")
        try:
            class_id = int(fields[0])
            score = float(fields[1])
            origin = fields[2]
            count = int(fields[3])
            ids = np.array([int(f) for f in fields[4:]], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from exc
        if ids.size != count:
            raise ParseError(path, line_no, f"expected {count} ids, got {ids.size}")
        current[1].append(InstanceCandidate(ids, class_id, score, origin))
    return blocks
