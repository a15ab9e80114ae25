"""Pluggable per-point feature sources: semantic probabilities, centre
offsets and 5D instance embeddings for one block.

Two providers are included. The oracle provider derives features from ground
truth with controllable noise, so every downstream stage can be verified at
desk scale. The file provider passes through feature columns read from a
cloud file (for example, exported network predictions).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .blocks import Block
from .cloudio import EMBED_DIM, probability_matrix
from .core import Labeling, SemanticTaxonomy
from .errors import CapacityError, ContractError, DataError, FormatError

# Embedding codebook geometry: vectors live on a sphere of this radius and
# keep at least this distance from each other (twice the inter-cluster margin
# of the contrastive training the embeddings emulate).
CODEBOOK_RADIUS = 3.0
CODEBOOK_MIN_DIST = 3.0
_CODEBOOK_SHUFFLE_SEED = 0x5EED_C0DE

_codebook: np.ndarray | None = None
_codebook_lock = threading.Lock()


def _build_codebook() -> np.ndarray:
    """All signed coordinate pairs (+-1, +-1, 0, 0, 0) scaled to the sphere.

    The 40 vectors of this family realize the largest known pairwise
    separation of 60 degrees in 5D, i.e. min distance exactly
    CODEBOOK_MIN_DIST on the CODEBOOK_RADIUS sphere. Sequential random
    packing saturates below 20 vectors, far short of what multi-object
    scenes need, hence the closed-form family. Order is a fixed shuffle so
    consecutive ids are not geometrically correlated.
    """
    vectors = []
    # the +1e-9 keeps pairwise float distances at or above the exact bound,
    # which the irrational scale alone misses by one ulp
    scale = (CODEBOOK_RADIUS / np.sqrt(2.0)) * (1.0 + 1e-9)
    for i in range(EMBED_DIM):
        for j in range(i + 1, EMBED_DIM):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    v = np.zeros(EMBED_DIM)
                    v[i], v[j] = si, sj
                    vectors.append(v * scale)
    table = np.array(vectors)
    order = np.random.default_rng(_CODEBOOK_SHUFFLE_SEED).permutation(len(table))
    return table[order]


@dataclass(frozen=True)
class FeatureSet:
    """Per-point features for one block."""

    sem_probs: np.ndarray  # (N, C), rows non-negative and summing to 1
    offsets: np.ndarray  # (N, 3), metres
    embeddings: np.ndarray  # (N, EMBED_DIM)

    def __post_init__(self):
        n = self.sem_probs.shape[0]
        if self.offsets.shape != (n, 3) or self.embeddings.shape != (n, EMBED_DIM):
            raise ContractError("feature arrays disagree on point count or width")
        for arr in (self.sem_probs, self.offsets, self.embeddings):
            if not np.all(np.isfinite(arr)):
                raise ContractError("features must be finite")
        if n and (np.any(self.sem_probs < 0) or np.any(np.abs(self.sem_probs.sum(axis=1) - 1.0) > 1e-6)):
            raise ContractError("sem_probs rows must be non-negative and sum to 1")

    def __len__(self) -> int:
        return self.sem_probs.shape[0]


@dataclass(frozen=True)
class OracleNoise:
    sem_flip_prob: float = 0.0
    offset_sigma: float = 0.0
    embedding_sigma: float = 0.0

    def __post_init__(self):
        if self.sem_flip_prob < 0 or self.sem_flip_prob > 1:
            raise ContractError("sem_flip_prob must lie in [0, 1]")
        if self.offset_sigma < 0 or self.embedding_sigma < 0:
            raise ContractError("noise sigmas must be non-negative")


def codebook_vector(instance_id: int) -> np.ndarray:
    """Deterministic embedding-space anchor for an instance id.

    The vector for a given id is a pure function of the id; it never depends
    on which other ids a caller happens to use. At most 40 distinct ids fit
    the separation contract, which caps the number of instances one oracle
    scene may contain.
    """
    global _codebook
    if instance_id < 0:
        raise ContractError("codebook ids are non-negative instance ids")
    with _codebook_lock:
        if _codebook is None:
            _codebook = _build_codebook()
    if instance_id >= len(_codebook):
        raise CapacityError(
            f"codebook holds {len(_codebook)} vectors at min distance "
            f"{CODEBOOK_MIN_DIST}; instance id {instance_id} does not fit"
        )
    return _codebook[instance_id].copy()


def oracle_provide(
    block: Block,
    gt: Labeling | None,
    taxonomy: SemanticTaxonomy,
    noise: OracleNoise = OracleNoise(),
    seed: int = 0,
) -> FeatureSet:
    """Features derived from ground truth, with optional noise.

    Semantic probabilities are one-hot in the true class, flipped to a random
    other class with probability ``sem_flip_prob``. Offsets point from each
    point to its instance centroid within the block (zero for points without
    an instance), plus per-axis Gaussian noise. Embeddings are the instance's
    codebook vector (zero vector for points without an instance) plus noise.
    """
    if gt is None:
        raise ContractError("oracle provider requires ground-truth labels")
    n = block.size
    sem = gt.semantic[block.global_ids]
    ins = gt.instance[block.global_ids]
    c = taxonomy.num_classes
    rng = np.random.default_rng(seed)

    # fixed draw order keeps results reproducible across noise settings
    flip_mask = rng.random(n) < noise.sem_flip_prob
    flip_step = rng.integers(1, c, size=n) if c > 1 else np.zeros(n, dtype=np.int64)
    offset_noise = rng.normal(0.0, 1.0, size=(n, 3))
    embed_noise = rng.normal(0.0, 1.0, size=(n, EMBED_DIM))

    classes = sem.copy()
    classes[flip_mask] = (classes[flip_mask] + flip_step[flip_mask]) % c
    sem_probs = np.zeros((n, c))
    sem_probs[np.arange(n), classes] = 1.0

    offsets = np.zeros((n, 3))
    embeddings = np.zeros((n, EMBED_DIM))
    for iid in np.unique(ins[ins >= 0]):
        members = ins == iid
        centroid = block.local_positions[members].mean(axis=0)
        offsets[members] = centroid - block.local_positions[members]
        embeddings[members] = codebook_vector(int(iid))
    offsets += noise.offset_sigma * offset_noise
    embeddings += noise.embedding_sigma * embed_noise
    return FeatureSet(sem_probs, offsets, embeddings)


def file_provide(block: Block, columns: dict[str, np.ndarray], n_classes: int) -> FeatureSet:
    """Features sliced from cloud-file columns covering the block's points.

    Probability rows within 1e-3 of summing to 1 are renormalized; anything
    further off is a data error.
    """
    for name in ("off_x", "off_y", "off_z"):
        if name not in columns:
            raise FormatError(f"missing feature column {name!r}")
    for i in range(EMBED_DIM):
        if f"emb_{i}" not in columns:
            raise FormatError(f"missing feature column 'emb_{i}'")
    probs = probability_matrix(columns, n_classes)[block.global_ids]
    sums = probs.sum(axis=1)
    off = np.flatnonzero(np.abs(sums - 1.0) > 1e-3)
    if off.size:
        raise DataError(
            f"probability row {int(off[0])} sums to {sums[off[0]]:.6g}, beyond the 1e-3 tolerance"
        )
    probs = probs / sums[:, None]
    offsets = np.column_stack([columns[c][block.global_ids] for c in ("off_x", "off_y", "off_z")])
    embeddings = np.column_stack(
        [columns[f"emb_{i}"][block.global_ids] for i in range(EMBED_DIM)]
    )
    return FeatureSet(probs, offsets, embeddings)
