"""Bottom-up panoptic segmentation of outdoor point clouds at desk scale."""

from .core import (
    Instance,
    InstanceCandidate,
    Labeling,
    PointCloud,
    SemanticClass,
    SemanticTaxonomy,
    extract_instances,
    instance_iou,
    taxonomy_from_pairs,
)
from .errors import PanosegError

__version__ = "0.1.0"

__all__ = [
    "Instance",
    "InstanceCandidate",
    "Labeling",
    "PanosegError",
    "PointCloud",
    "SemanticClass",
    "SemanticTaxonomy",
    "extract_instances",
    "instance_iou",
    "taxonomy_from_pairs",
    "__version__",
]
