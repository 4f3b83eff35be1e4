"""Untrained anomaly detection for axisymmetric parts from a single point cloud.

The cloud is sliced into profiles, the profile matrix is split into basic
components by fuzzy c-means and cleaned of boundary outlier columns, and
each component is decomposed into a low-rank reference plus a sparse
anomaly part.
"""

from .geometry import (
    Aabb,
    PointCloud,
    load_point_cloud,
    nearest_neighbor_map,
    normalize_to_unit_bbox,
    save_point_cloud,
)
from .pipeline import PipelineConfig, detect, detect_cloud, load_config

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "PointCloud",
    "PipelineConfig",
    "detect",
    "detect_cloud",
    "load_config",
    "load_point_cloud",
    "nearest_neighbor_map",
    "normalize_to_unit_bbox",
    "save_point_cloud",
]
