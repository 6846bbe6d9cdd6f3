"""Dataset readers/writers, synthetic scenes, and label densification."""

from .densify import DensifyConfig, densify_labels
from .readers import (FORMATS, S3DIS, SEMANTIC3D, XYZL, FormatError, list_clouds,
                      read_xyz_label, write_cloud, write_predictions)
from .synthetic import SceneSpec, SceneSpecError, generate_scene, random_scene_spec, synthetic_dataset

__all__ = [
    "DensifyConfig", "FORMATS", "FormatError", "S3DIS", "SEMANTIC3D", "SceneSpec", "SceneSpecError",
    "XYZL", "densify_labels", "generate_scene", "list_clouds", "random_scene_spec", "read_xyz_label",
    "synthetic_dataset", "write_cloud", "write_predictions",
]
