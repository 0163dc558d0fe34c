from .bundle import (BundleError, SceneBundle, load_png, read_bundle, read_depth, save_png,
                     write_bundle, write_depth)
from .camera import Camera, CameraTrajectory, ProjectionError, matrix_to_quat, quat_to_matrix
from .gaussians import GaussianScene, gaussians_from_image, lift_pixel
from .ldi import LdiLayer, cluster_ldi, depth_clusters

__all__ = ["BundleError", "Camera", "CameraTrajectory", "GaussianScene", "LdiLayer",
           "ProjectionError", "SceneBundle", "cluster_ldi", "depth_clusters",
           "gaussians_from_image", "lift_pixel", "load_png", "matrix_to_quat", "quat_to_matrix",
           "read_bundle", "read_depth", "save_png", "write_bundle", "write_depth"]
