"""Analytic flows and synthetic river scenes used as oracles."""

from .fields import (AnalyticField, ChannelFlow, ConstantField, CylinderFlow, DomainError,
                     NegatedField, RigidRotation, UniformAcceleration, field_from_dict,
                     potential_flow_cylinder)
from .scenes import (GeometricRegion, SyntheticScene, Texture, boundary_band, default_camera,
                     edit_scene_add_obstacle, ground_truth_payload, integrate, make_scene,
                     render_ground_truth, sample_boundary_probes, sample_physics_probes,
                     sample_scene_flow, scene_from_bundle, scene_to_bundle)


def uniform_channel_flow(speed: float, p, half_width: float = 5.0, y_center: float = 0.0):
    """Parabolic bank profile: (U profile(y), 0, 0), vanishing at the channel walls."""
    return ChannelFlow(speed, half_width, y_center).velocity(p, 0.0)
