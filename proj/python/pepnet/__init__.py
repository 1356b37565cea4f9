"""Point-based event-camera pose relocalization.

Event streams become normalized space-time point clouds, a hierarchical
grouping network with an attentive bidirectional LSTM regresses the 6-DOF
camera pose, and everything down to the gradients is checked against
independent oracles. See the project README for the CLI workflow.
"""

from ._pepnet import (
    Model,
    build_clouds,
    count_parameters,
    farthest_point_sample,
    gradcheck,
    knn_group,
    make_split,
    parse_events,
    parse_poses,
    segment_windows,
    standardize_group,
    synth_scene,
    write_events,
    write_poses,
)

__all__ = [
    "Model",
    "build_clouds",
    "count_parameters",
    "farthest_point_sample",
    "gradcheck",
    "knn_group",
    "make_split",
    "parse_events",
    "parse_poses",
    "segment_windows",
    "standardize_group",
    "synth_scene",
    "write_events",
    "write_poses",
]

__version__ = "0.1.0"
