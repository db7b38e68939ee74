"""Depth-label generation, affine augmentation, uncertainty-weighted depth
aggregation and AP|R40 evaluation for monocular 3D detection."""

__version__ = "0.1.0"

from .augmentation import (
    AffineTransform2D,
    horizontal_flip,
    make_crop_scale,
    transform_object,
    transform_point,
    transform_visual_depth,
)
from .depth_fusion import (
    DepthBelief,
    InstancePatch,
    aggregate_depth,
    final_score,
    fuse_cell,
    instance_confidence,
    laplace_nll,
    laplace_nll_grad,
    smooth_l1,
    uncertainty_to_prob,
)
from .depth_labels import (
    DepthGrid,
    attribute_depth_labels,
    build_sparse_depth,
    complete_depth,
    generate_labels,
    grid_visual_depth,
)
from .evaluation import EvalConfig, EvalReport, assign_difficulty, evaluate, match_frame
from .geometry import (
    Box3D,
    backproject,
    bev_polygon,
    corners_3d,
    decode_orientation,
    encode_orientation,
    iou_3d,
    iou_bev,
    project_point,
)
from .kitti_io import (
    CameraCalib,
    ObjectLabel,
    parse_calibration,
    parse_label_line,
    read_point_cloud,
    serialize_detection,
    write_point_cloud,
)
from .synth import SceneConfig, generate_scene, noisy_patches, perfect_detections
