"""fastpose: pose-error evaluation and model compression toolkit.

Deterministic throughout: every random draw goes through rng.derive, file
formats round-trip bit-exactly, and repeated runs with the same seeds give
identical outputs (wall-clock latency measurements excepted).
"""

from .errors import FastposeError
from .geom import CameraIntrinsics, ObjectModel, Pose, make_model, rot6d_to_matrix
from .metrics import (
    ARReport,
    ErrorSample,
    EvalResult,
    ThresholdGrid,
    average_recall,
    e_add,
    e_add_s,
    e_mspd,
    e_mssd,
    e_vsd,
    evaluate,
    recall_at,
)
from .raster import DistanceMap, render_distance_map

__version__ = "0.1.0"

__all__ = [
    "ARReport",
    "CameraIntrinsics",
    "DistanceMap",
    "ErrorSample",
    "EvalResult",
    "FastposeError",
    "ObjectModel",
    "Pose",
    "ThresholdGrid",
    "average_recall",
    "e_add",
    "e_add_s",
    "e_mspd",
    "e_mssd",
    "e_vsd",
    "evaluate",
    "make_model",
    "recall_at",
    "render_distance_map",
    "rot6d_to_matrix",
    "__version__",
]
