"""Gaze-contingent perceptual scheduling for progressive 3D streaming.

The package simulates a cloud-edge pipeline that streams level-of-detail
upgrades for a 3D scene to a head-mounted display, ordering the upgrades
by how perceptible they are to the viewer right now: retinal acuity and
contrast sensitivity gate what the eye can resolve, a band-contrast
popping model scores the visibility of each LoD switch, and a greedy
per-bit scheduler packs the network budget.  A small MLP surrogate can
replace the analytic importance evaluation on the cloud side.
"""

__version__ = "0.1.0"

from .vision import RetinaParams, DisplayParams
from .errors import (
    GazestreamError,
    DomainError,
    ConfigError,
    AssetError,
    TraceError,
    ModelError,
    DatasetError,
    StalenessError,
)

__all__ = [
    "RetinaParams",
    "DisplayParams",
    "GazestreamError",
    "DomainError",
    "ConfigError",
    "AssetError",
    "TraceError",
    "ModelError",
    "DatasetError",
    "StalenessError",
    "__version__",
]
