"""polarmesh: multi-view mesh refinement guided by polarization cues.

Jointly optimizes vertex positions, per-vertex albedos and per-image
spherical-harmonics illumination against multi-view intensity, AoP and
DoP images. Hot numeric kernels are numba-compiled, with a pure-numpy
fallback selected by the POLARMESH_DISABLE_NUMBA environment variable.
"""

__version__ = "0.1.0"

from .camera import Camera, load_cameras, save_cameras
from .cost import CostBreakdown, CostOptions, CostProblem, ParamState, ViewImages
from .mesh import TriMesh, compute_visibility, icosphere, sqrt3_subdivide
from .optimizer import Stage, StageSchedule, initialize, minimize_stage, run_pipeline
from .polarimetry import PolarizationImageSet, demosaic, derive_planes
from .shading import Illumination
from .synth import SyntheticScene, perturb_mesh, render_views, save_dataset

__all__ = [
    "Camera", "load_cameras", "save_cameras",
    "CostBreakdown", "CostOptions", "CostProblem", "ParamState", "ViewImages",
    "TriMesh", "compute_visibility", "icosphere", "sqrt3_subdivide",
    "Stage", "StageSchedule", "initialize", "minimize_stage", "run_pipeline",
    "PolarizationImageSet", "demosaic", "derive_planes",
    "Illumination", "SyntheticScene", "perturb_mesh", "render_views", "save_dataset",
    "__version__",
]
