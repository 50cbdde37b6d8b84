"""Numeric kernels with a numba fast path and a numpy fallback.

The backend is chosen at import time from POLARMESH_DISABLE_NUMBA (see
_dispatch). Full-evaluation kernels dispatch to the vectorized numpy
versions when numba is off; the sparse gradient kernels always use the
loop implementations (compiled or not).
"""

from ._dispatch import USE_NUMBA
from . import _impl
from . import cpu

eta_scalar = _impl.eta_scalar
grad_position = _impl.grad_position
grad_albedo = _impl.grad_albedo
grad_illum = _impl.grad_illum
raycast_mesh = _impl.raycast_mesh

if USE_NUMBA:
    face_normals = _impl.face_normals
    vertex_normals = _impl.vertex_normals
    data_cost = _impl.data_cost
    gsm_cost = _impl.gsm_cost
    rasterize_depth = _impl.rasterize_depth
else:
    face_normals = cpu.face_normals
    vertex_normals = cpu.vertex_normals
    data_cost = cpu.data_cost
    gsm_cost = cpu.gsm_cost
    rasterize_depth = cpu.rasterize_depth

__all__ = [
    "USE_NUMBA", "eta_scalar", "face_normals", "vertex_normals",
    "data_cost", "gsm_cost", "rasterize_depth",
    "grad_position", "grad_albedo", "grad_illum", "raycast_mesh",
]
