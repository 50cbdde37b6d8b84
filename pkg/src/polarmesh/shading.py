"""Second-order spherical-harmonics illumination and per-vertex rendering.

Each image's illumination is 9 SH basis coefficients plus an RGB color
scale. Rendered color is albedo * shading * scale per channel. Shading
can go negative for strong SH coefficients; residual evaluation clamps
it at zero (raw values stay available through sh_shade).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Illumination:
    basis: np.ndarray   # (9,)
    scale: np.ndarray   # (3,)

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64).reshape(9)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if not (np.isfinite(self.basis).all() and np.isfinite(self.scale).all()):
            raise ValueError("illumination coefficients must be finite")

    @classmethod
    def uniform(cls) -> "Illumination":
        basis = np.zeros(9)
        basis[0] = 1.0
        return cls(basis, np.ones(3))

    def packed(self) -> np.ndarray:
        return np.concatenate([self.basis, self.scale])


def sh_shade(normal, basis) -> float:
    """Shading of a unit normal under the 9-coefficient SH basis."""
    nx, ny, nz = np.asarray(normal, dtype=np.float64)
    b = np.asarray(basis, dtype=np.float64)
    return float(b[0] + b[1] * ny + b[2] * nz + b[3] * nx
                 + b[4] * nx * ny + b[5] * ny * nz
                 + b[6] * (nz * nz - 1.0 / 3.0)
                 + b[7] * nx * nz + b[8] * (nx * nx - ny * ny))


def render_vertex(albedo, normal, illum: Illumination, clamp: bool = True) -> np.ndarray:
    """Rendered RGB of one vertex; negative shading clamps to 0 when `clamp`."""
    s = sh_shade(normal, illum.basis)
    if clamp and s < 0.0:
        s = 0.0
    return np.asarray(albedo, dtype=np.float64) * s * illum.scale


def save_illuminations(path, illums: list[Illumination]) -> None:
    data = [{"basis": [float(v) for v in il.basis],
             "scale": [float(v) for v in il.scale]} for il in illums]
    with open(path, "w") as f:
        json.dump(data, f, indent=1)
        f.write("\n")


def load_illuminations(path) -> list[Illumination]:
    with open(path) as f:
        data = json.load(f)
    return [Illumination(np.array(e["basis"]), np.array(e["scale"])) for e in data]
