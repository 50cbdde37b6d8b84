"""Polarization calculus and color-polarization sensor decoding.

Intensities observed behind a linear polarizer at angle a follow
    I_a = I_int * (1 + rho * cos 2(a - phi)),
with phi the angle of polarization (AoP) and rho the degree of
polarization (DoP). Four samples at 0/45/90/135 degrees give the linear
Stokes components, from which phi and rho are recovered. Circular
polarization is not modeled (s3 = 0 throughout).

AoP is reported in [0, pi). Pixels with no linear polarization signal
(s1 = s2 = 0) get AoP = NaN and DoP = 0; downstream weighting ignores
them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

AOP_UNDEFINED = np.nan

POLARIZER_ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)


class PolarimetryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Stokes calculus (scalar or array inputs)

def forward_directions(phi, rho, i_int):
    """Intensities at polarizer angles 0/45/90/135 for given (phi, rho, I_int)."""
    phi = np.asarray(phi, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    i_int = np.asarray(i_int, dtype=np.float64)
    return tuple(i_int * (1.0 + rho * np.cos(2.0 * (a - phi)))
                 for a in POLARIZER_ANGLES)


def stokes_from_directions(i0, i45, i90, i135):
    """Linear Stokes components (s0, s1, s2) from the four direction images."""
    arrs = [np.asarray(a, dtype=np.float64) for a in (i0, i45, i90, i135)]
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise PolarimetryError("non-finite polarization sample")
    i0, i45, i90, i135 = arrs
    return i0 + i90, i0 - i90, i45 - i135


def aop(s1, s2):
    """Angle of polarization in [0, pi); NaN where s1 = s2 = 0."""
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    phi = 0.5 * np.arctan2(s2, s1)
    phi = np.where(phi < 0.0, phi + np.pi, phi)
    # atan2(0, s1 > 0) is 0 which is fine; only the all-zero case is undefined
    undefined = (s1 == 0.0) & (s2 == 0.0)
    phi = np.where(undefined, AOP_UNDEFINED, phi)
    return phi if phi.ndim else float(phi)


def dop(s0, s1, s2):
    """Degree of polarization in [0, 1], clamped. Raises on s0 <= 0 (scalar path)."""
    s0 = np.asarray(s0, dtype=np.float64)
    if s0.ndim == 0 and s0 <= 0.0:
        raise PolarimetryError("undefined DoP: s0 <= 0")
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.hypot(s1, s2) / s0
    rho = np.where(s0 > 0.0, np.minimum(rho, 1.0), 0.0)
    return rho if rho.ndim else float(rho)


# ---------------------------------------------------------------------------
# Image sets

@dataclass
class PolarizationImageSet:
    """Four-direction RGB planes plus the derived planes used by refinement."""

    i0: np.ndarray    # (H, W, 3)
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray
    rgb_int: np.ndarray | None = None   # (H, W, 3)
    rgb_min: np.ndarray | None = None   # (H, W, 3)
    aop: np.ndarray | None = None       # (H, W), radians in [0, pi) or NaN
    dop: np.ndarray | None = None       # (H, W), [0, 1]
    diagnostics: dict = field(default_factory=dict)

    PLANES = ("i0", "i45", "i90", "i135", "rgb_int", "rgb_min", "aop", "dop")

    @property
    def height(self) -> int:
        return self.i0.shape[0]

    @property
    def width(self) -> int:
        return self.i0.shape[1]

    def validate(self):
        hw = self.i0.shape[:2]
        for name in self.PLANES:
            plane = getattr(self, name)
            if plane is not None and plane.shape[:2] != hw:
                raise PolarimetryError(f"plane {name} has shape {plane.shape}, expected {hw}")
        return self

    def save(self, view_dir):
        from .io import write_pfm
        import os
        os.makedirs(view_dir, exist_ok=True)
        for name in self.PLANES:
            plane = getattr(self, name)
            if plane is not None:
                write_pfm(os.path.join(view_dir, f"{name}.pfm"), plane)

    @classmethod
    def load(cls, view_dir):
        from .io import read_pfm
        import os
        planes = {}
        for name in cls.PLANES:
            path = os.path.join(view_dir, f"{name}.pfm")
            if os.path.exists(path):
                planes[name] = np.asarray(read_pfm(path), dtype=np.float64)
        missing = [n for n in ("i0", "i45", "i90", "i135") if n not in planes]
        if missing:
            raise PolarimetryError(f"{view_dir}: missing planes {missing}")
        return cls(**planes).validate()


def derive_planes(imgset: PolarizationImageSet) -> PolarizationImageSet:
    """Fill rgb_int/rgb_min/aop/dop from the four direction planes.

    AoP/DoP come from the channel-averaged direction values; rgb_min is
    (1 - dop) * rgb_int. Idempotent on the derived planes.
    """
    imgset.validate()
    i0, i45, i90, i135 = imgset.i0, imgset.i45, imgset.i90, imgset.i135
    rgb_int = (i0 + i45 + i90 + i135) / 4.0

    g0, g45, g90, g135 = (p.mean(axis=2) for p in (i0, i45, i90, i135))
    s0, s1, s2 = stokes_from_directions(g0, g45, g90, g135)
    rho = dop(s0, s1, s2)
    phi = aop(s1, s2)
    bad = ~np.isfinite(rho)
    if bad.any():
        imgset.diagnostics["nonfinite_pixels"] = int(bad.sum())
        rho = np.where(bad, 0.0, rho)
        phi = np.where(bad, AOP_UNDEFINED, phi)

    imgset.rgb_int = rgb_int
    imgset.rgb_min = (1.0 - rho)[..., None] * rgb_int
    imgset.aop = phi
    imgset.dop = rho
    return imgset


# ---------------------------------------------------------------------------
# Mosaic pattern + demosaicking

_COLORS = {"R": 0, "G": 1, "B": 2}
_ANGLES = {0: 0, 45: 1, 90: 2, 135: 3}
_ANGLE_NAMES = ("i0", "i45", "i90", "i135")


class MosaicPattern:
    """A 4x4 color-polarization cell layout.

    The table assigns every cell (row, col) a color in {R,G,B} and a
    polarizer angle in {0,45,90,135}. Each angle must occupy one fixed
    position modulo 2 (the usual quad-of-Bayer-cells arrangement), which
    is what the two-stage interpolation below relies on.
    """

    def __init__(self, entries):
        if len(entries) != 16:
            raise PolarimetryError(f"pattern must have 16 entries, got {len(entries)}")
        self.color = -np.ones((4, 4), dtype=np.int64)
        self.angle = -np.ones((4, 4), dtype=np.int64)
        for e in entries:
            r, c = int(e["row"]), int(e["col"])
            if not (0 <= r < 4 and 0 <= c < 4) or self.color[r, c] >= 0:
                raise PolarimetryError(f"bad or duplicate pattern cell ({r},{c})")
            if e["color"] not in _COLORS or int(e["angle"]) not in _ANGLES:
                raise PolarimetryError(f"unknown color/angle in pattern cell ({r},{c})")
            self.color[r, c] = _COLORS[e["color"]]
            self.angle[r, c] = _ANGLES[int(e["angle"])]
        if (self.color < 0).any():
            raise PolarimetryError("pattern does not cover the full 4x4 tile")
        # angle -> (row, col) offset modulo 2
        self.angle_offset = {}
        for a in range(4):
            rows, cols = np.nonzero(self.angle == a)
            if len(rows) != 4 or len(set(zip(rows % 2, cols % 2))) != 1:
                raise PolarimetryError("each angle must sit at one fixed 2x2 offset")
            self.angle_offset[a] = (int(rows[0] % 2), int(cols[0] % 2))

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls(json.load(f))

    def bayer_colors(self, angle_idx):
        """2x2 color layout of the half-resolution image for one angle."""
        ro, co = self.angle_offset[angle_idx]
        layout = np.empty((2, 2), dtype=np.int64)
        for i in range(2):
            for j in range(2):
                layout[i, j] = self.color[(2 * i + ro) % 4, (2 * j + co) % 4]
        if sorted(layout.reshape(-1).tolist()).count(1) != 2 or set(layout.reshape(-1)) != {0, 1, 2}:
            raise PolarimetryError("per-angle sub-image is not Bayer-patterned")
        return layout


# Sony IMX250MYR-style layout: 2x2 polarization blocks (90,45 / 135,0)
# nested inside an RGGB Bayer macro-pattern.
DEFAULT_PATTERN = MosaicPattern([
    {"row": r, "col": c,
     "color": "RGGB"[2 * ((r // 2) % 2) + ((c // 2) % 2)],
     "angle": [[90, 45], [135, 0]][r % 2][c % 2]}
    for r in range(4) for c in range(4)
])


def _bayer_interpolate(img, layout):
    """Bilinear Bayer demosaic via mask-normalized convolution (exact at samples)."""
    h, w = img.shape
    out = np.empty((h, w, 3), dtype=np.float64)
    kernel = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])
    rows = np.arange(h)[:, None] % 2
    cols = np.arange(w)[None, :] % 2
    for ch in range(3):
        mask = (layout[rows, cols] == ch).astype(np.float64)
        num = ndimage.convolve(img * mask, kernel, mode="mirror")
        den = ndimage.convolve(mask, kernel, mode="mirror")
        out[:, :, ch] = num / den
    return out


def _upsample2(img, ro, co, h, w):
    """Upsample a half-res plane whose samples sit at full-res (2i+ro, 2j+co)."""
    def axis_weights(n_out, offset, n_in):
        s = np.clip((np.arange(n_out) - offset) / 2.0, 0.0, n_in - 1.0)
        lo = np.minimum(np.floor(s).astype(np.int64), n_in - 2) if n_in > 1 \
            else np.zeros(n_out, dtype=np.int64)
        frac = s - lo
        return lo, frac

    r0, rf = axis_weights(h, ro, img.shape[0])
    c0, cf = axis_weights(w, co, img.shape[1])
    r1 = np.minimum(r0 + 1, img.shape[0] - 1)
    c1 = np.minimum(c0 + 1, img.shape[1] - 1)
    rf = rf[:, None, None]
    cf = cf[None, :, None]
    return ((1 - rf) * (1 - cf) * img[np.ix_(r0, c0)]
            + (1 - rf) * cf * img[np.ix_(r0, c1)]
            + rf * (1 - cf) * img[np.ix_(r1, c0)]
            + rf * cf * img[np.ix_(r1, c1)])


def demosaic(raw: np.ndarray, pattern: MosaicPattern | None = None) -> PolarizationImageSet:
    """Decode a raw color-polarization mosaic into a full PolarizationImageSet.

    Three interpolation stages, all bilinear: per-angle extraction to a
    half-resolution Bayer image, Bayer color interpolation, then
    polarization-direction upsampling back to full resolution.
    """
    pattern = pattern or DEFAULT_PATTERN
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] % 4 or raw.shape[1] % 4:
        raise PolarimetryError(f"raw mosaic shape {raw.shape} must be 2-D, divisible by 4")
    h, w = raw.shape
    planes = {}
    for a in range(4):
        ro, co = pattern.angle_offset[a]
        half = raw[ro::2, co::2]
        rgb_half = _bayer_interpolate(half, pattern.bayer_colors(a))
        planes[_ANGLE_NAMES[a]] = _upsample2(rgb_half, ro, co, h, w)
    return derive_planes(PolarizationImageSet(**planes))
