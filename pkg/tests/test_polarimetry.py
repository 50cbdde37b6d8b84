import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polarmesh.polarimetry import (
    DEFAULT_PATTERN, MosaicPattern, PolarimetryError, PolarizationImageSet,
    aop, demosaic, derive_planes, dop, forward_directions, stokes_from_directions,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_forward_inverse_roundtrip_scalar():
    phi, rho, ii = 0.7, 0.4, 2.0
    i0, i45, i90, i135 = forward_directions(phi, rho, ii)
    s0, s1, s2 = stokes_from_directions(i0, i45, i90, i135)
    assert np.isclose(s0, 2 * ii)
    assert np.isclose(aop(s1, s2), phi)
    assert np.isclose(dop(s0, s1, s2), rho)


@given(phi=st.floats(0, np.pi - 1e-9), rho=st.floats(1e-6, 1.0),
       ii=st.floats(1e-3, 1e3))
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(phi, rho, ii):
    s0, s1, s2 = stokes_from_directions(*forward_directions(phi, rho, ii))
    assert abs(aop(s1, s2) - phi) < 1e-8 or abs(abs(aop(s1, s2) - phi) - np.pi) < 1e-8
    assert abs(dop(s0, s1, s2) - rho) < 1e-9


def test_aop_range_and_undefined():
    assert np.isnan(aop(0.0, 0.0))
    # arrays: NaN only where s1 = s2 = 0
    a = aop(np.array([0.0, 1.0, -1.0]), np.array([0.0, 0.0, 1e-12]))
    assert np.isnan(a[0]) and not np.isnan(a[1:]).any()
    rng = np.random.default_rng(0)
    s1, s2 = rng.normal(size=100), rng.normal(size=100)
    vals = aop(s1, s2)
    assert ((vals >= 0) & (vals < np.pi)).all()


def test_dop_clamped_and_errors():
    assert dop(1.0, 1.0, 1.0) == 1.0  # clamped to 1
    with pytest.raises(PolarimetryError):
        dop(0.0, 0.0, 0.0)
    # batch version maps s0 <= 0 to zero instead of raising
    assert dop(np.array([0.0]), np.array([0.0]), np.array([0.0]))[0] == 0.0


def test_stokes_rejects_nonfinite():
    with pytest.raises(PolarimetryError):
        stokes_from_directions(np.nan, 1.0, 1.0, 1.0)


def test_derive_planes_consistency():
    rng = np.random.default_rng(1)
    phi = rng.uniform(0, np.pi, (8, 8, 1))
    rho = rng.uniform(0.1, 0.9, (8, 8, 1))
    ii = rng.uniform(0.2, 1.0, (8, 8, 3))
    i0, i45, i90, i135 = forward_directions(phi, rho, ii)
    s = derive_planes(PolarizationImageSet(i0=i0, i45=i45, i90=i90, i135=i135))
    assert np.allclose(s.rgb_int, ii)
    assert np.allclose(s.rgb_min, (1 - rho[..., 0])[..., None] * ii)
    assert np.allclose(s.dop, rho[..., 0])
    assert np.allclose(np.minimum(np.abs(s.aop - phi[..., 0]),
                                  np.pi - np.abs(s.aop - phi[..., 0])), 0, atol=1e-9)
    # idempotent
    s2 = derive_planes(s)
    assert np.array_equal(s2.aop, s.aop)


def test_plane_shape_validation():
    ok = np.zeros((4, 4, 3))
    with pytest.raises(PolarimetryError):
        PolarizationImageSet(i0=ok, i45=ok, i90=ok, i135=np.zeros((4, 5, 3))).validate()


def test_mosaic_pattern_validation():
    with pytest.raises(PolarimetryError):
        MosaicPattern([{"row": 0, "col": 0, "color": "R", "angle": 0}])
    # every angle occupies one fixed offset modulo 2 in the default layout
    assert sorted(DEFAULT_PATTERN.angle_offset.values()) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_demosaic_constant_mosaic():
    raw = np.full((16, 16), 0.5)
    s = demosaic(raw)
    for plane in (s.i0, s.i45, s.i90, s.i135):
        assert np.allclose(plane, 0.5)
    assert np.allclose(s.dop, 0.0)


def test_demosaic_recovers_synthetic_mosaic():
    # forward-render a smooth polarized field, mosaic it with the default
    # pattern, and check the decoded AoP
    h = w = 32
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phi = np.full((h, w), 0.9)
    rho = np.full((h, w), 0.5)
    ii = 0.4 + 0.2 * np.sin(xx / 17.0) * np.cos(yy / 13.0)
    rgb = np.stack([ii, 0.8 * ii, 0.6 * ii], axis=-1)
    planes = forward_directions(phi[..., None], rho[..., None], rgb)  # (i0,i45,i90,i135)
    raw = np.zeros((h, w))
    for r in range(4):
        for c in range(4):
            plane = planes[DEFAULT_PATTERN.angle[r, c]]
            raw[r::4, c::4] = plane[r::4, c::4, DEFAULT_PATTERN.color[r, c]]
    out = derive_planes(demosaic(raw))
    inner = (slice(4, -4), slice(4, -4))
    err = np.abs(out.aop[inner] - 0.9)
    err = np.minimum(err, np.pi - err)
    assert err.max() < 0.05


def test_demosaic_requires_divisible_by_four():
    with pytest.raises(PolarimetryError):
        demosaic(np.zeros((10, 12)))
