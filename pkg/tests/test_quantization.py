import math

import numpy as np
import pytest

from zoomabs.boxes import Box
from zoomabs.errors import RangeExceeded
from zoomabs.quantization import (LatticePoint, ZoomQuantizer, cover_check,
                                  lattice_count, lattice_points, quantize_rows,
                                  zoom_quantize, zoom_quantize_scalar)
from zoomabs.regions import Region

TWO_PI_35 = 2 * math.pi / 35


def qz1(M=3, lam=0.2, mu=1.0, dead=0.0):
    return ZoomQuantizer(range_index=M, lattice=np.array([lam]),
                         dead_zone=dead, mu=mu)


def test_scalar_center_cell():
    assert zoom_quantize_scalar(qz1(), 0, 0.0) == 0.0


def test_scalar_saturation_branch():
    assert zoom_quantize_scalar(qz1(), 0, 10.0) == pytest.approx(0.6, abs=1e-12)
    assert zoom_quantize_scalar(qz1(), 0, -10.0) == pytest.approx(-0.6, abs=1e-12)


def test_scalar_interior_cell():
    # k = 1 since 0.1 <= 0.25 < 0.3
    assert zoom_quantize_scalar(qz1(), 0, 0.25) == pytest.approx(0.2, abs=1e-12)


def test_scalar_boundary_rounds_up_at_half_zoom():
    # cell pitch 0.1; 0.25 sits on a lower cell boundary, so k = 3
    assert zoom_quantize_scalar(qz1(mu=0.5), 0, 0.25) == pytest.approx(0.3, abs=1e-12)


def test_vector_componentwise():
    qz = ZoomQuantizer(range_index=3, lattice=np.array([0.2, 0.2, 0.2]))
    out = zoom_quantize(qz, np.array([0.25, -0.25, 0.0]))
    assert out == pytest.approx([0.2, -0.2, 0.0], abs=1e-12)


def test_dead_zone_snaps_to_origin():
    qz = ZoomQuantizer(range_index=5, lattice=np.array([0.2, 0.2]),
                       dead_zone=0.5)
    assert np.all(zoom_quantize(qz, np.array([0.3, -0.4])) == 0.0)
    # outside the dead zone the usual cells apply
    assert zoom_quantize(qz, np.array([0.6, 0.0]))[0] == pytest.approx(0.6)


def test_lattice_points_fixed_point():
    qz = ZoomQuantizer(range_index=8, lattice=np.array([0.2, 0.2]))
    pts = lattice_points(_region([(0.2, 0.6), (0.0, 0.4)]), qz)
    for p in pts:
        assert np.allclose(zoom_quantize(qz, p.coords), p.coords, atol=1e-12)


def _region(bounds, mu=1.0, eta=0.2, omega=0.01, rid=0):
    return Region(rid, Box.from_bounds(bounds), mu, eta, omega)


def vi_quantizer(M=64):
    return ZoomQuantizer(range_index=M,
                         lattice=np.array([0.2, 0.2, TWO_PI_35]))


def vi_initial_region():
    return _region([(0.0, 0.6), (0.0, 0.6), (-2 * TWO_PI_35, 2 * TWO_PI_35)],
                   omega=0.1)


def test_initial_region_has_eighty_points():
    pts = lattice_points(vi_initial_region(), vi_quantizer())
    assert len(pts) == 80


def test_lattice_points_degenerate_box():
    qz = qz1(M=8)
    pts = lattice_points(_region([(0.4, 0.4)]), qz)
    assert len(pts) == 1 and pts[0].coords[0] == pytest.approx(0.4)


def test_lattice_points_scalar_halved_zoom():
    # pitch 0.1 over [0, 1]: eleven multiples, needs range index >= 10
    qz = qz1(M=16, mu=0.5)
    pts = lattice_points(_region([(0.0, 1.0)], mu=0.5), qz)
    assert len(pts) == 11
    assert [p.k[0] for p in pts] == list(range(11))
    with pytest.raises(RangeExceeded):
        lattice_points(_region([(0.0, 1.0)], mu=0.5), qz1(M=9, mu=0.5))


def test_lattice_points_lexicographic_order():
    qz = ZoomQuantizer(range_index=8, lattice=np.array([0.2, 0.2]))
    pts = lattice_points(_region([(0.0, 0.4), (0.0, 0.4)]), qz)
    ks = [p.k for p in pts]
    assert ks == sorted(ks)


def test_lattice_count_matches_enumeration():
    qz = vi_quantizer()
    region = vi_initial_region()
    assert lattice_count(region.box, qz, 1.0) == len(lattice_points(region, qz))


def test_cover_check_initial_region():
    qz = vi_quantizer()
    region = vi_initial_region()
    pts = lattice_points(region, qz)
    radius = max(0.2, TWO_PI_35) / 2
    assert cover_check(region, pts, radius)


def test_cover_check_empty_points():
    assert not cover_check(vi_initial_region(), [], 0.2)


def test_cover_check_corners_insufficient():
    qz = qz1(M=16)
    region = _region([(0.0, 1.0), (0.0, 1.0)])
    corners = [LatticePoint(0, (int(x / 0.2), int(y / 0.2)),
                            np.array([x, y]))
               for x in (0.0, 1.0) for y in (0.0, 1.0)]
    assert not cover_check(region, corners, radius=0.1)


# -- randomized property suite ---------------------------------------------------


def test_bounded_error_property():
    rng = np.random.default_rng(7)
    qz = ZoomQuantizer(range_index=12, lattice=np.array([0.2, 0.3]), mu=0.7)
    bound = (qz.range_index + 0.5) * qz.lattice.min() * qz.mu
    err_cap = qz.lattice.max() * qz.mu / 2
    for _ in range(2000):
        z = rng.uniform(-bound, bound, size=2)
        err = np.max(np.abs(z - zoom_quantize(qz, z)))
        assert err <= err_cap + 1e-12


def test_saturation_detection_property():
    rng = np.random.default_rng(8)
    qz = qz1(M=5, lam=0.3, mu=0.9)
    step = 0.3 * 0.9
    for _ in range(2000):
        mag = rng.uniform((qz.range_index + 1) * step + 1e-9, 40.0)
        z = mag * rng.choice([-1.0, 1.0])
        err = abs(z - zoom_quantize_scalar(qz, 0, z))
        assert err > step  # strictly above one full cell once saturated
        assert err > step / 2


def test_scaling_identity_property():
    rng = np.random.default_rng(9)
    mu = 0.37
    qz_mu = qz1(M=20, mu=mu)
    qz_unit = qz1(M=20, mu=1.0)
    for _ in range(2000):
        z = rng.uniform(-3.0, 3.0)
        lhs = zoom_quantize_scalar(qz_mu, 0, z)
        rhs = mu * zoom_quantize_scalar(qz_unit, 0, z / mu)
        assert lhs == rhs


def test_idempotence_property():
    rng = np.random.default_rng(10)
    qz = qz1(M=20, lam=0.25, mu=1.3)
    lim = (qz.range_index + 0.5) * 0.25 * 1.3
    for _ in range(2000):
        z = rng.uniform(-lim, lim)
        once = zoom_quantize_scalar(qz, 0, z)
        assert zoom_quantize_scalar(qz, 0, once) == once


def test_batch_agrees_with_scalar():
    rng = np.random.default_rng(11)
    qz = ZoomQuantizer(range_index=9, lattice=np.array([0.2, 0.5, 0.11]),
                       mu=0.8)
    Z = rng.uniform(-3, 3, size=(500, 3))
    batch = quantize_rows(qz, Z)
    for i in range(0, 500, 17):
        row = zoom_quantize(qz, Z[i])
        assert np.array_equal(batch[i], row)


def test_quantizer_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ZoomQuantizer(range_index=1, lattice=np.array([0.2, 1.0]))
    with pytest.raises(ValueError):
        ZoomQuantizer(range_index=4, lattice=np.array([-0.1]))
    with pytest.raises(ValueError):
        ZoomQuantizer(range_index=4, lattice=np.array([0.2]), mu=0.0)
