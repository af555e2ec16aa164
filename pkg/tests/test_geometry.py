"""Geometry module: distances, projections, normals, and their oracles."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from primdetect.geometry import (
    Cone,
    Cylinder,
    Plane,
    PointCloud,
    Sphere,
    project,
    scene_diameter,
    signed_distance,
    surface_normal_at,
    transform_primitive,
)

from helpers import random_primitive, random_rotation, sample_surface

KINDS = ("plane", "sphere", "cylinder", "cone")


class TestSignedDistance:
    def test_sphere_outward_ray(self):
        s = Sphere([0, 0, 0], 1.0)
        assert signed_distance(np.array([2.0, 0, 0]), s) == pytest.approx(1.0)

    def test_cone_point_on_slant(self):
        c = Cone([0, 0, 0], [0, 0, 1], math.radians(45))
        assert signed_distance(np.array([1.0, 0, 1.0]), c) == pytest.approx(0.0, abs=1e-12)

    def test_plane_below(self):
        p = Plane([0, 0, 1], 0.0)
        assert signed_distance(np.array([0, 0, -0.3]), p) == pytest.approx(-0.3)

    def test_cylinder_inside_negative(self):
        c = Cylinder([0, 0, 1], [0, 0, 0], 1.0)
        assert signed_distance(np.array([0.5, 0, 3.0]), c) == pytest.approx(-0.5)

    def test_cone_behind_apex_positive(self):
        c = Cone([0, 0, 0], [0, 0, 1], math.radians(30))
        assert signed_distance(np.array([0, 0, -2.0]), c) == pytest.approx(2.0)

    def test_cone_continuous_at_apex_region_boundary(self):
        c = Cone([0, 0, 0], [0, 0, 1], math.radians(40))
        # walk across the slant/apex region boundary
        base = np.array([math.cos(math.radians(40 + 90)), 0, math.sin(math.radians(40 + 90))])
        for eps in (1e-7, -1e-7):
            p1 = 1.3 * base * (1 + eps)
            p2 = 1.3 * base
            assert abs(signed_distance(p1, c) - signed_distance(p2, c)) < 1e-5

    def test_batch_shapes(self):
        s = Sphere([0, 0, 0], 1.0)
        pts = np.zeros((4, 5, 3))
        assert signed_distance(pts, s).shape == (4, 5)


class TestProject:
    def test_sphere(self):
        s = Sphere([0, 0, 0], 1.0)
        npt.assert_allclose(project(np.array([2.0, 0, 0]), s), [1, 0, 0], atol=1e-15)

    def test_cylinder_preserves_height(self):
        c = Cylinder([0, 0, 1], [0, 0, 0], 1.0)
        npt.assert_allclose(project(np.array([2.0, 0, 5.0]), c), [1, 0, 5], atol=1e-12)

    def test_cone_apex_region_maps_to_apex(self):
        # oracle: dense surface sampling never beats the distance to the apex
        c = Cone([0, 0, 0], [0, 0, 1], math.radians(45))
        p = np.array([0.0, 0.0, -1.0])
        rng = np.random.default_rng(0)
        pts, _ = sample_surface(c, 200_000, rng, extent=2.0)
        d_samples = np.linalg.norm(pts - p, axis=1).min()
        apex_dist = np.linalg.norm(p - c.apex)
        assert apex_dist <= d_samples + 1e-12
        npt.assert_allclose(project(p, c), [0, 0, 0], atol=1e-15)
        assert signed_distance(p, c) == pytest.approx(apex_dist)

    def test_degenerate_tie_breaks(self):
        s = Sphere([0, 0, 0], 2.0)
        npt.assert_allclose(project(np.array([0.0, 0, 0]), s), [2, 0, 0], atol=1e-15)
        c = Cylinder([1, 0, 0], [0, 0, 0], 1.0)  # +x axis: fallback moves to +y
        npt.assert_allclose(project(np.array([3.0, 0, 0]), c), [3, 1, 0], atol=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_projection_on_surface_and_distance_consistent(self, kind):
        rng = np.random.default_rng(7)
        prim = random_primitive(kind, rng)
        pts = rng.uniform(-5, 5, (10_000, 3))
        proj = project(pts, prim)
        assert np.max(np.abs(signed_distance(proj, prim))) < 1e-9
        gap = np.abs(np.linalg.norm(pts - proj, axis=1) - np.abs(signed_distance(pts, prim)))
        assert np.max(gap) < 1e-9

    @pytest.mark.parametrize("kind", KINDS)
    def test_projection_optimality_against_sampling(self, kind):
        rng = np.random.default_rng(11)
        prim = random_primitive(kind, rng)
        pts = rng.uniform(-5, 5, (1000, 3))
        proj = project(pts, prim)
        samples, _ = sample_surface(prim, 1000, rng, extent=6.0)
        d_proj = np.linalg.norm(pts - proj, axis=1)
        d_samples = np.linalg.norm(pts[:, None, :] - samples[None, :, :], axis=2).min(axis=1)
        assert np.all(d_proj <= d_samples + 1e-9)


class TestSurfaceNormal:
    def test_sphere(self):
        s = Sphere([0, 0, 0], 1.0)
        npt.assert_allclose(surface_normal_at(np.array([2.0, 0, 0]), s), [1, 0, 0])

    def test_plane_constant(self):
        p = Plane([0, 0, 1], 0.0)
        npt.assert_allclose(surface_normal_at(np.array([3.0, -2, 7]), p), [0, 0, 1])

    def test_cone_slant_normal(self):
        c = Cone([0, 0, 0], [0, 0, 1], math.radians(45))
        n = surface_normal_at(np.array([1.0, 0, 1.0]), c)
        npt.assert_allclose(n, [math.sqrt(2) / 2, 0, -math.sqrt(2) / 2], atol=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng(3)
        prim = random_primitive(kind, rng)
        pts = rng.uniform(-4, 4, (5000, 3))
        pts = _drop_singular(pts, prim)[:1000]
        grad = surface_normal_at(pts, prim)
        h = 1e-6
        num = np.empty_like(grad)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            num[:, k] = (signed_distance(pts + e, prim) - signed_distance(pts - e, prim)) / (2 * h)
        npt.assert_allclose(grad, num, atol=1e-5)

    def test_cone_axis_normal_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            cone = random_primitive("cone", rng)
            pts, _ = sample_surface(cone, 50, rng)
            normals = surface_normal_at(pts, cone)
            got = -normals @ cone.axis
            npt.assert_allclose(got, math.sin(cone.opening_angle), atol=1e-9)


def _drop_singular(pts, prim):
    """Remove points near gradient discontinuities before finite differencing."""
    margin = 1e-3
    if isinstance(prim, Sphere):
        keep = np.linalg.norm(pts - prim.center, axis=1) > margin
    elif isinstance(prim, Cylinder):
        rel = pts - prim.foot
        rad = rel - (rel @ prim.axis)[:, None] * prim.axis
        keep = np.linalg.norm(rad, axis=1) > margin
    elif isinstance(prim, Cone):
        rel = pts - prim.apex
        u = rel @ prim.axis
        rho = np.linalg.norm(rel - u[:, None] * prim.axis, axis=1)
        cos_t, sin_t = math.cos(prim.opening_angle), math.sin(prim.opening_angle)
        keep = (rho > margin) & (np.abs(u * cos_t + rho * sin_t) > margin)
    else:
        keep = np.ones(len(pts), dtype=bool)
    return pts[keep]


class TestRigidInvariance:
    @pytest.mark.parametrize("kind", KINDS)
    def test_signed_distance_invariant(self, kind):
        rng = np.random.default_rng(13)
        for _ in range(5):
            prim = random_primitive(kind, rng)
            rot = random_rotation(rng)
            t = rng.uniform(-3, 3, 3)
            pts = rng.uniform(-4, 4, (200, 3))
            moved = transform_primitive(prim, rot, t)
            npt.assert_allclose(
                signed_distance(pts @ rot.T + t, moved),
                signed_distance(pts, prim),
                atol=1e-9,
            )


class TestSceneDiameter:
    def test_unit_cube(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
        assert scene_diameter(corners) == pytest.approx(math.sqrt(3))

    def test_single_point(self):
        assert scene_diameter(np.array([[1.0, 2.0, 3.0]])) == 0.0

    def test_two_points(self):
        assert scene_diameter(np.array([[0, 0, 0], [3.0, 4.0, 0]])) == pytest.approx(5.0)


class TestTypes:
    def test_cloud_rejects_bad_normals(self):
        pos = np.zeros((2, 3))
        with pytest.raises(ValueError, match="unit length"):
            PointCloud(pos, np.array([[0, 0, 0.9], [0, 0, 1.0]]))

    def test_cloud_caches_diameter(self):
        cloud = PointCloud(np.array([[0, 0, 0], [3.0, 4, 0]]), np.tile([0, 0, 1.0], (2, 1)))
        assert cloud.diameter == pytest.approx(5.0)

    def test_cylinder_canonicalization(self):
        c = Cylinder([0, 0, -1], [1.0, 2.0, 5.0], 0.5)
        npt.assert_allclose(c.axis, [0, 0, 1])
        assert abs(c.foot @ c.axis) < 1e-12
        npt.assert_allclose(c.foot, [1, 2, 0], atol=1e-12)

    def test_cone_angle_range(self):
        with pytest.raises(ValueError):
            Cone([0, 0, 0], [0, 0, 1], math.pi / 2)
        with pytest.raises(ValueError):
            Cone([0, 0, 0], [0, 0, 1], 0.0)

    def test_sphere_radius_positive(self):
        with pytest.raises(ValueError):
            Sphere([0, 0, 0], -1.0)
