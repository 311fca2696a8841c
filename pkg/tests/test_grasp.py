import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from conftest import random_q
from trifinger_cpc import kinematics as kin
from trifinger_cpc.grasp import (CubeGeom, GraspKind, GraspSpec, assign_fingers, assignment_cost,
                                 default_thumb_axis, grasp_feasible, plan_chuck_grasp, plan_grasp,
                                 plan_triangle_grasp, pregrasp_targets)

H = 0.0325


def slab_ray_box(direction, h):
    """Independent oracle: exit point of a ray from the origin through an axis-aligned box."""
    d = np.asarray(direction, float)
    ts = [h / abs(c) for c in d[:2] if abs(c) > 1e-15]
    t = min(ts)
    return t * d


class TestTriangle:
    def test_matches_slab_oracle(self):
        spec = plan_triangle_grasp(CubeGeom([0, 0, H]))
        for i, deg in enumerate((90.0, 210.0, 330.0)):
            b = np.deg2rad(deg)
            np.testing.assert_allclose(spec.points[i], slab_ray_box([np.cos(b), np.sin(b), 0], H), atol=1e-15)

    def test_frozen_contacts(self):
        # derived from the slab oracle at h = 0.0325
        spec = plan_triangle_grasp(CubeGeom([0, 0, H]))
        t = H / np.cos(np.deg2rad(30))
        expected = [[0.0, H, 0.0],
                    [-H, -t * 0.5, 0.0],
                    [H, -t * 0.5, 0.0]]
        np.testing.assert_allclose(spec.points, expected, atol=1e-15)
        assert spec.points[0, 0] == 0.0

    def test_contacts_on_surface_with_inward_normals(self):
        spec = plan_triangle_grasp(CubeGeom([0, 0, H]))
        assert np.all(np.max(np.abs(spec.points), axis=1) == pytest.approx(H, abs=1e-15))
        np.testing.assert_allclose(np.linalg.norm(spec.normals, axis=1), 1.0)
        assert np.all(np.einsum("ij,ij->i", spec.points, spec.normals) < 0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-np.pi, np.pi), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
    def test_world_contacts_follow_pose(self, yaw, x, y):
        cube = CubeGeom([x, y, H], yaw)
        spec = plan_triangle_grasp(cube)
        wc = spec.world_contacts(cube)
        np.testing.assert_allclose(np.linalg.norm(wc - cube.position, axis=1),
                                   np.linalg.norm(spec.points, axis=1), atol=1e-12)
        np.testing.assert_allclose(wc, cube.position + spec.points @ kin.rot_z(yaw).T, atol=1e-15)


class TestChuck:
    @pytest.mark.parametrize("axis", ["+x", "-x", "+y", "-y"])
    def test_thumb_opposes_pair(self, axis):
        spec = plan_chuck_grasp(CubeGeom([0, 0, H]), axis)
        thumb, a, b = spec.points
        idx = 0 if axis[1] == "x" else 1
        sign = 1.0 if axis[0] == "+" else -1.0
        assert thumb[idx] == sign * H
        assert a[idx] == b[idx] == -sign * H
        np.testing.assert_allclose(spec.normals[0], -spec.normals[1])
        # pair is symmetric about the thumb line
        np.testing.assert_allclose(a + b, 2 * np.eye(3)[idx] * -sign * H)

    def test_aliases(self):
        c = CubeGeom([0, 0, H])
        np.testing.assert_array_equal(plan_chuck_grasp(c, "x").points, plan_chuck_grasp(c, "+x").points)
        np.testing.assert_array_equal(plan_chuck_grasp(c, "y").points, plan_chuck_grasp(c, "+y").points)

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            plan_chuck_grasp(CubeGeom([0, 0, H]), "z")

    def test_default_thumb_axis_nearest_base(self, chain):
        cube = CubeGeom([0.0, 0.12, H])
        axis = default_thumb_axis(cube, chain)
        thumbs = {a: plan_chuck_grasp(cube, a).world_contacts(cube)[0] for a in ("+x", "-x", "+y", "-y")}
        dist = {a: np.min(np.linalg.norm(chain.base_positions - p, axis=1)) for a, p in thumbs.items()}
        assert axis == min(dist, key=dist.get)


class TestAssignment:
    def test_matches_hungarian_oracle(self, chain, rng):
        for _ in range(30):
            q = random_q(chain, rng)
            cube = CubeGeom(np.r_[rng.uniform(-0.1, 0.1, 2), H], rng.uniform(-np.pi, np.pi))
            for kind in ("triangle", "chuck"):
                spec = plan_grasp(kind, cube, chain, q)
                tips = kin.fingertip_positions(chain, q)
                wc = spec.world_contacts(cube)
                cost = np.linalg.norm(wc[:, None, :] - tips[None, :, :], axis=2)  # contact x finger
                rows, cols = linear_sum_assignment(cost)
                assert assignment_cost(wc, tips, spec.finger_assignment) == pytest.approx(cost[rows, cols].sum(), abs=1e-12)

    def test_brute_force_minimum(self, chain, rng):
        q = random_q(chain, rng)
        cube = CubeGeom([0.02, -0.03, H])
        spec = assign_fingers(plan_triangle_grasp(cube), cube, chain, q)
        wc, tips = spec.world_contacts(cube), kin.fingertip_positions(chain, q)
        costs = [assignment_cost(wc, tips, p) for p in itertools.permutations(range(3))]
        assert assignment_cost(wc, tips, spec.finger_assignment) == pytest.approx(min(costs))

    def test_tie_breaks_lexicographically(self, chain):
        from conftest import simple_chain
        ch = simple_chain([(0.1, 0, 0)] * 3)  # all tips coincide: every permutation ties
        cube = CubeGeom([0, 0, H])
        assert assign_fingers(plan_triangle_grasp(cube), cube, ch, np.zeros(9)).finger_assignment == (0, 1, 2)

    def test_by_finger(self):
        spec = GraspSpec(GraspKind.TRIANGLE, np.eye(3), -np.eye(3), (2, 0, 1))
        out = spec.by_finger(np.array([[0.0], [1.0], [2.0]]))
        np.testing.assert_array_equal(out.ravel(), [1.0, 2.0, 0.0])

    def test_bad_permutation(self):
        with pytest.raises(ValueError):
            GraspSpec(GraspKind.TRIANGLE, np.eye(3), -np.eye(3), (0, 0, 1))


def test_pregrasp_offset_along_normals():
    cube = CubeGeom([0.01, 0.02, H], 0.4)
    spec = plan_triangle_grasp(cube)
    pre = pregrasp_targets(spec, cube, 0.05)
    d = pre - spec.world_contacts(cube)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 0.05)
    np.testing.assert_allclose(d, -0.05 * spec.world_normals(cube))


def test_feasible_at_center(chain):
    cube = CubeGeom([0, 0, H])
    for kind in ("triangle", "chuck"):
        spec = plan_grasp(kind, cube, chain, np.array([0.0, -0.2, -1.85] * 3))
        assert grasp_feasible(spec, cube, chain) == (True, [])


def test_infeasible_far_away(chain):
    cube = CubeGeom([1.0, 0, H])
    ok, bad = grasp_feasible(plan_triangle_grasp(cube), cube, chain)
    assert not ok and bad == [0, 1, 2]


def test_cube_geometry_validation():
    with pytest.raises(ValueError):
        CubeGeom([0, 0, 0], half_extent=0.0)


def face_invariant(spec, h):
    for p, n in zip(spec.points, spec.normals):
        on_x, on_y = abs(abs(p[0]) - h) <= 1e-9, abs(abs(p[1]) - h) <= 1e-9
        assert on_x != on_y and abs(p[2]) <= h
        outward = np.array([np.sign(p[0]), 0, 0]) if on_x else np.array([0, np.sign(p[1]), 0])
        assert np.dot(n, outward) < 0


class TestSpecExamples:
    def test_triangle_unit_cube(self):
        spec = plan_triangle_grasp(CubeGeom([0, 0, 0], half_extent=1.0))
        t = np.tan(np.deg2rad(30))
        np.testing.assert_allclose(spec.points, [[0, 1, 0], [-1, -t, 0], [1, -t, 0]], atol=1e-12)
        np.testing.assert_array_equal(spec.normals, [[0, -1, 0], [1, 0, 0], [-1, 0, 0]])

    def test_chuck_unit_cube(self):
        spec = plan_chuck_grasp(CubeGeom([0, 0, 0], half_extent=1.0), "y")
        np.testing.assert_array_equal(spec.points, [[0, 1, 0], [0.5, -1, 0], [-0.5, -1, 0]])
        np.testing.assert_array_equal(spec.normals[0], -spec.normals[1:].mean(axis=0))

    def test_chuck_axis_symmetry(self):
        c = CubeGeom([0, 0, 0], half_extent=1.0)
        np.testing.assert_array_equal(plan_chuck_grasp(c, "x").points, plan_chuck_grasp(c, "y").points[:, [1, 0, 2]])

    def test_pregrasp_unit_cube(self):
        c = CubeGeom([0, 0, 0], half_extent=1.0)
        pre = pregrasp_targets(plan_triangle_grasp(c), c, 0.04)
        np.testing.assert_allclose(pre[0], [0, 1.04, 0])
        np.testing.assert_array_equal(pregrasp_targets(plan_triangle_grasp(c), c, 0.0), plan_triangle_grasp(c).points)
        assert np.all(np.max(np.abs(pre[:, :2]), axis=1) > 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 10.0))
    def test_scaling(self, h):
        base = plan_triangle_grasp(CubeGeom([0, 0, 0], half_extent=1.0)).points
        np.testing.assert_allclose(plan_triangle_grasp(CubeGeom([0, 0, 0], half_extent=h)).points, h * base,
                                   rtol=1e-12, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1.0), st.sampled_from(["+x", "-x", "+y", "-y"]))
    def test_invariants(self, h, axis):
        cube = CubeGeom([0, 0, 0], half_extent=h)
        tri, chuck = plan_triangle_grasp(cube), plan_chuck_grasp(cube, axis)
        face_invariant(tri, h)
        face_invariant(chuck, h)
        bearings = np.rad2deg(np.arctan2(tri.points[:, 1], tri.points[:, 0]))
        for a, b in itertools.combinations(bearings, 2):
            d = (a - b) % 360
            assert min(d, 360 - d) == pytest.approx(120.0, abs=1e-9)
        for n in chuck.normals[1:]:
            assert np.dot(chuck.normals[0], n) == pytest.approx(-1.0, abs=1e-9)

    def test_assignment_zero_cost_at_contacts(self, chain):
        from trifinger_cpc.kinematics import solve_finger_ik
        cube = CubeGeom([0.0, 0.0, H])
        spec = plan_triangle_grasp(cube)
        contacts = spec.world_contacts(cube)
        # contact c reached by finger perm[c]
        perm = (2, 0, 1)
        q = np.zeros(9)
        for c, f in enumerate(perm):
            q[3 * f:3 * f + 3] = solve_finger_ik(chain, f, contacts[c])[0]
        out = assign_fingers(spec, cube, chain, q)
        assert out.finger_assignment == perm
        assert assignment_cost(contacts, kin.fingertip_positions(chain, q), perm) < 1e-4


def outward_push_axis(bearing):
    """Thumb face whose inward normal points radially outward: the face toward the arena center."""
    c, s = np.cos(bearing), np.sin(bearing)
    if abs(c) >= abs(s):
        return "-x" if c > 0 else "+x"
    return "-y" if s > 0 else "+y"


def test_perimeter_outward_thumb(chain):
    """At 0.95 arena radius some bearing defeats an outward-pushing chuck while the triangle still fits."""
    q = np.array([0.0, -0.2, -1.85] * 3)
    found = []
    for k in range(36):
        b = np.deg2rad(10 * k)
        cube = CubeGeom([0.95 * 0.195 * np.cos(b), 0.95 * 0.195 * np.sin(b), H])
        chuck = plan_grasp("chuck", cube, chain, q, thumb_axis=outward_push_axis(b))
        tri = plan_grasp("triangle", cube, chain, q)
        if not grasp_feasible(chuck, cube, chain)[0] and grasp_feasible(tri, cube, chain)[0]:
            found.append(10 * k)
    assert found
