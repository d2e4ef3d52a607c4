import math

import numpy as np
import pytest

from steerlab.features import FEATURE_DIMS, build_features, build_i3, build_i21, build_i40
from steerlab.mpc import MpcInput
from steerlab.trajgen import gen_sine, gen_straight
from steerlab.vehicle import VehicleState, world_to_robot

from conftest import arc_refs


def straight(params, length=30.0):
    return gen_straight(length, params.spacing)


def rigid_apply(points, phi, tx, ty):
    c, s = math.cos(phi), math.sin(phi)
    out = np.empty_like(points)
    out[:, 0] = tx + c * points[:, 0] - s * points[:, 1]
    out[:, 1] = ty + s * points[:, 0] + c * points[:, 1]
    return out


def test_i3_on_waypoint_aligned(params):
    traj = straight(params)
    state = VehicleState(traj.points[5, 0], traj.points[5, 1], traj.headings[5])
    np.testing.assert_allclose(build_i3(state, traj, 5), np.zeros(3), atol=1e-12)


def test_i3_lateral_offset(params):
    traj = straight(params)
    k = 10
    state = VehicleState(traj.points[k, 0], 0.1, 0.0)  # 0.1 m left, aligned
    np.testing.assert_allclose(build_i3(state, traj, k), [0.0, -0.1, 0.0], atol=1e-12)


def test_i3_heading_offset(params):
    traj = straight(params)
    k = 10
    state = VehicleState(traj.points[k, 0], 0.0, 0.2)
    f = build_i3(state, traj, k)
    np.testing.assert_allclose(f, [0.0, 0.0, -0.2], atol=1e-12)


def test_i21_on_line(params):
    traj = straight(params)
    state = VehicleState(traj.points[3, 0], 0.0, 0.0)
    np.testing.assert_allclose(build_i21(state, traj, 3), np.zeros(21), atol=1e-12)


def test_i21_lateral_offset(params):
    traj = straight(params)
    state = VehicleState(traj.points[3, 0], 0.1, 0.0)
    f = build_i21(state, traj, 3)
    np.testing.assert_allclose(f[:20], -0.1, atol=1e-12)
    assert f[20] == 0.0


def test_i21_left_arc_increasing(params):
    pts = arc_refs(0.8, 40, params.spacing)
    headings = np.arctan2(np.diff(pts[:, 1]), np.diff(pts[:, 0]))
    from steerlab.trajgen import RefTrajectory

    traj = RefTrajectory(pts, np.concatenate([headings, headings[-1:]]), params.spacing)
    state = VehicleState(pts[0, 0], pts[0, 1], traj.headings[0])
    f = build_i21(state, traj, 0)
    assert np.all(np.diff(f[:20]) > 0)


def test_i40_on_line_spacing(params):
    traj = straight(params)
    state = VehicleState(0.0, 0.0, 0.0)
    f = build_i40(state, traj, 0)
    s = params.spacing
    np.testing.assert_allclose(f[0::2], s * np.arange(1, 21), atol=1e-12)
    np.testing.assert_allclose(f[1::2], 0.0, atol=1e-12)


def test_i40_rotated_vehicle(params):
    traj = straight(params)
    state = VehicleState(0.0, 0.0, math.pi / 2)
    f = build_i40(state, traj, 0)
    s = params.spacing
    np.testing.assert_allclose(f[0::2], 0.0, atol=1e-12)
    np.testing.assert_allclose(f[1::2], -s * np.arange(1, 21), atol=1e-12)


def test_i40_equals_mpc_refs_in_robot_frame(params):
    traj = gen_sine(1.0, 0.5, 30.0, params.spacing, params)
    k = 17
    state = VehicleState(traj.points[k, 0] + 0.05, traj.points[k, 1] - 0.1, 0.3)
    f = build_i40(state, traj, k)
    refs = MpcInput(state, traj.refs_for(k, 20)).refs
    expected = world_to_robot(state, refs)
    np.testing.assert_allclose(f.reshape(20, 2), expected, atol=1e-14)


def test_rigid_invariance(params):
    from steerlab.trajgen import RefTrajectory, _headings_from_points

    traj = gen_sine(1.0, 1.0, 30.0, params.spacing, params)
    rng = np.random.default_rng(2)
    k = 25
    state = VehicleState(traj.points[k, 0] + 0.1, traj.points[k, 1] + 0.2, 0.4)
    base = {kind: build_features(kind, state, traj, k) for kind in FEATURE_DIMS}
    for _ in range(10):
        phi, tx, ty = rng.uniform(-3, 3), rng.uniform(-50, 50), rng.uniform(-50, 50)
        pts2 = rigid_apply(traj.points, phi, tx, ty)
        traj2 = RefTrajectory(pts2, _headings_from_points(pts2, False), params.spacing)
        moved = rigid_apply(np.array([[state.x, state.y]]), phi, tx, ty)[0]
        state2 = VehicleState(moved[0], moved[1], state.theta + phi)
        for kind in FEATURE_DIMS:
            f2 = build_features(kind, state2, traj2, k)
            np.testing.assert_allclose(f2, base[kind], atol=1e-10)


def test_mirror_antisymmetry(params):
    from steerlab.trajgen import RefTrajectory, _headings_from_points

    traj = gen_sine(1.0, 0.5, 30.0, params.spacing, params)
    k = 30
    state = VehicleState(traj.points[k, 0] + 0.05, traj.points[k, 1] + 0.15, 0.25)
    pts_m = traj.points.copy()
    pts_m[:, 1] *= -1.0
    traj_m = RefTrajectory(pts_m, _headings_from_points(pts_m, False), params.spacing)
    state_m = VehicleState(state.x, -state.y, -state.theta)

    f3, f3m = build_i3(state, traj, k), build_i3(state_m, traj_m, k)
    np.testing.assert_allclose(f3m, [f3[0], -f3[1], -f3[2]], atol=1e-12)

    f21, f21m = build_i21(state, traj, k), build_i21(state_m, traj_m, k)
    np.testing.assert_allclose(f21m, -f21, atol=1e-12)

    f40, f40m = build_i40(state, traj, k), build_i40(state_m, traj_m, k)
    np.testing.assert_allclose(f40m[0::2], f40[0::2], atol=1e-12)
    np.testing.assert_allclose(f40m[1::2], -f40[1::2], atol=1e-12)


def test_index_saturation(params):
    traj = straight(params, 10.0)
    last = traj.last_usable_index(20)
    state = VehicleState(traj.points[-1, 0], 0.0, 0.0)
    f_end = build_i40(state, traj, len(traj) - 1)
    f_last = build_i40(state, traj, last)
    np.testing.assert_array_equal(f_end, f_last)


def test_unknown_kind_rejected(params):
    traj = straight(params)
    with pytest.raises(ValueError):
        build_features("i99", VehicleState(0, 0, 0), traj, 0)
