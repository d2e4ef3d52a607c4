import math

import numpy as np
import pytest

from steerlab.mpc import (
    MpcConfig,
    MpcInput,
    grid_oracle,
    mpc_cost,
    mpc_cost_grad,
    mpc_first_control,
    mpc_solve,
)
from steerlab.vehicle import VehicleState

from conftest import arc_refs


def straight_refs(n, spacing, y=0.0):
    pts = np.zeros((n, 2))
    pts[:, 0] = spacing * np.arange(1, n + 1)
    pts[:, 1] = y
    return pts


def random_instance(rng, params, n=20, kappa_max=1.0, lat=0.5, head=math.pi / 6):
    kappa = rng.uniform(-kappa_max, kappa_max)
    refs = arc_refs(kappa, n, params.spacing)
    state = VehicleState(
        rng.uniform(-0.3, 0.3), rng.uniform(-lat, lat), rng.uniform(-head, head)
    )
    return MpcInput(state, refs)


def test_cost_zero_on_exact_tracking(params, mcfg):
    inp = MpcInput(VehicleState(0, 0, 0), straight_refs(20, params.spacing))
    assert mpc_cost(inp, np.zeros(20), params) < 1e-18


def test_cost_constant_offset(params, mcfg):
    inp = MpcInput(VehicleState(0, 0, 0), straight_refs(20, params.spacing, y=0.1))
    # 0.1 m lateral offset at every one of the 20 horizon steps
    assert mpc_cost(inp, np.zeros(20), params) == pytest.approx(20 * 0.01, rel=1e-9)


def test_cost_matches_independent_resimulation(params):
    rng = np.random.default_rng(11)
    for _ in range(10):
        inp = random_instance(rng, params)
        u = rng.uniform(-params.delta_max, params.delta_max, 20)
        # step-by-step re-simulation, written independently of the kernel
        x, y, th = inp.state.x, inp.state.y, inp.state.theta
        expected = 0.0
        for i in range(20):
            x += params.v * math.cos(th) * params.dt
            y += params.v * math.sin(th) * params.dt
            th += params.v / params.l_f * math.sin(u[i]) * params.dt
            expected += (x - inp.refs[i, 0]) ** 2 + (y - inp.refs[i, 1]) ** 2
        assert mpc_cost(inp, u, params) == pytest.approx(expected, rel=1e-12)


def test_gradient_matches_central_differences(params):
    rng = np.random.default_rng(5)
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        inp = random_instance(rng, params)
        u = rng.uniform(-params.delta_max, params.delta_max, 20)
        _, grad = mpc_cost_grad(inp, u, params)
        fd = np.empty(20)
        for i in range(20):
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            fd[i] = (mpc_cost(inp, up, params) - mpc_cost(inp, um, params)) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-3)
        worst = max(worst, float(np.max(np.abs(grad - fd) / scale)))
    assert worst < 1e-6


def test_solve_straight_ahead_returns_zero(params, mcfg):
    inp = MpcInput(VehicleState(0, 0, 0), straight_refs(20, params.spacing))
    res = mpc_solve(inp, mcfg, params)
    assert abs(res.u[0]) < 1e-6
    assert res.converged


def test_solve_mirror_antisymmetry(params, mcfg):
    rng = np.random.default_rng(17)
    for _ in range(20):
        inp = random_instance(rng, params)
        refs_m = inp.refs.copy()
        refs_m[:, 1] *= -1.0
        inp_m = MpcInput(
            VehicleState(inp.state.x, -inp.state.y, -inp.state.theta), refs_m
        )
        u = mpc_solve(inp, mcfg, params).u
        u_m = mpc_solve(inp_m, mcfg, params).u
        np.testing.assert_allclose(u_m, -u, atol=1e-6)


def test_solve_beats_zero_and_warm_start(params, mcfg):
    rng = np.random.default_rng(23)
    for _ in range(20):
        inp = random_instance(rng, params)
        warm = rng.uniform(-params.delta_max, params.delta_max, 20)
        res = mpc_solve(inp, mcfg, params, warm_start=warm)
        assert res.cost <= mpc_cost(inp, np.zeros(20), params) + 1e-12
        assert res.cost <= mpc_cost(inp, np.clip(warm, -params.delta_max, params.delta_max), params) + 1e-12
        assert np.all(np.abs(res.u) <= params.delta_max + 1e-15)


def test_solve_arc_matches_oracle_first_control(params, mcfg):
    rng = np.random.default_rng(29)
    cfg3 = MpcConfig(horizon=3, delta_max=params.delta_max)
    for _ in range(25):
        kappa = rng.uniform(0.3, 1.0)  # left arcs
        inp = MpcInput(
            VehicleState(rng.uniform(-0.1, 0.1), rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.3)),
            arc_refs(kappa, 3, params.spacing),
        )
        res = mpc_solve(inp, cfg3, params)
        u_oracle, _ = grid_oracle(inp, params, levels=41, delta_max=params.delta_max)
        assert abs(res.u[0] - u_oracle[0]) < 0.02


def test_oracle_consistency_small_horizons(params):
    rng = np.random.default_rng(31)
    for n in (2, 3):
        cfg = MpcConfig(horizon=n, delta_max=params.delta_max)
        for _ in range(30):
            inp = random_instance(rng, params, n=n, lat=0.3)
            res = mpc_solve(inp, cfg, params)
            _, oracle_cost = grid_oracle(inp, params, 41, params.delta_max)
            assert res.cost <= oracle_cost + 1e-6


def test_warm_start_consistency_along_track(params, mcfg):
    # consecutive solves along a smooth arc: warm and cold agree closely
    refs_all = arc_refs(0.5, 60, params.spacing)
    state = VehicleState(0.0, 0.02, 0.05)
    warm = None
    for k in range(10):
        inp = MpcInput(state, refs_all[k : k + 20])
        res_w = mpc_solve(inp, mcfg, params, warm_start=warm)
        res_c = mpc_solve(inp, mcfg, params)
        assert abs(res_w.u[0] - res_c.u[0]) <= 0.005
        warm = np.concatenate([res_w.u[1:], res_w.u[-1:]])
        from steerlab.vehicle import step_dynamics

        state = step_dynamics(state, float(res_w.u[0]), params)


def test_control_sign_follows_lateral_offset(params, mcfg):
    # vehicle on the reference start, reference curving away: steer toward
    # the side the reference bends (first point with a nonzero lateral)
    for kappa in (0.4, 0.8, -0.4, -0.8):
        inp = MpcInput(VehicleState(0, 0, 0), arc_refs(kappa, 20, params.spacing))
        first = mpc_first_control(inp, mcfg, params)
        lateral = next(y for y in inp.refs[:, 1] if abs(y) > 1e-12)
        assert math.copysign(1.0, first) == math.copysign(1.0, lateral)


def test_grid_oracle_zero_offset(params):
    inp = MpcInput(VehicleState(0, 0, 0), straight_refs(3, params.spacing))
    u, cost = grid_oracle(inp, params, levels=41, delta_max=params.delta_max)
    np.testing.assert_array_equal(u, np.zeros(3))
    assert cost < 1e-18


def test_grid_oracle_is_grid_argmin(params):
    rng = np.random.default_rng(37)
    inp = random_instance(rng, params, n=2, lat=0.2)
    u_best, c_best = grid_oracle(inp, params, levels=21, delta_max=params.delta_max)
    grid = np.linspace(-params.delta_max, params.delta_max, 21)
    for a in grid:
        for b in grid:
            c = mpc_cost(inp, np.array([a, b]), params)
            assert c_best <= c + 1e-12


def test_grid_oracle_rejects_large_horizon(params):
    inp = MpcInput(VehicleState(0, 0, 0), straight_refs(5, params.spacing))
    with pytest.raises(ValueError):
        grid_oracle(inp, params)


def test_input_validation(params, mcfg):
    with pytest.raises(ValueError):
        mpc_solve(MpcInput(VehicleState(0, 0, 0), straight_refs(7, params.spacing)), mcfg, params)
    refs = straight_refs(20, params.spacing)
    refs[10] += 5.0  # > 2*v*dt gap
    with pytest.raises(ValueError):
        mpc_solve(MpcInput(VehicleState(0, 0, 0), refs), mcfg, params)


def test_nonconvergence_is_flagged_not_raised(params):
    cfg = MpcConfig(horizon=20, max_iters=2, grad_tol=1e-14, delta_max=params.delta_max)
    rng = np.random.default_rng(41)
    inp = random_instance(rng, params)
    res = mpc_solve(inp, cfg, params)
    assert not res.converged
    assert res.iterations <= 2
