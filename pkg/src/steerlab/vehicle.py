"""Kinematic bicycle dynamics, the position observation, and rigid-frame
transforms between the world and robot frames."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class VehicleState:
    x: float
    y: float
    theta: float  # rad; accumulates without wrapping

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class VehicleParams:
    v: float = 3.0             # m/s, constant longitudinal speed
    l_f: float = 0.15875       # m, front-to-gravity-center distance
    dt: float = 0.05           # s, integration step
    delta_max: float = 0.4189  # rad, steering bound (24 deg)

    def __post_init__(self):
        if not (self.v > 0.0 and self.l_f > 0.0 and self.dt > 0.0):
            raise ValueError("v, l_f and dt must all be positive")
        if not 0.0 < self.delta_max < math.pi / 2:
            raise ValueError("delta_max must lie in (0, pi/2)")

    @property
    def spacing(self) -> float:
        """Distance covered in one step, also the waypoint spacing."""
        return self.v * self.dt

    @property
    def max_curvature(self) -> float:
        """Tightest curvature the vehicle can hold at constant speed."""
        return math.sin(self.delta_max) / self.l_f


def _require_finite(*values):
    for val in values:
        if not math.isfinite(val):
            raise ValueError("non-finite value in vehicle computation")


def step_dynamics(state: VehicleState, delta: float, params: VehicleParams) -> VehicleState:
    """One explicit-Euler step of the constant-speed bicycle model."""
    _require_finite(state.x, state.y, state.theta, delta)
    if abs(delta) > params.delta_max + 1e-12:
        raise ValueError(
            f"steering {delta!r} exceeds the bound {params.delta_max!r}; clamp first"
        )
    x = state.x + params.v * math.cos(state.theta) * params.dt
    y = state.y + params.v * math.sin(state.theta) * params.dt
    theta = state.theta + (params.v / params.l_f) * math.sin(delta) * params.dt
    return VehicleState(x, y, theta)


def observe(state: VehicleState) -> np.ndarray:
    """Project the state onto its observable position."""
    _require_finite(state.x, state.y, state.theta)
    return np.array([state.x, state.y])


def world_to_robot(robot_pose: VehicleState, point) -> np.ndarray:
    """Express world-frame point(s) in the robot frame (translate, then
    rotate by -theta). Accepts a single (2,) point or an (M, 2) array."""
    p = np.asarray(point, dtype=float)
    c = math.cos(robot_pose.theta)
    s = math.sin(robot_pose.theta)
    dx = p[..., 0] - robot_pose.x
    dy = p[..., 1] - robot_pose.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def robot_to_world(robot_pose: VehicleState, point) -> np.ndarray:
    """Exact inverse of world_to_robot."""
    p = np.asarray(point, dtype=float)
    c = math.cos(robot_pose.theta)
    s = math.sin(robot_pose.theta)
    return np.stack(
        [
            robot_pose.x + c * p[..., 0] - s * p[..., 1],
            robot_pose.y + s * p[..., 0] + c * p[..., 1],
        ],
        axis=-1,
    )


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if r == -math.pi else r
