"""The expert controller: minimizes the summed squared tracking error over
a horizon of steering commands and applies the first one."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .vehicle import VehicleParams, VehicleState


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    max_iters: int = 500
    grad_tol: float = 1e-8
    delta_max: float = 0.4189  # solver box bound; normally the vehicle's

    def __post_init__(self):
        if self.horizon < 1 or self.max_iters < 1 or self.grad_tol <= 0.0:
            raise ValueError("horizon and max_iters must be >= 1, grad_tol > 0")


@dataclass
class MpcInput:
    state: VehicleState
    refs: np.ndarray  # (N, 2) world-frame reference points, steps k+1..k+N

    def __post_init__(self):
        self.refs = np.ascontiguousarray(self.refs, dtype=float)
        if self.refs.ndim != 2 or self.refs.shape[1] != 2:
            raise ValueError("refs must be an (N, 2) array")


@dataclass
class MpcResult:
    u: np.ndarray  # (N,) steering sequence, all within the box
    cost: float
    iterations: int
    converged: bool


def _check_input(inp: MpcInput, cfg: MpcConfig, params: VehicleParams) -> None:
    if inp.refs.shape[0] != cfg.horizon:
        raise ValueError(
            f"got {inp.refs.shape[0]} reference points for a horizon of {cfg.horizon}"
        )
    if not np.all(np.isfinite(inp.refs)):
        raise ValueError("non-finite reference point")
    gaps = np.linalg.norm(np.diff(inp.refs, axis=0), axis=1)
    if gaps.size and gaps.max() > 2.0 * params.spacing + 1e-9:
        raise ValueError("reference points further apart than 2*v*dt; not trackable")


def mpc_cost(inp: MpcInput, u: np.ndarray, params: VehicleParams) -> float:
    """Horizon cost of a steering sequence: the rollout's summed squared
    position error against the reference points."""
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != (inp.refs.shape[0],):
        raise ValueError("control sequence length must match the reference list")
    s = inp.state
    return kernels.rollout_cost(s.x, s.y, s.theta, u, inp.refs, params.v, params.l_f, params.dt)


def mpc_cost_grad(inp: MpcInput, u: np.ndarray, params: VehicleParams):
    """Cost and its exact gradient (backward adjoint sweep)."""
    u = np.ascontiguousarray(u, dtype=float)
    grad = np.empty_like(u)
    s = inp.state
    cost = kernels.rollout_cost_grad(
        s.x, s.y, s.theta, u, inp.refs, params.v, params.l_f, params.dt, grad
    )
    return cost, grad


def _centered_grid(levels: int, delta_max: float) -> np.ndarray:
    """Uniform steering grid, exact zero at the center for odd counts,
    ordered center-out so enumeration ties favor small magnitudes."""
    grid = np.linspace(-delta_max, delta_max, levels)
    if levels % 2 == 1:
        grid[levels // 2] = 0.0
    return np.ascontiguousarray(grid[np.argsort(np.abs(grid), kind="stable")])


def _cold_starts(inp: MpcInput, params: VehicleParams, n: int, delta_max: float):
    """Deterministic multistart set for cold solves. Short horizons get a
    coarse exhaustive scan as a seed (the cost is multimodal there and the
    scan is cheap); long horizons get zero steering plus the two uniform
    bang-bang extremes."""
    starts = [np.zeros(n)]
    s = inp.state
    if n <= 4:
        seed, _ = kernels.grid_search(
            s.x, s.y, s.theta, inp.refs, _centered_grid(9, delta_max),
            params.v, params.l_f, params.dt,
        )
        starts.append(seed)
    else:
        starts.append(np.full(n, delta_max))
        starts.append(np.full(n, -delta_max))
    return starts


def mpc_solve(
    inp: MpcInput,
    cfg: MpcConfig,
    params: VehicleParams,
    warm_start: np.ndarray | None = None,
) -> MpcResult:
    """Solve for the best steering sequence.

    Warm-started calls run a single solve from the shifted previous
    solution; cold calls run the deterministic multistart and keep the
    lowest-cost result. Non-convergence (iteration budget exhausted before
    the projected-gradient norm reached grad_tol) is reported through the
    result's `converged` flag, never raised.
    """
    _check_input(inp, cfg, params)
    s = inp.state
    n = cfg.horizon
    if warm_start is not None:
        starts = [np.ascontiguousarray(warm_start, dtype=float)]
        if starts[0].shape != (n,):
            raise ValueError("warm start length must match the horizon")
    else:
        starts = _cold_starts(inp, params, n, cfg.delta_max)
    best = None
    for u0 in starts:
        u, cost, iters, converged = kernels.solve_tracking(
            s.x, s.y, s.theta, u0, inp.refs,
            params.v, params.l_f, params.dt,
            cfg.delta_max, cfg.max_iters, cfg.grad_tol,
        )
        if best is None or cost < best.cost:
            best = MpcResult(u=u, cost=cost, iterations=iters, converged=converged)
    return best


def mpc_first_control(
    inp: MpcInput,
    cfg: MpcConfig,
    params: VehicleParams,
    warm_start: np.ndarray | None = None,
) -> float:
    """Convenience wrapper: the first element of the solved sequence."""
    return float(mpc_solve(inp, cfg, params, warm_start).u[0])


def grid_oracle(
    inp: MpcInput,
    params: VehicleParams,
    levels: int = 41,
    delta_max: float = 0.4189,
):
    """Exhaustive verification oracle over a uniform steering grid.

    Only sensible for tiny horizons (cost grows as levels**N); rejects
    N > 4 or levels > 41. Grid values are enumerated center-out so ties go
    to the smallest steering magnitudes. Returns (sequence, cost).
    """
    n = inp.refs.shape[0]
    if n > 4:
        raise ValueError("grid oracle is limited to horizons of at most 4")
    if not 1 <= levels <= 41:
        raise ValueError("levels must be in [1, 41]")
    grid = np.linspace(-delta_max, delta_max, levels)
    if levels % 2 == 1:
        grid[levels // 2] = 0.0
    order = np.argsort(np.abs(grid), kind="stable")
    grid = np.ascontiguousarray(grid[order])
    s = inp.state
    u, cost = kernels.grid_search(
        s.x, s.y, s.theta, inp.refs, grid, params.v, params.l_f, params.dt
    )
    return u, float(cost)
