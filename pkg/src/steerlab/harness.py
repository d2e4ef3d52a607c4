"""Closed-loop rollouts of any controller, deviation metrics against the
expert rollout, and the per-step latency benchmark."""

import csv
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .mpc import MpcConfig, MpcInput, mpc_solve
from .nn import Mlp
from .trajgen import RefTrajectory, nearest_ref_index
from .vehicle import VehicleParams, VehicleState, step_dynamics

ABORT_RADIUS = 2.0  # m; deviation beyond this ends a rollout as diverged


class MpcController:
    """Receding-horizon expert; owns its warm start between steps."""

    def __init__(self, cfg: MpcConfig, params: VehicleParams):
        self.cfg = cfg
        self.params = params
        self._warm = None

    def reset(self) -> None:
        self._warm = None

    def __call__(self, state: VehicleState, traj: RefTrajectory, k: int) -> float:
        inp = MpcInput(state, traj.refs_for(k, self.cfg.horizon))
        res = mpc_solve(inp, self.cfg, self.params, warm_start=self._warm)
        # shift by one step, repeating the last entry
        self._warm = np.concatenate([res.u[1:], res.u[-1:]])
        return float(res.u[0])


class NetController:
    """Neural steering: build the net's input encoding, run the forward."""

    def __init__(self, net: Mlp, feature_kind: str, params: VehicleParams,
                 horizon: int = 20):
        from .features import FEATURE_DIMS, build_features

        if FEATURE_DIMS[feature_kind] != net.input_dim:
            raise ValueError(
                f"net expects {net.input_dim} inputs, {feature_kind} has "
                f"{FEATURE_DIMS[feature_kind]}"
            )
        self.net = net
        self.feature_kind = feature_kind
        self.params = params
        self.horizon = horizon
        self._build = build_features

    def reset(self) -> None:
        pass

    def __call__(self, state: VehicleState, traj: RefTrajectory, k: int) -> float:
        feats = self._build(self.feature_kind, state, traj, k, self.horizon)
        return self.net.forward(feats)


@dataclass
class RolloutResult:
    states: np.ndarray        # (T, 3) pose at which each command was computed
    commands: np.ndarray      # (T,)
    indices: np.ndarray       # (T,) nearest waypoint per step, nondecreasing
    call_times: np.ndarray    # (T,) controller wall time per step, seconds
    final_state: VehicleState
    diverged_at: int | None = None

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class Metrics:
    mean_cm: float
    max_cm: float
    std_cm: float
    latency_s: float

    def to_dict(self) -> dict:
        return {
            "mean_cm": self.mean_cm,
            "max_cm": self.max_cm,
            "std_cm": self.std_cm,
            "latency_s": self.latency_s,
        }


def rollout(
    controller,
    traj: RefTrajectory,
    steps: int,
    params: VehicleParams,
    horizon: int = 20,
    start_state: VehicleState | None = None,
    abort_radius: float = ABORT_RADIUS,
) -> RolloutResult:
    """Drive the controller along the trajectory for `steps` steps.

    Closed tracks are unrolled into enough laps first. Each step finds the
    nearest waypoint (monotonic windowed search), asks the controller for a
    command, clamps it to the steering box and integrates the bicycle one
    step. Only the controller call itself is timed."""
    if traj.closed:
        laps = int(math.ceil((steps + horizon + 2) / len(traj))) + 1
        traj = traj.tiled(laps)
    if traj.last_usable_index(horizon) < 1:
        raise ValueError("trajectory too short for the horizon")
    if start_state is None:
        start_state = VehicleState(
            traj.points[0, 0], traj.points[0, 1], traj.headings[0]
        )
    controller.reset()
    state = start_state
    k = 0
    states = np.empty((steps, 3))
    commands = np.empty(steps)
    indices = np.empty(steps, dtype=np.int64)
    call_times = np.empty(steps)
    diverged_at = None
    t_used = 0
    for t in range(steps):
        k = nearest_ref_index(traj, (state.x, state.y), k, horizon)
        dev = math.hypot(state.x - traj.points[k, 0], state.y - traj.points[k, 1])
        if dev > abort_radius:
            diverged_at = t
            break
        tic = time.perf_counter_ns()
        delta = controller(state, traj, k)
        call_times[t] = (time.perf_counter_ns() - tic) * 1e-9
        delta = min(params.delta_max, max(-params.delta_max, delta))
        states[t] = (state.x, state.y, state.theta)
        commands[t] = delta
        indices[t] = k
        state = step_dynamics(state, delta, params)
        t_used = t + 1
    return RolloutResult(
        states=states[:t_used],
        commands=commands[:t_used],
        indices=indices[:t_used],
        call_times=call_times[:t_used],
        final_state=state,
        diverged_at=diverged_at,
    )


def compute_metrics(test: RolloutResult, expert: RolloutResult) -> Metrics:
    """Per-step distance between same-index positions of the two rollouts,
    reported in centimeters (population std); latency is the test
    controller's median step time."""
    if len(test) != len(expert):
        raise ValueError(
            f"rollout lengths differ ({len(test)} vs {len(expert)}); "
            "did one of them diverge?"
        )
    dists = np.linalg.norm(test.states[:, :2] - expert.states[:, :2], axis=1)
    return Metrics(
        mean_cm=float(dists.mean() * 100.0),
        max_cm=float(dists.max() * 100.0),
        std_cm=float(dists.std() * 100.0),
        latency_s=float(np.median(test.call_times)),
    )


def bench_latency(fn, inputs, min_calls: int = 10_000) -> float:
    """Median wall time per call of fn over the given inputs, cycling
    through them until at least min_calls calls; the first 10% are warmup
    and are discarded."""
    n_inputs = len(inputs)
    total = max(min_calls, n_inputs)
    times = np.empty(total)
    for i in range(total):
        arg = inputs[i % n_inputs]
        tic = time.perf_counter_ns()
        fn(arg)
        times[i] = time.perf_counter_ns() - tic
    keep = times[int(0.1 * total):]
    return float(np.median(keep) * 1e-9)


def collect_bench_instances(
    traj: RefTrajectory,
    params: VehicleParams,
    cfg: MpcConfig,
    count: int = 64,
    steps: int = 400,
):
    """Representative (state, nearest-index) pairs sampled from an expert
    rollout, for latency benchmarking with input assembly done up front."""
    expert = rollout(MpcController(cfg, params), traj, steps, params, cfg.horizon)
    if traj.closed:
        laps = int(math.ceil((steps + cfg.horizon + 2) / len(traj))) + 1
        traj = traj.tiled(laps)
    sel = np.linspace(0, len(expert) - 1, min(count, len(expert))).astype(int)
    out = []
    for t in sel:
        s = expert.states[t]
        out.append((VehicleState(s[0], s[1], s[2]), int(expert.indices[t]), traj))
    return out


def prepare_mpc_bench(instances, cfg: MpcConfig, params: VehicleParams):
    """(fn, inputs) for bench_latency: inputs are fully assembled MpcInputs,
    the timed call is the cold solve alone."""
    inputs = [
        MpcInput(state, traj.refs_for(k, cfg.horizon)) for state, k, traj in instances
    ]

    def run(inp):
        return mpc_solve(inp, cfg, params)

    return run, inputs


def prepare_net_bench(net: Mlp, instances, feature_kind: str, horizon: int = 20):
    """(fn, inputs) for bench_latency: inputs are prebuilt feature vectors,
    the timed call is the forward pass alone."""
    from .features import build_features

    inputs = [
        build_features(feature_kind, state, traj, k, horizon)
        for state, k, traj in instances
    ]
    params_, dims, acts = net.packed()
    scale = net.output_scale

    def run(feats):
        return kernels.mlp_forward(params_, dims, acts, scale, feats)

    return run, inputs


def save_rollout(result: RolloutResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "x", "y", "theta", "delta", "ref_index"])
        for t in range(len(result)):
            writer.writerow(
                [t]
                + [format(v, ".17g") for v in result.states[t]]
                + [format(result.commands[t], ".17g"), int(result.indices[t])]
            )


def save_metrics(metrics: Metrics, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics.to_dict(), fh, indent=2)
        fh.write("\n")
