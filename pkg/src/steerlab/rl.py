"""DDPG training of a steering actor against the bicycle tracking
environment: state is the i40 encoding, reward the negative squared
distance to the next reference point."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .features import build_i40
from .trajgen import DATASET_KINDS, nearest_ref_index, sample_initial_pose, trajectory_pool
from .vehicle import VehicleParams, step_dynamics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DdpgConfig:
    gamma: float = 0.99
    tau: float = 0.001
    buffer_capacity: int = 2000
    batch_size: int = 64
    actor_hidden: tuple = (400, 300)
    critic_hidden: tuple = (400, 300)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    ou_theta: float = 0.15
    ou_sigma_scale: float = 0.2  # sigma = scale * delta_max
    episode_len: int = 500  # end-of-trajectory usually terminates earlier
    episodes: int = 400
    eval_every: int = 25
    eval_episode_len: int = 150
    warmup_steps: int = 3000     # critic-only updates before the actor moves
    actor_update_every: int = 2  # critic updates per actor update
    final_init: float = 3e-3     # uniform range of the output-layer weights
    abort_radius: float = 2.0
    horizon: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")


class ReplayBuffer:
    """Fixed-capacity ring of transitions; overwrites oldest first."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.empty((capacity, state_dim))
        self.actions = np.empty(capacity)
        self.rewards = np.empty(capacity)
        self.next_states = np.empty((capacity, state_dim))
        self.dones = np.empty(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s, a, r, s_next, done) -> None:
        i = self._next
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.dones[i] = 1.0 if done else 0.0
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self._size, size=batch_size)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
        )


class OUNoise:
    """Ornstein-Uhlenbeck exploration noise (zero mean)."""

    def __init__(self, theta: float, sigma: float):
        self.theta = theta
        self.sigma = sigma
        self.x = 0.0

    def reset(self) -> None:
        self.x = 0.0

    def sample(self, rng: np.random.Generator) -> float:
        self.x += -self.theta * self.x + self.sigma * rng.standard_normal()
        return self.x


class Critic:
    """Q(s, a) with the action concatenated at the second layer; relu
    hidden, linear output."""

    def __init__(self, state_dim: int, hidden: tuple, seed: int):
        h1, h2 = hidden
        rng = np.random.default_rng(seed)

        def glorot(nout, nin):
            lim = math.sqrt(6.0 / (nin + nout))
            return rng.uniform(-lim, lim, size=(nout, nin))

        self.weights = [glorot(h1, state_dim), glorot(h2, h1 + 1), glorot(1, h2)]
        self.biases = [np.zeros(h1), np.zeros(h2), np.zeros(1)]

    def copy(self) -> "Critic":
        out = object.__new__(Critic)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def invalidate(self) -> None:  # Adam hook; nothing cached here
        pass

    def _trace(self, S, A):
        pre1 = S @ self.weights[0].T + self.biases[0]
        z1 = np.maximum(pre1, 0.0)
        h = np.concatenate([z1, A[:, None]], axis=1)
        pre2 = h @ self.weights[1].T + self.biases[1]
        z2 = np.maximum(pre2, 0.0)
        q = z2 @ self.weights[2][0] + self.biases[2][0]
        return pre1, z1, h, pre2, z2, q

    def forward(self, S, A) -> np.ndarray:
        return self._trace(S, A)[5]

    def backward(self, S, A, dq):
        """Parameter gradients and the action gradient for upstream dq."""
        pre1, z1, h, pre2, z2, _ = self._trace(S, A)
        d2 = dq[:, None] * self.weights[2][0] * (pre2 > 0.0)
        gw2 = d2.T @ h
        gb2 = d2.sum(axis=0)
        dh = d2 @ self.weights[1]
        d1 = dh[:, :-1] * (pre1 > 0.0)
        gw1 = d1.T @ S
        gb1 = d1.sum(axis=0)
        gw3 = (dq[:, None] * z2).sum(axis=0)[None, :]
        gb3 = np.array([dq.sum()])
        grads_w = [gw1, gw2, gw3]
        grads_b = [gb1, gb2, gb3]
        return grads_w, grads_b, dh[:, -1]

    def action_grad(self, S, A) -> np.ndarray:
        """dQ/da per sample."""
        ones = np.ones(S.shape[0])
        return self.backward(S, A, ones)[2]


def soft_update(target, live, tau: float) -> None:
    """theta' <- tau*theta + (1 - tau)*theta', in place."""
    for wt, w in zip(target.weights, live.weights):
        wt *= 1.0 - tau
        wt += tau * w
    for bt, b in zip(target.biases, live.biases):
        bt *= 1.0 - tau
        bt += tau * b
    if hasattr(target, "invalidate"):
        target.invalidate()


def critic_target(batch, actor_t: nn.Mlp, critic_t: Critic, gamma: float) -> np.ndarray:
    """Bootstrapped targets y = r + gamma * Q'(s', mu'(s')), cut at
    terminal transitions."""
    _, _, rewards, next_states, dones = batch
    a_next = actor_t.forward_batch(next_states)
    q_next = critic_t.forward(next_states, a_next)
    return rewards + gamma * (1.0 - dones) * q_next


class TrackingEnv:
    """Follow a randomly chosen training trajectory from a perturbed pose;
    observations are i40, reward the negative squared distance to the next
    reference point."""

    def __init__(
        self,
        params: VehicleParams,
        horizon: int = 20,
        lateral_range: float = 0.5,
        heading_range: float = math.pi / 6,
        episode_len: int = 500,
        abort_radius: float = 2.0,
        kinds: tuple = DATASET_KINDS[3],
        pool: dict | None = None,
    ):
        self.params = params
        self.horizon = horizon
        self.lateral_range = lateral_range
        self.heading_range = heading_range
        self.episode_len = episode_len
        self.abort_radius = abort_radius
        self.kinds = kinds
        self.pool = pool or trajectory_pool(params)
        self.done_reason = None  # "time" | "end" | "abort" after a done step
        self._traj = None
        self._state = None
        self._k = 0
        self._t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        kind = self.kinds[int(rng.integers(0, len(self.kinds)))]
        self._traj = self.pool[kind]
        self._state, anchor = sample_initial_pose(
            self._traj, rng, self.lateral_range, self.heading_range, self.horizon
        )
        self._k = nearest_ref_index(
            self._traj, (self._state.x, self._state.y), max(0, anchor - 10), self.horizon
        )
        self._t = 0
        return build_i40(self._state, self._traj, self._k, self.horizon)

    def step(self, action: float):
        dmax = self.params.delta_max
        if abs(action) > dmax:
            log.warning("action %.4f outside the steering box; clamping", action)
            action = min(dmax, max(-dmax, action))
        ref = self._traj.points[self._k + 1]
        self._state = step_dynamics(self._state, action, self.params)
        dx = self._state.x - ref[0]
        dy = self._state.y - ref[1]
        reward = -(dx * dx + dy * dy)
        self._k = nearest_ref_index(
            self._traj, (self._state.x, self._state.y), self._k, self.horizon
        )
        self._t += 1
        dev = math.hypot(
            self._state.x - self._traj.points[self._k, 0],
            self._state.y - self._traj.points[self._k, 1],
        )
        self.done_reason = None
        if dev > self.abort_radius:
            self.done_reason = "abort"
        elif self._k >= self._traj.last_usable_index(self.horizon):
            self.done_reason = "end"
        elif self._t >= self.episode_len:
            self.done_reason = "time"
        s_next = build_i40(self._state, self._traj, self._k, self.horizon)
        return s_next, reward, self.done_reason is not None


def ddpg_update(
    buffer: ReplayBuffer,
    actor: nn.Mlp,
    critic: Critic,
    actor_t: nn.Mlp,
    critic_t: Critic,
    actor_opt: nn.AdamState,
    critic_opt: nn.AdamState,
    cfg: DdpgConfig,
    rng: np.random.Generator,
    update_actor: bool = True,
) -> float:
    """One DDPG step: critic regression to the bootstrapped targets, actor
    ascent along the critic's action gradient, then soft target updates.
    Returns the critic loss."""
    batch = buffer.sample(cfg.batch_size, rng)
    states, actions, _, _, _ = batch
    y = critic_target(batch, actor_t, critic_t, cfg.gamma)

    q = critic.forward(states, actions)
    resid = q - y
    loss = float(np.mean(resid ** 2))
    dq = 2.0 * resid / resid.size
    gw, gb, _ = critic.backward(states, actions, dq)
    nn.adam_step(critic, gw, gb, critic_opt)

    if update_actor:
        a_pred = actor.forward_batch(states)
        dqda = critic.action_grad(states, a_pred)
        dout = -dqda / dqda.size  # ascend Q = descend -Q
        agw, agb = nn.backward_from_output(actor, states, dout)
        nn.adam_step(actor, agw, agb, actor_opt)

    soft_update(actor_t, actor, cfg.tau)
    soft_update(critic_t, critic, cfg.tau)
    return loss


@dataclass
class DdpgHistory:
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)
    critic_losses: list = field(default_factory=list)  # per-episode means
    eval_returns: list = field(default_factory=list)   # (episode, return)
    best_eval_return: float = -math.inf
    best_episode: int = -1
    improved_over_init: bool = False


def evaluate_actor(actor: nn.Mlp, env: TrackingEnv, seeds, episode_len: int) -> float:
    """Mean noise-free per-step reward over fixed evaluation episodes.

    Aborted episodes are padded with the worst admissible reward for the
    remaining steps, so dying early never scores better than finishing."""
    total = 0.0
    worst = -env.abort_radius ** 2
    for seed in seeds:
        rng = np.random.default_rng(seed)
        s = env.reset(rng)
        ep = 0.0
        steps = 0
        for _ in range(episode_len):
            a = actor.forward(s)
            s, r, done = env.step(a)
            ep += r
            steps += 1
            if done:
                break
        if env.done_reason == "abort":
            ep += (episode_len - steps) * worst
            steps = episode_len
        total += ep / max(steps, 1)
    return total / len(seeds)


def on_track_baseline(params: VehicleParams, horizon: int = 20) -> np.ndarray:
    """The i40 features of a perfectly tracking vehicle on a straight: the
    resting point of the observation distribution, used to center the
    first-layer biases at init."""
    base = np.zeros(2 * horizon)
    base[0::2] = params.spacing * np.arange(1, horizon + 1)
    return base


def _center_first_layer(net, baseline: np.ndarray) -> None:
    net.biases[0][:] = -net.weights[0] @ baseline
    if hasattr(net, "invalidate"):
        net.invalidate()


def train_ddpg(
    cfg: DdpgConfig,
    params: VehicleParams | None = None,
    pool: dict | None = None,
    progress=None,
):
    """Full DDPG run; returns (best actor, history). The best actor is the
    checkpoint with the highest noise-free evaluation score.

    Initialization follows the usual DDPG stabilizers for saturating
    heads: first-layer biases centered on the on-track feature baseline,
    output layers drawn from a small uniform range, and the critic trained
    alone for warmup_steps before the actor starts moving."""
    params = params or VehicleParams()
    pool = pool or trajectory_pool(params)
    rng = np.random.default_rng(cfg.seed)
    env = TrackingEnv(
        params,
        cfg.horizon,
        episode_len=cfg.episode_len,
        abort_radius=cfg.abort_radius,
        pool=pool,
    )
    eval_env = TrackingEnv(
        params,
        cfg.horizon,
        episode_len=cfg.eval_episode_len,
        abort_radius=cfg.abort_radius,
        pool=pool,
    )
    eval_seeds = [10_000 + i for i in range(4)]

    state_dim = 2 * cfg.horizon
    actor = nn.init_glorot(
        [state_dim, *cfg.actor_hidden, 1], "relu", params.delta_max,
        seed=int(rng.integers(2**31)),
    )
    critic = Critic(state_dim, cfg.critic_hidden, seed=int(rng.integers(2**31)))
    init_rng = np.random.default_rng(int(rng.integers(2**31)))
    baseline = on_track_baseline(params, cfg.horizon)
    _center_first_layer(actor, baseline)
    _center_first_layer(critic, baseline)
    actor.weights[-1][:] = init_rng.uniform(
        -cfg.final_init, cfg.final_init, actor.weights[-1].shape
    )
    actor.invalidate()
    critic.weights[-1][:] = init_rng.uniform(
        -cfg.final_init, cfg.final_init, critic.weights[-1].shape
    )
    actor_t = actor.copy()
    critic_t = critic.copy()
    actor_opt = nn.adam_init(actor, cfg.actor_lr)
    critic_opt = nn.adam_init(critic, cfg.critic_lr)
    noise = OUNoise(cfg.ou_theta, cfg.ou_sigma_scale * params.delta_max)
    buffer = ReplayBuffer(cfg.buffer_capacity, state_dim)

    history = DdpgHistory()
    init_return = evaluate_actor(actor, eval_env, eval_seeds, cfg.eval_episode_len)
    best_actor = actor.copy()
    best_return = init_return
    best_episode = -1

    step_count = 0
    for episode in range(cfg.episodes):
        s = env.reset(rng)
        noise.reset()
        ep_return = 0.0
        ep_losses = []
        for _ in range(cfg.episode_len):
            a = actor.forward(s) + noise.sample(rng)
            a = min(params.delta_max, max(-params.delta_max, a))
            s_next, r, done = env.step(a)
            buffer.add(s, a, r, s_next, done)
            s = s_next
            ep_return += r
            step_count += 1
            if len(buffer) >= cfg.batch_size:
                update_actor = (
                    step_count > cfg.warmup_steps
                    and step_count % cfg.actor_update_every == 0
                )
                ep_losses.append(
                    ddpg_update(
                        buffer, actor, critic, actor_t, critic_t,
                        actor_opt, critic_opt, cfg, rng,
                        update_actor=update_actor,
                    )
                )
            if done:
                break
        history.episode_returns.append(ep_return)
        history.episode_lengths.append(env._t)
        history.critic_losses.append(float(np.mean(ep_losses)) if ep_losses else math.nan)

        if (episode + 1) % cfg.eval_every == 0 or episode == cfg.episodes - 1:
            ret = evaluate_actor(actor, eval_env, eval_seeds, cfg.eval_episode_len)
            history.eval_returns.append((episode, ret))
            if ret > best_return:
                best_return = ret
                best_actor = actor.copy()
                best_episode = episode
        if progress is not None:
            progress(episode, history)

    history.best_eval_return = best_return
    history.best_episode = best_episode
    history.improved_over_init = best_episode >= 0
    if not history.improved_over_init:
        log.warning(
            "no checkpoint beat the initial actor (init return %.3f)", init_return
        )
    return best_actor, history
