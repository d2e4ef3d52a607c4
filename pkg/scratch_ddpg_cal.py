"""DDPG calibration run (scratch, not part of the package)."""

import json
import sys
import time

import numpy as np

from steerlab.vehicle import VehicleParams
from steerlab import rl, nn, mpc, harness, trajgen

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0
EPISODES = int(sys.argv[2]) if len(sys.argv) > 2 else 1500
EP_LEN = 300
WARMUP = 3000
ACTOR_EVERY = 2

params = VehicleParams()
cfg = rl.DdpgConfig(episodes=EPISODES, episode_len=EP_LEN, seed=SEED,
                    actor_lr=1e-4, critic_lr=1e-3)
rng = np.random.default_rng(SEED)
pool = trajgen.trajectory_pool(params)
env = rl.TrackingEnv(params, cfg.horizon, episode_len=EP_LEN,
                     abort_radius=cfg.abort_radius, pool=pool)

track = trajgen.build_validation_track(params)
T = 2 * len(track)
mcfg = mpc.MpcConfig()
expert = harness.rollout(harness.MpcController(mcfg, params), track, T, params)

s_dim = 40
base = np.zeros(s_dim)
base[0::2] = params.spacing * np.arange(1, 21)

actor = nn.init_glorot([s_dim, *cfg.actor_hidden, 1], "relu", params.delta_max,
                       seed=int(rng.integers(2**31)))
critic = rl.Critic(s_dim, cfg.critic_hidden, seed=int(rng.integers(2**31)))
ri = np.random.default_rng(SEED + 777)
actor.biases[0][:] = -actor.weights[0] @ base
critic.biases[0][:] = -critic.weights[0] @ base
actor.weights[-1][:] = ri.uniform(-3e-3, 3e-3, actor.weights[-1].shape)
actor.invalidate()
critic.weights[2][:] = ri.uniform(-3e-3, 3e-3, critic.weights[2].shape)
actor_t = actor.copy()
critic_t = critic.copy()
aopt = nn.adam_init(actor, cfg.actor_lr)
copt = nn.adam_init(critic, cfg.critic_lr)
noise = rl.OUNoise(cfg.ou_theta, cfg.ou_sigma_scale * params.delta_max)
buffer = rl.ReplayBuffer(cfg.buffer_capacity, s_dim)

best = {"max_cm": 1e9, "mean_cm": 1e9, "ep": -1}
step_count = 0
t0 = time.time()
for ep in range(EPISODES):
    s = env.reset(rng)
    noise.reset()
    ep_ret = 0.0
    losses = []
    for t in range(EP_LEN):
        a = actor.forward(s) + noise.sample(rng)
        a = min(params.delta_max, max(-params.delta_max, a))
        s2, r, done = env.step(a)
        buffer.add(s, a, r, s2, done)
        s = s2
        ep_ret += r
        step_count += 1
        if len(buffer) >= cfg.batch_size:
            batch = buffer.sample(cfg.batch_size, rng)
            states, actions, _, _, _ = batch
            y = rl.critic_target(batch, actor_t, critic_t, cfg.gamma)
            q = critic.forward(states, actions)
            dq = 2.0 * (q - y) / q.size
            losses.append(float(np.mean((q - y) ** 2)))
            gw, gb, _ = critic.backward(states, actions, dq)
            nn.adam_step(critic, gw, gb, copt)
            if step_count > WARMUP and step_count % ACTOR_EVERY == 0:
                a_pred = actor.forward_batch(states)
                dqda = critic.action_grad(states, a_pred)
                agw, agb = nn.backward_from_output(actor, states, -dqda / dqda.size)
                nn.adam_step(actor, agw, agb, aopt)
            rl.soft_update(actor_t, actor, cfg.tau)
            rl.soft_update(critic_t, critic, cfg.tau)
        if done:
            break
    if (ep + 1) % 25 == 0:
        test = harness.rollout(harness.NetController(actor, "i40", params),
                               track, T, params)
        if test.diverged_at is None and len(test) == len(expert):
            m = harness.compute_metrics(test, expert)
            tag = ""
            if m.max_cm < best["max_cm"]:
                best = {"max_cm": m.max_cm, "mean_cm": m.mean_cm, "ep": ep}
                tag = "  *best*"
            print(f"ep {ep+1:4d} steps {step_count:7d} ret/step {ep_ret/max(env._t,1):7.3f} "
                  f"closs {np.mean(losses):8.4f} | track max {m.max_cm:7.2f} cm "
                  f"mean {m.mean_cm:6.2f} cm{tag}", flush=True)
        else:
            print(f"ep {ep+1:4d} steps {step_count:7d} ret/step {ep_ret/max(env._t,1):7.3f} "
                  f"closs {np.mean(losses):8.4f} | track DIVERGED at "
                  f"{test.diverged_at}", flush=True)
print(json.dumps({"seed": SEED, "best": best, "minutes": (time.time()-t0)/60}))
