"""Goal-conditioned insertion policy trained with PPO in the contact sim.

The observation is the grasped object's pose relative to the goal plus the
force-torque reading (10 numbers, normalized by running statistics). The
action is an end-effector velocity command squashed by tanh to the sim's
velocity limits. The reward is the negative pose distance to the goal with
a one-time terminal bonus on successful insertion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .nets import MLP, Adam, NaNGradient, RunningNorm, flatten_grads
from .rng import RngStream
from .scenes import SceneSpec
from .workcell import (
    ANG_LIMIT,
    LIN_LIMIT,
    SceneGeometry,
    VelocityCommand,
    WorkcellState,
    check_inserted,
    step as sim_step,
)

OBS_DIM = 10
ACT_DIM = 4
LOGSTD_MIN, LOGSTD_MAX = -5.0, 1.0
TERMINAL_BONUS = 10.0
LAMBDA_ROT = 0.1

_LOG_2PI = math.log(2.0 * math.pi)


class LengthMismatch(ValueError):
    pass


class Diverged(RuntimeError):
    """Mean return became non-finite during training."""


@dataclass
class RLConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    envs: int = 64
    horizon: int = 256
    epochs: int = 4
    minibatches: int = 8
    iterations: int = 500
    vf_coef: float = 0.5
    ent_coef: float = 1e-3
    max_episode_steps: int = 200
    eval_every: int = 10
    eval_seeds: int = 32
    stop_success: float = 0.97
    time_budget_s: float | None = None

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError("clip_eps must be in (0, 1)")
        for name in ("gamma", "gae_lambda", "lr", "envs", "horizon", "epochs",
                     "minibatches", "iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def insert_reward(object_q, goal_q) -> float:
    """Eq.-style dense reward: negative pose distance (lambda_rot = 0.1).

    Poses are planar (x, y, z, yaw) so the geodesic rotation angle reduces
    to the wrapped yaw difference. The terminal success bonus is added by
    the environment, not here.
    """
    dx = object_q[0] - goal_q[0]
    dy = object_q[1] - goal_q[1]
    dz = object_q[2] - goal_q[2]
    dyaw = abs((object_q[3] - goal_q[3] + np.pi) % (2 * np.pi) - np.pi)
    return -(math.sqrt(dx * dx + dy * dy + dz * dz) + LAMBDA_ROT * dyaw)


def _softclamp_logstd(raw):
    return LOGSTD_MIN + (LOGSTD_MAX - LOGSTD_MIN) / (1.0 + np.exp(-raw))


def _dsoftclamp(raw):
    s = 1.0 / (1.0 + np.exp(-raw))
    return (LOGSTD_MAX - LOGSTD_MIN) * s * (1.0 - s)


_INIT_LOGSTD_RAW = math.log(
    (-0.7 - LOGSTD_MIN) / (LOGSTD_MAX - (-0.7))
)  # start exploration near std = exp(-0.7) ~= 0.5


class InsertPolicy:
    """Tanh-squashed Gaussian actor plus value critic over normalized obs."""

    def __init__(self, seed: int = 0, hidden=(128, 128)):
        self.hidden = tuple(hidden)
        self.actor = MLP([OBS_DIM, *hidden, 2 * ACT_DIM], seed=seed, name="actor")
        self.critic = MLP([OBS_DIM, *hidden, 1], seed=seed, name="critic")
        self.actor.biases[-1][ACT_DIM:] = _INIT_LOGSTD_RAW
        self.obs_norm = RunningNorm(OBS_DIM)

    # -- distributions -----------------------------------------------------

    def dist(self, z):
        """(mean, logstd) for normalized observations z (batch, OBS_DIM)."""
        out, cache = self.actor.forward(z)
        out = np.atleast_2d(out)
        mean = out[:, :ACT_DIM]
        logstd = _softclamp_logstd(out[:, ACT_DIM:])
        return mean, logstd, cache

    def value(self, z):
        v, cache = self.critic.forward(np.atleast_2d(z))
        return v[:, 0], cache

    def act(self, obs, g=None):
        """Stochastic action for one normalized-on-the-fly observation batch.

        Returns (action in [-1,1]^4, pre-squash sample u, logp, value).
        With g=None the action is deterministic (tanh of the mean).
        """
        z = self.obs_norm.normalize(np.atleast_2d(obs))
        mean, logstd, _ = self.dist(z)
        if g is None:
            u = mean
        else:
            u = mean + np.exp(logstd) * g.standard_normal(mean.shape)
        logp = gaussian_logp(u, mean, logstd)
        v, _ = self.value(z)
        return np.tanh(u), u, logp, v

    def command(self, obs) -> VelocityCommand:
        """Deterministic deployment action as a clipped velocity command."""
        a = np.tanh(self.dist(self.obs_norm.normalize(np.atleast_2d(obs)))[0])[0]
        return VelocityCommand(a[:3] * LIN_LIMIT, float(a[3] * ANG_LIMIT))

    # -- persistence -------------------------------------------------------

    def tensors(self):
        out = {}
        for i, (W, b) in enumerate(zip(self.actor.weights, self.actor.biases)):
            out[f"actor.w{i}"] = W
            out[f"actor.b{i}"] = b
        for i, (W, b) in enumerate(zip(self.critic.weights, self.critic.biases)):
            out[f"critic.w{i}"] = W
            out[f"critic.b{i}"] = b
        out["obs_mean"] = self.obs_norm.mean
        out["obs_var"] = self.obs_norm.var
        return out

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta["obs_count"] = self.obs_norm.count
        meta["hidden"] = list(self.hidden)
        checkpoint.save(path, "insert-policy", self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "InsertPolicy":
        kind, tensors, meta = checkpoint.load(path)
        if kind != "insert-policy":
            raise checkpoint.DecodeError(f"expected insert-policy, got {kind}")
        pol = cls(seed=0, hidden=tuple(meta.get("hidden", (128, 128))))
        for i in range(len(pol.actor.weights)):
            pol.actor.weights[i][...] = tensors[f"actor.w{i}"]
            pol.actor.biases[i][...] = tensors[f"actor.b{i}"]
        for i in range(len(pol.critic.weights)):
            pol.critic.weights[i][...] = tensors[f"critic.w{i}"]
            pol.critic.biases[i][...] = tensors[f"critic.b{i}"]
        pol.obs_norm.mean = tensors["obs_mean"]
        pol.obs_norm.var = tensors["obs_var"]
        pol.obs_norm.count = float(meta.get("obs_count", 1.0))
        return pol

    def clone(self) -> "InsertPolicy":
        other = InsertPolicy(seed=0, hidden=self.hidden)
        other.actor.set_flat(self.actor.get_flat())
        other.critic.set_flat(self.critic.get_flat())
        other.obs_norm = RunningNorm.from_state(self.obs_norm.state())
        return other


def gaussian_logp(u, mean, logstd):
    """Diagonal Gaussian log density of pre-squash actions, summed over dims.

    The tanh change-of-variables term is constant given u, so it cancels in
    PPO ratios and is omitted throughout.
    """
    z = (u - mean) / np.exp(logstd)
    return (-0.5 * (z * z) - logstd - 0.5 * _LOG_2PI).sum(axis=-1)


# ---------------------------------------------------------------------------
# environment


class InsertEnv:
    """Single training environment: hexagon (by default) already grasped,
    hovering near its hole; episode ends on insertion or step cap."""

    def __init__(self, scene: SceneSpec, geom: SceneGeometry, seed: int,
                 object_name: str = "hexagon",
                 lateral_jitter: float = 0.005, yaw_jitter: float = np.deg2rad(5.0),
                 goal_jitter: float = 0.002, hover: float = 0.010,
                 max_episode_steps: int = 200):
        self.scene = scene
        self.geom = geom
        self.object_name = object_name
        self.hole = geom.hole_by_name[f"hole_{object_name}"]
        self.height = geom.obj_height[object_name]
        self.symmetry = geom.obj_symmetry[object_name]
        self.lateral_jitter = lateral_jitter
        self.yaw_jitter = yaw_jitter
        self.goal_jitter = goal_jitter
        self.hover = hover
        self.max_episode_steps = max_episode_steps
        self.rng = RngStream(seed)
        self.state: WorkcellState | None = None
        self.goal_q = np.zeros(4)
        self.ft = np.zeros(6)
        self.t = 0
        self._episodes = 0
        self._inserted_thresh = self.hole.top - self.hole.depth + 1e-3

    def reset(self) -> np.ndarray:
        g = self.rng.draw("episode")
        self._episodes += 1
        hx, hy = float(self.hole.xy[0]), float(self.hole.xy[1])
        if self.symmetry > 0:
            period = 2 * np.pi / self.symmetry
            branch = g.integers(self.symmetry) * period
        else:
            branch = g.uniform(-np.pi, np.pi)
        yaw = self.hole.yaw + branch + g.uniform(-self.yaw_jitter, self.yaw_jitter)
        # hole-position randomization (goal_jitter) folds into the start
        # offset: the observation is relative to the goal and the contact
        # dynamics are xy-translation invariant, so shifting the hole by d is
        # the same episode as shifting the start by -d with the hole fixed
        ox = hx + g.uniform(-self.lateral_jitter, self.lateral_jitter) \
            + g.uniform(-self.goal_jitter, self.goal_jitter)
        oy = hy + g.uniform(-self.lateral_jitter, self.lateral_jitter) \
            + g.uniform(-self.goal_jitter, self.goal_jitter)
        oz = self.geom.board_top + self.hover
        object_q = {
            o.name: np.array([*o.init_pose.translation[:2], self.scene.table_height,
                              o.init_pose.yaw()])
            for o in self.scene.objects
            if o.name != self.object_name
        }
        object_q[self.object_name] = np.array([ox, oy, oz, yaw])
        rel = np.array([0.0, 0.0, -self.height, 0.0])
        ee = np.array([ox, oy, oz + self.height, yaw])
        upright = {o.name: True for o in self.scene.objects}
        self.state = WorkcellState(ee, "closed", self.object_name, rel, object_q,
                                   upright, 0.0, 0)
        self.goal_q = np.array([hx, hy, self.hole.bottom,
                                self.hole.yaw + branch])
        self.ft = np.zeros(6)
        self.t = 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        q = self.state.object_q[self.object_name]
        out = np.empty(OBS_DIM)
        out[0] = q[0] - self.goal_q[0]
        out[1] = q[1] - self.goal_q[1]
        out[2] = q[2] - self.goal_q[2]
        out[3] = (q[3] - self.goal_q[3] + np.pi) % (2 * np.pi) - np.pi
        out[4:10] = self.ft
        return out

    def step(self, action):
        """action in [-1, 1]^4; returns (obs, reward, done, info)."""
        cmd = VelocityCommand(np.asarray(action[:3], dtype=float) * LIN_LIMIT,
                              float(action[3]) * ANG_LIMIT)
        self.state, ft = sim_step(self.geom, self.state, cmd)
        self.ft = np.concatenate([ft.force, ft.torque])
        self.t += 1
        q = self.state.object_q[self.object_name]
        reward = insert_reward(q, self.goal_q)
        success = q[2] <= self._inserted_thresh and check_inserted(
            self.geom, self.state, self.object_name, self.hole.name
        )
        done = success or self.t >= self.max_episode_steps
        if success:
            reward += TERMINAL_BONUS
        return self._obs(), reward, done, {"success": success}


# ---------------------------------------------------------------------------
# GAE and PPO


def gae(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimation.

    rewards, dones: (T, ...) aligned; values: (T+1, ...) with bootstrap.
    Returns (advantages, returns), each (T, ...).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    if dones.shape[0] != T or values.shape[0] != T + 1:
        raise LengthMismatch(
            f"rewards {rewards.shape}, dones {dones.shape}, values {values.shape}"
        )
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0] if rewards.ndim > 1 else np.array(0.0))
    for t in range(T - 1, -1, -1):
        notdone = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * notdone - values[t]
        last = delta + gamma * lam * notdone * last
        adv[t] = last
    return adv, adv + values[:-1]


def ppo_loss_and_grads(policy: InsertPolicy, z, u, logp_old, adv, ret, cfg: RLConfig):
    """Clipped-surrogate loss plus value and entropy terms, with analytic
    gradients for both networks. Returns (loss, actor_grads, critic_grads,
    stats)."""
    n = len(z)
    out, cache = policy.actor.forward(z)
    mean = out[:, :ACT_DIM]
    raw = out[:, ACT_DIM:]
    logstd = _softclamp_logstd(raw)
    std = np.exp(logstd)
    zscore = (u - mean) / std
    logp = (-0.5 * zscore * zscore - logstd - 0.5 * _LOG_2PI).sum(axis=1)
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv
    surr = np.minimum(surr1, surr2)
    entropy = (logstd + 0.5 * (1 + _LOG_2PI)).sum(axis=1)
    pi_loss = -surr.mean() - cfg.ent_coef * entropy.mean()

    # d(-surr)/dlogp: active only where the unclipped branch is the minimum
    active = (surr1 <= surr2).astype(float)
    dlogp = -(active * ratio * adv) / n
    dmean = dlogp[:, None] * (zscore / std)
    dlogstd = dlogp[:, None] * (zscore * zscore - 1.0)
    dlogstd += -cfg.ent_coef / n  # entropy term
    draw = dlogstd * _dsoftclamp(raw)
    dout = np.concatenate([dmean, draw], axis=1)
    actor_grads, _ = policy.actor.backward(cache, dout)

    v, vcache = policy.critic.forward(z)
    v = v[:, 0]
    v_loss = 0.5 * np.mean((v - ret) ** 2)
    dv = ((v - ret) / n)[:, None] * cfg.vf_coef
    critic_grads, _ = policy.critic.backward(vcache, dv)

    loss = pi_loss + cfg.vf_coef * v_loss
    stats = {
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
        "kl": float(np.mean(logp_old - logp)),
        "entropy": float(entropy.mean()),
        "v_loss": float(v_loss),
        "pi_loss": float(pi_loss),
    }
    return loss, actor_grads, critic_grads, stats


def ppo_update(policy: InsertPolicy, batch: dict, cfg: RLConfig,
               opt_actor: Adam, opt_critic: Adam):
    """Epochs of minibatch clipped-PPO ascent; advantages are normalized
    here. Returns aggregate stats; raises NaNGradient on bad gradients."""
    z = batch["z"]
    adv = batch["adv"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(z)
    g = batch["shuffle_rng"]
    stats = {}
    for _ in range(cfg.epochs):
        order = g.permutation(n)
        for mb in np.array_split(order, cfg.minibatches):
            loss, ag, cg, stats = ppo_loss_and_grads(
                policy, z[mb], batch["u"][mb], batch["logp"][mb], adv[mb],
                batch["ret"][mb], cfg
            )
            policy.actor.set_flat(opt_actor.step(policy.actor.get_flat(), flatten_grads(ag)))
            policy.critic.set_flat(opt_critic.step(policy.critic.get_flat(), flatten_grads(cg)))
    return stats


# ---------------------------------------------------------------------------
# training and evaluation


def evaluate(policy: InsertPolicy, scene: SceneSpec, seeds,
             geom: SceneGeometry | None = None, object_name: str = "hexagon",
             max_steps: int = 400, **env_kw) -> float:
    """Deterministic success rate of the policy over the given episode seeds."""
    geom = geom or SceneGeometry(scene)
    wins = 0
    for s in seeds:
        env = InsertEnv(scene, geom, seed=int(s), object_name=object_name,
                        max_episode_steps=max_steps, **env_kw)
        obs = env.reset()
        done = False
        while not done:
            cmd = np.tanh(policy.dist(policy.obs_norm.normalize(np.atleast_2d(obs)))[0])[0]
            obs, _, done, info = env.step(cmd)
        wins += int(info["success"])
    return wins / len(list(seeds))


def random_policy_success(scene: SceneSpec, seeds, seed: int = 0,
                          object_name: str = "hexagon", max_steps: int = 400) -> float:
    """Baseline: uniform random actions."""
    geom = SceneGeometry(scene)
    g = RngStream(seed).draw("random_policy")
    wins = 0
    for s in seeds:
        env = InsertEnv(scene, geom, seed=int(s), object_name=object_name,
                        max_episode_steps=max_steps)
        env.reset()
        done = False
        while not done:
            _, _, done, info = env.step(g.uniform(-1, 1, size=ACT_DIM))
        wins += int(info["success"])
    return wins / len(list(seeds))


def train_insert(scene: SceneSpec, cfg: RLConfig = None, seed: int = 0,
                 object_name: str = "hexagon", log_path=None,
                 verbose: bool = False) -> InsertPolicy:
    """PPO training loop; returns the best evaluation checkpoint."""
    cfg = cfg or RLConfig()
    geom = SceneGeometry(scene)
    policy = InsertPolicy(seed=seed)
    opt_actor = Adam(policy.actor.get_flat().size, lr=cfg.lr)
    opt_critic = Adam(policy.critic.get_flat().size, lr=cfg.lr)
    envs = [
        InsertEnv(scene, geom, seed=seed * 100_000 + 1 + i, object_name=object_name,
                  max_episode_steps=cfg.max_episode_steps)
        for i in range(cfg.envs)
    ]
    obs = np.stack([e.reset() for e in envs])
    rng = RngStream(seed)
    eval_seeds = [seed * 100_000 + 50_000 + i for i in range(cfg.eval_seeds)]

    best = policy.clone()
    best_rate = -1.0
    log_rows = []
    t_start = time.monotonic()

    for it in range(1, cfg.iterations + 1):
        g_act = rng.draw("action_noise")
        T, N = cfg.horizon, cfg.envs
        buf_obs = np.empty((T, N, OBS_DIM))
        buf_u = np.empty((T, N, ACT_DIM))
        buf_logp = np.empty((T, N))
        buf_rew = np.empty((T, N))
        buf_done = np.empty((T, N))
        buf_val = np.empty((T + 1, N))
        ep_returns = []
        ep_success = []
        ep_ret_acc = np.zeros(N)

        for t in range(T):
            buf_obs[t] = obs
            a, u, logp, v = policy.act(obs, g_act)
            buf_u[t] = u
            buf_logp[t] = logp
            buf_val[t] = v
            for i, env in enumerate(envs):
                o2, r, done, info = env.step(a[i])
                buf_rew[t, i] = r
                buf_done[t, i] = float(done)
                ep_ret_acc[i] += r
                if done:
                    ep_returns.append(ep_ret_acc[i])
                    ep_success.append(info["success"])
                    ep_ret_acc[i] = 0.0
                    o2 = env.reset()
                obs[i] = o2
        z_last = policy.obs_norm.normalize(obs)
        buf_val[T] = policy.value(z_last)[0]

        policy.obs_norm.update(buf_obs.reshape(-1, OBS_DIM))
        z = policy.obs_norm.normalize(buf_obs.reshape(-1, OBS_DIM))
        adv, ret = gae(buf_rew, buf_val, buf_done, cfg.gamma, cfg.gae_lambda)

        mean_ret = float(np.mean(ep_returns)) if ep_returns else float(buf_rew.sum(0).mean())
        if not np.isfinite(mean_ret):
            raise Diverged(f"mean return {mean_ret} at iteration {it}")
        batch = {
            "z": z,
            "u": buf_u.reshape(-1, ACT_DIM),
            "logp": buf_logp.ravel(),
            "adv": adv.ravel(),
            "ret": ret.ravel(),
            "shuffle_rng": rng.draw("shuffle"),
        }
        stats = ppo_update(policy, batch, cfg, opt_actor, opt_critic)
        rollout_sr = float(np.mean(ep_success)) if ep_success else 0.0

        eval_sr = None
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            eval_sr = evaluate(policy, scene, eval_seeds, geom, object_name,
                               max_steps=cfg.max_episode_steps * 2)
            if eval_sr > best_rate:
                best_rate = eval_sr
                best = policy.clone()
        log_rows.append((it, mean_ret, rollout_sr if eval_sr is None else eval_sr,
                         stats["clip_frac"], stats["kl"]))
        if verbose:
            print(f"iter {it:4d} return {mean_ret:8.3f} rollout_sr {rollout_sr:.2f} "
                  f"eval_sr {eval_sr if eval_sr is not None else -1:.2f} "
                  f"clip {stats['clip_frac']:.2f}", flush=True)
        if eval_sr is not None and eval_sr >= cfg.stop_success:
            break
        if cfg.time_budget_s is not None and time.monotonic() - t_start > cfg.time_budget_s:
            break

    if best_rate < 0:
        best = policy.clone()
    if log_path is not None:
        with open(log_path, "w") as f:
            f.write("iteration,mean_return,success_rate,clip_frac,kl\n")
            for row in log_rows:
                f.write(",".join(f"{v}" for v in row) + "\n")
    return best
