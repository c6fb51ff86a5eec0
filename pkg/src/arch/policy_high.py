"""High-level primitive-selection policy: history-conditioned MLP with a
softmax primitive head and a continuous parameter head, trained by behavior
cloning on demonstration steps."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .nets import MLP, Adam, flatten_grads
from .primitives import ExecContext, PRE_GRASP_HEIGHT, PrimitiveCall, PrimitiveId, dispatch
from .rng import RngStream
from .workcell import Observation, Workcell

H_WINDOW = 4
FRAME_DIM = 23
OBS_DIM = H_WINDOW * FRAME_DIM  # 92
N_PRIMITIVES = 4
LAMBDA_PARAM = 1.0
AUG_SIGMA = 0.002  # m, translation entries
HIST_DROP_P = 0.5  # per-sample chance of truncating the history window
MAX_PRIMITIVES = 12
FAILURE_CEILING = 3  # consecutive failures ending a rollout
APPROACH_HOVER = 0.010

# translation entries of the four poses within one 23-wide frame
_FRAME_POSE_T_IDX = np.array([0, 1, 2, 6, 7, 8, 10, 11, 12, 14, 15, 16])
POSE_T_IDX = np.concatenate([
    _FRAME_POSE_T_IDX + f * FRAME_DIM for f in range(H_WINDOW)
])


class EmptyBatch(ValueError):
    """bc_loss received an empty batch."""


class EmptyDataset(ValueError):
    """train_bc received no demonstrations."""


# ---------------------------------------------------------------------------
# observation featurization


def _rel_pose(q, board_xy) -> list:
    return [q[0] - board_xy[0], q[1] - board_xy[1], q[2], q[3]]


def featurize_frame(obs: Observation, target: str, board_xy,
                    prev_id: int | None, prev_success: bool) -> np.ndarray:
    """One 23-wide history frame; poses are board-relative."""
    hole_q = obs.hole_q.get(f"hole_{target}", np.zeros(4))
    one_hot = np.zeros(N_PRIMITIVES)
    if prev_id is not None:
        one_hot[int(prev_id)] = 1.0
    frame = np.array([
        *_rel_pose(obs.ee, board_xy),
        1.0 if obs.gripper == "closed" else 0.0,
        1.0 if obs.attached is not None else 0.0,
        *_rel_pose(obs.object_estimates[target], board_xy),
        *_rel_pose(hole_q, board_xy),
        *_rel_pose(obs.fixture_q, board_xy),
        *one_hot,
        1.0 if prev_success else 0.0,
    ])
    assert frame.shape == (FRAME_DIM,)
    return frame


class HistoryWindow:
    """Fixed-length window of the last H frames, zero-padded when short;
    frames are ordered oldest first in the flattened vector."""

    def __init__(self, h: int = H_WINDOW):
        self.h = h
        self.frames: list[np.ndarray] = []

    def push(self, frame: np.ndarray) -> None:
        self.frames.append(np.asarray(frame, dtype=float))
        if len(self.frames) > self.h:
            self.frames.pop(0)

    def vector(self) -> np.ndarray:
        pad = [np.zeros(FRAME_DIM)] * (self.h - len(self.frames))
        return np.concatenate(pad + self.frames) if self.frames else np.zeros(
            self.h * FRAME_DIM)


def param_anchors(obs2d: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Pose-derived anchor for each primitive's continuous parameter, read
    from the newest history frame: the object estimate for Grasp, the fixture
    pose for Place, the grasp-offset-compensated hole pose for Move, and the
    hole pose for Insert. The network regresses only the residual between the
    demonstrated parameter and this anchor, so the near-identity part of the
    mapping needs no data to learn; constant offsets (board origin, approach
    heights) land in the residual's normalization mean."""
    f = np.atleast_2d(obs2d)[:, -FRAME_DIM:]
    ee, est = f[:, 0:4], f[:, 6:10]
    hole, fix = f[:, 10:14], f[:, 14:18]
    move = hole - (est - ee)
    table = np.stack([est, fix, move, hole], axis=1)  # (B, 4 ids, 4 params)
    return table[np.arange(len(f)), np.asarray(ids, dtype=int)]


# ---------------------------------------------------------------------------
# policy


class HighLevelPolicy:
    """Shared 92->256->256 trunk with 4 primitive logits + 4 parameters."""

    def __init__(self, seed: int = 0, hidden=(256, 256)):
        self.hidden = tuple(hidden)
        self.net = MLP([OBS_DIM, *hidden, N_PRIMITIVES + 4], seed=seed,
                       name="high")
        # frozen input/output standardization (identity until train_bc sets
        # dataset statistics); keeps the regression well-conditioned
        self.obs_mu = np.zeros(OBS_DIM)
        self.obs_sd = np.ones(OBS_DIM)
        self.par_mu = np.zeros(4)
        self.par_sd = np.ones(4)

    def _net_out(self, obs2d: np.ndarray):
        return self.net.forward((obs2d - self.obs_mu) / self.obs_sd)

    def forward(self, obs, ids=None) -> tuple[np.ndarray, np.ndarray]:
        """(logits, param); the parameter is a pose-derived anchor plus the
        learned correction. ``ids`` picks the anchor's primitive per sample
        (defaults to the greedy choice)."""
        obs2d = np.atleast_2d(np.asarray(obs, dtype=float))
        out, _ = self._net_out(obs2d)
        logits = out[:, :N_PRIMITIVES]
        if ids is None:
            ids = np.argmax(logits, axis=1)
        anchor = param_anchors(obs2d, np.asarray(ids, dtype=int))
        param = anchor + self.par_mu + self.par_sd * out[:, N_PRIMITIVES:]
        if np.asarray(obs).ndim == 1:
            return logits[0], param[0]
        return logits, param

    def copy(self) -> "HighLevelPolicy":
        dup = HighLevelPolicy(seed=0, hidden=self.hidden)
        dup.net.set_flat(self.net.get_flat())
        for attr in ("obs_mu", "obs_sd", "par_mu", "par_sd"):
            setattr(dup, attr, getattr(self, attr).copy())
        return dup

    def save(self, path) -> None:
        tensors = {"obs_mu": self.obs_mu, "obs_sd": self.obs_sd,
                   "par_mu": self.par_mu, "par_sd": self.par_sd}
        for i, (W, b) in enumerate(zip(self.net.weights, self.net.biases)):
            tensors[f"net.w{i}"] = W
            tensors[f"net.b{i}"] = b
        checkpoint.save(path, "high", tensors, {"hidden": list(self.hidden)})

    @classmethod
    def load(cls, path) -> "HighLevelPolicy":
        kind, tensors, meta = checkpoint.load(path)
        if kind != "high":
            raise checkpoint.DecodeError(f"expected a high checkpoint, got {kind!r}")
        policy = cls(seed=0, hidden=tuple(meta["hidden"]))
        for i in range(len(policy.net.weights)):
            policy.net.weights[i][...] = tensors[f"net.w{i}"]
            policy.net.biases[i][...] = tensors[f"net.b{i}"]
        for attr in ("obs_mu", "obs_sd", "par_mu", "par_sd"):
            setattr(policy, attr, np.asarray(tensors[attr], dtype=float))
        return policy


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def select_action(policy: HighLevelPolicy, obs, mode: str = "greedy",
                  rng=None, bounds=None) -> PrimitiveCall:
    """Greedy (argmax, lowest-id tie) or sampled primitive with the
    parameter head's output, optionally clamped to workspace bounds."""
    logits, param = policy.forward(np.asarray(obs, dtype=float))
    if mode == "greedy":
        pid = int(np.argmax(logits))  # argmax returns the lowest tied index
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        pid = int(rng.choice(N_PRIMITIVES, p=softmax(logits)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    param = np.asarray(param, dtype=float).copy()
    if bounds is not None:
        lo, hi = bounds
        param = np.clip(param, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    return PrimitiveCall(PrimitiveId(pid), param)


# ---------------------------------------------------------------------------
# demonstrations


@dataclass
class DemoStep:
    obs: np.ndarray  # (92,)
    call: PrimitiveCall
    status: str


@dataclass
class Demonstration:
    trial: int
    label: str  # "successful" | "recovery"
    steps: list

    def __post_init__(self):
        if self.label not in ("successful", "recovery"):
            raise ValueError(f"bad label {self.label!r}")
        if not self.steps:
            raise ValueError("demonstration has no steps")


def save_demos(path, demos) -> None:
    with open(path, "w") as fh:
        for demo in demos:
            for step in demo.steps:
                fh.write(json.dumps({
                    "trial": demo.trial,
                    "label": demo.label,
                    "obs": [float(v) for v in step.obs],
                    "action": step.call.to_json(),
                    "status": step.status,
                }) + "\n")


def load_demos(path) -> list:
    by_trial: dict[int, Demonstration] = {}
    order: list[int] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            obs = np.asarray(d["obs"], dtype=float)
            if obs.shape != (OBS_DIM,):
                raise ValueError(f"bad obs length {obs.shape}")
            step = DemoStep(obs, PrimitiveCall.from_json(d["action"]), d["status"])
            t = int(d["trial"])
            if t not in by_trial:
                by_trial[t] = Demonstration(t, d["label"], [step])
                order.append(t)
            else:
                by_trial[t].steps.append(step)
    return [by_trial[t] for t in order]


def _flatten(demos):
    obs = np.stack([s.obs for d in demos for s in d.steps])
    ids = np.array([int(s.call.id) for d in demos for s in d.steps])
    params = np.stack([s.call.param for d in demos for s in d.steps])
    trials = np.array([d.trial for d in demos for _ in d.steps])
    return obs, ids, params, trials


# ---------------------------------------------------------------------------
# behavior cloning


def bc_loss_and_grads(policy: HighLevelPolicy, batch: dict,
                      lambda_param: float = LAMBDA_PARAM):
    """Loss = mean CE over primitives + lambda * mean squared parameter
    error (per-sample squared L2 against the labeled call's parameter).
    Returns (loss, grads)."""
    obs = np.atleast_2d(batch["obs"])
    ids = np.asarray(batch["id"], dtype=int)
    params = np.atleast_2d(batch["param"])
    if len(obs) == 0:
        raise EmptyBatch("bc_loss needs a non-empty batch")
    n = len(obs)
    out, cache = policy._net_out(obs)
    logits = out[:, :N_PRIMITIVES]
    pred = (param_anchors(obs, ids) + policy.par_mu
            + policy.par_sd * out[:, N_PRIMITIVES:])
    probs = softmax(logits)
    ce = -np.mean(np.log(probs[np.arange(n), ids] + 1e-300))
    resid = pred - params  # real units
    mse = np.mean(np.sum(resid * resid, axis=1))
    loss = ce + lambda_param * mse

    dout = np.empty_like(out)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(n), ids] = 1.0
    dout[:, :N_PRIMITIVES] = (probs - one_hot) / n
    dout[:, N_PRIMITIVES:] = lambda_param * 2.0 * resid * policy.par_sd / n
    grads, _ = policy.net.backward(cache, dout)
    return float(loss), grads


def bc_loss(policy: HighLevelPolicy, batch: dict,
            lambda_param: float = LAMBDA_PARAM) -> float:
    return bc_loss_and_grads(policy, batch, lambda_param)[0]


def _augment(obs: np.ndarray, g, sigma: float = AUG_SIGMA,
             drop_p: float = HIST_DROP_P) -> np.ndarray:
    """Gaussian noise on the translation entries of every real (non-padded)
    history frame; padding stays exactly zero. Additionally truncates the
    history of a random subset of samples (zeroing the oldest frames, the
    same padding a short real history produces) so the learned rule depends
    on the current frame rather than on memorized history patterns -- grasp
    slips at evaluation time produce failure histories the demonstrations
    never contain."""
    noisy = obs.copy()
    noise = g.normal(0.0, sigma, size=(len(obs), len(POSE_T_IDX)))
    frames = obs.reshape(len(obs), H_WINDOW, FRAME_DIM)
    real = (np.abs(frames) > 0).any(axis=2)  # (B, H)
    mask = np.repeat(real, len(_FRAME_POSE_T_IDX), axis=1)
    noisy[:, POSE_T_IDX] += noise * mask
    drop = g.random(len(obs)) < drop_p
    keep = g.integers(1, H_WINDOW + 1, size=len(obs))  # frames kept, newest first
    cut = np.where(drop, H_WINDOW - keep, 0)  # oldest frames zeroed
    frame_idx = np.broadcast_to(np.arange(H_WINDOW), (len(obs), H_WINDOW))
    zero_mask = frame_idx < cut[:, None]  # (B, H)
    noisy = noisy.reshape(len(obs), H_WINDOW, FRAME_DIM)
    noisy[zero_mask] = 0.0
    return noisy.reshape(len(obs), OBS_DIM)


def train_bc(dataset, epochs: int = 3000, lr: float = 3e-3, seed: int = 0,
             batch_size: int | None = None, lambda_param: float = LAMBDA_PARAM,
             hidden=(256, 256), verbose: bool = False) -> HighLevelPolicy:
    """Behavior cloning with per-epoch re-augmentation and a 90/10
    train/validation split by trial; returns the best-validation checkpoint.
    Deterministic per seed. ``batch_size=None`` trains full-batch (demo sets
    are small); the learning rate halves five times over the run."""
    demos = list(dataset)
    if not demos:
        raise EmptyDataset("train_bc needs at least one demonstration")
    obs, ids, params, trials = _flatten(demos)
    rng = RngStream(seed)

    trial_ids = np.array(sorted({d.trial for d in demos}))
    if len(trial_ids) >= 2:
        perm = rng.draw("split").permutation(len(trial_ids))
        n_val = max(1, len(trial_ids) // 10)
        val_trials = set(trial_ids[perm[:n_val]].tolist())
    else:
        val_trials = set()
    val_mask = np.isin(trials, list(val_trials))
    tr_idx = np.flatnonzero(~val_mask)
    va_idx = np.flatnonzero(val_mask)
    if len(tr_idx) == 0:
        tr_idx = va_idx

    policy = HighLevelPolicy(seed=seed, hidden=hidden)
    policy.obs_mu = obs[tr_idx].mean(axis=0)
    policy.obs_sd = np.maximum(obs[tr_idx].std(axis=0), 1e-3)
    resid = params[tr_idx] - param_anchors(obs[tr_idx], ids[tr_idx])
    policy.par_mu = resid.mean(axis=0)
    policy.par_sd = np.maximum(resid.std(axis=0), 1e-3)
    opt = Adam(policy.net.get_flat().size, lr=lr)
    best = (np.inf, policy.net.get_flat().copy())
    g_aug = rng.draw("augment")
    g_shuf = rng.draw("shuffle")

    bsz = batch_size or len(tr_idx)
    for epoch in range(epochs):
        opt.lr = lr * 0.5 ** (epoch // max(1, epochs // 5))
        noisy = _augment(obs[tr_idx], g_aug)
        order = g_shuf.permutation(len(tr_idx))
        for lo in range(0, len(order), bsz):
            sel = order[lo:lo + bsz]
            batch = {"obs": noisy[sel], "id": ids[tr_idx][sel],
                     "param": params[tr_idx][sel]}
            _, grads = bc_loss_and_grads(policy, batch, lambda_param)
            flat = policy.net.get_flat()
            policy.net.set_flat(opt.step(flat, flatten_grads(grads)))
        val_idx = va_idx if len(va_idx) else tr_idx
        val = bc_loss(policy, {"obs": obs[val_idx], "id": ids[val_idx],
                               "param": params[val_idx]}, lambda_param)
        if val < best[0]:
            best = (val, policy.net.get_flat().copy())
        if verbose and (epoch + 1) % 10 == 0:
            print(f"epoch {epoch + 1:4d} val {val:.4f} best {best[0]:.4f}")
    policy.net.set_flat(best[1])
    return policy


def selection_accuracy(policy: HighLevelPolicy, demos) -> float:
    """Fraction of demo steps whose greedy choice matches the expert."""
    obs, ids, _, _ = _flatten(demos)
    logits, _ = policy.forward(obs)
    return float(np.mean(np.argmax(logits, axis=1) == ids))


# ---------------------------------------------------------------------------
# rollout


def pose_param(env: Workcell, obs: Observation, pid: PrimitiveId) -> np.ndarray:
    """Pass-through parameters computed from pose estimates (the paper's
    'continuous input parameter comes from pose estimation' reading)."""
    target = env.target
    spec = env.spec.object(target)
    est = obs.object_estimates[target]
    hole_q = obs.hole_q[f"hole_{target}"]
    if pid == PrimitiveId.GRASP:
        return np.array([est[0], est[1], est[2] + spec.height + PRE_GRASP_HEIGHT,
                         est[3]])
    if pid == PrimitiveId.PLACE:
        fx = obs.fixture_q
        return np.array([fx[0], fx[1],
                         fx[2] + spec.height + PRE_GRASP_HEIGHT + APPROACH_HOVER,
                         fx[3]])
    if pid == PrimitiveId.MOVE:
        # center the attached object over the hole, compensating the grasp
        # offset estimated from observation; target the canonical hole yaw
        # (insertion is invariant under the object's symmetry group, and the
        # canonical yaw is a continuous, learnable function of the spawn)
        if obs.attached is not None:
            rel = est - obs.ee
        else:
            rel = np.zeros(4)
        branch = hole_q[3] if spec.symmetry > 0 else est[3]
        return np.array([hole_q[0] - rel[0], hole_q[1] - rel[1],
                         env.geom.board_top + APPROACH_HOVER + spec.height,
                         branch - rel[3]])
    return np.array([hole_q[0], hole_q[1], hole_q[2], hole_q[3]])


def rollout_high(env: Workcell, policy: HighLevelPolicy, insert_policy,
                 max_primitives: int = MAX_PRIMITIVES, mode: str = "greedy",
                 param_source: str = "policy", rng=None,
                 ctx: ExecContext | None = None) -> dict:
    """Observe -> select -> dispatch loop until insertion, the consecutive
    failure ceiling, or the primitive budget. Returns the trial outcome."""
    if param_source not in ("policy", "pose"):
        raise ValueError(f"unknown param_source {param_source!r}")
    ctx = ctx or ExecContext(insert_policy=insert_policy)
    ctx.insert_policy = insert_policy
    bounds = (env.spec.bounds_lo, env.spec.bounds_hi)
    history = HistoryWindow()
    prev_id: int | None = None
    prev_success = False
    outcomes: list[dict] = []
    steps: list[DemoStep] = []
    grasped = False
    success = False
    consecutive_failures = 0

    for _ in range(max_primitives):
        obs = env.observe()
        history.push(featurize_frame(obs, env.target, env.geom.board_xy,
                                     prev_id, prev_success))
        vec = history.vector()
        call = select_action(policy, vec, mode=mode, rng=rng, bounds=bounds)
        if param_source == "pose":
            call = PrimitiveCall(call.id, pose_param(env, obs, call.id))
        res = dispatch(env, call, ctx)
        steps.append(DemoStep(vec, call, res.status))
        outcomes.append({"id": int(call.id), "status": res.status,
                         "reason": res.failure_reason,
                         "steps_used": res.steps_used})
        if call.id == PrimitiveId.GRASP and res.success:
            grasped = True
        prev_id, prev_success = int(call.id), res.success
        if res.success:
            consecutive_failures = 0
        else:
            consecutive_failures += 1
            if consecutive_failures >= FAILURE_CEILING:
                break
        if env.check_inserted():
            success = True
            break

    return {
        "object": env.target,
        "success": success,
        "l": len(outcomes),
        "outcomes": outcomes,
        "grasped": grasped,
        "inserted": success or env.check_inserted(),
        "steps": steps,
    }
