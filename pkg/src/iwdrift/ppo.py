"""PPO with GAE over the batched drifting environment."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .env import Status
from .policy import Adam, PolicyNet, ppo_objective
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    # sized for many small updates on a desk machine: 512 x 64 gives 160 updates per 5M steps
    n_envs: int = 512
    rollout_length: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    lr_decay: bool = True
    epochs_per_update: int = 4
    minibatch_size: int = 4096
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    init_log_std: float = -1.0
    reward_scaling: bool = True
    # value of a failed episode's tail: 0 ("zero") or its last reward repeated forever ("repeat")
    failure_value: str = "repeat"
    total_env_steps: int = 5_000_000
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0 and 0.0 <= self.gae_lambda < 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1)")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")
        if self.failure_value not in ("zero", "repeat"):
            raise ValueError("failure_value must be 'zero' or 'repeat'")
        if self.n_envs < 1 or self.rollout_length < 1 or self.minibatch_size < 1:
            raise ValueError("sizes must be positive")

    @property
    def steps_per_update(self) -> int:
        return self.n_envs * self.rollout_length


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimates.

    ``rewards`` and ``dones`` are ``(T, N)``; ``values`` is ``(T + 1, N)``
    with the bootstrap value of the final observation in the last row.
    ``dones[t]`` marks that the episode ended after step ``t``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
    return adv, adv + values[:-1]


@dataclass
class RolloutBuffer:
    T: int
    N: int
    obs_dim: int
    act_dim: int
    obs: np.ndarray = field(init=False)
    actions: np.ndarray = field(init=False)
    log_probs: np.ndarray = field(init=False)
    rewards: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    dones: np.ndarray = field(init=False)
    advantages: np.ndarray = field(init=False)
    returns: np.ndarray = field(init=False)

    def __post_init__(self):
        T, N = self.T, self.N
        self.obs = np.zeros((T, N, self.obs_dim))
        self.actions = np.zeros((T, N, self.act_dim))  # pre-squash samples
        self.log_probs = np.zeros((T, N))
        self.rewards = np.zeros((T, N))
        self.values = np.zeros((T + 1, N))
        self.dones = np.zeros((T, N))
        self.advantages = np.zeros((T, N))
        self.returns = np.zeros((T, N))

    def finish(self, gamma: float, lam: float):
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, gamma, lam)

    def flat(self):
        n = self.T * self.N
        adv = self.advantages.reshape(n)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return (self.obs.reshape(n, -1), self.actions.reshape(n, -1), self.log_probs.reshape(n),
                adv, self.returns.reshape(n))


class ReturnScaler:
    """Divides rewards by the running std of the discounted return.

    Keeps value targets near unit scale so the critic gradient does not
    swamp the actor gradient under global norm clipping.
    """

    def __init__(self, n: int, gamma: float):
        self.gamma = gamma
        self.ret = np.zeros(n)
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return max(float(np.sqrt(self.m2 / self.count)), 1e-4)

    def update(self, rewards, dones):
        self.ret = self.ret * self.gamma + rewards
        # Chan et al. parallel variance update over the batch
        n_b = rewards.size
        mean_b = float(self.ret.mean())
        m2_b = float(((self.ret - mean_b) ** 2).sum())
        total = self.count + n_b
        d = mean_b - self.mean
        self.mean += d * n_b / total
        self.m2 += m2_b + d * d * self.count * n_b / total
        self.count = total
        self.ret[np.asarray(dones, dtype=bool)] = 0.0

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean, "m2": self.m2}


def clip_grad(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.dot(grad, grad)))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def ppo_update(net: PolicyNet, opt: Adam, buffer: RolloutBuffer, cfg: TrainerConfig,
               rng: np.random.Generator, lr: float) -> dict:
    """Run the clipped-surrogate epochs in place on ``net``.

    A non-finite loss or gradient aborts the update and restores the
    parameters (and optimizer moments) held before it started.
    """
    obs, u, old_logp, adv, ret = buffer.flat()
    n = obs.shape[0]
    mb = min(cfg.minibatch_size, n)
    saved = (net.params.copy(), opt.m.copy(), opt.v.copy(), opt.t)
    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_frac": 0.0}
    count = 0
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            sel = order[start:start + mb]
            loss, grad, st = ppo_objective(net, obs[sel], u[sel], old_logp[sel], adv[sel], ret[sel],
                                           cfg.clip_eps, cfg.value_coef, cfg.entropy_coef)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                net.params[:], opt.m, opt.v, opt.t = saved
                log.warning("non-finite PPO loss; update skipped")
                return dict(agg, aborted=True)
            grad = clip_grad(grad, cfg.max_grad_norm)
            net.params[:] = opt.step(net.params, grad, lr)
            for k in agg:
                agg[k] += st[k]
            count += 1
    return {k: v / max(count, 1) for k, v in agg.items()} | {"aborted": False}


CURVE_COLUMNS = ("update", "env_steps", "mean_return", "mean_abs_beta", "rmse_proxy")


def _bootstrap_terminals(net, env, cfg: TrainerConfig, rew, status, last_rew):
    """Fold the value of an episode's cut-off tail into its final reward.

    Time-limit truncation bootstraps from the critic at the final
    observation. Failures (off-track, divergence) are charged the failing
    step's reward, or the previous one when the step itself was voided,
    repeated forever, so that with mostly negative rewards ending an
    episode early is never cheaper than carrying on.
    """
    rew = np.array(rew, dtype=np.float64)
    trunc = status == Status.MAX_STEPS
    if trunc.any():
        rew[trunc] += cfg.gamma * net.value(env.final_obs[trunc])
    if cfg.failure_value == "repeat":
        fail = (status == Status.OFF_TRACK) | (status == Status.DIVERGED)
        if fail.any():
            base = np.where(status == Status.DIVERGED, last_rew, rew)[fail]
            rew[fail] += cfg.gamma / (1.0 - cfg.gamma) * np.minimum(base, 0.0)
    return rew


def train(env, cfg: TrainerConfig, net: PolicyNet | None = None, on_update=None):
    """Alternate rollouts and PPO updates until ``total_env_steps``.

    ``env`` must expose ``n``, ``obs_dim``, ``low``, ``high``, ``reset()``,
    ``step(actions)`` and ``drain()``. ``on_update(update, net, row)`` is
    called after each update (used for checkpointing). Returns the trained
    net, the learning curve rows (deterministic) and throughput samples
    (wall-clock; kept apart so the curve is reproducible).
    """
    if env.n != cfg.n_envs:
        raise ValueError("environment batch size does not match n_envs")
    act_dim = len(env.low)
    if net is None:
        net = PolicyNet.initialize(env.obs_dim, act_dim, env.low, env.high,
                                   stream(cfg.seed, "policy-init"), cfg.init_log_std)
    curve, throughput = [], []
    n_updates = cfg.total_env_steps // cfg.steps_per_update
    if n_updates == 0:
        return net, curve, throughput

    sample_rng = stream(cfg.seed, "action-sampling")
    shuffle_rng = stream(cfg.seed, "minibatch-shuffle")
    opt = Adam(net.params.size)
    buf = RolloutBuffer(cfg.rollout_length, cfg.n_envs, env.obs_dim, act_dim)
    scaler = ReturnScaler(cfg.n_envs, cfg.gamma) if cfg.reward_scaling else None
    obs = env.reset()
    env.drain()
    last_rew = np.zeros(cfg.n_envs)
    env_steps = 0
    for update in range(1, n_updates + 1):
        t0 = time.perf_counter()
        abs_beta = 0.0
        sq_err = 0.0
        for t in range(cfg.rollout_length):
            action, u, logp, value = net.sample(obs, sample_rng)
            buf.obs[t] = obs
            buf.actions[t] = u
            buf.log_probs[t] = logp
            buf.values[t] = value
            obs, rew, done, status = env.step(action)
            if scaler is not None:
                scaler.update(rew, done)
                rew = rew / scaler.std
            rew = _bootstrap_terminals(net, env, cfg, rew, status, last_rew)
            last_rew = np.where(done, 0.0, rew)
            buf.rewards[t] = rew
            buf.dones[t] = done
            abs_beta += float(np.mean(np.abs(env.prev_beta)))
            sq_err += float(np.mean(env.last_errors.e_pos ** 2))
        buf.values[-1] = net.value(obs)
        buf.finish(cfg.gamma, cfg.gae_lambda)
        env_steps += cfg.steps_per_update
        t_roll = time.perf_counter() - t0

        frac = 1.0 - (update - 1) / n_updates if cfg.lr_decay else 1.0
        stats = ppo_update(net, opt, buf, cfg, shuffle_rng, cfg.lr * frac)
        episodes = env.drain()
        mean_ret = float(np.mean([e.episode_return for e in episodes])) if episodes else float("nan")
        row = {
            "update": update,
            "env_steps": env_steps,
            "mean_return": mean_ret,
            "mean_abs_beta": abs_beta / cfg.rollout_length,
            "rmse_proxy": float(np.sqrt(sq_err / cfg.rollout_length)),
        }
        curve.append(row)
        elapsed = time.perf_counter() - t0
        throughput.append({"update": update, "steps_per_sec": cfg.steps_per_update / max(t_roll, 1e-12),
                           "update_seconds": elapsed})
        mean_len = float(np.mean([e.steps for e in episodes])) if episodes else float("nan")
        log.info("update %d/%d steps=%d return=%.3f len=%.1f |beta|=%.3f rmse=%.3f kl=%.4f clip=%.3f "
                 "ent=%.3f vloss=%.3f %.0f steps/s", update, n_updates, env_steps, mean_ret, mean_len,
                 row["mean_abs_beta"], row["rmse_proxy"], stats["approx_kl"], stats["clip_frac"],
                 stats["entropy"], stats["value_loss"], throughput[-1]["steps_per_sec"])
        if on_update is not None:
            on_update(update, net, row)
    return net, curve, throughput

