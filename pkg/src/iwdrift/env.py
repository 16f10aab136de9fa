"""Vectorized drifting environment with domain randomization.

One :class:`DriftEnv` holds ``n_envs`` independent cars. Actions are
``(N, 5)`` arrays of ``[delta, v_fl, v_fr, v_rl, v_rr]`` where the wheel
commands are linear rim speeds in m/s; they are clamped, never rejected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .frames import PathBank, TrackingErrors, vehicle_curvature
from .params import TireParams, VehicleParams
from .paths import RandomPathConfig, gen_circle, gen_eight, gen_random_path, gen_variable_curvature


class Status(enum.IntEnum):
    RUNNING = 0
    OFF_TRACK = 1
    DIVERGED = 2
    MAX_STEPS = 3
    COMPLETED = 4


@dataclass(frozen=True)
class RewardWeights:
    pos: float = 2.4
    dir: float = 0.5
    curv: float = 0.15
    drift: float = 1.6
    smooth: float = 0.015
    slip: float = 0.005
    speed: float = 0.1
    prog: float = 0.2

    def __post_init__(self):
        if min(vars(self).values()) < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass(frozen=True)
class RandomizationConfig:
    sigma_pos: float = 0.1
    sigma_heading: float = 0.1
    r_init: tuple = (1.0, 3.0)
    beta_init: tuple = (-1.0, 1.0)
    v_init: tuple = (0.0, 3.0)
    B: tuple = (0.8, 1.0)
    C: tuple = (2.0, 2.5)
    D: tuple = (0.3, 0.4)
    ar_coef: float = 0.95
    ar_scale: float = 0.1
    disturbance_clip: float = 0.5
    tire: bool = True
    init_state: bool = True
    disturbance: bool = True
    trajectory: bool = True

    def __post_init__(self):
        for name in ("r_init", "beta_init", "v_init", "B", "C", "D"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"range {name} is not ordered")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not 0.0 <= self.ar_coef < 1.0:
            raise ValueError("ar_coef must lie in [0, 1)")

    def tire_midpoint(self) -> TireParams:
        return TireParams(*(0.5 * (lo + hi) for lo, hi in (self.B, self.C, self.D)))


@dataclass(frozen=True)
class EnvConfig:
    dt: float = dynamics.DEFAULT_DT
    max_steps: int = 1500
    off_track: float = 1.0
    n_preview: int = 10
    preview_spacing: float = 0.1
    prog_cap: float = 0.03
    omega_smooth_scale: float = 1e-4
    v_min: float = 1.0
    v_max: float = 7.0
    speed_floor: float = 0.5
    diverge_speed: float = 50.0
    # closed paths end as COMPLETED after this many laps of progress; 0 disables
    laps: float = 0.0
    task: str = "random"
    n_random_paths: int = 64
    weights: RewardWeights = field(default_factory=RewardWeights)
    rand: RandomizationConfig = field(default_factory=RandomizationConfig)
    path_cfg: RandomPathConfig = field(default_factory=RandomPathConfig)

    @property
    def obs_dim(self) -> int:
        return 4 * self.n_preview + 4 + 3 + 4 + 5


def action_bounds(params: VehicleParams, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    low = np.array([-params.delta_max] + [cfg.v_min] * 4)
    high = np.array([params.delta_max] + [cfg.v_max] * 4)
    return low, high


def task_paths(cfg: EnvConfig, rng: np.random.Generator):
    """Path pool for training.

    ``random`` draws a pool of curvature-profile paths when trajectory
    randomization is on and falls back to circles of both directions when it
    is off.
    """
    task = cfg.task
    if task == "circle":
        return [gen_circle(1.0, 1)]
    if task == "circles":
        return [gen_circle(1.0, 1), gen_circle(1.0, -1)]
    if task == "eight":
        return [gen_eight(1.0)]
    if task == "variable":
        return [gen_variable_curvature()]
    if task == "random":
        if not cfg.rand.trajectory:
            return [gen_circle(1.0, 1), gen_circle(1.0, -1)]
        return [gen_random_path(rng, cfg.path_cfg) for _ in range(cfg.n_random_paths)]
    raise ValueError(f"unknown task {task!r}")


# --- randomness ----------------------------------------------------------------

class RngPool:
    """Either one generator shared by the batch or one generator per instance.

    Per-instance generators make an instance's random stream independent of
    batch composition (used by evaluation); a shared generator is cheaper.
    """

    def __init__(self, rngs):
        if isinstance(rngs, np.random.Generator):
            self.shared, self.each = rngs, None
        else:
            self.shared, self.each = None, list(rngs)

    def normal(self, idx, size=()):
        if self.shared is not None:
            return self.shared.normal(size=(len(idx),) + tuple(size))
        return np.array([self.each[i].normal(size=size) for i in idx]).reshape((len(idx),) + tuple(size))

    def uniform(self, idx, lo, hi, size=()):
        if self.shared is not None:
            return self.shared.uniform(lo, hi, size=(len(idx),) + tuple(size))
        return np.array([self.each[i].uniform(lo, hi, size=size) for i in idx]).reshape((len(idx),) + tuple(size))

    def integers(self, idx, hi):
        if self.shared is not None:
            return self.shared.integers(0, hi, size=len(idx))
        return np.array([self.each[i].integers(0, hi) for i in idx], dtype=np.int64)


def disturbance_step(d, rng, a: float = 0.95, w: float = 0.1, clip: float = 0.5):
    """AR(1) update ``d <- a*d + w*eps`` with standard normal ``eps``, then clipped."""
    d = np.asarray(d, dtype=np.float64)
    if isinstance(rng, RngPool):
        eps = rng.normal(np.arange(d.shape[0]), d.shape[1:])
    else:
        eps = rng.normal(size=d.shape)
    return np.clip(a * d + w * eps, -clip, clip)


# --- reward and observation -----------------------------------------------------

REWARD_TERMS = ("pos", "dir", "curv", "drift", "smooth", "slip", "speed", "prog")


def reward(errors: TrackingErrors, V, delta, delta_prev, omega, omega_prev, front_vx, wheel_radius,
           progress, weights: RewardWeights = RewardWeights(), prog_cap: float = 0.03,
           omega_scale: float = 1e-4, speed_floor: float = 0.5):
    """Weighted reward and its unweighted per-term breakdown.

    ``omega`` and ``omega_prev`` are ``(N, 4)`` wheel angular speeds in rad/s,
    ``front_vx`` the ``(N, 2)`` longitudinal contact velocities of the front
    wheels.
    """
    terms = {
        "pos": -errors.e_pos ** 2,
        "dir": -errors.e_dir ** 2,
        "curv": -errors.e_kappa ** 2,
        "drift": -errors.e_beta ** 2,
        "smooth": -(delta - delta_prev) ** 2 - omega_scale * np.sum((omega - omega_prev) ** 2, axis=-1),
        "slip": -np.sum((front_vx - omega[..., 0:2] * wheel_radius) ** 2, axis=-1),
        "speed": np.minimum(0.0, V - speed_floor),
        "prog": np.clip(progress, 0.0, prog_cap) / prog_cap,
    }
    total = sum(getattr(weights, k) * terms[k] for k in REWARD_TERMS)
    return total, terms


def build_observation(preview, errors: TrackingErrors, r, beta, V, wheel_vx, prev_action):
    n = preview.shape[0]
    return np.concatenate([
        preview.reshape(n, -1),
        np.column_stack([errors.e_pos, errors.e_dir, errors.e_kappa, errors.e_beta]),
        np.column_stack([r, beta, V]),
        wheel_vx,
        prev_action,
    ], axis=1)


@dataclass
class EpisodeSummary:
    instance: int
    path: str
    reason: str
    steps: int
    episode_return: float
    mean_abs_beta: float
    rmse: float
    progress: float

    def as_dict(self):
        return dict(vars(self))


class DriftEnv:
    def __init__(self, paths, n_envs: int, cfg: EnvConfig = EnvConfig(),
                 params: VehicleParams = VehicleParams(), rng=None, record: bool = False,
                 auto_reset: bool = True, stepper=None):
        """``stepper`` replaces :func:`dynamics.step_batch` (same signature);
        with ``auto_reset`` off, finished instances keep their final state."""
        self.cfg = cfg
        self.auto_reset = auto_reset
        self.stepper = dynamics.step_batch if stepper is None else stepper
        self.params = params
        self.n = int(n_envs)
        self.bank = paths if isinstance(paths, PathBank) else PathBank(paths)
        if rng is None:
            rng = np.random.default_rng(0)
        self.rng = rng if isinstance(rng, RngPool) else RngPool(rng)
        self.low, self.high = action_bounds(params, cfg)
        self.obs_dim = cfg.obs_dim
        self.record = record
        self.finished: list[EpisodeSummary] = []

        n = self.n
        self.state = np.zeros((n, 6))
        self.tires = np.tile(cfg.rand.tire_midpoint().as_array(), (n, 1))
        self.dist = np.zeros((n, 8))
        self.prev_action = np.zeros((n, 5))
        self.prev_omega = np.zeros((n, 4))
        self.path_id = np.zeros(n, dtype=np.int64)
        self.hint = np.zeros(n, dtype=np.int64)
        self.prev_beta = np.zeros(n)
        self.s_proj = np.zeros(n)
        self.steps = np.zeros(n, dtype=np.int64)
        self.ep_return = np.zeros(n)
        self.ep_abs_beta = np.zeros(n)
        self.ep_sq_err = np.zeros(n)
        self.ep_progress = np.zeros(n)
        self.target = np.full(n, np.inf)
        self.obs = np.zeros((n, self.obs_dim))
        self.last_errors: TrackingErrors | None = None
        self.last_terms: dict | None = None
        self.final_obs = self.obs

    # -- lifecycle ---------------------------------------------------------------

    def reset(self, idx=None) -> np.ndarray:
        idx = np.arange(self.n) if idx is None else np.asarray(idx, dtype=np.int64)
        if len(idx):
            self._reset_instances(idx)
            self.obs[idx] = self._observe(idx)
        return self.obs.copy()

    def _reset_instances(self, idx):
        cfg, rc, bank = self.cfg, self.cfg.rand, self.bank
        k = len(idx)
        if len(bank) > 1:
            pid = self.rng.integers(idx, len(bank))
        else:
            pid = np.zeros(k, dtype=np.int64)
        closed = bank.closed[pid]
        if rc.init_state:
            # open paths keep at least half their length ahead of the start
            span = np.where(closed, bank.lengths[pid], 0.5 * bank.last_s[pid])
            s0 = self.rng.uniform(idx, 0.0, 1.0) * span
        else:
            s0 = np.zeros(k)
        wp = bank.local_index(pid, s0)
        g = bank.offsets[pid] + wp
        x = bank.x[g].copy()
        y = bank.y[g].copy()
        psi = bank.theta[g].copy()
        kap = bank.kappa[g]
        bref = bank.beta_ref[g]
        if rc.init_state:
            off = self.rng.normal(idx, (3,))
            x += rc.sigma_pos * off[:, 0]
            y += rc.sigma_pos * off[:, 1]
            psi += rc.sigma_heading * off[:, 2]
            mags = self.rng.uniform(idx, 0.0, 1.0, (4,))
            V = rc.v_init[0] + (rc.v_init[1] - rc.v_init[0]) * mags[:, 0]
            beta_hi = max(abs(rc.beta_init[0]), abs(rc.beta_init[1]))
            beta_mag = beta_hi * mags[:, 1]
            r_mag = rc.r_init[0] + (rc.r_init[1] - rc.r_init[0]) * mags[:, 2]
            coin = np.where(mags[:, 3] < 0.5, -1.0, 1.0)
            beta_sign = np.where(bref != 0, np.sign(bref), coin)
            r_sign = np.where(kap != 0, np.sign(kap), -beta_sign)
            beta = beta_sign * beta_mag
            r = r_sign * r_mag
        else:
            V = np.zeros(k)
            beta = np.zeros(k)
            r = np.zeros(k)
        st = np.column_stack([x, y, psi, V * np.cos(psi + beta), V * np.sin(psi + beta), r])
        self.state[idx] = st

        if rc.tire:
            u = self.rng.uniform(idx, 0.0, 1.0, (3,))
            lo = np.array([rc.B[0], rc.C[0], rc.D[0]])
            hi = np.array([rc.B[1], rc.C[1], rc.D[1]])
            self.tires[idx] = lo + (hi - lo) * u
        else:
            self.tires[idx] = rc.tire_midpoint().as_array()
        self.dist[idx] = 0.0
        self.prev_action[idx] = 0.0
        self.prev_omega[idx] = 0.0
        self.path_id[idx] = pid
        self.hint[idx] = wp
        self.prev_beta[idx] = dynamics.sideslip(st)
        self.steps[idx] = 0
        self.ep_return[idx] = 0.0
        self.ep_abs_beta[idx] = 0.0
        self.ep_sq_err[idx] = 0.0
        self.ep_progress[idx] = 0.0
        # projection sets s_proj and the hint; the errors themselves are recomputed in _observe
        err = self._project(idx, self.state[idx], None)
        self.s_proj[idx] = err.s_proj
        self.hint[idx] = err.index
        remaining = np.where(closed, cfg.laps * bank.lengths[pid], bank.last_s[pid] - err.s_proj - 0.05)
        self.target[idx] = np.where(closed & (cfg.laps <= 0), np.inf, remaining)

    def _project(self, idx, st, prev_beta):
        beta = dynamics.sideslip(st)
        kap = vehicle_curvature(st, prev_beta, self.cfg.dt)
        return self.bank.project(self.path_id[idx], st[:, 0], st[:, 1], st[:, 2], beta, kap, self.hint[idx])

    def _observe(self, idx, err: TrackingErrors | None = None):
        st = self.state[idx]
        if err is None:
            err = self._project(idx, st, None)
        prev = self.prev_action[idx]
        control = np.column_stack([prev[:, 0], prev[:, 1:] / self.params.R])
        kin = dynamics.wheel_kinematics(st, control, self.params)
        pv = self.bank.preview(self.path_id[idx], err.s_proj, st[:, 0], st[:, 1], st[:, 2],
                               self.cfg.n_preview, self.cfg.preview_spacing)
        return build_observation(pv, err, st[:, dynamics.PSIDOT], dynamics.sideslip(st),
                                 dynamics.speed(st), kin.vx, prev)

    def clamp(self, actions) -> np.ndarray:
        return np.clip(np.asarray(actions, dtype=np.float64), self.low, self.high)

    def step(self, actions):
        """Advance every instance; terminated instances are reset in place.

        Returns ``(obs, reward, done, status)``. ``status`` carries the
        termination reason of this step (RUNNING for live instances).
        """
        cfg, p = self.cfg, self.params
        act = self.clamp(actions)
        omega = act[:, 1:] / p.R
        control = np.column_stack([act[:, 0], omega])
        if cfg.rand.disturbance:
            self.dist = disturbance_step(self.dist, self.rng, cfg.rand.ar_coef, cfg.rand.ar_scale,
                                         cfg.rand.disturbance_clip)
        new_state, diverged = self.stepper(self.state, control, p, self.tires, self.dist, cfg.dt)
        with np.errstate(invalid="ignore"):
            diverged |= dynamics.speed(new_state) > cfg.diverge_speed
        # diverged instances are projected from their last good state and reset below
        new_state[diverged] = self.state[diverged]
        self.state = new_state

        idx = np.arange(self.n)
        err = self._project(idx, new_state, self.prev_beta)
        ds = self.bank.progress(self.path_id, self.s_proj, err.s_proj)
        kin = dynamics.wheel_kinematics(new_state, control, p)
        V = dynamics.speed(new_state)
        beta = dynamics.sideslip(new_state)
        rew, terms = reward(err, V, act[:, 0], self.prev_action[:, 0], omega, self.prev_omega,
                            kin.vx[:, 0:2], p.R, ds, cfg.weights, cfg.prog_cap,
                            cfg.omega_smooth_scale, cfg.speed_floor)
        rew = np.where(diverged, 0.0, rew)

        self.hint = err.index
        self.s_proj = err.s_proj
        self.prev_beta = beta
        self.prev_action = act
        self.prev_omega = omega
        self.steps += 1
        self.ep_return += rew
        self.ep_abs_beta += np.abs(beta)
        self.ep_sq_err += err.e_pos ** 2
        self.ep_progress += ds
        self.last_errors = err
        self.last_terms = terms

        status = np.full(self.n, Status.RUNNING, dtype=np.int64)
        status[self.steps >= cfg.max_steps] = Status.MAX_STEPS
        status[self.ep_progress >= self.target] = Status.COMPLETED
        status[np.abs(err.e_pos) > cfg.off_track] = Status.OFF_TRACK
        status[diverged] = Status.DIVERGED
        done = status != Status.RUNNING

        self.obs = self._observe(idx, err)
        # observation at termination, before any reset (for value bootstrapping)
        self.final_obs = self.obs.copy()
        ended = np.flatnonzero(done)
        if len(ended):
            if self.record:
                self._record(ended, status)
            if not self.auto_reset:
                return self.obs.copy(), rew, done, status
            self._reset_instances(ended)
            self.obs[ended] = self._observe(ended)
        return self.obs.copy(), rew, done, status

    def _record(self, ended, status):
        for i in ended:
            steps = max(int(self.steps[i]), 1)
            self.finished.append(EpisodeSummary(
                instance=int(i),
                path=self.bank.paths[self.path_id[i]].name,
                reason=Status(int(status[i])).name.lower(),
                steps=int(self.steps[i]),
                episode_return=float(self.ep_return[i]),
                mean_abs_beta=float(self.ep_abs_beta[i] / steps),
                rmse=float(np.sqrt(self.ep_sq_err[i] / steps)),
                progress=float(self.ep_progress[i]),
            ))

    def drain(self) -> list[EpisodeSummary]:
        out, self.finished = self.finished, []
        return out
