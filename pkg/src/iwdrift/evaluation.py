"""Policy evaluation, equilibrium detection and the randomization ablation.

Trials run as one batch of environment instances. Trial ``i`` owns the
generator ``stream(seed, "eval", i)`` for everything random in its episode
(start pose, tires, disturbance), so a trial's result does not depend on how
many other trials share the batch.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dynamics
from .env import REWARD_TERMS, DriftEnv, EnvConfig, RandomizationConfig, RngPool, Status
from .params import VehicleParams
from .paths import ReferencePath
from .rng import stream

log = logging.getLogger(__name__)

TRACE_COLUMNS = (("t",) + dynamics.STATE_FIELDS + ("delta", "omega_fl", "omega_fr", "omega_rl", "omega_rr",
                                                   "beta", "V", "r", "e_pos", "kappa_ref")
                 + tuple(f"r_{k}" for k in REWARD_TERMS) + ("reward",))
PHASE_COLUMNS = ("t", "r", "beta")
ABLATION_COLUMNS = ("method", "success", "rmse_mean", "rmse_std", "beta_mean", "beta_std")

EQ_WINDOW_S = 2.0
EQ_REL_STD = 0.05
# waypoints with |kappa| above this count as curved segments
CURVED_KAPPA = 0.05


@dataclass
class TrialResult:
    trial: int
    reason: str
    steps: int
    success: bool
    rmse: float
    mean_abs_beta: float
    mean_V: float
    equilibrium: tuple | None = None
    # RMSE over the final equilibrium window and mean |beta| on curved waypoints
    steady_rmse: float = math.nan
    curved_abs_beta: float = math.nan


@dataclass
class EvalReport:
    path: str
    n_trials: int
    rmse_mean: float = 0.0
    rmse_std: float = 0.0
    mean_abs_beta: float = 0.0
    mean_V: float = 0.0
    steady_rmse: float = math.nan
    curved_abs_beta: float = math.nan
    success_rate: float = 0.0
    n_success: int = 0
    equilibrium: tuple | None = None
    trials: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def deterministic_actor(net):
    """Mean-action policy of a :class:`PolicyNet`."""
    return lambda obs: net.forward(obs)[0]


def stochastic_actor(net, rngs):
    """Sampling policy with one generator per batch row."""
    def act(obs):
        mu, log_std, _, _ = net.forward_raw(obs)
        eps = np.array([g.normal(size=mu.shape[1]) for g in rngs])
        return net.squash(mu + np.exp(log_std) * eps)
    return act


def _std(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def rollout_eval(policy, path: ReferencePath, n_trials: int, seed: int, cfg: EnvConfig = EnvConfig(),
                 params: VehicleParams = VehicleParams(), laps: float = 1.0, stepper=None,
                 stochastic: bool = False, nominal: bool = False):
    """Run ``n_trials`` episodes on ``path`` and summarize them.

    ``policy`` is either a :class:`PolicyNet` or a callable mapping an
    ``(N, obs_dim)`` batch to actions. Each trial runs until its first
    termination. A trial succeeds when it covers ``laps`` laps of a closed
    path, or reaches the end of an open one, before any other termination.

    Returns ``(report, traces)`` where ``traces[i]`` is a ``(steps, len(TRACE_COLUMNS))`` array.
    """
    report = EvalReport(path=path.name, n_trials=int(n_trials))
    if n_trials <= 0:
        return report, []
    cfg = replace(cfg, laps=laps)
    if nominal:
        cfg = replace(cfg, rand=replace(cfg.rand, tire=False, init_state=False, disturbance=False))
    rngs = [stream(seed, "eval", i) for i in range(n_trials)]
    env = DriftEnv([path], n_trials, cfg, params, rng=RngPool(rngs), auto_reset=False, stepper=stepper)
    if callable(policy) and not hasattr(policy, "forward"):
        act = policy
    elif stochastic:
        act = stochastic_actor(policy, [stream(seed, "eval-actions", i) for i in range(n_trials)])
    else:
        act = deterministic_actor(policy)

    obs = env.reset()
    alive = np.ones(n_trials, dtype=bool)
    reasons = np.full(n_trials, Status.RUNNING, dtype=np.int64)
    rows: list[list[np.ndarray]] = [[] for _ in range(n_trials)]
    limit = cfg.max_steps
    for k in range(limit):
        action = env.clamp(act(obs))
        obs, rew, done, status = env.step(action)
        st = env.state
        err = env.last_errors
        beta = dynamics.sideslip(st)
        block = np.column_stack(
            [np.full(n_trials, (k + 1) * cfg.dt), st, action[:, :1], action[:, 1:] / params.R,
             beta, dynamics.speed(st), st[:, dynamics.PSIDOT], err.e_pos, path.kappa[err.index]]
            + [env.last_terms[t] for t in REWARD_TERMS] + [rew])
        for i in np.flatnonzero(alive):
            rows[i].append(block[i])
        finished = alive & done
        reasons[finished] = status[finished]
        alive &= ~done
        if not alive.any():
            break

    traces = [np.array(r) if r else np.zeros((0, len(TRACE_COLUMNS))) for r in rows]
    col = {c: j for j, c in enumerate(TRACE_COLUMNS)}
    window = int(round(EQ_WINDOW_S / cfg.dt))
    for i, tr in enumerate(traces):
        reason = Status(int(reasons[i]))
        if reason == Status.RUNNING:
            reason = Status.MAX_STEPS
        n = max(len(tr), 1)
        eq = detect_equilibrium(tr[:, col["r"]], tr[:, col["beta"]], tr[:, col["V"]], window)
        tail = tr[-window:, col["e_pos"]]
        curved = np.abs(tr[:, col["kappa_ref"]]) > CURVED_KAPPA
        report.trials.append(TrialResult(
            trial=i, reason=reason.name.lower(), steps=len(tr), success=reason == Status.COMPLETED,
            rmse=float(math.sqrt(np.sum(tr[:, col["e_pos"]] ** 2) / n)),
            mean_abs_beta=float(np.sum(np.abs(tr[:, col["beta"]])) / n),
            mean_V=float(np.sum(tr[:, col["V"]]) / n),
            equilibrium=eq,
            steady_rmse=float(math.sqrt(np.mean(tail ** 2))) if len(tail) else math.nan,
            curved_abs_beta=float(np.mean(np.abs(tr[curved, col["beta"]]))) if curved.any() else math.nan))
    rm = [t.rmse for t in report.trials]
    report.rmse_mean = float(np.mean(rm))
    report.rmse_std = _std(rm)
    report.mean_abs_beta = float(np.mean([t.mean_abs_beta for t in report.trials]))
    report.mean_V = float(np.mean([t.mean_V for t in report.trials]))
    report.steady_rmse = float(np.mean([t.steady_rmse for t in report.trials]))
    report.curved_abs_beta = float(np.mean([t.curved_abs_beta for t in report.trials]))
    report.n_success = sum(t.success for t in report.trials)
    report.success_rate = report.n_success / n_trials
    eqs = [t.equilibrium for t in report.trials if t.equilibrium is not None]
    if len(eqs) == n_trials:
        report.equilibrium = tuple(float(v) for v in np.mean(eqs, axis=0))
    return report, traces


def detect_equilibrium(r, beta, V, window: int = 200, rel_tol: float = EQ_REL_STD):
    """Mean ``(r, beta, V)`` over the final ``window`` samples if all three are steady.

    Steady means each signal's std is below ``rel_tol`` times its mean
    magnitude. Returns ``None`` for traces no longer than the window.
    """
    r, beta, V = (np.asarray(a, dtype=np.float64) for a in (r, beta, V))
    if len(r) <= window:
        return None
    out = []
    for sig in (r, beta, V):
        w = sig[-window:]
        m = float(np.mean(w))
        if not np.all(np.isfinite(w)) or float(np.std(w)) >= rel_tol * abs(m) or m == 0.0:
            return None
        out.append(m)
    return tuple(out)


# --- export -----------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, columns, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def write_trace(path, trace):
    return write_csv(path, TRACE_COLUMNS, trace)


def read_trace(path) -> np.ndarray:
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header")
        data = [[float(v) for v in row] for row in r]
    return np.array(data).reshape(-1, len(TRACE_COLUMNS))


def phase_plane_export(traces, out_dir, prefix: str = "phase"):
    """One ``(t, r, beta)`` CSV per trial; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ti, ri, bi = (TRACE_COLUMNS.index(c) for c in PHASE_COLUMNS)
    files = []
    for i, tr in enumerate(traces):
        tr = np.asarray(tr).reshape(-1, len(TRACE_COLUMNS))
        files.append(write_csv(out_dir / f"{prefix}_{i:03d}.csv", PHASE_COLUMNS, tr[:, [ti, ri, bi]]))
    return files


# --- ablation --------------------------------------------------------------------

ABLATION_METHODS = {
    "full": {},
    "no_tire": {"tire": False},
    "no_init_state": {"init_state": False},
    "no_disturbance": {"disturbance": False},
    "no_trajectory": {"trajectory": False},
}


@dataclass(frozen=True)
class AblationSpec:
    method: str
    disabled: tuple = ()
    test_B: tuple = (0.2, 3.0)
    test_C: tuple = (1.5, 3.0)
    test_D: tuple = (0.2, 0.5)
    test_ar_scale: float = 0.2
    n_trials: int = 100

    def train_rand(self, base: RandomizationConfig) -> RandomizationConfig:
        return replace(base, **{k: False for k in self.disabled})

    def test_rand(self, base: RandomizationConfig) -> RandomizationConfig:
        for name, rng in (("B", self.test_B), ("C", self.test_C), ("D", self.test_D)):
            train = getattr(base, name)
            if not (rng[0] < train[0] and train[1] < rng[1]):
                raise ValueError(f"test range for {name} must strictly contain the training range")
        return replace(base, B=self.test_B, C=self.test_C, D=self.test_D, ar_scale=self.test_ar_scale,
                       tire=True, init_state=True, disturbance=True, trajectory=True)


def default_ablation_specs(n_trials: int = 100):
    return [AblationSpec(m, tuple(flags), n_trials=n_trials) for m, flags in ABLATION_METHODS.items()]


def run_ablation(train_fn, specs, seed: int, path: ReferencePath, cfg: EnvConfig = EnvConfig(),
                 params: VehicleParams = VehicleParams()):
    """Train one policy per spec and evaluate it under the harder test conditions.

    ``train_fn(env_cfg, seed)`` returns a policy. A failing or non-finite
    training run becomes a row with success 0 and NaN statistics. Returns
    ``(rows, reports)``; rows follow :data:`ABLATION_COLUMNS`.
    """
    rows, reports = [], []
    for spec in specs:
        train_cfg = replace(cfg, rand=spec.train_rand(cfg.rand))
        test_cfg = replace(cfg, rand=spec.test_rand(cfg.rand))
        try:
            policy = train_fn(train_cfg, seed)
            if hasattr(policy, "params") and not np.all(np.isfinite(policy.params)):
                raise FloatingPointError("non-finite policy parameters")
        except Exception as exc:  # noqa: BLE001 - a failed row must not stop the table
            log.warning("ablation %s: training failed (%s)", spec.method, exc)
            rows.append((spec.method, 0.0, math.nan, math.nan, math.nan, math.nan))
            reports.append(None)
            continue
        report, _ = rollout_eval(policy, path, spec.n_trials, seed, test_cfg, params)
        betas = [t.mean_abs_beta for t in report.trials]
        rows.append((spec.method, report.success_rate, report.rmse_mean, report.rmse_std,
                     float(np.mean(betas)) if betas else math.nan, _std(betas)))
        reports.append(report)
    return rows, reports


def write_ablation_csv(path, rows):
    return write_csv(path, ABLATION_COLUMNS, rows)
