import json
import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from iwdrift import checkpoint
from iwdrift.env import Status
from iwdrift.policy import (HIDDEN, Adam, PolicyNet, gaussian_entropy, gaussian_log_prob, layout, param_count,
                            ppo_objective, sample_action, value_gradient)
from iwdrift.ppo import RolloutBuffer, TrainerConfig, compute_gae, ppo_update, train
from iwdrift.rng import stream

OBS, ACT = 6, 2
LOW, HIGH = np.array([-0.5, 1.0]), np.array([0.5, 7.0])


def _net(seed=0, log_std=-0.5):
    net = PolicyNet.initialize(OBS, ACT, LOW, HIGH, np.random.default_rng(seed), log_std)
    # larger output weights than the default init so every block carries gradient
    net.view("actor.W4")[...] = np.random.default_rng(seed + 1).normal(0, 0.5, (HIDDEN[-1], ACT))
    return net


# --- network ------------------------------------------------------------------

def test_layout_and_count():
    assert [n for n, _ in layout(56, 5)][:2] == ["actor.W1", "actor.b1"]
    h = HIDDEN
    per = 56 * h[0] + h[0] + h[0] * h[1] + h[1] + h[1] * h[2] + h[2]
    assert param_count(56, 5) == 2 * per + (16 * 5 + 5) + 5 + (16 + 1)
    assert param_count(56, 5) == 12619
    with pytest.raises(ValueError):
        PolicyNet(56, 5, LOW, HIGH, np.zeros(10))


def test_zero_params_forward():
    net = PolicyNet(56, 5, [-0.46] + [1] * 4, [0.46] + [7] * 4)
    mean, log_std, v = net.forward(np.zeros((3, 56)))
    assert np.array_equal(mean, np.tile([0.0, 4, 4, 4, 4], (3, 1)))
    assert np.all(v == 0.0)


def test_forward_is_pure():
    net = _net()
    x = np.random.default_rng(0).normal(size=(4, OBS))
    a, b = net.forward(x), net.forward(x.copy())
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_actions_inside_bounds():
    net = _net(log_std=2.0)
    act, _, _, _ = net.sample(np.random.default_rng(0).normal(size=(1000, OBS)), np.random.default_rng(1))
    assert np.all(act >= LOW) and np.all(act <= HIGH)


def _fd(f, params, idx, h=1e-5):
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = params[i]
        params[i] = old + h
        fp = f()
        params[i] = old - h
        fm = f()
        params[i] = old
        out[j] = (fp - fm) / (2 * h)
    return out


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


@pytest.mark.parametrize("coefs", [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.5, 0.01)],
                         ids=["actor", "critic", "entropy", "combined"])
def test_gradient_matches_finite_differences(coefs):
    pg, vc, ec = coefs
    worst = 0.0
    for draw in range(100):
        rng = np.random.default_rng(draw)
        net = _net(draw)
        n = 8
        obs = rng.normal(size=(n, OBS))
        mu, log_std, _, _ = net.forward_raw(obs)
        u = mu + np.exp(log_std) * rng.normal(size=mu.shape)
        # old log-probs near the current ones so some samples sit on each side of the clip
        old = gaussian_log_prob(u, mu, log_std) + rng.normal(0, 0.1, n)
        adv, ret = rng.normal(size=n), rng.normal(size=n)

        def loss():
            return ppo_objective(net, obs, u, old, adv, ret, 0.2, vc, ec, pg)[0]

        _, grad, _ = ppo_objective(net, obs, u, old, adv, ret, 0.2, vc, ec, pg)
        idx = rng.choice(net.params.size, 24, replace=False)
        idx = np.concatenate([idx, np.arange(*net._slices["log_std"][0].indices(net.params.size))])
        num = _fd(loss, net.params, idx)
        significant = np.maximum(np.abs(num), np.abs(grad[idx])) > 1e-7
        if significant.any():
            worst = max(worst, float(np.max(_rel_err(grad[idx], num)[significant])))
    assert worst <= 1e-4


def test_value_gradient_matches_finite_differences():
    worst = 0.0
    for draw in range(100):
        rng = np.random.default_rng(1000 + draw)
        net = _net(draw)
        obs = rng.normal(size=(3, OBS))
        grad = value_gradient(net, obs)
        idx = rng.choice(net.params.size, 24, replace=False)
        num = _fd(lambda: float(np.sum(net.value(obs))), net.params, idx)
        sig = np.maximum(np.abs(num), np.abs(grad[idx])) > 1e-7
        if sig.any():
            worst = max(worst, float(np.max(_rel_err(grad[idx], num)[sig])))
    assert worst <= 1e-4


def test_deterministic_limit():
    net = _net()
    net.view("log_std")[...] = math.log(1e-8)
    obs = np.random.default_rng(0).normal(size=(5, OBS))
    act, _ = sample_action(net, obs, np.random.default_rng(1))
    assert np.allclose(act, net.forward(obs)[0], atol=1e-6)


def test_sample_mean_monte_carlo():
    net = _net()
    obs = np.zeros((1, OBS))
    mu, log_std, _, _ = net.forward_raw(obs)
    n = 100_000
    _, u, _, _ = net.sample(np.zeros((n, OBS)), np.random.default_rng(5))
    std = np.exp(log_std)
    assert np.all(np.abs(u.mean(axis=0) - mu[0]) < 4 * std / math.sqrt(n))


def test_log_prob_integrates_to_one():
    net = _net()
    obs = np.zeros((1, OBS))
    mean = net.forward(obs)[0][0]
    for d in range(ACT):
        # slice through the mean along one action dimension; the other dimension's marginal is fixed
        grid = np.linspace(LOW[d], HIGH[d], 200_001)[1:-1]
        acts = np.tile(mean, (len(grid), 1))
        acts[:, d] = grid
        lp = net.log_prob_action(np.zeros((len(grid), OBS)), acts, per_dim=True)[:, d]
        assert abs(trapezoid(np.exp(lp), grid) - 1.0) < 1e-3


def test_sampled_log_prob_consistent():
    net = _net()
    obs = np.random.default_rng(2).normal(size=(50, OBS))
    act, lp = sample_action(net, obs, np.random.default_rng(3))
    assert np.allclose(lp, net.log_prob_action(obs, act), atol=1e-6)


def test_entropy_closed_form():
    ls = np.array([-0.5, 0.2])
    assert gaussian_entropy(ls) == pytest.approx(np.sum(ls + 0.5 * math.log(2 * math.pi * math.e)))


# --- GAE ----------------------------------------------------------------------

def _gae_brute(r, v, d, gamma, lam):
    T = len(r)
    delta = [r[t] + gamma * v[t + 1] * (1 - d[t]) - v[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        acc, w = 0.0, 1.0
        for k in range(t, T):
            acc += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_brute_force():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        T, N = 10, 3
        r = rng.normal(size=(T, N))
        v = rng.normal(size=(T + 1, N))
        d = (rng.uniform(size=(T, N)) < 0.2).astype(float)
        gamma, lam = rng.uniform(0.8, 0.999), rng.uniform(0.5, 0.99)
        adv, ret = compute_gae(r, v, d, gamma, lam)
        for j in range(N):
            assert np.max(np.abs(adv[:, j] - _gae_brute(r[:, j], v[:, j], d[:, j], gamma, lam))) <= 1e-10
        assert np.allclose(ret, adv + v[:-1], atol=0)


def test_gae_special_cases():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=(10, 2)), rng.normal(size=(11, 2))
    d = np.zeros((10, 2))
    d[4, 0] = 1
    adv, _ = compute_gae(r, v, d, 0.9, 0.0)
    assert np.array_equal(adv, r + 0.9 * v[1:] * (1 - d) - v[:-1])
    adv, _ = compute_gae(r, v, d, 0.0, 0.95)
    assert np.array_equal(adv, r - v[:-1])


def test_advantage_normalization():
    buf = RolloutBuffer(16, 8, OBS, ACT)
    rng = np.random.default_rng(0)
    buf.rewards[:] = rng.normal(3, 5, buf.rewards.shape)
    buf.values[:] = rng.normal(size=buf.values.shape)
    buf.finish(0.99, 0.95)
    adv = buf.flat()[3]
    assert abs(adv.mean()) < 1e-6 and abs(adv.std() - 1) < 1e-6


# --- update -------------------------------------------------------------------

def _buffer(net, n=64, seed=0, adv=None):
    rng = np.random.default_rng(seed)
    buf = RolloutBuffer(1, n, OBS, ACT)
    buf.obs[0] = rng.normal(size=(n, OBS))
    _, u, lp, v = net.sample(buf.obs[0], rng)
    buf.actions[0], buf.log_probs[0], buf.values[:] = u, lp, v
    buf.rewards[0] = rng.normal(size=n) if adv is None else adv
    buf.finish(0.99, 0.95)
    return buf


def test_lr_zero_keeps_params():
    net = _net()
    before = net.params.copy()
    cfg = TrainerConfig(minibatch_size=16)
    ppo_update(net, Adam(net.params.size), _buffer(net), cfg, np.random.default_rng(0), 0.0)
    assert np.array_equal(net.params, before)


def test_clip_fraction_zero_at_old_policy():
    net = _net()
    buf = _buffer(net)
    obs, u, old, adv, ret = buf.flat()
    _, _, st = ppo_objective(net, obs, u, old, adv, ret)
    assert st["clip_frac"] == 0.0 and st["approx_kl"] == pytest.approx(0.0, abs=1e-15)


def test_positive_advantage_raises_probability():
    net = _net()
    rng = np.random.default_rng(4)
    obs = rng.normal(size=(1, OBS))
    _, u, lp, _ = net.sample(obs, rng)
    adv = np.array([1.0])
    _, grad, _ = ppo_objective(net, obs, u, lp, adv, np.zeros(1), value_coef=0.0)
    net.params -= 1e-3 * grad
    mu, log_std, _, _ = net.forward_raw(obs)
    assert gaussian_log_prob(u, mu, log_std)[0] > lp[0]


def test_non_finite_update_restores_params():
    net = _net()
    buf = _buffer(net)
    buf.returns[0, 0] = np.nan
    before = net.params.copy()
    opt = Adam(net.params.size)
    stats = ppo_update(net, opt, buf, TrainerConfig(minibatch_size=16), np.random.default_rng(0), 1e-3)
    assert stats["aborted"] and np.array_equal(net.params, before) and opt.t == 0


def test_adam_first_step():
    opt = Adam(3)
    p = opt.step(np.zeros(3), np.array([1.0, -2.0, 0.0]), 0.1)
    # bias correction makes the first step lr * sign(g)
    assert np.allclose(p, [-0.1, 0.1, 0.0], atol=1e-7)


def test_trainer_config_validation():
    for bad in (dict(gamma=1.0), dict(gae_lambda=-0.1), dict(clip_eps=0.0), dict(failure_value="x"),
                dict(n_envs=0)):
        with pytest.raises(ValueError):
            TrainerConfig(**bad)


# --- toy environment ------------------------------------------------------------

class ToyLQR:
    """1-D point ``x' = x + 0.1 a`` with reward ``-(x^2 + 0.1 a^2)``, 50-step episodes."""

    obs_dim = 1

    def __init__(self, n, seed=0):
        self.n = n
        self.low, self.high = np.array([-1.0]), np.array([1.0])
        self.rng = np.random.default_rng(seed)
        self.x = np.zeros(n)
        self.t = np.zeros(n, dtype=int)
        self.ret = np.zeros(n)
        self.done_returns = []
        self.prev_beta = np.zeros(n)
        self.last_errors = type("E", (), {"e_pos": np.zeros(n)})()
        self.final_obs = np.zeros((n, 1))

    def reset(self):
        self.x = self.rng.uniform(-1, 1, self.n)
        self.t[:] = 0
        self.ret[:] = 0
        return self.x[:, None].copy()

    def step(self, action):
        a = np.clip(action[:, 0], -1, 1)
        rew = -(self.x ** 2 + 0.1 * a ** 2)
        self.x = self.x + 0.1 * a
        self.t += 1
        self.ret += rew
        done = self.t >= 50
        status = np.where(done, Status.MAX_STEPS, Status.RUNNING)
        self.final_obs = self.x[:, None].copy()
        for i in np.flatnonzero(done):
            self.done_returns.append(self.ret[i])
            self.x[i] = self.rng.uniform(-1, 1)
            self.t[i] = 0
            self.ret[i] = 0
        return self.x[:, None].copy(), rew, done, status

    def drain(self):
        out = [type("S", (), {"episode_return": r, "steps": 50})() for r in self.done_returns]
        self.done_returns = []
        return out


TOY_CFG = TrainerConfig(n_envs=32, rollout_length=50, minibatch_size=400, lr=3e-3, total_env_steps=32 * 50 * 200,
                        init_log_std=-0.5, seed=0)


def test_toy_lqr_training_improves():
    _, curve, _ = train(ToyLQR(32), TOY_CFG)
    ret = np.array([row["mean_return"] for row in curve])
    assert len(curve) == 200
    ma = np.convolve(ret, np.ones(5) / 5, mode="valid")
    # random actions score around -8; the optimal feedback law reaches about -6
    assert ma[:5].mean() < -7.0
    assert ma[-1] > -6.6
    # mostly monotone once smoothed over blocks of updates
    blocks = ret[: 200 // 20 * 20].reshape(-1, 20).mean(axis=1)
    assert blocks[-1] > blocks[0]


def test_training_deterministic():
    cfg = TrainerConfig(n_envs=8, rollout_length=20, minibatch_size=40, total_env_steps=8 * 20 * 5, seed=3)
    a, ca, _ = train(ToyLQR(8), cfg)
    b, cb, _ = train(ToyLQR(8), cfg)
    assert np.array_equal(a.params, b.params)
    assert json.dumps(ca) == json.dumps(cb)


def test_zero_budget_returns_initial_net():
    cfg = TrainerConfig(n_envs=4, total_env_steps=0)
    net, curve, thr = train(ToyLQR(4), cfg)
    ref = PolicyNet.initialize(1, 1, [-1.0], [1.0], stream(cfg.seed, "policy-init"), cfg.init_log_std)
    assert curve == [] and thr == []
    assert np.array_equal(net.params, ref.params)


def test_batch_size_mismatch():
    with pytest.raises(ValueError):
        train(ToyLQR(4), TrainerConfig(n_envs=8))


# --- checkpoint ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = _net()
    f = tmp_path / "p.iwdp"
    checkpoint.save(f, net, {"note": "x"})
    back = checkpoint.load(f, OBS, ACT)
    assert np.array_equal(back.params, net.params)
    assert np.array_equal(back.low, LOW) and np.array_equal(back.high, HIGH)
    assert checkpoint.load_meta(f)["note"] == "x"
    raw = f.read_bytes()
    assert raw[:4] == b"IWDP"
    assert checkpoint.encode(net) == raw


@pytest.mark.parametrize("mutate", ["magic", "version", "truncate", "trailing", "dims"])
def test_checkpoint_corruption(tmp_path, mutate):
    net = _net()
    raw = bytearray(checkpoint.encode(net))
    if mutate == "magic":
        raw[0:4] = b"XXXX"
    elif mutate == "version":
        raw[4] = 99
    elif mutate == "truncate":
        raw = raw[:-9]
    elif mutate == "trailing":
        raw += b"\0"
    f = tmp_path / "bad.iwdp"
    f.write_bytes(bytes(raw))
    with pytest.raises(checkpoint.CheckpointError):
        if mutate == "dims":
            checkpoint.load(f, OBS + 1, ACT)
        else:
            checkpoint.load(f, OBS, ACT)
