"""Actor-critic MLP with a hand-written backward pass.

Both actor and critic are ``obs -> 64 -> 32 -> 16 -> out`` with tanh hidden
units. The actor outputs the pre-squash mean of a diagonal Gaussian; actions
are ``mid + half * tanh(u)`` so they always lie inside the bounds. The
standard deviation is a state-independent parameter vector.

All parameters live in one flat float64 vector. Layout, in order::

    actor:  W1 (obs, 64)  b1 (64)  W2 (64, 32)  b2 (32)  W3 (32, 16)  b3 (16)  W4 (16, act)  b4 (act)
    log_std (act)
    critic: W1 (obs, 64)  b1 (64)  W2 (64, 32)  b2 (32)  W3 (32, 16)  b3 (16)  W4 (16, 1)    b4 (1)

Matrices are row-major; a layer computes ``x @ W + b``. With the default
56-dimensional observation and 5 actions the vector has 12619 entries.
"""

from __future__ import annotations

import math

import numpy as np

HIDDEN = (64, 32, 16)
LOG_2PI = math.log(2.0 * math.pi)


def layout(obs_dim: int, act_dim: int):
    """List of ``(name, shape)`` in flat-vector order."""
    entries = []
    for prefix, out_dim in (("actor", act_dim), ("critic", 1)):
        dims = (obs_dim,) + HIDDEN + (out_dim,)
        for k in range(4):
            entries.append((f"{prefix}.W{k + 1}", (dims[k], dims[k + 1])))
            entries.append((f"{prefix}.b{k + 1}", (dims[k + 1],)))
        if prefix == "actor":
            entries.append(("log_std", (act_dim,)))
    return entries


def param_count(obs_dim: int, act_dim: int) -> int:
    return sum(int(np.prod(shape)) for _, shape in layout(obs_dim, act_dim))


class PolicyNet:
    def __init__(self, obs_dim: int, act_dim: int, low, high, params=None):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.mid = 0.5 * (self.low + self.high)
        self.half = 0.5 * (self.high - self.low)
        self.layout = layout(obs_dim, act_dim)
        n = param_count(obs_dim, act_dim)
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")
        self._slices = {}
        off = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self._slices[name] = (slice(off, off + size), shape)
            off += size

    @classmethod
    def initialize(cls, obs_dim, act_dim, low, high, rng: np.random.Generator, log_std: float = -0.5):
        net = cls(obs_dim, act_dim, low, high)
        for name, shape in net.layout:
            if name.endswith(tuple(f"W{k}" for k in range(1, 5))):
                scale = 1.0 / math.sqrt(shape[0])
                if name == "actor.W4":
                    scale *= 0.01
                net.view(name)[...] = rng.normal(0.0, scale, size=shape)
        net.view("log_std")[...] = log_std
        return net

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.obs_dim, self.act_dim, self.low, self.high, self.params.copy())

    def view(self, name: str, vec=None) -> np.ndarray:
        sl, shape = self._slices[name]
        vec = self.params if vec is None else vec
        return vec[sl].reshape(shape)

    def _weights(self, prefix):
        return [(self.view(f"{prefix}.W{k}"), self.view(f"{prefix}.b{k}")) for k in range(1, 5)]

    # -- evaluation -----------------------------------------------------------

    def squash(self, u):
        return self.mid + self.half * np.tanh(u)

    def forward_raw(self, obs):
        """Pre-squash mean, log-std and value, plus caches for backward."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        mu, cache_a = _mlp_forward(self._weights("actor"), obs)
        v, cache_c = _mlp_forward(self._weights("critic"), obs)
        return mu, self.view("log_std"), v[:, 0], (cache_a, cache_c)

    def forward(self, obs):
        """Squashed action mean, log-std and value."""
        mu, log_std, v, _ = self.forward_raw(obs)
        return self.squash(mu), log_std.copy(), v

    def value(self, obs):
        v, _ = _mlp_forward(self._weights("critic"), np.atleast_2d(obs))
        return v[:, 0]

    def sample(self, obs, rng: np.random.Generator):
        """Draw actions. Returns ``(action, u, logp_u, value)``.

        ``u`` is the pre-squash sample and ``logp_u`` its Gaussian log density;
        PPO ratios use ``logp_u`` since the squash Jacobian cancels.
        """
        mu, log_std, v, _ = self.forward_raw(obs)
        eps = rng.normal(size=mu.shape)
        u = mu + np.exp(log_std) * eps
        logp = gaussian_log_prob(u, mu, log_std)
        return self.squash(u), u, logp, v

    def log_prob_action(self, obs, action, per_dim: bool = False):
        """Log density of a squashed action, including the tanh Jacobian."""
        mu, log_std, _, _ = self.forward_raw(obs)
        y = np.clip((np.asarray(action) - self.mid) / self.half, -1.0 + 1e-15, 1.0 - 1e-15)
        u = np.arctanh(y)
        lp = gaussian_log_prob(u, mu, log_std, per_dim=True) - np.log(self.half * (1.0 - y * y))
        return lp if per_dim else lp.sum(axis=-1)


def sample_action(net: PolicyNet, obs, rng: np.random.Generator):
    """Sampled squashed action and its log density (with squash correction)."""
    action, u, logp_u, _ = net.sample(obs, rng)
    y = np.tanh(u)
    logp = logp_u - np.log(net.half * (1.0 - y * y)).sum(axis=-1)
    return action, logp


def gaussian_log_prob(u, mu, log_std, per_dim: bool = False):
    z = (u - mu) * np.exp(-log_std)
    lp = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    return lp if per_dim else lp.sum(axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def _mlp_forward(weights, x):
    acts = [x]
    h = x
    for k, (W, b) in enumerate(weights):
        z = h @ W + b
        h = np.tanh(z) if k < len(weights) - 1 else z
        acts.append(h)
    return h, acts


def _mlp_backward(weights, acts, dout):
    """Gradients w.r.t. each (W, b) given d(loss)/d(output)."""
    grads = [None] * len(weights)
    delta = dout
    for k in range(len(weights) - 1, -1, -1):
        W, _ = weights[k]
        grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
        if k > 0:
            delta = (delta @ W.T) * (1.0 - acts[k] ** 2)
    return grads


def ppo_objective(net: PolicyNet, obs, u, old_logp, adv, returns, clip_eps: float = 0.2,
                  value_coef: float = 0.5, entropy_coef: float = 0.0, pg_coef: float = 1.0):
    """Clipped-surrogate PPO loss and its gradient w.r.t. ``net.params``.

    loss = pg_coef * policy_loss + value_coef * value_loss - entropy_coef * entropy
    """
    mu, log_std, v, (cache_a, cache_c) = net.forward_raw(obs)
    n = mu.shape[0]
    inv_std = np.exp(-log_std)
    z = (u - mu) * inv_std
    logp = np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=1)
    ratio = np.exp(logp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    unclipped = surr1 <= surr2
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    value_loss = np.mean((v - returns) ** 2)
    entropy = gaussian_entropy(log_std)
    loss = pg_coef * policy_loss + value_coef * value_loss - entropy_coef * entropy

    dlogp = -pg_coef * np.where(unclipped, surr1, 0.0) / n
    dmu = dlogp[:, None] * z * inv_std
    dlog_std = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0) - entropy_coef
    dv = value_coef * 2.0 * (v - returns) / n

    grad = np.zeros_like(net.params)
    for k, (gW, gb) in enumerate(_mlp_backward(net._weights("actor"), cache_a, dmu), start=1):
        net.view(f"actor.W{k}", grad)[...] = gW
        net.view(f"actor.b{k}", grad)[...] = gb
    net.view("log_std", grad)[...] = dlog_std
    for k, (gW, gb) in enumerate(_mlp_backward(net._weights("critic"), cache_c, dv[:, None]), start=1):
        net.view(f"critic.W{k}", grad)[...] = gW
        net.view(f"critic.b{k}", grad)[...] = gb

    approx_kl = float(np.mean((ratio - 1.0) - (logp - old_logp)))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_eps))
    stats = dict(loss=float(loss), policy_loss=float(policy_loss), value_loss=float(value_loss),
                 entropy=entropy, approx_kl=approx_kl, clip_frac=clip_frac)
    return float(loss), grad, stats


def value_gradient(net: PolicyNet, obs) -> np.ndarray:
    """Gradient of ``sum(value(obs))`` w.r.t. all parameters (critic block only)."""
    _, _, _, (_, cache_c) = net.forward_raw(obs)
    grad = np.zeros_like(net.params)
    dout = np.ones((cache_c[0].shape[0], 1))
    for k, (gW, gb) in enumerate(_mlp_backward(net._weights("critic"), cache_c, dout), start=1):
        net.view(f"critic.W{k}", grad)[...] = gW
        net.view(f"critic.b{k}", grad)[...] = gb
    return grad


class Adam:
    """Adam with bias correction over a flat parameter vector."""

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)
