"""Policy optimization: tanh MLPs, GAE, and a clipped-surrogate trainer.

Networks are plain float64 numpy with hand-written reverse-mode gradients
so they can be checked against finite differences exactly. Sizes follow
the experiment setup: two hidden layers of 64 tanh units, a linear output
head, updates every 1024 samples with minibatches of 256 and a discount
of 0.995.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


class MLP:
    """Fully connected tanh network with a linear output layer."""

    def __init__(self, sizes, rng=None, final_scale: float = 0.01):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        rng = rng or np.random.default_rng(0)
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(2.0 / (n_in + n_out))
            if i == len(sizes) - 2:
                scale *= final_scale  # small initial actions track the reference
            self.weights.append(rng.normal(size=(n_in, n_out)) * scale)
            self.biases.append(np.zeros(n_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
        return h

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping activations for backward()."""
        h = np.asarray(x, dtype=float)
        acts = [h]
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray):
        """Exact gradients of sum(output * grad_out) for every parameter.

        Returns (weight grads, bias grads, input grad).
        """
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        g = np.asarray(grad_out, dtype=float)
        for i in range(self.n_layers - 1, -1, -1):
            a_in = acts[i]
            if i != self.n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)  # tanh'
            if g.ndim == 1:
                grads_w[i] = np.outer(a_in, g)
                grads_b[i] = g.copy()
            else:
                grads_w[i] = a_in.T @ g
                grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads_w, grads_b, g

    def parameters(self):
        return self.weights + self.biases

    def to_lists(self):
        return {
            "sizes": self.sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_lists(cls, doc):
        net = cls.__new__(cls)
        net.sizes = list(doc["sizes"])
        net.weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        return net


class RunningNorm:
    """Welford running mean/variance used to normalize observations."""

    def __init__(self, dim):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4

    def update(self, x: np.ndarray):
        x = np.atleast_2d(x)
        n = x.shape[0]
        batch_mean = x.mean(axis=0)
        batch_var = x.var(axis=0)
        delta = batch_mean - self.mean
        total = self.count + n
        m_a = self.var * self.count
        m_b = batch_var * n
        self.var = (m_a + m_b + delta**2 * self.count * n / total) / total
        self.mean = self.mean + delta * n / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -10.0, 10.0)

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "var": self.var.tolist(),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, doc):
        norm = cls(len(doc["mean"]))
        norm.mean = np.asarray(doc["mean"], dtype=float)
        norm.var = np.asarray(doc["var"], dtype=float)
        norm.count = float(doc["count"])
        return norm


class GaussianPolicy:
    """Diagonal Gaussian policy: MLP mean head, learned per-dim log-std."""

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), rng=None, init_std=0.15):
        self.net = MLP([obs_dim] + list(hidden) + [act_dim], rng)
        self.log_std = np.full(act_dim, np.log(init_std))
        self.obs_dim = obs_dim
        self.act_dim = act_dim

    def mean(self, obs):
        return self.net.forward(obs)

    def act(self, obs, rng, deterministic=False):
        mu = self.net.forward(obs)
        if deterministic:
            return mu, self.log_prob_given_mean(mu, mu)
        std = np.exp(self.log_std)
        a = mu + std * rng.standard_normal(self.act_dim)
        return a, self.log_prob_given_mean(mu, a)

    def log_prob_given_mean(self, mu, actions):
        std = np.exp(self.log_std)
        z = (actions - mu) / std
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std) - 0.5 * len(
            self.log_std
        ) * np.log(2.0 * np.pi)

    def log_prob(self, obs, actions):
        return self.log_prob_given_mean(self.net.forward(obs), actions)


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass
class PPOConfig:
    batch_size: int = 1024  # m, samples per policy update
    minibatch_size: int = 256  # n
    gamma: float = 0.995
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 10
    total_steps: int = 3_000_000
    hidden: tuple = (64, 64)
    init_std: float = 0.15
    log_std_bounds: tuple = (-4.0, 0.5)
    entropy_coef: float = 0.0
    time_limit: float = 3.0
    stop_at_ep_len: float | None = None  # early stop when mean length reaches this
    stop_patience: int = 5  # consecutive qualifying updates required

    def __post_init__(self):
        if self.batch_size % self.minibatch_size != 0:
            raise InvalidInputError("minibatch size must divide batch size")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError("gamma must lie in (0, 1)")


def gae(rewards, values, dones, gamma, lam):
    """Generalized advantage estimation with episode-boundary truncation.

    `values` has one more entry than `rewards` (bootstrap value of the
    final state). `dones[t]` marks a boundary after step t: no value or
    advantage flows across it. Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    t_max = rewards.shape[0]
    if values.shape[0] != t_max + 1 or dones.shape[0] != t_max:
        raise InvalidInputError("gae inputs misaligned")
    adv = np.zeros(t_max)
    acc = 0.0
    for t in range(t_max - 1, -1, -1):
        not_done = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * values[t + 1] * not_done - values[t]
        acc = delta + gamma * lam * not_done * acc
        adv[t] = acc
    return adv, adv + values[:-1]


def ppo_update(batch, policy: GaussianPolicy, value_net: MLP, optimizers, config, rng):
    """One PPO update: clipped surrogate + value regression over minibatches.

    `batch` maps obs, act, logp, adv, ret to arrays of length batch_size.
    Returns stats: approx KL, clip fraction, and the two losses.
    """
    obs, act = batch["obs"], batch["act"]
    old_logp, adv, ret = batch["logp"], batch["adv"], batch["ret"]
    n = obs.shape[0]
    policy_opt, value_opt = optimizers
    kl_acc, clip_acc, pi_loss_acc, v_loss_acc, batches = 0.0, 0.0, 0.0, 0.0, 0

    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            o, a = obs[idx], act[idx]
            oldl, ad, rt = old_logp[idx], adv[idx], ret[idx]
            nb = len(idx)

            mu, acts = policy.net.forward_cache(o)
            std = np.exp(policy.log_std)
            z = (a - mu) / std
            logp = (
                -0.5 * np.sum(z * z, axis=1)
                - np.sum(policy.log_std)
                - 0.5 * policy.act_dim * np.log(2 * np.pi)
            )
            ratio = np.exp(logp - oldl)
            surr1 = ratio * ad
            surr2 = np.clip(ratio, 1 - config.clip_eps, 1 + config.clip_eps) * ad
            pi_loss = -np.mean(np.minimum(surr1, surr2))

            # gradient flows only where the unclipped branch is active
            use_unclipped = surr1 <= surr2
            dloss_dlogp = np.where(use_unclipped, -ad * ratio, 0.0) / nb
            dlogp_dmu = z / std  # (nb, act)
            grad_mu = dloss_dlogp[:, None] * dlogp_dmu
            dlogp_dlogstd = z * z - 1.0
            grad_logstd = (dloss_dlogp[:, None] * dlogp_dlogstd).sum(axis=0)
            if config.entropy_coef:
                grad_logstd -= config.entropy_coef  # d(-c * entropy)/dlogstd
            gw, gb, _ = policy.net.backward(acts, grad_mu)
            policy_opt.step(gw + gb + [grad_logstd])
            lo, hi = config.log_std_bounds
            np.clip(policy.log_std, lo, hi, out=policy.log_std)

            v, v_acts = value_net.forward_cache(o)
            v = v[:, 0]
            v_loss = 0.5 * np.mean((v - rt) ** 2)
            gv = ((v - rt) / nb)[:, None]
            gw_v, gb_v, _ = value_net.backward(v_acts, gv)
            value_opt.step(gw_v + gb_v)

            kl_acc += float(np.mean(oldl - logp))
            clip_acc += float(np.mean(np.abs(ratio - 1.0) > config.clip_eps))
            pi_loss_acc += float(pi_loss)
            v_loss_acc += float(v_loss)
            batches += 1
            if not np.isfinite(pi_loss) or not np.isfinite(v_loss):
                raise FloatingPointError("non-finite PPO loss")

    return {
        "kl": kl_acc / batches,
        "clip_frac": clip_acc / batches,
        "pi_loss": pi_loss_acc / batches,
        "v_loss": v_loss_acc / batches,
    }


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_net: MLP
    obs_norm: RunningNorm
    curve: list  # dict rows: step, episodes, mean_return, mean_ep_len, ...
    steps: int
    episodes: int
    wall_time: float


def train(env_factory, config: PPOConfig, seed: int = 0, verbose: bool = False):
    """Train a tracking policy; deterministic for a fixed seed and config."""
    rng = np.random.default_rng(seed)
    environment = env_factory(seed)
    obs_dim, act_dim = environment.obs_dim, environment.act_dim

    policy = GaussianPolicy(
        obs_dim, act_dim, config.hidden, np.random.default_rng(seed + 1),
        init_std=config.init_std,
    )
    value_net = MLP([obs_dim] + list(config.hidden) + [1],
                    np.random.default_rng(seed + 2), final_scale=1.0)
    norm = RunningNorm(obs_dim)
    policy_opt = Adam(
        policy.net.parameters() + [policy.log_std], lr=config.learning_rate
    )
    value_opt = Adam(value_net.parameters(), lr=config.learning_rate)

    environment.time_limit = config.time_limit
    obs_raw = environment.reset()
    norm.update(obs_raw)
    obs = norm.normalize(obs_raw)

    curve = []
    steps = 0
    episodes = 0
    ep_return, ep_len = 0.0, 0
    recent_returns: list[float] = []
    recent_lens: list[float] = []
    good_updates = 0
    t_start = time.perf_counter()

    m = config.batch_size
    while steps < config.total_steps:
        batch_obs = np.empty((m, obs_dim))
        batch_act = np.empty((m, act_dim))
        batch_logp = np.empty(m)
        batch_rew = np.empty(m)
        batch_done = np.zeros(m, dtype=bool)
        batch_val = np.empty(m + 1)

        for t in range(m):
            action, logp = policy.act(obs, rng)
            value = float(value_net.forward(obs)[0])
            next_obs_raw, r, terminated, truncated, _ = environment.step(action)
            batch_obs[t] = obs
            batch_act[t] = action
            batch_logp[t] = logp
            batch_val[t] = value
            ep_return += r
            ep_len += 1
            steps += 1

            if truncated and not terminated:
                # bootstrap through the time limit: the episode did not fail
                nxt = norm.normalize(next_obs_raw)
                r = r + config.gamma * float(value_net.forward(nxt)[0])
            batch_rew[t] = r
            batch_done[t] = terminated or truncated

            if terminated or truncated:
                episodes += 1
                recent_returns.append(ep_return)
                recent_lens.append(ep_len * environment.simulator.params.dt)
                ep_return, ep_len = 0.0, 0
                next_obs_raw = environment.reset()
            norm.update(next_obs_raw)
            obs = norm.normalize(next_obs_raw)
        batch_val[m] = float(value_net.forward(obs)[0])

        adv, ret = gae(
            batch_rew, batch_val, batch_done, config.gamma, config.gae_lambda
        )
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        stats = ppo_update(
            {
                "obs": batch_obs,
                "act": batch_act,
                "logp": batch_logp,
                "adv": adv,
                "ret": ret,
            },
            policy,
            value_net,
            (policy_opt, value_opt),
            config,
            rng,
        )

        recent_returns = recent_returns[-50:]
        recent_lens = recent_lens[-50:]
        mean_ret = float(np.mean(recent_returns)) if recent_returns else 0.0
        mean_len = float(np.mean(recent_lens)) if recent_lens else 0.0
        if not np.isfinite(mean_ret):
            raise FloatingPointError("training diverged: non-finite return")
        curve.append(
            {
                "step": steps,
                "episodes": episodes,
                "mean_return": mean_ret,
                "mean_ep_len": mean_len,
                "clip_frac": stats["clip_frac"],
                "kl": stats["kl"],
            }
        )
        if verbose:
            print(
                f"step {steps:>8d} ep {episodes:>5d} "
                f"ret {mean_ret:8.2f} len {mean_len:5.2f}s "
                f"kl {stats['kl']:.4f} clip {stats['clip_frac']:.2f}",
                flush=True,
            )
        if config.stop_at_ep_len is not None and len(recent_lens) >= 20:
            if mean_len >= config.stop_at_ep_len:
                good_updates += 1
                if good_updates >= config.stop_patience:
                    break
            else:
                good_updates = 0

    return TrainResult(
        policy=policy,
        value_net=value_net,
        obs_norm=norm,
        curve=curve,
        steps=steps,
        episodes=episodes,
        wall_time=time.perf_counter() - t_start,
    )


CHECKPOINT_VERSION = 1


def save_checkpoint(path, result: TrainResult):
    """Write policy, value net and normalization stats as versioned JSON."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "obs_dim": result.policy.obs_dim,
        "act_dim": result.policy.act_dim,
        "policy": result.policy.net.to_lists(),
        "log_std": result.policy.log_std.tolist(),
        "value": result.value_net.to_lists(),
        "obs_norm": result.obs_norm.to_dict(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    """Load a checkpoint; returns (policy, value_net, obs_norm)."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {doc.get('version')}")
    policy = GaussianPolicy.__new__(GaussianPolicy)
    policy.net = MLP.from_lists(doc["policy"])
    policy.log_std = np.asarray(doc["log_std"], dtype=float)
    policy.obs_dim = policy.net.sizes[0]
    policy.act_dim = policy.net.sizes[-1]
    value_net = MLP.from_lists(doc["value"])
    norm = RunningNorm.from_dict(doc["obs_norm"])
    return policy, value_net, norm


def save_curve(path, curve):
    """Learning curve CSV: step, episodes, mean_return, mean_ep_len, ..."""
    cols = ["step", "episodes", "mean_return", "mean_ep_len", "clip_frac", "kl"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in curve:
            f.write(",".join(repr(row[c]) for c in cols) + "\n")


def evaluate(environment, policy, norm, episodes=10, deterministic=True, seed=0):
    """Roll out the policy; returns per-episode (return, length seconds)."""
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(episodes):
        obs_raw = environment.reset()
        done = False
        total, length = 0.0, 0
        while not done:
            action, _ = policy.act(norm.normalize(obs_raw), rng, deterministic)
            obs_raw, r, terminated, truncated, _ = environment.step(action)
            total += r
            length += 1
            done = terminated or truncated
        results.append((total, length * environment.simulator.params.dt))
    return results
