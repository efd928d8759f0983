"""Preference-conditioned PPO training loop.

Rollouts store vector rewards, so one buffer serves both objectives. Each
objective gets its own GAE stream against its own value head; the policy
ascends the clipped surrogate with the preference-combined advantage,
which equals the preference combination of the per-objective clipped
gradients whenever both objectives share the clip branch.

The replay memory is an on-policy rollout store: it is filled, reused for
several epochs of minibatch updates, then cleared.

Full-scale defaults from the reference setup (1.92e6 episodes per
preference, learning rate 1e-6) are documented in TrainConfig; the
shipped defaults are desk-scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import OffloadEnv
from .errors import ContractViolation, NumericError
from .network import PolicyValueNet, log_softmax, softmax, warm_start
from .rewards import Preference, RewardScales
from .seeding import derive_rng


@dataclass
class TrainConfig:
    """PPO hyperparameters.

    ``learning_rate`` defaults to 3e-4 for desk-scale runs; the full-scale
    reference value is 1e-6 paired with 1.92e6 episodes per preference.
    """

    gamma: float = 0.9
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    batch_size: int = 4096
    episodes: int = 20000
    rollout_steps: int = 4096
    epochs_per_batch: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    grad_clip: float = 0.5
    optimizer: str = "adam"
    normalize_advantages: bool = True
    buffer_capacity: int = 100_000
    warm_start_episodes: int | None = None    # per-preference budget after the first

    def validate(self) -> "TrainConfig":
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        return self


@dataclass
class RolloutBuffer:
    """Transitions of whole episodes, stored contiguously in time order."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray          # (n, 2) raw (r_T, r_E)
    next_obs: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray        # behavior log-prob of the taken action
    values: np.ndarray           # (n, 2) behavior value heads
    episode_slices: list

    def __len__(self) -> int:
        return len(self.actions)


def sample_categorical(rng, probs: np.ndarray) -> int:
    """Inverse-CDF draw; one uniform per decision keeps streams compact."""
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random(), side="right")),
               len(probs) - 1)


class NetPolicy:
    """Policy protocol adapter for a trained parameter vector."""

    def __init__(self, net: PolicyValueNet, theta: np.ndarray, sampled: bool = True):
        self.net = net
        self.theta = theta
        self.sampled = sampled
        self._act = net.act_fn(theta)

    def select(self, obs, ctx, rng) -> int:
        probs, _, _ = self._act(obs)
        if self.sampled:
            return sample_categorical(rng, probs)
        return int(np.argmax(probs))


def collect_rollouts(net: PolicyValueNet, theta: np.ndarray, env: OffloadEnv,
                     n_steps: int, rng, episode_start: int = 0,
                     capacity: int = 100_000) -> RolloutBuffer:
    """Whole episodes until at least ``n_steps`` transitions are stored."""
    if n_steps > capacity:
        raise ContractViolation(f"{n_steps} steps exceed buffer capacity {capacity}")
    act = net.act_fn(theta)
    obs_l, act_l, rew_l, nobs_l, done_l, lp_l, val_l = [], [], [], [], [], [], []
    slices = []
    episode = episode_start
    while len(act_l) < n_steps:
        start = len(act_l)
        obs = env.reset(episode)
        done = False
        while not done:
            probs, logp, values = act(obs)
            action = sample_categorical(rng, probs)
            next_obs, rew, done, _ = env.step(action)
            obs_l.append(obs)
            act_l.append(action)
            rew_l.append(rew)
            nobs_l.append(np.zeros_like(obs) if next_obs is None else next_obs)
            done_l.append(done)
            lp_l.append(logp[action])
            val_l.append(values)
            obs = next_obs
        slices.append((start, len(act_l)))
        episode += 1
    return RolloutBuffer(
        obs=np.array(obs_l), actions=np.array(act_l), rewards=np.array(rew_l),
        next_obs=np.array(nobs_l), dones=np.array(done_l),
        log_probs=np.array(lp_l), values=np.array(val_l),
        episode_slices=slices)


def compute_gae(rewards: np.ndarray, values: np.ndarray, episode_slices,
                gamma: float, lam: float, alpha: float = 1.0) -> np.ndarray:
    """Exponentially weighted TD-error sums per episode.

    delta_t = alpha * r_t + gamma * V(s_{t+1}) - V(s_t), with a zero
    bootstrap at each episode end (finite horizon).
    """
    adv = np.zeros(len(rewards))
    for start, end in episode_slices:
        running = 0.0
        for t in range(end - 1, start - 1, -1):
            next_v = values[t + 1] if t + 1 < end else 0.0
            delta = alpha * rewards[t] + gamma * next_v - values[t]
            running = delta + gamma * lam * running
            adv[t] = running
    return adv


def ppo_loss_fn(actions, old_log_probs, advantages, returns, omega: Preference,
                clip_epsilon: float, value_coef: float, entropy_coef: float):
    """Mean minibatch loss and its analytic head partials.

    Policy part: negated clipped surrogate, gradient flowing through the
    probability ratio only where the unclipped branch attains the min
    (ties included, so at ratio 1 the surrogate gradient is the vanilla
    policy gradient). Value part: preference-weighted per-objective
    regression, so a zero-weight objective leaves the trunk untouched.
    """
    actions = np.asarray(actions)
    rows = np.arange(len(actions))

    def loss_fn(logits, values):
        n = len(actions)
        logp = log_softmax(logits)
        probs = softmax(logits)
        lp_a = logp[rows, actions]
        ratio = np.exp(lp_a - old_log_probs)
        clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
        surr1 = ratio * advantages
        surr2 = clipped * advantages
        policy_loss = -np.mean(np.minimum(surr1, surr2))

        v_err = values - returns
        w = np.array([omega.w_T, omega.w_E])
        value_loss = float(np.sum(w * np.mean(v_err ** 2, axis=0)))

        entropy = -np.sum(probs * logp, axis=1)
        mean_entropy = float(np.mean(entropy))

        loss = policy_loss + value_coef * value_loss - entropy_coef * mean_entropy

        pass_through = surr1 <= surr2
        dlp_a = np.where(pass_through, -advantages * ratio, 0.0) / n
        dlogits = probs * (-dlp_a)[:, None]
        dlogits[rows, actions] += dlp_a
        dlogits += entropy_coef * probs * (logp + entropy[:, None]) / n
        dvalues = value_coef * w * 2.0 * v_err / n
        return loss, dlogits, dvalues, {
            "policy_loss": float(policy_loss),
            "value_loss": value_loss,
            "entropy": mean_entropy,
        }

    return loss_fn


class SGDOptimizer:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * grad


class AdamOptimizer:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(tcfg: TrainConfig):
    if tcfg.optimizer == "adam":
        return AdamOptimizer(tcfg.learning_rate)
    if tcfg.optimizer == "sgd":
        return SGDOptimizer(tcfg.learning_rate)
    raise ValueError(f"unknown optimizer {tcfg.optimizer!r}")


def clip_gradient(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def ppo_update(net: PolicyValueNet, theta: np.ndarray, buf: RolloutBuffer,
               omega: Preference, scales: RewardScales, tcfg: TrainConfig,
               opt, rng) -> tuple[np.ndarray, dict]:
    """One clipped-surrogate update cycle over the rollout buffer.

    Raises NumericError on a non-finite loss or gradient; the caller's
    theta is never mutated, so an aborted update leaves it unchanged.
    """
    adv_t = compute_gae(buf.rewards[:, 0], buf.values[:, 0], buf.episode_slices,
                        tcfg.gamma, tcfg.gae_lambda, alpha=scales.a_T)
    adv_e = compute_gae(buf.rewards[:, 1], buf.values[:, 1], buf.episode_slices,
                        tcfg.gamma, tcfg.gae_lambda, alpha=scales.a_E)
    returns = np.stack([adv_t + buf.values[:, 0], adv_e + buf.values[:, 1]], axis=1)
    adv = omega.w_T * adv_t + omega.w_E * adv_e
    if tcfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    theta_new = theta.copy()
    n = len(buf)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
    batches = 0
    for _ in range(tcfg.epochs_per_batch):
        perm = rng.permutation(n)
        for start in range(0, n, tcfg.batch_size):
            idx = perm[start:start + tcfg.batch_size]
            loss_fn = ppo_loss_fn(buf.actions[idx], buf.log_probs[idx], adv[idx],
                                  returns[idx], omega, tcfg.clip_epsilon,
                                  tcfg.value_coef, tcfg.entropy_coef)
            cache = net.forward(theta_new, buf.obs[idx])
            loss, dlogits, dvalues, parts = loss_fn(cache.logits, cache.values)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss {loss!r}; update aborted")
            grad = net.backward(theta_new, cache, dlogits, dvalues)
            if not np.all(np.isfinite(grad)):
                raise NumericError("non-finite gradient; update aborted")
            theta_new = opt.step(theta_new, clip_gradient(grad, tcfg.grad_clip))
            for key in stats:
                stats[key] += parts[key]
            batches += 1
    for key in stats:
        stats[key] /= max(batches, 1)
    return theta_new, stats


@dataclass
class PolicyProfile:
    """A trained policy for one preference plus its training curve."""

    omega: Preference
    theta: np.ndarray | None
    scales: RewardScales
    history: list = field(default_factory=list)
    episodes_seen: int = 0
    error: str | None = None


def _episode_returns(buf: RolloutBuffer, omega: Preference, scales: RewardScales):
    scalar, sums_t, sums_e = [], [], []
    for start, end in buf.episode_slices:
        r = buf.rewards[start:end]
        st, se = float(r[:, 0].sum()), float(r[:, 1].sum())
        sums_t.append(st)
        sums_e.append(se)
        scalar.append(omega.w_T * scales.a_T * st + omega.w_E * scales.a_E * se)
    return float(np.mean(scalar)), float(np.mean(sums_t)), float(np.mean(sums_e))


def train_preference(net: PolicyValueNet, theta_init: np.ndarray, cfg,
                     omega: Preference, scales: RewardScales, tcfg: TrainConfig,
                     seed: int, episodes: int | None = None,
                     stream: str = "train") -> PolicyProfile:
    """PPO training for one preference; one history row per update."""
    omega.validate()
    tcfg.validate()
    budget = tcfg.episodes if episodes is None else episodes
    env = OffloadEnv(cfg, seed, stream=stream)
    steps_per_episode = cfg.steps_per_episode
    opt = make_optimizer(tcfg)
    theta = theta_init.copy()
    history = []
    episodes_seen = 0
    update_idx = 0
    while episodes_seen < budget:
        remaining = budget - episodes_seen
        n_steps = min(tcfg.rollout_steps, remaining * steps_per_episode)
        collect_rng = derive_rng(seed, stream, "collect", update_idx)
        buf = collect_rollouts(net, theta, env, n_steps, collect_rng,
                               episode_start=episodes_seen,
                               capacity=tcfg.buffer_capacity)
        update_rng = derive_rng(seed, stream, "update", update_idx)
        theta, stats = ppo_update(net, theta, buf, omega, scales, tcfg, opt,
                                  update_rng)
        episodes_seen += len(buf.episode_slices)
        mean_ret, mean_rt, mean_re = _episode_returns(buf, omega, scales)
        history.append({
            "update_idx": update_idx,
            "episodes_seen": episodes_seen,
            "mean_scalarized_return": mean_ret,
            "mean_rT": mean_rt,
            "mean_rE": mean_re,
            "policy_loss": stats["policy_loss"],
            "value_loss": stats["value_loss"],
            "entropy": stats["entropy"],
        })
        update_idx += 1
    return PolicyProfile(omega=omega, theta=theta, scales=scales,
                         history=history, episodes_seen=episodes_seen)


def sweep_preferences(net: PolicyValueNet, cfg, omegas, scales: RewardScales,
                      tcfg: TrainConfig, seed: int,
                      init_seed: int = 0) -> list[PolicyProfile]:
    """Train the preference grid, warm-starting each run from the last.

    The grid is sorted by delay weight descending: the pure-delay end
    needs genuine load balancing and keeps a lively action distribution,
    so the chain degrades gracefully toward the energy end. Sweeping the
    other way starts at the all-edge energy optimum, whose collapsed
    policy warm-starts every later preference into the same trap.

    A failed preference is recorded in its profile and the sweep carries
    on with the most recent successful parameters.
    """
    omegas = sorted((Preference(*w).validate() for w in omegas),
                    key=lambda w: w.w_T, reverse=True)
    profiles: list[PolicyProfile] = []
    theta = net.init_params(init_seed)
    for i, omega in enumerate(omegas):
        budget = tcfg.episodes if (i == 0 or tcfg.warm_start_episodes is None) \
            else tcfg.warm_start_episodes
        try:
            profile = train_preference(net, warm_start(theta), cfg, omega, scales,
                                       tcfg, seed, episodes=budget,
                                       stream=f"train-pref{i}")
            theta = profile.theta
        except (NumericError, ContractViolation) as exc:
            profile = PolicyProfile(omega=omega, theta=None, scales=scales,
                                    error=f"{type(exc).__name__}: {exc}")
        profiles.append(profile)
    return profiles
