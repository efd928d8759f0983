"""Comparison schedulers: LinUCB contextual bandit, greedy heuristic,
random cloud/edge split.

All three follow the same policy protocol as the trained network:
``select(obs, ctx, rng) -> server index``.
"""

from __future__ import annotations

import numpy as np

from .env import OffloadEnv
from .pareto import evaluate_policy, pareto_filter
from .rewards import (Preference, RewardScales, baseline_residual_delay_sum,
                      energy_reward, scalarize, surviving_residuals)
from .seeding import derive_rng


class LinUCB:
    """Disjoint per-arm ridge regression with an upper-confidence bonus.

    Arm e scores its own server row of the observation: theta_e . x +
    alpha * sqrt(x' A_e^-1 x). A_e starts at the identity, so solves stay
    positive definite. Ties break toward the lowest server index.
    """

    def __init__(self, n_arms: int, dim: int, exploration: float = 1.0):
        self.n_arms = n_arms
        self.dim = dim
        self.exploration = exploration
        self.A = [np.eye(dim) for _ in range(n_arms)]
        self.b = [np.zeros(dim) for _ in range(n_arms)]
        self.frozen = False          # evaluation mode: greedy estimate, no updates

    def scores(self, contexts: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_arms)
        for arm in range(self.n_arms):
            x = contexts[arm]
            theta_hat = np.linalg.solve(self.A[arm], self.b[arm])
            est = float(theta_hat @ x)
            if self.frozen or self.exploration == 0:
                out[arm] = est
            else:
                width = float(np.sqrt(x @ np.linalg.solve(self.A[arm], x)))
                out[arm] = est + self.exploration * width
        return out

    def select(self, obs, ctx, rng) -> int:
        return int(np.argmax(self.scores(np.asarray(obs))))

    def update(self, arm: int, x: np.ndarray, reward: float) -> None:
        if self.frozen:
            return
        self.A[arm] += np.outer(x, x)
        self.b[arm] += reward * x


def train_linucb(cfg, omega: Preference, scales: RewardScales, n_episodes: int,
                 seed: int, exploration: float = 1.0,
                 stream: str = "linucb") -> LinUCB:
    """Online bandit training on the scalarized reward."""
    env = OffloadEnv(cfg, seed, stream=stream)
    feature_dim = 5 + cfg.histogram_bins
    bandit = LinUCB(cfg.num_servers, feature_dim, exploration)
    rng = derive_rng(seed, stream, "actions")
    for k in range(n_episodes):
        obs = env.reset(k)
        done = False
        while not done:
            action = bandit.select(obs, env.context, rng)
            context_row = np.asarray(obs)[action].copy()
            next_obs, rew, done, _ = env.step(action)
            bandit.update(action, context_row, scalarize(rew, omega, scales))
            obs = next_obs
    return bandit


class HeuristicPolicy:
    """Myopic greedy scheduler: picks the server with the best weighted
    one-step estimate of running speed and energy.

    The delay term is the transit time plus the estimated drain time of
    the target pool with the new task merged in; the energy term is the
    exact per-task energy estimate. No learning, fully deterministic.
    """

    def __init__(self, omega: Preference, scales: RewardScales):
        self.omega = omega.validate()
        self.scales = scales

    def select(self, obs, ctx, rng=None) -> int:
        freqs = ctx.freqs()
        best_action = 0
        best_score = -np.inf
        for e in range(ctx.num_servers):
            t_off = ctx.size / ctx.rates[e]
            spb = ctx.cfg.cycles_per_bit / freqs[e]
            pool = surviving_residuals(ctx.pools[e], spb, t_off)
            merged = np.append(pool, ctx.size)
            drain = baseline_residual_delay_sum(merged, freqs[e],
                                                ctx.cfg.cycles_per_bit)
            score = (self.omega.w_T * self.scales.a_T * -(t_off + drain)
                     + self.omega.w_E * self.scales.a_E
                     * energy_reward(ctx, e, offload_delay=t_off))
            if score > best_score:
                best_score = score
                best_action = e
        return best_action


class RandomPolicy:
    """Cloud with probability p, otherwise a uniformly random edge."""

    def __init__(self, p_cloud: float):
        if not 0.0 <= p_cloud <= 1.0:
            raise ValueError(f"p_cloud must lie in [0, 1], got {p_cloud}")
        self.p_cloud = p_cloud

    def select(self, obs, ctx, rng) -> int:
        num_edges = ctx.cfg.num_edge_servers
        if num_edges == 0 or rng.random() < self.p_cloud:
            return 0
        return int(rng.integers(1, num_edges + 1))


def random_front(p_grid, cfg, n_episodes: int, seed: int,
                 stream: str = "eval"):
    """Evaluate a grid of cloud probabilities and Pareto-filter the result.

    All grid points run on the same evaluation stream, so the episodes are
    paired and the front shape reflects the split probability alone.
    """
    points = []
    for p in p_grid:
        point = evaluate_policy(RandomPolicy(p), cfg, n_episodes, seed,
                                label=f"random p={p:g}", omega_T=float(p),
                                stream=stream)
        points.append(point)
    return points, pareto_filter(points)
