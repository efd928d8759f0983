"""Two-objective immediate reward: exact energy, estimated delay.

The delay reward charges the acting step for the marginal total delay its
offload causes: the new task's own transit plus execution, and the extra
time every task already pooled on the target server will now need. All
estimates assume no further arrivals, so over an episode in which no
offload targets a server holding an in-transit task the per-step delay
rewards telescope to the negated realized total delay.

Tasks in wireless transit toward a server are not in its pool and are
deliberately ignored here; the gap this opens under same-server back-to-
back offloads is measured empirically rather than patched.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .config import SystemConfig, exec_energy, offload_time
from .errors import CalibrationError, InvalidAction
from .simulator import DecisionContext


class VectorReward(NamedTuple):
    r_T: float      # seconds, <= 0
    r_E: float      # joules, <= 0


class Preference(NamedTuple):
    w_T: float
    w_E: float

    def validate(self) -> "Preference":
        if self.w_T < 0 or self.w_E < 0 or abs(self.w_T + self.w_E - 1.0) > 1e-9:
            raise ValueError(f"preference must be convex weights, got {self}")
        return self


class RewardScales(NamedTuple):
    """Magnitude-matching coefficients (1/seconds, 1/joules)."""
    a_T: float = 0.1
    a_E: float = 10.0


def energy_reward(ctx: DecisionContext, action: int, *,
                  offload_delay: float | None = None) -> float:
    """Negated total energy of offloading the pending task to ``action``."""
    _check_action(ctx, action)
    t_off = offload_time(ctx.size, ctx.rates[action]) if offload_delay is None \
        else offload_delay
    e_off = ctx.cfg.offload_power * t_off
    freq = ctx.cfg.cloud_freq if action == 0 else ctx.cfg.edge_freq
    e_exe = exec_energy(ctx.cfg, freq, ctx.size)
    return -(e_off + e_exe)


def baseline_residual_delay_sum(residuals_bits, freq: float, eta: float) -> float:
    """Sum of remaining completion delays of a pool absent new arrivals.

    With residuals sorted ascending and L_0 = 0 this is
    sum_i (eta/f) * (n-i+1)^2 * (L_i - L_{i-1}).
    """
    res = np.sort(np.asarray(residuals_bits, dtype=float))
    n = len(res)
    if n == 0:
        return 0.0
    gaps = np.diff(np.concatenate(([0.0], res)))
    weights = np.arange(n, 0, -1, dtype=float)
    return float(np.sum((eta / freq) * weights * weights * gaps))


def surviving_residuals(residuals_sorted: np.ndarray, secs_per_bit: float,
                        horizon: float) -> np.ndarray:
    """Pool residuals after ``horizon`` seconds of processor sharing.

    Piecewise-exact: within each inter-completion segment every live task
    depletes at the same rate, so all depletion amounts are equal.
    """
    res = np.asarray(residuals_sorted, dtype=float)
    n = len(res)
    depleted = 0.0
    elapsed = 0.0
    for i in range(n):
        alive = n - i
        seg = (res[i] - depleted) * alive * secs_per_bit
        if elapsed + seg >= horizon:
            depleted += (horizon - elapsed) / (alive * secs_per_bit)
            out = res[i:] - depleted
            return out[out > 0.0]
        elapsed += seg
        depleted = res[i]
    return res[:0]


def delay_reward(ctx: DecisionContext, action: int, *,
                 offload_delay: float | None = None) -> float:
    """Estimated marginal total delay (negated) of the chosen offload."""
    _check_action(ctx, action)
    t_off = offload_time(ctx.size, ctx.rates[action]) if offload_delay is None \
        else offload_delay
    freq = ctx.cfg.cloud_freq if action == 0 else ctx.cfg.edge_freq
    spb = ctx.cfg.cycles_per_bit / freq          # seconds per bit at full rate
    res = ctx.pools[action]
    n = len(res)

    if n == 0:
        # idle server: transit plus solo execution
        return -t_off - spb * ctx.size

    gaps = np.diff(np.concatenate(([0.0], res)))
    weights = np.arange(n, 0, -1, dtype=float)
    durs = spb * weights * gaps                  # inter-completion durations
    baseline = float(np.sum(weights * durs))     # pool drain time, undisturbed
    starts = np.concatenate(([0.0], np.cumsum(durs)[:-1]))
    overlap = np.minimum(durs, np.maximum(t_off - starts, 0.0))
    transit = float(np.sum(weights * overlap))   # pool delay spent during transit

    pool_after = surviving_residuals(res, spb, t_off)
    merged = np.sort(np.append(pool_after, ctx.size))
    m = len(merged)
    gaps2 = np.diff(np.concatenate(([0.0], merged)))
    w2 = np.arange(m, 0, -1, dtype=float)
    tail = float(np.sum(spb * w2 * w2 * gaps2))

    return -t_off + baseline - transit - tail


def vector_reward(ctx: DecisionContext, action: int) -> VectorReward:
    _check_action(ctx, action)
    t_off = offload_time(ctx.size, ctx.rates[action])
    return VectorReward(delay_reward(ctx, action, offload_delay=t_off),
                        energy_reward(ctx, action, offload_delay=t_off))


def scalarize(v, omega: Preference, scales: RewardScales) -> float:
    r_t, r_e = v
    return omega.w_T * scales.a_T * r_t + omega.w_E * scales.a_E * r_e


def _round_one_sig(x: float) -> float:
    exp = math.floor(math.log10(abs(x)))
    mant = round(x / 10.0 ** exp)
    if mant == 10:
        mant, exp = 1, exp + 1
    return mant * 10.0 ** exp


def calibrate_scales(cfg: SystemConfig, n_episodes: int, seed: int = 0) -> RewardScales:
    """Scales from the random baseline's mean reward magnitudes.

    alpha_i = 1 / mean|r_i| rounded to one significant figure, so the two
    scaled reward streams land in the same order of magnitude.
    """
    from .env import OffloadEnv          # local import: env depends on rewards
    from .baselines import RandomPolicy
    from .seeding import derive_rng

    if n_episodes < 1:
        raise CalibrationError("need at least one calibration episode")
    env = OffloadEnv(cfg, seed, stream="calibrate")
    policy = RandomPolicy(p_cloud=1.0 / cfg.num_servers)
    rng = derive_rng(seed, "calibrate", "actions")
    sums = np.zeros(2)
    count = 0
    for k in range(n_episodes):
        obs = env.reset(k)
        done = False
        while not done:
            action = policy.select(obs, env.context, rng)
            obs, rew, done, _ = env.step(action)
            sums += np.abs(rew)
            count += 1
    means = sums / count
    if np.any(means <= 0):
        raise CalibrationError(f"degenerate reward stream, mean magnitudes {means}")
    return RewardScales(_round_one_sig(1.0 / means[0]), _round_one_sig(1.0 / means[1]))


def _check_action(ctx: DecisionContext, action: int) -> None:
    if not 0 <= action < ctx.num_servers:
        raise InvalidAction(f"server {action} outside 0..{ctx.num_servers - 1}")
