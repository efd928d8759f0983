"""Acceptance gate: every criterion at its stated tolerance, one printed
pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as the
criteria finish. Criteria 8-10 train policies and carry the stated
wall-clock budgets (minutes, not seconds); deselect them during quick
iterations with ``-m "not slow"``.
"""

import heapq
import math
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.stats import spearmanr, t as student_t

from mecmorl.baselines import RandomPolicy, random_front
from mecmorl.config import SystemConfig, balanced_mean_task_size, smoke_config
from mecmorl.env import OffloadEnv, run_episode
from mecmorl.network import PolicyValueNet
from mecmorl.pareto import (PerformancePoint, compare_fronts, dominates,
                            evaluate_policy, hypervolume, pareto_filter)
from mecmorl.rewards import (Preference, RewardScales,
                             baseline_residual_delay_sum, delay_reward,
                             scalarize)
from mecmorl.seeding import derive_rng
from mecmorl.simulator import DecisionContext, ServerState
from mecmorl.training import (NetPolicy, TrainConfig, compute_gae,
                              sweep_preferences, train_preference)

SEED = 42


@contextmanager
def criterion(num: int, title: str):
    try:
        yield
    except BaseException:
        print(f"\nCRITERION {num:2d} [{title}]: FAIL")
        raise
    print(f"\nCRITERION {num:2d} [{title}]: PASS")


# --------------------------------------------------------------------------
# shared event-driven oracle pieces (same as the unit suites, kept local so
# the acceptance module stands alone)

class _Log:
    def __init__(self):
        self.done = {}

    def complete(self, tid, sid, when):
        self.done[tid] = when

    def arrive(self, tid, sid, when):
        pass


def drain_server(freq, eta, residuals, arrival=None):
    server = ServerState(0, freq, eta)
    for i, res in enumerate(residuals):
        heapq.heappush(server.pool, (float(res), i))
    if arrival is not None:
        server.schedule_arrival(arrival[0], len(residuals), arrival[1])
    log = _Log()
    server.advance(math.inf, log)
    return log.done


def oracle_delay_increase(freq, eta, residuals, new_size, t_off):
    base = drain_server(freq, eta, residuals)
    with_new = drain_server(freq, eta, residuals, arrival=(t_off, new_size))
    total = with_new.pop(len(residuals))
    for tid, when in with_new.items():
        total += when - base[tid]
    return -total


# ------------------------------------------------------------ criterion 1

def test_criterion_1_balance_identity():
    with criterion(1, "balanced task size = 20 Mbits"):
        cfg = SystemConfig()          # Table-1 constants, E = 8
        assert balanced_mean_task_size(cfg) == 20e6


# ------------------------------------------------------------ criterion 2

def test_criterion_2_reward_oracle_equivalence():
    with criterion(2, "delay reward vs event-driven oracle"):
        rng = np.random.default_rng(SEED)
        cfg = SystemConfig(num_edge_servers=1)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(0, 21))
            residuals = rng.uniform(1e3, 100e6, size=n)
            size = float(rng.uniform(1e3, 80e6))
            t_off = float(rng.uniform(0.0, cfg.step_duration * 0.999))
            action = int(rng.integers(0, 2))
            freq = cfg.cloud_freq if action == 0 else cfg.edge_freq
            pools = [np.array([]), np.array([])]
            pools[action] = np.sort(residuals)
            ctx = DecisionContext(cfg=cfg, task_id=0, user=0, size=size,
                                  rates=np.array([1e7, 1e7]),
                                  pools=tuple(pools), clock=0.0)
            got = delay_reward(ctx, action, offload_delay=t_off)
            want = oracle_delay_increase(freq, cfg.cycles_per_bit, residuals,
                                         size, t_off)
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
        assert worst < 1e-9, f"worst relative error {worst}"

        for _ in range(300):
            n = int(rng.integers(1, 21))
            residuals = rng.uniform(1e3, 100e6, size=n)
            freq = float(rng.choice([2e9, 4e9]))
            done = drain_server(freq, 1e3, residuals)
            closed = baseline_residual_delay_sum(residuals, freq, 1e3)
            # float-exact up to summation order of the identical terms
            assert closed == pytest.approx(sum(done.values()), rel=1e-12)


# ------------------------------------------------------------ criterion 3

def test_criterion_3_telescoping_identities():
    with criterion(3, "episode reward sums telescope to totals"):
        cfg = smoke_config()
        env = OffloadEnv(cfg, SEED, stream="accept-telescope")
        rng = derive_rng(SEED, "accept-telescope-actions")
        policy = RandomPolicy(p_cloud=1.0 / cfg.num_servers)
        clean = 0
        attempts = 0
        while clean < 100 and attempts < 3000:
            out = run_episode(env, policy, attempts, rng)
            attempts += 1
            if out["transit_overlap"]:
                continue
            clean += 1
            seq_re = sum(float(x) for x in out["rewards"][:, 1])
            assert seq_re == -out["total_energy"]
            sum_rt = out["rewards"][:, 0].sum()
            assert sum_rt == pytest.approx(-out["total_delay"], rel=1e-6)
        assert clean == 100, f"only {clean} overlap-free episodes in {attempts}"


# ------------------------------------------------------------ criterion 4

def test_criterion_4_hypervolume_correctness():
    with criterion(4, "hypervolume sweep vs Monte Carlo and worked example"):
        front = [PerformancePoint(2, 8), PerformancePoint(5, 5),
                 PerformancePoint(8, 2)]
        assert hypervolume(front, PerformancePoint(10, 10)) == 37.0

        rng = np.random.default_rng(SEED)
        for trial in range(20):
            pts = [PerformancePoint(x, y)
                   for x, y in rng.uniform(0, 80, size=(12, 2))]
            ref = PerformancePoint(100.0, 100.0)
            exact = hypervolume(pts, ref)
            n = 10_000_000
            sub = pareto_filter(pts)
            coords = np.array([p.coords() for p in sub])
            lo = coords.min(axis=0)
            mc_rng = np.random.default_rng(1000 + trial)
            xs = mc_rng.uniform(lo[0], ref.y_T, size=n)
            ys = mc_rng.uniform(lo[1], ref.y_E, size=n)
            covered = np.zeros(n, dtype=bool)
            for x, y in coords:
                covered |= (xs >= x) & (ys >= y)
            approx = covered.mean() * (ref.y_T - lo[0]) * (ref.y_E - lo[1])
            assert abs(approx - exact) / exact < 0.01


# ------------------------------------------------------------ criterion 5

def test_criterion_5_pareto_filter_oracle():
    with criterion(5, "pareto filter vs all-pairs oracle"):
        rng = np.random.default_rng(SEED)
        for trial in range(100):
            pts = [PerformancePoint(x, y)
                   for x, y in rng.uniform(0, 1000, size=(200, 2))]
            fast = {p.coords() for p in pareto_filter(pts)}
            slow = {p.coords() for p in pts
                    if not any(dominates(q, p) for q in pts)}
            assert fast == slow


# ------------------------------------------------------------ criterion 6

def test_criterion_6_gae_brute_force():
    with criterion(6, "GAE vs double-sum oracle"):
        rng = np.random.default_rng(SEED)
        for trial in range(50):
            T = int(rng.integers(1, 101))
            rewards = rng.normal(scale=5.0, size=T)
            values = rng.normal(scale=3.0, size=T)
            gamma = float(rng.uniform(0.5, 0.999))
            lam = float(rng.uniform(0.0, 1.0))
            alpha = float(rng.uniform(0.05, 2.0))
            got = compute_gae(rewards, values, [(0, T)], gamma, lam, alpha)
            deltas = [alpha * rewards[k]
                      + gamma * (values[k + 1] if k + 1 < T else 0.0)
                      - values[k] for k in range(T)]
            want = np.array([sum((gamma * lam) ** (k - s) * deltas[k]
                                 for k in range(s, T)) for s in range(T)])
            assert np.max(np.abs(got - want)) <= 1e-10


# ------------------------------------------------------------ criterion 7

def test_criterion_7_gradient_check():
    with criterion(7, "analytic gradient vs central differences"):
        from mecmorl.training import ppo_loss_fn

        for seed in range(5):
            rng = np.random.default_rng(2000 + seed)
            net = PolicyValueNet(num_servers=int(rng.integers(2, 4)),
                                 feature_dim=int(rng.integers(6, 12)),
                                 encoder_width=int(rng.integers(4, 9)),
                                 trunk_width=int(rng.integers(8, 17)),
                                 num_blocks=int(rng.integers(1, 3)))
            theta = net.init_params(seed) + 0.2 * rng.normal(size=net.n_params)
            batch = int(rng.integers(3, 9))
            obs = rng.normal(size=(batch, net.num_servers, net.feature_dim))
            actions = rng.integers(0, net.num_servers, size=batch)
            old_lp = np.log(np.full(batch, 1.0 / net.num_servers)) \
                + rng.normal(0, 0.1, batch)
            w = float(rng.uniform(0.2, 0.8))
            full = ppo_loss_fn(actions, old_lp, rng.normal(size=batch),
                               rng.normal(size=(batch, 2)),
                               Preference(w, 1 - w), 0.2, 0.5, 0.01)
            loss_fn = lambda lo, va: full(lo, va)[:3]
            _, grad = net.gradient(theta, loss_fn, obs)
            eps = 1e-6
            idx = rng.choice(net.n_params, size=120, replace=False)
            for i in idx:
                if abs(grad[i]) <= 1e-6:
                    continue
                tp = theta.copy()
                tp[i] += eps
                tm = theta.copy()
                tm[i] -= eps
                cp = net.forward(tp, obs)
                cm = net.forward(tm, obs)
                fd = (loss_fn(cp.logits, cp.values)[0]
                      - loss_fn(cm.logits, cm.values)[0]) / (2 * eps)
                rel = abs(fd - grad[i]) / abs(grad[i])
                assert rel < 1e-4, f"seed {seed} param {i}: rel err {rel}"


# --------------------------------------------------- criteria 8-10 (slow)

SMOKE_TCFG = TrainConfig(batch_size=512, learning_rate=1e-3,
                         entropy_coef=0.003)


def episode_return(out, omega, scales):
    return scalarize((out["rewards"][:, 0].sum(), out["rewards"][:, 1].sum()),
                     omega, scales)


@pytest.mark.slow
def test_criterion_8_training_smoke():
    with criterion(8, "trained policy beats random, 95% confidence"):
        cfg = smoke_config()
        omega = Preference(0.5, 0.5)
        scales = RewardScales()
        net = PolicyValueNet(cfg.num_servers, 5 + cfg.histogram_bins)
        tcfg = TrainConfig(batch_size=SMOKE_TCFG.batch_size,
                           learning_rate=SMOKE_TCFG.learning_rate,
                           entropy_coef=SMOKE_TCFG.entropy_coef,
                           episodes=20000)
        profile = train_preference(net, net.init_params(SEED), cfg, omega,
                                   scales, tcfg, seed=SEED, stream="accept-c8")

        trained_policy = NetPolicy(net, profile.theta, sampled=True)
        random_policy = RandomPolicy(p_cloud=1.0 / cfg.num_servers)
        env = OffloadEnv(cfg, SEED, stream="accept-c8-eval")
        diffs = np.empty(200)
        for k in range(200):
            a = run_episode(env, trained_policy, k,
                            derive_rng(SEED, "c8-eval-trained", k))
            b = run_episode(env, random_policy, k,
                            derive_rng(SEED, "c8-eval-random", k))
            diffs[k] = (episode_return(a, omega, scales)
                        - episode_return(b, omega, scales))
        mean = diffs.mean()
        stderr = diffs.std(ddof=1) / np.sqrt(len(diffs))
        t_stat = mean / stderr
        threshold = student_t.ppf(0.95, df=len(diffs) - 1)
        print(f"\n  paired diff {mean:.2f} +- {stderr:.2f} (t={t_stat:.1f}, "
              f"need > {threshold:.2f})")
        assert t_stat > threshold


@pytest.fixture(scope="module")
def smoke_sweep():
    """5-preference warm-started sweep shared by criteria 9 and 10.

    Scales come from the random-baseline calibration so both objectives
    land in the same magnitude range; with the shipped defaults the
    delay-heavy preferences barely trade and cluster inside eval noise.
    """
    from mecmorl.rewards import calibrate_scales

    cfg = smoke_config()
    scales = calibrate_scales(cfg, n_episodes=30, seed=SEED)
    net = PolicyValueNet(cfg.num_servers, 5 + cfg.histogram_bins)
    tcfg = TrainConfig(batch_size=SMOKE_TCFG.batch_size,
                       learning_rate=SMOKE_TCFG.learning_rate,
                       entropy_coef=0.01,
                       episodes=14000, warm_start_episodes=4000)
    grid = [(w, 1.0 - w) for w in (0.0, 0.25, 0.5, 0.75, 1.0)]
    profiles = sweep_preferences(net, cfg, grid, scales, tcfg, seed=SEED,
                                 init_seed=SEED)
    assert all(p.error is None for p in profiles)
    points = []
    for p in profiles:
        points.append(evaluate_policy(
            NetPolicy(net, p.theta, sampled=True), cfg, n_episodes=500,
            seed=SEED, label=f"morl wT={p.omega.w_T:g}", omega_T=p.omega.w_T))
    return cfg, profiles, points


@pytest.mark.slow
def test_criterion_9_directional_hypervolume(smoke_sweep):
    with criterion(9, "MORL front hypervolume beats random p-grid front"):
        cfg, profiles, morl_points = smoke_sweep
        _, rand_front = random_front([0.0, 0.25, 0.5, 0.75, 1.0], cfg,
                                     n_episodes=500, seed=SEED)
        cmp = compare_fronts({"morl": pareto_filter(morl_points),
                              "random": rand_front})
        hv_morl = cmp.hypervolumes["morl"]
        hv_rand = cmp.hypervolumes["random"]
        print(f"\n  hypervolume morl {hv_morl:.6g} vs random {hv_rand:.6g} "
              f"(ref {cmp.reference.coords()})")
        assert hv_morl > hv_rand


@pytest.mark.slow
def test_criterion_10_preference_trend(smoke_sweep):
    with criterion(10, "delay falls and energy rises with delay weight"):
        cfg, profiles, morl_points = smoke_sweep
        weights = [p.omega.w_T for p in profiles]
        delays = [pt.y_T for pt in morl_points]
        energies = [pt.y_E for pt in morl_points]
        rho_t, p_t = spearmanr(weights, delays)
        rho_e, p_e = spearmanr(weights, energies)
        print(f"\n  spearman delay rho={rho_t:.3f} (p={p_t:.4f}), "
              f"energy rho={rho_e:.3f} (p={p_e:.4f})")
        assert rho_t < 0 and p_t < 0.05
        assert rho_e > 0 and p_e < 0.05
