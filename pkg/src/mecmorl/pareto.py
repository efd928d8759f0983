"""Performance points, Pareto filtering and 2-D hypervolume.

Cost orientation throughout: both coordinates are totals (seconds,
joules), so smaller is better and a point dominates another when it is
component-wise <= with at least one strict inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import OffloadEnv, run_episode
from .seeding import derive_rng


@dataclass(frozen=True)
class PerformancePoint:
    """Mean episode totals of one policy."""

    y_T: float                    # seconds, lower better
    y_E: float                    # joules, lower better
    stderr_T: float = 0.0
    stderr_E: float = 0.0
    n_episodes: int = 1
    label: str = ""
    omega_T: float = math.nan

    def coords(self) -> tuple[float, float]:
        return (self.y_T, self.y_E)


def evaluate_policy(policy, cfg, n_episodes: int = 1000, seed: int = 0,
                    label: str = "", omega_T: float = math.nan,
                    stream: str = "eval") -> PerformancePoint:
    """Mean episode totals of a policy over seeded evaluation episodes."""
    env = OffloadEnv(cfg, seed, stream=stream)
    delays = np.empty(n_episodes)
    energies = np.empty(n_episodes)
    for k in range(n_episodes):
        rng = derive_rng(seed, stream, "actions", k)
        out = run_episode(env, policy, k, rng)
        delays[k] = out["total_delay"]
        energies[k] = out["total_energy"]
    se_t = float(delays.std(ddof=1) / math.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    se_e = float(energies.std(ddof=1) / math.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    return PerformancePoint(float(delays.mean()), float(energies.mean()),
                            se_t, se_e, n_episodes, label, omega_T)


def dominates(a: PerformancePoint, b: PerformancePoint) -> bool:
    """a is at least as good in both objectives and strictly better in one."""
    return (a.y_T <= b.y_T and a.y_E <= b.y_E
            and (a.y_T < b.y_T or a.y_E < b.y_E))


def pareto_filter(points) -> list[PerformancePoint]:
    """Undominated subset, sorted by delay ascending; duplicates retained."""
    points = list(points)
    front = [p for p in points if not any(dominates(q, p) for q in points)]
    return sorted(front, key=lambda p: (p.y_T, p.y_E))


def hypervolume(points, ref: PerformancePoint) -> float:
    """Area dominated by the front and bounded by the reference corner.

    Points that do not dominate the reference contribute nothing. Computed
    by the sorted sweep over the deduplicated undominated set.
    """
    inside = [p for p in points if p.y_T <= ref.y_T and p.y_E <= ref.y_E]
    front = pareto_filter(inside)
    coords = sorted({(p.y_T, p.y_E) for p in front})
    area = 0.0
    for i, (x, y) in enumerate(coords):
        next_x = coords[i + 1][0] if i + 1 < len(coords) else ref.y_T
        area += (next_x - x) * (ref.y_E - y)
    return area


def shared_reference(point_sets) -> PerformancePoint:
    """Component-wise maximum corner over every scheme's points."""
    all_points = [p for points in point_sets for p in points]
    if not all_points:
        raise ValueError("no points to build a reference from")
    return PerformancePoint(max(p.y_T for p in all_points),
                            max(p.y_E for p in all_points), label="reference")


@dataclass
class FrontComparison:
    reference: PerformancePoint
    hypervolumes: dict
    gains: dict = field(default_factory=dict)   # (a, b) -> (hv_a - hv_b) / hv_b


def compare_fronts(fronts_by_scheme: dict) -> FrontComparison:
    """Hypervolume table under a shared max-corner reference."""
    ref = shared_reference(fronts_by_scheme.values())
    hvs = {scheme: hypervolume(points, ref)
           for scheme, points in fronts_by_scheme.items()}
    gains = {}
    for a, hv_a in hvs.items():
        for b, hv_b in hvs.items():
            if a != b and hv_b > 0:
                gains[(a, b)] = (hv_a - hv_b) / hv_b
    return FrontComparison(reference=ref, hypervolumes=hvs, gains=gains)
