"""MOMDP episode loop over the simulator.

One decision per step: at each step boundary the clock advances, the
Poisson batch joins the FIFO queue (a forced arrival keeps the queue
non-empty so task index always equals step index), fresh fades are drawn
for the head task, and the agent picks a server. Rewards are the
(delay, energy) vector; scalarization happens in the trainer.

After the last step no new tasks arrive; the episode keeps running until
every dispatched task completes, so episode totals are exact.
"""

from __future__ import annotations

import numpy as np

from .config import SystemConfig
from .errors import ContractViolation
from .observation import encode_normalized
from .rewards import vector_reward
from .seeding import derive_rng
from .simulator import (EpisodeState, TaskRecord, advance_to, episode_totals,
                        init_episode, offload_task)


class OffloadEnv:
    """Vector-reward episode interface used by training and evaluation."""

    def __init__(self, cfg: SystemConfig, seed: int, stream: str = "train",
                 trace: bool = False):
        self.cfg = cfg
        self.seed = int(seed)
        self.stream = stream
        self.trace = trace
        self.state: EpisodeState | None = None
        self._pending: TaskRecord | None = None
        self._ctx = None

    @property
    def num_actions(self) -> int:
        return self.cfg.num_servers

    @property
    def context(self):
        """DecisionContext of the pending task; None when the episode is done."""
        return self._ctx

    def reset(self, episode_index: int) -> np.ndarray:
        rngs = {name: derive_rng(self.seed, self.stream, "episode",
                                 episode_index, name)
                for name in ("geometry", "arrivals", "fades", "forced")}
        self.state = init_episode(self.cfg, rngs, trace=self.trace)
        self._begin_step()
        return encode_normalized(self._ctx)

    def _begin_step(self) -> None:
        state = self.state
        boundary = state.step_index * self.cfg.step_duration
        advance_to(state, boundary)
        if state.trace is not None:
            state.trace.append((boundary, "step", state.step_index, -1))
        state.spawn_step_arrivals()
        if not state.queue:
            state.force_arrival()
        self._pending = state.queue[0]
        state.draw_rates(self._pending)
        self._ctx = state.decision_context(self._pending)

    def step(self, action: int):
        if self._pending is None:
            raise ContractViolation("episode already finished")
        ctx = self._ctx
        rew = vector_reward(ctx, int(action))
        task = offload_task(self.state, self._pending, int(action))
        info = {
            "task_id": task.id,
            "offload_delay": task.offload_delay,
            "offload_energy": task.offload_energy,
            "forced_arrivals": self.state.forced_arrivals,
            "transit_overlap": self.state.transit_overlap,
        }
        self.state.step_index += 1
        if self.state.step_index >= self.cfg.steps_per_episode:
            advance_to(self.state, None)     # run to completion, no new arrivals
            self._pending = None
            self._ctx = None
            return None, rew, True, info
        self._begin_step()
        return encode_normalized(self._ctx), rew, False, info

    def episode_totals(self) -> tuple[float, float]:
        return episode_totals(self.state)


def run_episode(env: OffloadEnv, policy, episode_index: int, rng) -> dict:
    """Play one full episode; returns rewards, totals and deviation flags."""
    obs = env.reset(episode_index)
    rewards = []
    done = False
    while not done:
        action = policy.select(obs, env.context, rng)
        obs, rew, done, info = env.step(action)
        rewards.append(rew)
    total_t, total_e = env.episode_totals()
    return {
        "rewards": np.array(rewards),
        "total_delay": total_t,
        "total_energy": total_e,
        "forced_arrivals": info["forced_arrivals"],
        "transit_overlap": info["transit_overlap"],
    }
