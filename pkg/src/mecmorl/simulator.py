"""Event-driven edge/cloud offloading simulator.

Execution on every server is pure processor sharing: the n pooled tasks
each receive f/(n*eta) bits/s of service. Residual depletion between
events is handled in closed form through a cumulative per-task service
level, so completion instants are exact (no time-stepping).

Time convention at a single instant: completions are processed before
arrivals, so a task whose transit ends exactly when another finishes does
not share with it for a zero-length interval.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig, exec_energy, offload_time
from .errors import ContractViolation, InvalidAction
from .seeding import derive_rng


@dataclass
class TaskRecord:
    """One offloadable task and its realized timing/energy figures."""

    id: int
    user: int
    size: float                      # bits
    dispatch_instant: float = math.nan
    server: int = -1                 # -1 while queued
    offload_delay: float = math.nan
    server_arrival_instant: float = math.nan
    completion_instant: float = math.nan
    exec_delay: float = math.nan
    offload_energy: float = math.nan
    exec_energy: float = math.nan
    rate: float = math.nan           # drawn uplink rate actually used

    @property
    def dispatched(self) -> bool:
        return self.server >= 0

    @property
    def completed(self) -> bool:
        return not math.isnan(self.completion_instant)

    @property
    def total_delay(self) -> float:
        return self.offload_delay + self.exec_delay

    @property
    def total_energy(self) -> float:
        return self.offload_energy + self.exec_energy


@dataclass
class ServerState:
    """Processor-sharing pool of one server.

    ``service`` is the cumulative per-task service in bits since episode
    start; a task inserted at level S with size L completes exactly when
    the level reaches S + L, which makes completion boundaries exact.
    """

    id: int
    freq: float
    eta: float
    clock: float = 0.0
    service: float = 0.0
    pool: list = field(default_factory=list)      # heap of (target_level, task_id)
    arrivals: list = field(default_factory=list)  # heap of (time, task_id, size)

    @property
    def n_exec(self) -> int:
        return len(self.pool)

    def residuals(self) -> np.ndarray:
        """Sorted residual sizes (bits) of the executing tasks."""
        return np.sort(np.array([c - self.service for c, _ in self.pool]))

    def residual_of(self, task_id: int) -> float:
        for c, tid in self.pool:
            if tid == task_id:
                return c - self.service
        raise KeyError(task_id)

    def schedule_arrival(self, when: float, task_id: int, size: float) -> None:
        heapq.heappush(self.arrivals, (when, task_id, size))

    def next_completion(self) -> float:
        if not self.pool:
            return math.inf
        gap = self.pool[0][0] - self.service
        return self.clock + gap * len(self.pool) * self.eta / self.freq

    def advance(self, target: float, sink) -> None:
        """Play arrivals and completions forward to ``target`` (may be inf)."""
        while True:
            t_comp = self.next_completion()
            t_arr = self.arrivals[0][0] if self.arrivals else math.inf
            t_event = min(t_comp, t_arr)
            if t_event > target or t_event == math.inf:
                if self.pool and math.isfinite(target) and target > self.clock:
                    self.service += (target - self.clock) * self.freq / (len(self.pool) * self.eta)
                if math.isfinite(target):
                    self.clock = target
                return
            if self.pool and t_event > self.clock:
                if t_event == t_comp:
                    self.service = self.pool[0][0]   # land exactly on the boundary
                else:
                    self.service += (t_event - self.clock) * self.freq / (len(self.pool) * self.eta)
            self.clock = t_event
            while self.pool and self.pool[0][0] <= self.service:
                _, tid = heapq.heappop(self.pool)
                sink.complete(tid, self.id, self.clock)
            while self.arrivals and self.arrivals[0][0] <= self.clock:
                _, tid, size = heapq.heappop(self.arrivals)
                heapq.heappush(self.pool, (self.service + size, tid))
                sink.arrive(tid, self.id, self.clock)


@dataclass(frozen=True)
class DecisionContext:
    """Snapshot handed to the observation encoder, reward model and
    baseline schedulers when one task awaits an offloading decision.

    ``pools`` holds each server's sorted residual sizes at the decision
    instant; tasks still in wireless transit are not part of any pool.
    """

    cfg: SystemConfig
    task_id: int
    user: int
    size: float
    rates: np.ndarray                # (E+1,) bits/s for this task's user
    pools: tuple                     # (E+1,) sorted residual arrays, bits
    clock: float

    @property
    def num_servers(self) -> int:
        return self.cfg.num_servers

    def freqs(self) -> np.ndarray:
        return self.cfg.server_freqs()


class EpisodeState:
    """Mutable state of one episode: clock, servers, FIFO queue, records."""

    def __init__(self, cfg: SystemConfig, geometry: np.ndarray, rngs: dict,
                 trace: bool = False):
        self.cfg = cfg
        self.clock = 0.0
        self.servers = [ServerState(e, f, cfg.cycles_per_bit)
                        for e, f in enumerate(cfg.server_freqs())]
        self.geometry = geometry                 # (U, E+1) distances, meters
        self.rngs = rngs
        self.queue: deque[TaskRecord] = deque()
        self.tasks: dict[int, TaskRecord] = {}
        self.dispatched: list[TaskRecord] = []
        self.pending_rates: np.ndarray | None = None
        self.forced_arrivals = 0
        self.transit_overlap = False             # offload hit a server with a task in transit
        self.step_index = 0
        self._next_id = 0
        self.trace: list | None = [] if trace else None

    # -- event sink callbacks -------------------------------------------------
    def complete(self, task_id: int, server: int, when: float) -> None:
        rec = self.tasks[task_id]
        rec.completion_instant = when
        rec.exec_delay = when - rec.server_arrival_instant
        if self.trace is not None:
            self.trace.append((when, "completion", task_id, server))

    def arrive(self, task_id: int, server: int, when: float) -> None:
        if self.trace is not None:
            self.trace.append((when, "arrival", task_id, server))

    # -- task generation -------------------------------------------------------
    def _new_task(self, rng) -> TaskRecord:
        user = int(rng.integers(self.cfg.num_users))
        size = max(1.0, rng.exponential(self.cfg.mean_task_size_bits()))
        rec = TaskRecord(id=self._next_id, user=user, size=size)
        self._next_id += 1
        self.tasks[rec.id] = rec
        return rec

    def spawn_step_arrivals(self) -> int:
        """Poisson task batch at the current step boundary."""
        rng = self.rngs["arrivals"]
        count = int(rng.poisson(self.cfg.poisson_rate * self.cfg.num_users))
        for _ in range(count):
            self.queue.append(self._new_task(rng))
        return count

    def force_arrival(self) -> None:
        """Keep one task dispatchable per step when the queue runs dry."""
        self.queue.append(self._new_task(self.rngs["forced"]))
        self.forced_arrivals += 1

    def draw_rates(self, task: TaskRecord) -> np.ndarray:
        """Fresh Rayleigh fade per server for the pending task."""
        cfg = self.cfg
        fades = self.rngs["fades"].standard_exponential(cfg.num_servers)
        dists = self.geometry[task.user]
        gain = dists ** (-cfg.pathloss_exponent) * fades
        rates = cfg.bandwidth * np.log2(1.0 + cfg.offload_power * gain / cfg.noise_power)
        self.pending_rates = rates
        return rates

    def decision_context(self, task: TaskRecord) -> DecisionContext:
        if self.pending_rates is None:
            raise ContractViolation("rates not drawn for the pending task")
        return DecisionContext(
            cfg=self.cfg, task_id=task.id, user=task.user, size=task.size,
            rates=self.pending_rates.copy(),
            pools=tuple(s.residuals() for s in self.servers),
            clock=self.clock)

    def all_dispatched_complete(self) -> bool:
        return all(t.completed for t in self.dispatched)


def achievable_rate(cfg: SystemConfig, distance: float, fade_gain: float) -> float:
    """Shannon rate of the uplink at the given distance and fade power."""
    gain = distance ** (-cfg.pathloss_exponent) * fade_gain
    return float(cfg.bandwidth * np.log2(1.0 + cfg.offload_power * gain / cfg.noise_power))


def init_episode(cfg: SystemConfig, seed, trace: bool = False) -> EpisodeState:
    """Fresh episode: empty servers, empty queue, per-episode geometry.

    Each user-to-server distance is drawn uniformly from that server's
    coverage range, so cloud distances always land inside the configured
    cloud range. ``seed`` is an int or a dict of named Generators.
    """
    if isinstance(seed, dict):
        rngs = seed
    else:
        rngs = {name: derive_rng(int(seed), "episode", name)
                for name in ("geometry", "arrivals", "fades", "forced")}
    geo = np.empty((cfg.num_users, cfg.num_servers))
    for e in range(cfg.num_servers):
        lo, hi = cfg.cloud_radius_range if e == 0 else cfg.edge_radius_range
        geo[:, e] = rngs["geometry"].uniform(lo, hi, size=cfg.num_users)
    return EpisodeState(cfg, geo, rngs, trace=trace)


def offload_task(state: EpisodeState, task: TaskRecord, server: int) -> TaskRecord:
    """Dispatch the FIFO head to ``server`` using the pre-drawn rate."""
    if not state.queue or state.queue[0].id != task.id:
        raise ContractViolation("only the FIFO head task may be offloaded")
    if not 0 <= server < state.cfg.num_servers:
        raise InvalidAction(f"server {server} outside 0..{state.cfg.num_edge_servers}")
    if state.pending_rates is None:
        raise ContractViolation("rates not drawn for the pending task")
    state.queue.popleft()
    rate = float(state.pending_rates[server])
    task.rate = rate
    task.server = server
    task.dispatch_instant = state.clock
    task.offload_delay = offload_time(task.size, rate)
    task.server_arrival_instant = state.clock + task.offload_delay
    task.offload_energy = state.cfg.offload_power * task.offload_delay
    task.exec_energy = exec_energy(state.cfg, state.servers[server].freq, task.size)
    if state.servers[server].arrivals:
        state.transit_overlap = True
    state.servers[server].schedule_arrival(task.server_arrival_instant, task.id, task.size)
    state.dispatched.append(task)
    state.pending_rates = None
    if state.trace is not None:
        state.trace.append((state.clock, "offload", task.id, server))
    return task


def advance_to(state: EpisodeState, target: float | None) -> EpisodeState:
    """Advance the episode clock, playing all events in time order.

    ``target=None`` drains every pending arrival and pooled task.
    """
    goal = math.inf if target is None else float(target)
    if goal < state.clock:
        raise ContractViolation("cannot advance backwards in time")
    for server in state.servers:
        server.advance(goal, state)
    if target is None:
        state.clock = max([state.clock] + [s.clock for s in state.servers])
        for server in state.servers:
            server.clock = state.clock
    else:
        state.clock = goal
    return state


def episode_totals(state: EpisodeState) -> tuple[float, float]:
    """(total delay, total energy) over all dispatched tasks."""
    if not state.all_dispatched_complete():
        raise ContractViolation("episode still has unfinished tasks")
    total_t = 0.0
    total_e = 0.0
    for task in state.dispatched:
        total_t += task.offload_delay + task.exec_delay
        total_e += task.offload_energy + task.exec_energy
    return total_t, total_e


def sorted_trace(state: EpisodeState) -> list:
    if state.trace is None:
        raise ContractViolation("episode was created without trace recording")
    kind_order = {"step": 0, "offload": 1, "completion": 2, "arrival": 3}
    return sorted(state.trace, key=lambda ev: (ev[0], kind_order[ev[1]], ev[2]))
