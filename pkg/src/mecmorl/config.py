"""System configuration: physical constants, validation, file parsing.

The config file format is flat ``key = value`` text, one key per line,
``#`` comments allowed. Keys mirror the SystemConfig field names exactly;
unknown keys are rejected. Any key can be overridden through an
environment variable ``MECMORL_<KEY_IN_UPPER_CASE>``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError

ENV_PREFIX = "MECMORL_"
BALANCED = "balanced"


@dataclass(frozen=True)
class SystemConfig:
    """Parameters of the edge/cloud offloading system.

    Units are SI throughout: bits, seconds, hertz, watts, joules.
    ``mean_task_size`` is either bits or the string ``"balanced"``, in
    which case the mean is derived so that per-step computing capacity
    equals per-step task demand.
    """

    num_edge_servers: int = 8
    num_users: int = 10
    steps_per_episode: int = 100
    step_duration: float = 1.0
    poisson_rate: float = 0.1           # tasks per step per user
    mean_task_size: float | str = BALANCED
    bandwidth: float = 16.6e6
    offload_power: float = 10e-3
    cycles_per_bit: float = 1e3
    capacitance: float = 5e-31
    cloud_freq: float = 4.0e9
    edge_freq: float = 2.0e9
    noise_power: float = 1e-13
    pathloss_exponent: float = 3.0
    cloud_radius_range: tuple[float, float] = (1000.0, 2000.0)
    edge_radius_range: tuple[float, float] = (50.0, 500.0)
    histogram_bins: int = 50
    rng_seed: int = 0

    @property
    def num_servers(self) -> int:
        return self.num_edge_servers + 1

    def server_freqs(self) -> np.ndarray:
        """CPU frequencies indexed by server id; index 0 is the cloud."""
        return np.array([self.cloud_freq] + [self.edge_freq] * self.num_edge_servers)

    def mean_task_size_bits(self) -> float:
        if self.mean_task_size == BALANCED:
            return balanced_mean_task_size(self)
        return float(self.mean_task_size)

    def validate(self) -> "SystemConfig":
        if self.num_edge_servers < 1:
            raise ConfigError("num_edge_servers must be >= 1")
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        if self.steps_per_episode < 1:
            raise ConfigError("steps_per_episode must be >= 1")
        if self.step_duration <= 0:
            raise ConfigError("step_duration must be > 0")
        if self.bandwidth <= 0:
            raise ConfigError("bandwidth must be > 0")
        if self.noise_power <= 0:
            raise ConfigError("noise_power must be > 0")
        if not self.edge_freq > 0:
            raise ConfigError("edge_freq must be > 0")
        if self.cloud_freq < self.edge_freq:
            raise ConfigError("cloud_freq must be >= edge_freq")
        if self.histogram_bins < 2:
            raise ConfigError("histogram_bins must be >= 2")
        if self.poisson_rate < 0:
            raise ConfigError("poisson_rate must be >= 0")
        for name in ("offload_power", "cycles_per_bit", "capacitance"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("cloud_radius_range", "edge_radius_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi")
        if self.mean_task_size != BALANCED:
            if not (isinstance(self.mean_task_size, (int, float))
                    and self.mean_task_size > 0):
                raise ConfigError("mean_task_size must be positive or 'balanced'")
        elif self.poisson_rate * self.num_users <= 0:
            raise ConfigError("balanced mean task size needs a positive arrival rate")
        return self


def balanced_mean_task_size(cfg: SystemConfig) -> float:
    """Mean task size (bits) at which per-step capacity equals demand.

    Solves step_duration * sum_e(f_e / eta) = rate * mean_size * users
    for the mean size.
    """
    arrival = cfg.poisson_rate * cfg.num_users
    if arrival <= 0:
        raise ConfigError("zero arrival rate: balanced task size undefined")
    capacity = float(np.sum(cfg.server_freqs())) / cfg.cycles_per_bit
    return cfg.step_duration * capacity / arrival


def exec_energy(cfg: SystemConfig, freq: float, size_bits: float) -> float:
    """Execution energy of one task on a server of the given frequency.

    Independent of contention: kappa * eta * f^2 * L.
    """
    return cfg.capacitance * cfg.cycles_per_bit * freq * freq * size_bits


def offload_time(size_bits: float, rate: float) -> float:
    """Wireless transit time of a task at the drawn rate."""
    return size_bits / rate


# ---------------------------------------------------------------------------
# config file parsing

_RANGE_FIELDS = {"cloud_radius_range", "edge_radius_range"}
_INT_FIELDS = {"num_edge_servers", "num_users", "steps_per_episode",
               "histogram_bins", "rng_seed"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _RANGE_FIELDS:
        parts = [p for p in raw.replace(",", " ").split() if p]
        if len(parts) != 2:
            raise ConfigError(f"{key} expects two numbers, got {raw!r}")
        return (float(parts[0]), float(parts[1]))
    if key == "mean_task_size" and raw == BALANCED:
        return BALANCED
    if key in _INT_FIELDS:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key} expects an integer, got {raw!r}") from exc
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} expects a number, got {raw!r}") from exc


def parse_config_text(text: str) -> SystemConfig:
    known = {f.name for f in fields(SystemConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return SystemConfig(**values)


def apply_env_overrides(cfg: SystemConfig, environ=None) -> SystemConfig:
    env = os.environ if environ is None else environ
    updates = {}
    for f in fields(SystemConfig):
        raw = env.get(ENV_PREFIX + f.name.upper())
        if raw is not None:
            updates[f.name] = _parse_value(f.name, raw)
    return replace(cfg, **updates) if updates else cfg


def load_config(path, environ=None) -> SystemConfig:
    """Parse, apply environment overrides, validate."""
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_config_text(fh.read())
    return apply_env_overrides(cfg, environ).validate()


def canonical_text(cfg: SystemConfig) -> str:
    lines = []
    for f in sorted(fields(SystemConfig), key=lambda f: f.name):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = f"{val[0]!r},{val[1]!r}"
        else:
            val = repr(val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: SystemConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()[:16]


def smoke_config(**overrides) -> SystemConfig:
    """Small balanced system used by the fast training checks.

    poisson_rate * num_users = 1 matches the one-dispatch-per-step episode
    contract, so forced arrivals stay rare and the balanced size keeps the
    load critical rather than saturating.
    """
    base = dict(num_edge_servers=2, num_users=4, steps_per_episode=50,
                poisson_rate=0.25, histogram_bins=50)
    base.update(overrides)
    return SystemConfig(**base).validate()
