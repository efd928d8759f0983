"""Fixed-shape observation: one information vector per server.

Row e of the observation is
    (task size, uplink rate to e, cpu freq of e, pool count, edge count,
     residual-size histogram with N bins)
so the width is 5 + N for every server and the shape depends only on
(E, N), never on load.

Histogram semantics: bin i (1-based) counts residuals in [i-1, i) Mbits;
the last bin absorbs everything in [N-1, inf).
"""

from __future__ import annotations

import numpy as np

from .simulator import DecisionContext

MBIT = 1e6

# documented normalization constants applied before the network; fixed so
# that checkpoints stay portable across runs
SIZE_SCALE = 1e6     # bits  -> Mbits
RATE_SCALE = 1e6     # bits/s -> Mbit/s
FREQ_SCALE = 1e9     # cycles/s -> GHz


def residual_histogram(residuals_bits, n_bins: int) -> np.ndarray:
    """Counts of residual sizes per Mbit-wide bin, overflow in the last."""
    res = np.asarray(residuals_bits, dtype=float)
    if not res.size:
        return np.zeros(n_bins)
    idx = np.floor_divide(res, MBIT).astype(np.intp)
    np.clip(idx, 0, n_bins - 1, out=idx)
    return np.bincount(idx, minlength=n_bins).astype(float)


def encode_state(ctx: DecisionContext) -> np.ndarray:
    """Observation matrix (E+1, 5+N) in SI units for the pending task."""
    n_bins = ctx.cfg.histogram_bins
    freqs = ctx.freqs()
    obs = np.empty((ctx.num_servers, 5 + n_bins))
    for e in range(ctx.num_servers):
        pool = ctx.pools[e]
        obs[e, 0] = ctx.size
        obs[e, 1] = ctx.rates[e]
        obs[e, 2] = freqs[e]
        obs[e, 3] = len(pool)
        obs[e, 4] = ctx.cfg.num_edge_servers
        obs[e, 5:] = residual_histogram(pool, n_bins)
    return obs


def normalize_observation(obs: np.ndarray) -> np.ndarray:
    """Scale the SI observation into O(1..100) network inputs."""
    out = np.array(obs, dtype=float)
    out[..., 0] /= SIZE_SCALE
    out[..., 1] /= RATE_SCALE
    out[..., 2] /= FREQ_SCALE
    return out


def encode_normalized(ctx: DecisionContext) -> np.ndarray:
    return normalize_observation(encode_state(ctx))
