"""Actor-critic network over per-server observations, backprop by hand.

Architecture: a per-server encoder applied identically to every row
(point-wise over servers), concatenation, a projection into a residual
fully-connected trunk, a softmax policy head over the E+1 servers, and a
two-unit value head (one per objective) on the shared trunk.

Parameters live in a single flat float64 vector with a fixed layout so
checkpoints are portable and finite-difference checks are direct. The
nonlinearity is softplus: smooth everywhere, derivative sigmoid, which
keeps central-difference gradient checks clean.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointFormatError, NumericError


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


@dataclass
class ForwardCache:
    """Intermediates of one batched forward pass, consumed by backward."""
    obs: np.ndarray
    z_enc: np.ndarray
    flat: np.ndarray
    z_proj: np.ndarray
    block_in: list
    block_z1: list
    block_h: list
    trunk_out: np.ndarray
    logits: np.ndarray
    values: np.ndarray


class PolicyValueNet:
    """Fixed-layout network; all methods are pure in (theta, obs)."""

    def __init__(self, num_servers: int, feature_dim: int,
                 encoder_width: int = 64, trunk_width: int = 256,
                 num_blocks: int = 2):
        self.num_servers = num_servers
        self.feature_dim = feature_dim
        self.encoder_width = encoder_width
        self.trunk_width = trunk_width
        self.num_blocks = num_blocks
        self._build_layout()

    def _build_layout(self):
        shapes = [("enc_w", (self.feature_dim, self.encoder_width)),
                  ("enc_b", (self.encoder_width,)),
                  ("proj_w", (self.num_servers * self.encoder_width, self.trunk_width)),
                  ("proj_b", (self.trunk_width,))]
        for k in range(self.num_blocks):
            shapes += [(f"blk{k}_w1", (self.trunk_width, self.trunk_width)),
                       (f"blk{k}_b1", (self.trunk_width,)),
                       (f"blk{k}_w2", (self.trunk_width, self.trunk_width)),
                       (f"blk{k}_b2", (self.trunk_width,))]
        shapes += [("pol_w", (self.trunk_width, self.num_servers)),
                   ("pol_b", (self.num_servers,)),
                   ("val_w", (self.trunk_width, 2)),
                   ("val_b", (2,))]
        self.layout = []
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.layout.append((name, shape, offset, size))
            offset += size
        self.n_params = offset

    def layout_descriptor(self) -> dict:
        return {
            "num_servers": self.num_servers,
            "feature_dim": self.feature_dim,
            "encoder_width": self.encoder_width,
            "trunk_width": self.trunk_width,
            "num_blocks": self.num_blocks,
            "n_params": self.n_params,
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "PolicyValueNet":
        net = cls(desc["num_servers"], desc["feature_dim"], desc["encoder_width"],
                  desc["trunk_width"], desc["num_blocks"])
        if net.n_params != desc.get("n_params", net.n_params):
            raise CheckpointFormatError("layout descriptor is inconsistent")
        return net

    def views(self, theta: np.ndarray) -> dict:
        if theta.shape != (self.n_params,):
            raise CheckpointFormatError(
                f"parameter vector has {theta.shape}, layout needs ({self.n_params},)")
        return {name: theta[off:off + size].reshape(shape)
                for name, shape, off, size in self.layout}

    def init_params(self, seed: int) -> np.ndarray:
        """Fan-in-scaled gaussian weights, zero biases, zeroed policy head.

        The zeroed policy head makes the initial policy exactly uniform.
        """
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        theta = np.zeros(self.n_params)
        v = self.views(theta)
        for name, shape, _, _ in self.layout:
            if name.endswith("_b") or name.endswith("_b1") or name.endswith("_b2"):
                continue
            if name == "pol_w":
                continue
            fan_in = shape[0]
            v[name][:] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        return theta

    # ------------------------------------------------------------------ forward
    def forward(self, theta: np.ndarray, obs: np.ndarray) -> ForwardCache:
        """Batched forward pass; obs is (B, S, F) or a single (S, F)."""
        single = obs.ndim == 2
        x = obs[None] if single else obs
        if x.shape[1:] != (self.num_servers, self.feature_dim):
            raise CheckpointFormatError(
                f"observation shape {x.shape[1:]} does not match layout "
                f"({self.num_servers}, {self.feature_dim})")
        v = self.views(theta)
        z_enc = x @ v["enc_w"] + v["enc_b"]
        h_enc = softplus(z_enc)
        flat = h_enc.reshape(x.shape[0], -1)
        z_proj = flat @ v["proj_w"] + v["proj_b"]
        h = softplus(z_proj)
        block_in, block_z1, block_h = [], [], []
        for k in range(self.num_blocks):
            block_in.append(h)
            z1 = h @ v[f"blk{k}_w1"] + v[f"blk{k}_b1"]
            h1 = softplus(z1)
            block_z1.append(z1)
            block_h.append(h1)
            h = h + h1 @ v[f"blk{k}_w2"] + v[f"blk{k}_b2"]
        logits = h @ v["pol_w"] + v["pol_b"]
        values = h @ v["val_w"] + v["val_b"]
        return ForwardCache(obs=x, z_enc=z_enc, flat=flat, z_proj=z_proj,
                            block_in=block_in, block_z1=block_z1, block_h=block_h,
                            trunk_out=h, logits=logits, values=values)

    def policy_output(self, theta: np.ndarray, obs: np.ndarray):
        """(action probabilities, log probabilities) for each observation."""
        cache = self.forward(theta, obs)
        logits = cache.logits[0] if obs.ndim == 2 else cache.logits
        return softmax(logits), log_softmax(logits)

    def act_fn(self, theta: np.ndarray):
        """Fast single-observation closure for rollout collection.

        Binds the parameter views once; the returned callable maps one
        (S, F) observation to (probs, log_probs, values) without building
        a backward cache. Numerically identical to ``forward``.
        """
        v = self.views(theta)
        blocks = [(v[f"blk{k}_w1"], v[f"blk{k}_b1"], v[f"blk{k}_w2"], v[f"blk{k}_b2"])
                  for k in range(self.num_blocks)]
        enc_w, enc_b = v["enc_w"], v["enc_b"]
        proj_w, proj_b = v["proj_w"], v["proj_b"]
        pol_w, pol_b = v["pol_w"], v["pol_b"]
        val_w, val_b = v["val_w"], v["val_b"]

        def act(obs: np.ndarray):
            z = obs @ enc_w
            z += enc_b
            np.logaddexp(0.0, z, out=z)
            h = z.reshape(-1) @ proj_w
            h += proj_b
            np.logaddexp(0.0, h, out=h)
            for w1, b1, w2, b2 in blocks:
                z1 = h @ w1
                z1 += b1
                np.logaddexp(0.0, z1, out=z1)
                h = h + z1 @ w2
                h += b2
            logits = h @ pol_w
            logits += pol_b
            values = h @ val_w
            values += val_b
            shifted = logits - logits.max()
            exp = np.exp(shifted)
            total = exp.sum()
            return exp / total, shifted - np.log(total), values

        return act

    def value_output(self, theta: np.ndarray, obs: np.ndarray) -> np.ndarray:
        cache = self.forward(theta, obs)
        return cache.values[0] if obs.ndim == 2 else cache.values

    # ----------------------------------------------------------------- backward
    def backward(self, theta: np.ndarray, cache: ForwardCache,
                 dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
        """Flat gradient of a scalar loss given its head partials."""
        v = self.views(theta)
        grad = np.zeros(self.n_params)
        g = self.views(grad)

        h = cache.trunk_out
        g["pol_w"][:] = h.reshape(-1, self.trunk_width).T @ dlogits.reshape(-1, self.num_servers)
        g["pol_b"][:] = dlogits.sum(axis=0)
        g["val_w"][:] = h.reshape(-1, self.trunk_width).T @ dvalues.reshape(-1, 2)
        g["val_b"][:] = dvalues.sum(axis=0)
        dh = dlogits @ v["pol_w"].T + dvalues @ v["val_w"].T

        for k in reversed(range(self.num_blocks)):
            h1 = cache.block_h[k]
            g[f"blk{k}_w2"][:] = h1.T @ dh
            g[f"blk{k}_b2"][:] = dh.sum(axis=0)
            dh1 = dh @ v[f"blk{k}_w2"].T
            dz1 = dh1 * sigmoid(cache.block_z1[k])
            g[f"blk{k}_w1"][:] = cache.block_in[k].T @ dz1
            g[f"blk{k}_b1"][:] = dz1.sum(axis=0)
            dh = dh + dz1 @ v[f"blk{k}_w1"].T

        dz_proj = dh * sigmoid(cache.z_proj)
        g["proj_w"][:] = cache.flat.T @ dz_proj
        g["proj_b"][:] = dz_proj.sum(axis=0)
        dflat = dz_proj @ v["proj_w"].T
        dh_enc = dflat.reshape(cache.z_enc.shape)
        dz_enc = dh_enc * sigmoid(cache.z_enc)
        g["enc_w"][:] = (cache.obs.reshape(-1, self.feature_dim).T
                         @ dz_enc.reshape(-1, self.encoder_width))
        g["enc_b"][:] = dz_enc.sum(axis=(0, 1))
        return grad

    def gradient(self, theta: np.ndarray, loss_fn, obs_batch: np.ndarray):
        """(loss, flat gradient) for a loss defined on the network heads.

        ``loss_fn(logits, values) -> (loss, dloss_dlogits, dloss_dvalues)``
        must describe the mean batch loss and its analytic head partials.
        """
        cache = self.forward(theta, obs_batch)
        loss, dlogits, dvalues = loss_fn(cache.logits, cache.values)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss!r}")
        grad = self.backward(theta, cache, dlogits, dvalues)
        if not np.all(np.isfinite(grad)):
            bad = int(np.sum(~np.isfinite(grad)))
            raise NumericError(f"gradient has {bad} non-finite entries")
        return loss, grad


def warm_start(theta_src: np.ndarray) -> np.ndarray:
    """Exact copy of trained parameters for the next preference."""
    return np.array(theta_src, dtype=float, copy=True)


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 little-endian header length, JSON header,
# float64 little-endian parameter array

MAGIC = b"MECMORL1"


def save_checkpoint(path, net: PolicyValueNet, theta: np.ndarray, *,
                    omega, alphas, config_hash: str, extra: dict | None = None) -> None:
    header = {
        "version": 1,
        "layout": net.layout_descriptor(),
        "omega": [float(omega[0]), float(omega[1])],
        "alphas": [float(alphas[0]), float(alphas[1])],
        "config_hash": config_hash,
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(np.asarray(theta, dtype="<f8").tobytes())


def load_checkpoint(path):
    """(header dict, net, theta); raises CheckpointFormatError on damage."""
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a mecmorl checkpoint")
    raw_len = buf.read(4)
    if len(raw_len) != 4:
        raise CheckpointFormatError(f"{path}: truncated header length")
    hlen = int.from_bytes(raw_len, "little")
    blob = buf.read(hlen)
    if len(blob) != hlen:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header") from exc
    if header.get("version") != 1:
        raise CheckpointFormatError(f"{path}: unsupported version {header.get('version')}")
    net = PolicyValueNet.from_descriptor(header["layout"])
    body = buf.read()
    if len(body) != 8 * net.n_params:
        raise CheckpointFormatError(
            f"{path}: parameter block has {len(body)} bytes, "
            f"layout needs {8 * net.n_params}")
    theta = np.frombuffer(body, dtype="<f8").astype(float)
    return header, net, theta
