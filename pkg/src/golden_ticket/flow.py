"""Conditional flow matching on flattened action chunks.

The forward path interpolates linearly between a clean chunk ``x`` (tau=0)
and Gaussian noise ``eps`` (tau=1). The network regresses the path velocity
``eps - x`` and sampling integrates it backwards from tau=1 with Euler steps.
"""

from __future__ import annotations

import hashlib
import math
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import (
    DEFAULT_HIDDEN,
    AdamState,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_predict,
)

log = logging.getLogger(__name__)

DEFAULT_NUM_STEPS = 8


@dataclass
class FlowModel:
    """Velocity-field MLP over input ``concat(z, cond, tau)``.

    ``cond_mean``/``cond_std`` normalize raw observations; they are part of
    the checkpoint so a loaded model sees exactly what it was trained on.
    """

    net: MlpParams
    chunk_dim: int
    cond_dim: int
    horizon: int = 8
    action_dim: int = 3
    cond_mean: np.ndarray = None  # type: ignore[assignment]
    cond_std: np.ndarray = None  # type: ignore[assignment]
    num_steps: int = DEFAULT_NUM_STEPS
    config_digest: bytes = b"\x00" * 32

    def __post_init__(self):
        if self.net.in_dim != self.chunk_dim + self.cond_dim + 1:
            raise ValueError(
                f"net input width {self.net.in_dim} != chunk_dim + cond_dim + 1 = {self.chunk_dim + self.cond_dim + 1}"
            )
        if self.net.out_dim != self.chunk_dim:
            raise ValueError(f"net output width {self.net.out_dim} != chunk_dim {self.chunk_dim}")
        if self.horizon * self.action_dim != self.chunk_dim:
            raise ValueError("horizon * action_dim must equal chunk_dim")
        if self.cond_mean is None:
            self.cond_mean = np.zeros(self.cond_dim, dtype=np.float32)
        if self.cond_std is None:
            self.cond_std = np.ones(self.cond_dim, dtype=np.float32)
        self.cond_mean = np.asarray(self.cond_mean, dtype=np.float32)
        self.cond_std = np.asarray(self.cond_std, dtype=np.float32)

    @property
    def dtype(self):
        return self.net.layers[0].weight.dtype

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float32)
        if obs.shape[-1] != self.cond_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != cond_dim {self.cond_dim}")
        return (obs - self.cond_mean) / self.cond_std

    def net_input(self, z, cond, tau) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=self.dtype))
        cond = np.atleast_2d(np.asarray(cond, dtype=self.dtype))
        if z.shape[1] != self.chunk_dim:
            raise ValueError(f"chunk width {z.shape[1]} != {self.chunk_dim}")
        if cond.shape[1] != self.cond_dim:
            raise ValueError(f"cond width {cond.shape[1]} != {self.cond_dim}")
        if cond.shape[0] != z.shape[0]:
            cond = np.broadcast_to(cond, (z.shape[0], self.cond_dim))
        tau = np.broadcast_to(np.asarray(tau, dtype=self.dtype).reshape(-1, 1), (z.shape[0], 1))
        return np.concatenate([z, cond, tau], axis=1)

    def velocity(self, z, cond, tau) -> np.ndarray:
        return mlp_predict(self.net, self.net_input(z, cond, tau))


def corrupt(x, eps, tau: float):
    """Linear forward path: ``(1 - tau) * x + tau * eps``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    x = np.asarray(x)
    eps = np.asarray(eps)
    if x.shape != eps.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs eps {eps.shape}")
    return (1.0 - tau) * x + tau * eps


def fm_loss(model: FlowModel, x, cond, rng: np.random.Generator | None = None, tau=None, eps=None):
    """Velocity-regression loss and its parameter gradients.

    ``loss = mean_b || u(z_tau, cond, tau) - (eps - x) ||^2`` with
    tau ~ U(0, 1) and eps ~ N(0, I) per row. Pass ``tau``/``eps`` to freeze
    the draws. Returns ``(loss, grads)`` with ``loss`` a python float.
    """
    x = np.atleast_2d(np.asarray(x, dtype=model.dtype))
    cond = np.atleast_2d(np.asarray(cond, dtype=model.dtype))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != model.chunk_dim or cond.shape != (x.shape[0], model.cond_dim):
        raise ValueError(f"batch shapes x {x.shape}, cond {cond.shape} do not match model")
    b = x.shape[0]
    if tau is None:
        tau = rng.random(b)
    if eps is None:
        eps = rng.standard_normal(x.shape)
    tau = np.asarray(tau, dtype=model.dtype).reshape(b, 1)
    eps = np.asarray(eps, dtype=model.dtype)
    z = (1 - tau) * x + tau * eps
    target = eps - x
    pred, cache = mlp_forward(model.net, np.concatenate([z, cond, tau], axis=1))
    err = pred - target
    loss = float(np.mean(np.sum(err.astype(np.float64) ** 2, axis=1)))
    grads, _ = mlp_backward(model.net, cache, (2.0 / b) * err)
    return loss, grads


def sample(model, cond, z1, num_steps: int | None = None) -> np.ndarray:
    """Euler-integrate the velocity field from tau=1 down to tau=0.

    ``model`` only needs a ``velocity(z, cond, tau)`` method, so analytic
    fields can stand in for a trained network. ``cond`` is already
    normalized. Returns an array shaped like ``z1``.
    """
    if num_steps is None:
        num_steps = getattr(model, "num_steps", DEFAULT_NUM_STEPS)
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    z1 = np.asarray(z1)
    z = np.atleast_2d(z1)
    dt = 1.0 / num_steps
    for i in range(num_steps):
        tau = 1.0 - i * dt
        z = z - dt * model.velocity(z, cond, tau)
    return z.reshape(z1.shape)


@dataclass
class Dataset:
    """``(cond, chunk)`` pairs plus the per-pair expert style label."""

    conds: np.ndarray  # (N, C) float32, raw observations
    chunks: np.ndarray  # (N, D) float32
    styles: np.ndarray  # (N,) uint8 index into style_names
    style_names: list[str]
    env_id: str
    seed: int
    horizon: int = 8
    action_dim: int = 3
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.conds = np.asarray(self.conds, dtype=np.float32)
        self.chunks = np.asarray(self.chunks, dtype=np.float32)
        self.styles = np.asarray(self.styles, dtype=np.uint8)
        if len(self.conds) == 0:
            raise ValueError("dataset is empty")
        if len(self.conds) != len(self.chunks) or len(self.styles) != len(self.conds):
            raise ValueError("conds, chunks and styles must have the same length")
        if self.chunks.shape[1] != self.horizon * self.action_dim:
            raise ValueError("chunk width must equal horizon * action_dim")

    def __len__(self):
        return len(self.conds)

    @property
    def cond_dim(self) -> int:
        return self.conds.shape[1]

    @property
    def chunk_dim(self) -> int:
        return self.chunks.shape[1]

    def to_bytes(self) -> bytes:
        header = {
            "env_id": self.env_id,
            "seed": self.seed,
            "n": len(self),
            "cond_dim": self.cond_dim,
            "chunk_dim": self.chunk_dim,
            "horizon": self.horizon,
            "action_dim": self.action_dim,
            "style_names": self.style_names,
            "meta": self.meta,
        }
        hb = json.dumps(header, sort_keys=True).encode()
        return b"".join(
            [
                DATASET_MAGIC,
                struct.pack("<I", len(hb)),
                hb,
                self.conds.astype("<f4").tobytes(),
                self.chunks.astype("<f4").tobytes(),
                self.styles.tobytes(),
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Dataset":
        if data[:4] != DATASET_MAGIC:
            raise ValueError("bad dataset header: magic bytes do not match")
        (hlen,) = struct.unpack_from("<I", data, 4)
        header = json.loads(data[8 : 8 + hlen])
        n, c, d = header["n"], header["cond_dim"], header["chunk_dim"]
        off = 8 + hlen
        need = off + 4 * n * (c + d) + n
        if len(data) != need:
            raise ValueError(f"dataset body is {len(data)} bytes, expected {need}")
        conds = np.frombuffer(data, "<f4", n * c, off).reshape(n, c)
        off += 4 * n * c
        chunks = np.frombuffer(data, "<f4", n * d, off).reshape(n, d)
        off += 4 * n * d
        styles = np.frombuffer(data, np.uint8, n, off)
        return cls(
            conds.astype(np.float32),
            chunks.astype(np.float32),
            styles.copy(),
            header["style_names"],
            header["env_id"],
            header["seed"],
            header["horizon"],
            header["action_dim"],
            header["meta"],
        )

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


DATASET_MAGIC = b"GTDS"


LR_SCHEDULES = ("constant", "cosine")


def scheduled_lr(base: float, schedule: str, step: int, total: int) -> float:
    """Learning rate for optimizer step ``step`` (0-based) of ``total``."""
    if schedule == "constant":
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * step / total))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 20
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.1
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    num_steps: int = DEFAULT_NUM_STEPS
    lr_schedule: str = "constant"  # or "cosine": decay to 0 over the run

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).digest()


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


def _split(n: int, frac: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(n * frac)
    if n_val == 0:
        # too small to hold anything out; validate on the training pairs
        return perm, perm
    return perm[n_val:], perm[:n_val]


def _eval_loss(model, x, cond, tau, eps, chunk=4096) -> float:
    total = 0.0
    for i in range(0, len(x), chunk):
        sl = slice(i, i + chunk)
        z = (1 - tau[sl]) * x[sl] + tau[sl] * eps[sl]
        pred = mlp_predict(model.net, np.concatenate([z, cond[sl], tau[sl]], axis=1))
        total += float(np.sum((pred.astype(np.float64) - (eps[sl] - x[sl])) ** 2))
    return total / len(x)


def train(config: TrainConfig, dataset: Dataset, hidden=None, progress=None):
    """Fit a FlowModel with shuffled minibatch Adam.

    Returns ``(model, trace)`` where ``trace`` is a list of ``EpochStats``;
    entry 0 holds the losses of the freshly initialized network. The run is
    a pure function of ``(config, dataset)``.
    """
    hidden = config.hidden if hidden is None else tuple(hidden)
    n = len(dataset)
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    d, c = dataset.chunk_dim, dataset.cond_dim

    rng = np.random.default_rng(config.seed)
    init_seed = int(rng.integers(2**63))
    split_rng = np.random.default_rng(int(rng.integers(2**63)))
    val_rng = np.random.default_rng(int(rng.integers(2**63)))

    mean = dataset.conds.astype(np.float64).mean(axis=0)
    std = dataset.conds.astype(np.float64).std(axis=0)
    std = np.where(std < 1e-6, 1.0, std)
    model = FlowModel(
        init_mlp([d + c + 1, *hidden, d], init_seed),
        chunk_dim=d,
        cond_dim=c,
        horizon=dataset.horizon,
        action_dim=dataset.action_dim,
        cond_mean=mean.astype(np.float32),
        cond_std=std.astype(np.float32),
        num_steps=config.num_steps,
        config_digest=config.digest(),
    )
    conds = model.normalize(dataset.conds)
    chunks = dataset.chunks
    train_idx, val_idx = _split(n, config.val_fraction, split_rng)
    if len(train_idx) < config.batch_size:
        raise ValueError(f"batch_size {config.batch_size} exceeds training split size {len(train_idx)}")

    xv, cv = chunks[val_idx], conds[val_idx]
    tau_v = val_rng.random((len(val_idx), 1)).astype(np.float32)
    eps_v = val_rng.standard_normal(xv.shape).astype(np.float32)
    xt, ct = chunks[train_idx], conds[train_idx]
    tau_t = val_rng.random((len(train_idx), 1)).astype(np.float32)
    eps_t = val_rng.standard_normal(xt.shape).astype(np.float32)

    trace = [EpochStats(0, _eval_loss(model, xt, ct, tau_t, eps_t), _eval_loss(model, xv, cv, tau_v, eps_v))]
    opt = AdamState.for_params(model.net, lr=config.lr)
    n_batches = len(train_idx) // config.batch_size
    total_steps = n_batches * config.epochs
    for epoch in range(1, config.epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for bi in range(n_batches):
            opt.lr = scheduled_lr(config.lr, config.lr_schedule, opt.step, total_steps)
            idx = order[bi * config.batch_size : (bi + 1) * config.batch_size]
            loss, grads = fm_loss(model, chunks[idx], conds[idx], rng)
            model.net, opt = adam_step(opt, model.net, grads)
            total += loss
        stats = EpochStats(epoch, total / n_batches, _eval_loss(model, xv, cv, tau_v, eps_v))
        trace.append(stats)
        log.info("epoch %d train %.5f val %.5f", epoch, stats.train_loss, stats.val_loss)
        if progress is not None:
            progress(stats)
    return model, trace


def write_trace_csv(trace: list[EpochStats], path) -> None:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{s.epoch},{s.train_loss:.9g},{s.val_loss:.9g}" for s in trace]
    Path(path).write_text("\n".join(lines) + "\n")
