"""Chunked receding-horizon policy around a frozen FlowModel.

The only thing that differs between the base policy and a golden-ticket
policy is where the sampler's initial noise comes from: a fresh Gaussian
draw per chunk, or one constant vector.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envs
from .flow import FlowModel, sample

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seeds(*parts: int) -> int:
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


def gaussian_vector(seed: int, index: int, dim: int) -> np.ndarray:
    """Standard normal vector number ``index`` of stream ``seed``.

    Philox is keyed by ``(seed, index)`` so any draw can be produced
    without generating the ones before it; Box-Muller turns raw 64-bit
    words into normals.
    """
    bitgen = np.random.Philox(key=np.array([seed & MASK64, index & MASK64], dtype=np.uint64))
    n_pairs = (dim + 1) // 2
    raw = bitgen.random_raw(2 * n_pairs).astype(np.uint64)
    u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * n_pairs)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return z[:dim].astype(np.float32)


@dataclass(frozen=True)
class Ticket:
    values: np.ndarray
    origin: tuple[int, int] = (0, 0)  # (search seed, index)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("ticket values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def id(self) -> str:
        return hashlib.sha256(self.values.astype("<f4").tobytes()).hexdigest()[:8]

    @property
    def dim(self) -> int:
        return len(self.values)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "dim": self.dim,
            "values": [float(v) for v in self.values],
            "origin": {"seed": self.origin[0], "index": self.origin[1]},
        }

    @classmethod
    def from_json(cls, data: dict) -> "Ticket":
        t = cls(np.array(data["values"], dtype=np.float32), (data["origin"]["seed"], data["origin"]["index"]))
        if len(t.values) != data["dim"]:
            raise ValueError(f"ticket {data.get('id')}: dim {data['dim']} but {len(t.values)} values")
        if data.get("id") not in (None, t.id):
            raise ValueError(f"ticket id {data['id']} does not match its values ({t.id})")
        return t

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Ticket":
        return cls.from_json(json.loads(Path(path).read_text()))


class NoiseSource:
    """Where a policy's initial sampler noise comes from."""

    def draw(self, index: int, dim: int) -> np.ndarray:
        raise NotImplementedError

    def for_episode(self, episode_seed: int) -> "NoiseSource":
        return self


@dataclass(frozen=True)
class GaussianNoise(NoiseSource):
    seed: int

    def draw(self, index: int, dim: int) -> np.ndarray:
        return gaussian_vector(self.seed, index, dim)

    def for_episode(self, episode_seed: int) -> "GaussianNoise":
        # independent stream per episode, still a pure function of the seeds
        return GaussianNoise(mix_seeds(self.seed, episode_seed))


@dataclass(frozen=True)
class TicketNoise(NoiseSource):
    ticket: Ticket

    def draw(self, index: int, dim: int) -> np.ndarray:
        if dim != self.ticket.dim:
            raise ValueError(f"ticket has dim {self.ticket.dim}, model wants {dim}")
        return self.ticket.values


@dataclass(frozen=True)
class PolicyConfig:
    num_steps: int = 8
    exec_horizon: int = 8

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not 1 <= self.exec_horizon <= envs.CHUNK_HORIZON:
            raise ValueError(f"exec_horizon must lie in [1, {envs.CHUNK_HORIZON}]")


def act(model: FlowModel, cfg: PolicyConfig, obs, noise: NoiseSource, draw_index: int = 0, tap=None) -> np.ndarray:
    """Decode one chunk, shape ``(horizon, action_dim)``, in unit-scale action space.

    Use ``envs.decode_chunk`` to map it to env actions. ``tap``, if given,
    is called with every initial noise vector before it reaches the sampler.
    """
    obs = np.asarray(obs, dtype=np.float32)
    if obs.shape != (model.cond_dim,):
        raise ValueError(f"observation shape {obs.shape} does not match cond_dim {model.cond_dim}")
    z1 = noise.draw(draw_index, model.chunk_dim)
    if tap is not None:
        tap(z1)
    chunk = sample(model, model.normalize(obs), z1, cfg.num_steps)
    return chunk.reshape(model.horizon, model.action_dim)


def rollout(spec: envs.EnvSpec, model: FlowModel, cfg: PolicyConfig, noise: NoiseSource, episode_seed: int, tap=None):
    """Run one episode, replanning every ``cfg.exec_horizon`` steps."""
    if model.cond_dim != spec.obs_dim:
        raise ValueError(f"model expects {model.cond_dim}-dim observations, task {spec.task} emits {spec.obs_dim}")
    noise = noise.for_episode(episode_seed)
    state, obs = envs.reset(spec, episode_seed)
    digest = envs.TrajectoryDigest()
    digest.update(state)
    ret = 0.0
    draws = 0
    while not state.done:
        chunk = envs.decode_chunk(act(model, cfg, obs, noise, draws, tap), spec.max_speed)
        draws += 1
        for a in chunk[: cfg.exec_horizon]:
            state, r, _ = envs.step(spec, state, a)
            digest.update(state)
            ret += r
            if state.done:
                break
        obs = envs.observe(spec, state)
    return envs.EpisodeResult(ret, state.success, state.t, digest.hexdigest())
