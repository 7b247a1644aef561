"""Deterministic planar manipulation MDPs with sparse reward and scripted experts.

Three tasks share one state layout (agent xy, object xy, grabbed flag):

* ``reach-pick``: move to the object and close the gripper within
  ``success_radius`` of it.
* ``push``: shove a disk until it sits within ``success_radius`` of the
  workspace center. Contact is purely kinematic.
* ``multi-goal``: pick the object and carry it to one of K labeled goals;
  the goal index is part of the observation as a one-hot.

Actions are ``(vx, vy, grab)``; velocities are norm-clipped to
``max_speed`` and the agent is confined to the padded workspace.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import Dataset

log = logging.getLogger(__name__)

TASKS = ("reach-pick", "push", "multi-goal")
HOME = (0.0, 0.15)
ACTION_DIM = 3
CHUNK_HORIZON = 8

AGENT_RADIUS = 0.015
DISK_RADIUS = 0.02
CONTACT = AGENT_RADIUS + DISK_RADIUS
PUSH_SUBSTEP = 0.005

# expert behavior
ARC_ANGLE = math.radians(35.0)
FAST_SPEED = 0.04
SLOW_FACTOR = 0.5
PATHS = ("direct", "arc-left", "arc-right")
PACES = ("slow", "fast")
STYLES = tuple(f"{p}-{q}" for p in PATHS for q in PACES)

DEFAULT_GOALS = ((-0.15, 0.30), (0.15, 0.30), (-0.15, 0.50), (0.15, 0.50))


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    task: str = "reach-pick"
    horizon: int = 240
    x_bounds: tuple[float, float] = (-0.25, 0.25)
    y_bounds: tuple[float, float] = (0.25, 0.55)
    success_radius: float = 0.03
    goals: tuple[tuple[float, float], ...] = DEFAULT_GOALS
    fixed_task: int | None = None
    max_speed: float = 0.05
    pad: float = 0.15

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for lo, hi in (self.x_bounds, self.y_bounds):
            if not lo < hi:
                raise ValueError("workspace bounds must be ordered lo < hi")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if self.task == "multi-goal":
            if len(self.goals) < 1:
                raise ValueError("multi-goal needs at least one goal")
            if self.fixed_task is not None and not 0 <= self.fixed_task < len(self.goals):
                raise ValueError(f"fixed_task {self.fixed_task} out of range for {len(self.goals)} goals")
        object.__setattr__(self, "x_bounds", tuple(float(v) for v in self.x_bounds))
        object.__setattr__(self, "y_bounds", tuple(float(v) for v in self.y_bounds))
        object.__setattr__(self, "goals", tuple(tuple(float(v) for v in g) for g in self.goals))

    @property
    def n_tasks(self) -> int:
        return len(self.goals) if self.task == "multi-goal" else 1

    @property
    def obs_dim(self) -> int:
        return 5 + (len(self.goals) if self.task == "multi-goal" else 0)

    @property
    def center(self) -> np.ndarray:
        return np.array([sum(self.x_bounds) / 2, sum(self.y_bounds) / 2])

    @property
    def padded_lo(self) -> np.ndarray:
        return np.array([self.x_bounds[0] - self.pad, self.y_bounds[0] - self.pad])

    @property
    def padded_hi(self) -> np.ndarray:
        return np.array([self.x_bounds[1] + self.pad, self.y_bounds[1] + self.pad])

    def for_task(self, task_id: int) -> "EnvSpec":
        return replace(self, fixed_task=task_id)


@dataclass(frozen=True)
class EnvState:
    agent: tuple[float, float]
    obj: tuple[float, float]
    grabbed: bool = False
    t: int = 0
    task_id: int = 0
    done: bool = False
    success: bool = False


@dataclass
class EpisodeResult:
    ret: float
    success: bool
    length: int
    digest: str  # 16 hex chars, 64-bit

    def __post_init__(self):
        if self.success and self.ret != 1.0:
            raise ValueError("a successful sparse-reward episode must return 1")


def observe(spec: EnvSpec, state: EnvState) -> np.ndarray:
    obs = [*state.agent, *state.obj, float(state.grabbed)]
    if spec.task == "multi-goal":
        onehot = [0.0] * len(spec.goals)
        onehot[state.task_id] = 1.0
        obs += onehot
    return np.array(obs, dtype=np.float32)


def _sample_position(spec: EnvSpec, rng: np.random.Generator):
    return (float(rng.uniform(*spec.x_bounds)), float(rng.uniform(*spec.y_bounds)))


def reset(spec: EnvSpec, episode_seed: int):
    """Initial state drawn from ``episode_seed``; agent starts at ``HOME``."""
    rng = np.random.default_rng(int(episode_seed) & 0xFFFFFFFFFFFFFFFF)
    obj = _sample_position(spec, rng)
    task_id = 0
    if spec.task == "push":
        center = spec.center
        # a disk that starts solved makes no episode
        while math.dist(obj, center) <= 2 * spec.success_radius:
            obj = _sample_position(spec, rng)
    elif spec.task == "multi-goal":
        task_id = int(rng.integers(len(spec.goals)))
        if spec.fixed_task is not None:
            task_id = spec.fixed_task
    state = EnvState(agent=HOME, obj=obj, task_id=task_id)
    return state, observe(spec, state)


def _clip_velocity(v, max_speed: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    speed = math.hypot(v[0], v[1])
    if speed > max_speed:
        v = v * (max_speed / speed)
    return v


def step(spec: EnvSpec, state: EnvState, action):
    """Advance one tick. Returns ``(state, reward, done)``."""
    if state.done:
        raise EnvError("step() called on a finished episode")
    if state.t >= spec.horizon:
        raise EnvError("step() called past the horizon")
    action = np.asarray(action, dtype=np.float64)
    v = _clip_velocity(action[:2], spec.max_speed)
    grab = float(action[2]) >= 0.5 if len(action) > 2 else False

    lo, hi = spec.padded_lo, spec.padded_hi
    obj = np.array(state.obj)
    grabbed = state.grabbed
    success = False

    if spec.task == "push":
        agent = np.array(state.agent)
        # sub-steps shorter than the contact distance so the agent cannot tunnel through the disk
        n_sub = max(1, math.ceil(math.hypot(*v) / PUSH_SUBSTEP))
        for _ in range(n_sub):
            agent = np.clip(agent + v / n_sub, lo, hi)
            gap = obj - agent
            dist = math.hypot(*gap)
            if dist < CONTACT:
                direction = gap / dist if dist > 1e-12 else v / max(math.hypot(*v), 1e-12)
                obj = np.clip(agent + CONTACT * direction, lo, hi)
        success = math.dist(obj, spec.center) <= spec.success_radius
    else:
        agent = np.clip(np.array(state.agent) + v, lo, hi)

    if spec.task == "reach-pick":
        if grab and math.dist(agent, obj) <= spec.success_radius:
            grabbed = True
            success = True
    elif spec.task == "multi-goal":
        if grabbed:
            obj = agent.copy()
        elif grab and math.dist(agent, obj) <= spec.success_radius:
            grabbed = True
            obj = agent.copy()
        goal = spec.goals[state.task_id]
        success = grabbed and math.dist(obj, goal) <= spec.success_radius

    t = state.t + 1
    done = success or t >= spec.horizon
    new = EnvState(
        agent=(float(agent[0]), float(agent[1])),
        obj=(float(obj[0]), float(obj[1])),
        grabbed=grabbed,
        t=t,
        task_id=state.task_id,
        done=done,
        success=success,
    )
    return new, (1.0 if success else 0.0), done


class TrajectoryDigest:
    """Incremental 64-bit hash of the micrometer-quantized state sequence."""

    def __init__(self):
        self._h = hashlib.blake2b(digest_size=8)

    def update(self, state: EnvState) -> None:
        q = [round(v * 1e6) for v in (*state.agent, *state.obj)]
        self._h.update(struct.pack("<4qBiI", *q, state.grabbed, state.task_id, state.t))

    def hexdigest(self) -> str:
        return self._h.hexdigest()


def encode_chunk(chunk: np.ndarray, max_speed: float) -> np.ndarray:
    """Env actions -> unit-scale chunk rows ``(vx/max_speed, vy/max_speed, 2*grab-1)``."""
    out = np.array(chunk, dtype=np.float64).reshape(-1, ACTION_DIM)
    out[:, :2] /= max_speed
    out[:, 2] = 2.0 * out[:, 2] - 1.0
    return out


def decode_chunk(chunk: np.ndarray, max_speed: float) -> np.ndarray:
    """Inverse of ``encode_chunk``; gripper values keep their 0.5 threshold."""
    out = np.array(chunk, dtype=np.float64).reshape(-1, ACTION_DIM)
    out[:, :2] *= max_speed
    out[:, 2] = 0.5 * (out[:, 2] + 1.0)
    return out


# ---------------------------------------------------------------- experts


def parse_style(style: str):
    """``"arc-left-slow"`` -> (signed arc angle, speed)."""
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; expected one of {STYLES}")
    path, pace = style.rsplit("-", 1)
    angle = {"direct": 0.0, "arc-left": ARC_ANGLE, "arc-right": -ARC_ANGLE}[path]
    speed = FAST_SPEED * (SLOW_FACTOR if pace == "slow" else 1.0)
    return angle, speed


def spiral_step(pos, target, angle: float, length: float):
    """Advance ``length`` along the constant-bearing spiral into ``target``.

    The heading keeps a fixed offset ``angle`` (counter-clockwise positive)
    from the line of sight, so the path is a logarithmic spiral; its
    continuation from any point on it is the same curve. Returns the new
    position and whether the target was reached.
    """
    px, py = pos
    tx, ty = target
    r0 = math.hypot(px - tx, py - ty)
    c = math.cos(angle)
    if r0 <= length * c or r0 < 1e-12:
        return (tx, ty), True
    r = r0 - length * c
    phi = math.atan2(py - ty, px - tx) - math.tan(angle) * math.log(r0 / r)
    return (tx + r * math.cos(phi), ty + r * math.sin(phi)), False


ORBIT_RADIUS = CONTACT + 0.02


def _orbit_target(agent, disk, back, side_dir, speed: float):
    """Next waypoint circling ``disk`` at ``ORBIT_RADIUS`` toward direction ``back``.

    The agent orbits the way that does not cross in front of the disk
    (direction ``-back``); when it is already in front, it swings round
    through ``side_dir``, which is how the arc styles pick opposite sides.
    """
    rel = agent - disk
    r = math.hypot(*rel)
    if r < ORBIT_RADIUS - 1e-3:
        return disk + rel / max(r, 1e-12) * ORBIT_RADIUS
    two_pi = 2 * math.pi
    th_a = math.atan2(rel[1], rel[0])
    th_p = math.atan2(back[1], back[0])
    ccw = (th_p - th_a) % two_pi
    if abs(float(rel @ side_dir)) > 0.01:
        direction = 1.0 if (th_p + math.pi - th_a) % two_pi >= ccw else -1.0
    else:
        through = math.atan2(side_dir[1], side_dir[0])
        direction = 1.0 if (through - th_a) % two_pi < ccw else -1.0
    remaining = ccw if direction > 0 else two_pi - ccw
    th = th_a + direction * min(remaining, speed / ORBIT_RADIUS)
    return disk + ORBIT_RADIUS * np.array([math.cos(th), math.sin(th)])


def _push_action(spec: EnvSpec, state: EnvState, side_pref: int, speed: float):
    agent = np.array(state.agent)
    disk = np.array(state.obj)
    goal = spec.center
    to_goal = goal - disk
    dist_goal = math.hypot(*to_goal)
    if dist_goal <= 1e-9:
        return np.zeros(2)
    u = to_goal / dist_goal
    n = np.array([-u[1], u[0]])
    rel = agent - disk
    along, lateral = rel @ u, rel @ n
    behind = along < -(CONTACT - 0.004) and abs(lateral) < 0.006
    if behind:
        target = goal - u * CONTACT
    else:
        pre = disk - u * (CONTACT + 0.01)
        seg = pre - agent
        seg_len = math.hypot(*seg)
        blocked = False
        if seg_len > 1e-9:
            w = disk - agent
            proj = min(max((w @ seg) / seg_len**2, 0.0), 1.0)
            blocked = math.hypot(*(agent + proj * seg - disk)) < CONTACT + 0.006
        target = pre
        if blocked:
            side = side_pref if side_pref else (1 if lateral >= 0 else -1)
            target = _orbit_target(agent, disk, -u, side * n, speed)
    delta = target - agent
    d = math.hypot(*delta)
    if d <= speed:
        return delta
    return delta * (speed / d)


def expert_action(spec: EnvSpec, state: EnvState, style: str) -> np.ndarray:
    """One step of the scripted controller for ``style``."""
    angle, speed = parse_style(style)
    if spec.task == "push":
        side = 0 if angle == 0 else (1 if angle > 0 else -1)
        v = _push_action(spec, state, side, speed)
        return np.array([v[0], v[1], 0.0])
    if spec.task == "multi-goal" and state.grabbed:
        target = spec.goals[state.task_id]
    else:
        target = state.obj
    new, arrived = spiral_step(state.agent, target, angle, speed)
    grab = 1.0 if (arrived or state.grabbed) else 0.0
    return np.array([new[0] - state.agent[0], new[1] - state.agent[1], grab])


def scripted_expert(spec: EnvSpec, state: EnvState, style: str, horizon: int = CHUNK_HORIZON) -> np.ndarray:
    """Open-loop chunk of ``horizon`` expert actions, shape ``(horizon, 3)``.

    Steps after the simulated episode would have ended are zero-velocity
    with the gripper held at its last value.
    """
    chunk = np.zeros((horizon, ACTION_DIM))
    sim = replace(state, done=False, t=0)
    sim_spec = replace(spec, horizon=max(spec.horizon, horizon + 1))
    for k in range(horizon):
        if sim.done:
            chunk[k, 2] = chunk[k - 1, 2] if k else 0.0
            continue
        a = expert_action(sim_spec, sim, style)
        chunk[k] = a
        sim, _, _ = step(sim_spec, sim, a)
    return chunk


def expert_rollout(spec: EnvSpec, episode_seed: int, style: str, stride: int = CHUNK_HORIZON):
    """Run the chunked expert; returns ``(EpisodeResult, [(obs, chunk), ...])``."""
    state, obs = reset(spec, episode_seed)
    digest = TrajectoryDigest()
    digest.update(state)
    pairs = []
    ret = 0.0
    while not state.done:
        chunk = scripted_expert(spec, state, style)
        pairs.append((obs, encode_chunk(chunk, spec.max_speed).reshape(-1)))
        for a in chunk[:stride]:
            state, r, done = step(spec, state, a)
            digest.update(state)
            ret += r
            if done:
                break
        obs = observe(spec, state)
    return EpisodeResult(ret, state.success, state.t, digest.hexdigest()), pairs


@dataclass
class DataConfig:
    n_demos: int = 1000
    seed: int = 0
    style_weights: dict = field(default_factory=lambda: {"direct-fast": 1.0})
    stride: int = CHUNK_HORIZON
    max_skip_fraction: float = 0.05

    def __post_init__(self):
        if self.n_demos < 1:
            raise ValueError("n_demos must be >= 1")
        if not self.style_weights:
            raise ValueError("style_weights is empty")
        for name, w in self.style_weights.items():
            parse_style(name)
            if w < 0:
                raise ValueError(f"negative weight for style {name}")
        if abs(sum(self.style_weights.values()) - 1.0) > 1e-9:
            raise ValueError("style_weights must sum to 1")
        if not 1 <= self.stride <= CHUNK_HORIZON:
            raise ValueError(f"stride must lie in [1, {CHUNK_HORIZON}]")


def generate_dataset(spec: EnvSpec, config: DataConfig) -> Dataset:
    """Roll scripted experts and slice each episode into (obs, next-chunk) pairs.

    One style is drawn per episode from ``config.style_weights``. Failed
    expert episodes are dropped; more than ``max_skip_fraction`` of them is
    an error.
    """
    rng = np.random.default_rng(config.seed)
    names = sorted(config.style_weights)
    probs = np.array([config.style_weights[n] for n in names], dtype=np.float64)
    probs = probs / probs.sum()
    style_index = {s: i for i, s in enumerate(STYLES)}
    conds, chunks, labels = [], [], []
    skipped = 0
    for i in range(config.n_demos):
        episode_seed = int(rng.integers(2**63))
        style = names[int(rng.choice(len(names), p=probs))]
        result, pairs = expert_rollout(spec, episode_seed, style, config.stride)
        if not result.success:
            skipped += 1
            log.warning("expert %s failed on demo %d (seed %d); skipping", style, i, episode_seed)
            continue
        for obs, chunk in pairs:
            conds.append(obs)
            chunks.append(chunk)
            labels.append(style_index[style])
    if skipped > config.max_skip_fraction * config.n_demos:
        raise EnvError(f"expert failed on {skipped}/{config.n_demos} demos, above the {config.max_skip_fraction:.0%} limit")
    if not conds:
        raise EnvError("no successful demonstrations")
    return Dataset(
        np.array(conds, dtype=np.float32),
        np.array(chunks, dtype=np.float32),
        np.array(labels, dtype=np.uint8),
        list(STYLES),
        spec.task,
        config.seed,
        CHUNK_HORIZON,
        ACTION_DIM,
        {"n_demos": config.n_demos, "skipped": skipped, "stride": config.stride, "style_weights": dict(sorted(config.style_weights.items()))},
    )
