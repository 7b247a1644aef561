import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from golden_ticket import envs
from golden_ticket.envs import (
    CHUNK_HORIZON,
    HOME,
    STYLES,
    DataConfig,
    EnvError,
    EnvSpec,
    EnvState,
    decode_chunk,
    encode_chunk,
    expert_rollout,
    generate_dataset,
    reset,
    scripted_expert,
    spiral_step,
    step,
)

REACH = EnvSpec("reach-pick")
PUSH = EnvSpec("push")
MULTI = EnvSpec("multi-goal")


def test_spec_validation():
    with pytest.raises(ValueError):
        EnvSpec("stack")
    with pytest.raises(ValueError):
        EnvSpec(horizon=0)
    with pytest.raises(ValueError):
        EnvSpec(x_bounds=(0.2, -0.2))
    with pytest.raises(ValueError):
        EnvSpec(success_radius=0.0)
    with pytest.raises(ValueError):
        EnvSpec("multi-goal", fixed_task=4)
    assert REACH.obs_dim == 5 and MULTI.obs_dim == 9 and MULTI.n_tasks == 4


@pytest.mark.parametrize("spec", [REACH, PUSH, MULTI])
def test_reset_is_deterministic_and_starts_home(spec):
    a, oa = reset(spec, 123)
    b, ob = reset(spec, 123)
    assert a == b
    np.testing.assert_array_equal(oa, ob)
    assert a.agent == HOME and a.t == 0 and not a.done


@pytest.mark.parametrize("spec", [REACH, PUSH, MULTI])
def test_reset_statistics(spec):
    objs = np.array([reset(spec, s)[0].obj for s in range(1000)])
    assert np.all((objs[:, 0] >= spec.x_bounds[0]) & (objs[:, 0] <= spec.x_bounds[1]))
    assert np.all((objs[:, 1] >= spec.y_bounds[0]) & (objs[:, 1] <= spec.y_bounds[1]))
    mid = spec.center
    assert np.all(np.abs(objs.mean(axis=0) - mid) < 0.02)


def test_push_never_starts_solved():
    for s in range(1000):
        state, _ = reset(PUSH, s)
        assert math.dist(state.obj, PUSH.center) > 2 * PUSH.success_radius


def test_multi_goal_task_frequencies():
    ids = np.array([reset(MULTI, s)[0].task_id for s in range(1000)])
    freq = np.bincount(ids, minlength=4) / 1000
    assert np.all((freq >= 0.2) & (freq <= 0.3)), freq
    assert reset(MULTI.for_task(2), 5)[0].task_id == 2


def test_observation_layout():
    state = EnvState(agent=(0.1, 0.2), obj=(0.3, 0.4), grabbed=True, task_id=1)
    np.testing.assert_array_equal(envs.observe(REACH, state), np.float32([0.1, 0.2, 0.3, 0.4, 1.0]))
    np.testing.assert_array_equal(envs.observe(MULTI, state)[5:], [0, 1, 0, 0])


def test_idle_policy_times_out():
    spec = replace(REACH, horizon=30)
    state, _ = reset(spec, 0)
    total = 0.0
    while not state.done:
        state, r, _ = step(spec, state, [0.0, 0.0, 0.0])
        total += r
    assert state.t == 30 and total == 0.0 and not state.success
    with pytest.raises(EnvError):
        step(spec, state, [0.0, 0.0, 0.0])


def test_grab_at_object_succeeds():
    state = EnvState(agent=(0.1, 0.4), obj=(0.1, 0.4))
    state, r, done = step(REACH, state, [0.0, 0.0, 1.0])
    assert r == 1.0 and done and state.success and state.grabbed


def test_missed_grab_is_harmless():
    state = EnvState(agent=(0.0, 0.15), obj=(0.1, 0.4))
    state, r, done = step(REACH, state, [0.0, 0.0, 1.0])
    assert r == 0.0 and not done and not state.grabbed


def test_horizon_one_episode():
    spec = replace(REACH, horizon=1)
    state, _ = reset(spec, 0)
    state, r, done = step(spec, state, [0.05, 0.05, 1.0])
    assert done and state.t == 1 and r in (0.0, 1.0)


@given(st.integers(0, 10_000), st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1)), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_physical_sanity(seed, actions):
    for spec in (REACH, PUSH, MULTI):
        state, _ = reset(spec, seed)
        for a in actions:
            if state.done:
                break
            prev = state
            state, r, _ = step(spec, state, a)
            assert math.dist(prev.agent, state.agent) <= 0.05 + 1e-9
            for p in (state.agent, state.obj):
                assert np.all(np.array(p) >= spec.padded_lo - 1e-12) and np.all(np.array(p) <= spec.padded_hi + 1e-12)
            assert r in (0.0, 1.0) and (r == 1.0) == state.success


def test_push_contact_moves_disk():
    state = EnvState(agent=(0.0, 0.25), obj=(0.0, 0.29))
    state, _, _ = step(PUSH, state, [0.0, 0.05, 0.0])
    assert state.obj[1] > 0.29
    assert math.dist(state.agent, state.obj) >= envs.CONTACT - 1e-9


def test_determinism_of_trajectories():
    rng = np.random.default_rng(0)
    actions = rng.uniform(-0.06, 0.06, (50, 3))
    digests = []
    for _ in range(2):
        state, _ = reset(MULTI, 9)
        d = envs.TrajectoryDigest()
        d.update(state)
        for a in actions:
            if state.done:
                break
            state, _, _ = step(MULTI, state, a)
            d.update(state)
        digests.append(d.hexdigest())
    assert digests[0] == digests[1] and len(digests[0]) == 16


@pytest.mark.parametrize("spec", [REACH, PUSH, MULTI], ids=lambda s: s.task)
@pytest.mark.parametrize("style", STYLES)
def test_expert_sufficiency(spec, style):
    wins = sum(expert_rollout(spec, s, style)[0].success for s in range(1000))
    assert wins >= 990, f"{spec.task}/{style}: {wins}/1000"


def test_direct_expert_goes_straight():
    state = EnvState(agent=(0.0, 0.15), obj=(0.0, 0.45))
    chunk = scripted_expert(REACH, state, "direct-fast")
    assert chunk.shape == (CHUNK_HORIZON, 3)
    assert np.all(np.abs(chunk[:, 0]) < 1e-12)
    assert np.all(np.hypot(chunk[:, 0], chunk[:, 1]) <= 0.05 + 1e-12)
    assert np.all(chunk[:, 1] > 0)


def mirror(points, origin, axis):
    """Reflect 2D points about the line through ``origin`` along ``axis``."""
    axis = axis / np.linalg.norm(axis)
    rel = points - origin
    along = rel @ axis
    return origin + 2 * np.outer(along, axis) - rel


@given(st.floats(-0.25, 0.25), st.floats(0.25, 0.55), st.sampled_from(["slow", "fast"]))
@settings(max_examples=50, deadline=None)
def test_arc_left_and_right_are_mirror_images(ox, oy, pace):
    state = EnvState(agent=HOME, obj=(ox, oy))
    left = scripted_expert(REACH, state, f"arc-left-{pace}")
    right = scripted_expert(REACH, state, f"arc-right-{pace}")
    axis = np.array([ox, oy]) - np.array(HOME)
    pos_l = np.array(HOME) + np.cumsum(left[:, :2], axis=0)
    pos_r = np.array(HOME) + np.cumsum(right[:, :2], axis=0)
    np.testing.assert_allclose(mirror(pos_l, np.array(HOME), axis), pos_r, atol=1e-6)
    np.testing.assert_array_equal(left[:, 2], right[:, 2])


@given(st.floats(-0.25, 0.25), st.floats(0.25, 0.55), st.sampled_from(["direct", "arc-left", "arc-right"]))
@settings(max_examples=50, deadline=None)
def test_slow_and_fast_share_a_path(ox, oy, path):
    state = EnvState(agent=HOME, obj=(ox, oy))
    # the slow expert needs two steps per fast step; compare positions on the fast grid
    fast = scripted_expert(REACH, state, f"{path}-fast", horizon=4)
    slow = scripted_expert(REACH, state, f"{path}-slow", horizon=8)
    pos_f = np.cumsum(fast[:, :2], axis=0)
    pos_s = np.cumsum(slow[:, :2], axis=0)[1::2]
    np.testing.assert_allclose(pos_s, pos_f, atol=1e-9)
    # speed along the spiral shows up as the per-step drop in distance to the target (L cos(angle))
    target = np.array([ox, oy])
    r_f = np.linalg.norm(np.array(HOME) + np.vstack([[0, 0], pos_f]) - target, axis=1)
    r_s = np.linalg.norm(np.array(HOME) + np.vstack([[0, 0], np.cumsum(slow[:, :2], axis=0)]) - target, axis=1)
    drop_f, drop_s = -np.diff(r_f), -np.diff(r_s)
    full = drop_f > 0.99 * drop_f[0]  # the arrival step may be partial
    np.testing.assert_allclose(drop_s[: 2 * int(full.sum())], np.repeat(0.5 * drop_f[full], 2), rtol=1e-9, atol=1e-12)


def test_spiral_reaches_target_exactly():
    pos, done = (0.0, 0.15), False
    for _ in range(200):
        pos, done = spiral_step(pos, (0.1, 0.4), math.radians(35), 0.02)
        if done:
            break
    assert done and pos == (0.1, 0.4)


@given(st.lists(st.floats(-2, 2), min_size=24, max_size=24))
def test_chunk_encoding_round_trip(values):
    chunk = np.array(values).reshape(8, 3)
    np.testing.assert_allclose(encode_chunk(decode_chunk(chunk, 0.05), 0.05), chunk, atol=1e-12)


def test_single_demo_slicing():
    cfg = DataConfig(n_demos=1, seed=0, style_weights={"direct-fast": 1.0})
    ds = generate_dataset(REACH, cfg)
    rng = np.random.default_rng(0)
    episode_seed = int(rng.integers(2**63))
    result, _ = expert_rollout(REACH, episode_seed, "direct-fast")
    assert len(ds) == math.ceil(result.length / CHUNK_HORIZON)
    assert np.all(np.isfinite(ds.conds)) and np.all(np.isfinite(ds.chunks))


def test_dataset_is_deterministic():
    cfg = DataConfig(n_demos=30, seed=5, style_weights={"arc-left-slow": 0.5, "direct-fast": 0.5})
    assert generate_dataset(MULTI, cfg).to_bytes() == generate_dataset(MULTI, cfg).to_bytes()


def test_style_fraction_tracks_weights():
    cfg = DataConfig(n_demos=1000, seed=1, style_weights={"arc-left-fast": 0.9, "direct-fast": 0.1})
    ds = generate_dataset(REACH, cfg)
    labels = np.array(ds.style_names)[ds.styles]
    frac = float(np.mean(labels == "arc-left-fast"))
    assert 0.85 <= frac <= 0.95


def test_data_config_validation():
    with pytest.raises(ValueError):
        DataConfig(n_demos=0)
    with pytest.raises(ValueError):
        DataConfig(style_weights={"direct-fast": 0.5})
    with pytest.raises(ValueError):
        DataConfig(style_weights={"zigzag-fast": 1.0})


def test_too_many_expert_failures_raise():
    spec = replace(REACH, horizon=3)  # no expert can reach in 3 steps
    with pytest.raises(EnvError, match="expert failed"):
        generate_dataset(spec, DataConfig(n_demos=20, seed=0))
