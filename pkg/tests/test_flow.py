import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from golden_ticket import checkpoint
from golden_ticket.flow import Dataset, FlowModel, TrainConfig, corrupt, fm_loss, sample, scheduled_lr, train, write_trace_csv
from golden_ticket.nn import Layer, MlpParams, init_mlp

from conftest import make_model

vec = arrays(np.float64, 4, elements=st.floats(-10, 10))


def test_corrupt_endpoints_and_midpoint():
    v, w = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    np.testing.assert_array_equal(corrupt(v, w, 0.0), v)
    np.testing.assert_array_equal(corrupt(v, w, 1.0), w)
    np.testing.assert_allclose(corrupt(np.array([1.0, 0.0]), np.array([0.0, 2.0]), 0.5), [0.5, 1.0])


@given(vec, vec, vec, vec, st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_corrupt_is_affine(x1, x2, e1, e2, a, b, tau):
    lhs = corrupt(a * x1 + b * x2, a * e1 + b * e2, tau)
    rhs = a * corrupt(x1, e1, tau) + b * corrupt(x2, e2, tau)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_corrupt_errors():
    with pytest.raises(ValueError):
        corrupt(np.zeros(2), np.zeros(2), 1.5)
    with pytest.raises(ValueError):
        corrupt(np.zeros(2), np.zeros(2), -0.1)
    with pytest.raises(ValueError):
        corrupt(np.zeros(2), np.zeros(3), 0.5)


def zero_model(d=3, c=1):
    net = MlpParams([Layer(np.zeros((d + c + 1, d)), np.zeros(d))])
    return FlowModel(net, d, c, horizon=1, action_dim=d)


def test_fm_loss_zero_prediction_gives_squared_norm():
    m = zero_model(d=2)
    loss, _ = fm_loss(m, np.zeros((1, 2)), np.zeros((1, 1)), tau=[0.3], eps=np.array([[3.0, 4.0]]))
    assert loss == 25.0


def test_fm_loss_is_zero_when_prediction_hits_target():
    # at tau = 1, z = eps; with x = 0 the target eps - x is z itself
    d, c = 3, 2
    w = np.zeros((d + c + 1, d))
    w[:d, :d] = np.eye(d)
    m = FlowModel(MlpParams([Layer(w, np.zeros(d))]), d, c, horizon=1, action_dim=d)
    eps = np.random.default_rng(0).standard_normal((5, d))
    loss, grads = fm_loss(m, np.zeros((5, d)), np.ones((5, c)), tau=np.ones(5), eps=eps)
    assert loss == 0.0
    assert all(not np.any(g) for g in grads.arrays())


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_fm_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = make_model(seed)
    loss, _ = fm_loss(m, rng.standard_normal((4, 6)), rng.standard_normal((4, 2)), rng)
    assert loss >= 0.0


def test_fm_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    m = make_model(seed=1, hidden=(5, 4), dtype=np.float64)
    x, cond = rng.standard_normal((3, 6)), rng.standard_normal((3, 2))
    tau, eps = rng.random(3), rng.standard_normal((3, 6))
    _, grads = fm_loss(m, x, cond, tau=tau, eps=eps)
    arrays_ = m.net.arrays()
    h = 1e-6
    for k, arr in enumerate(arrays_):
        for idx in list(np.ndindex(arr.shape))[::3]:
            plus = [a.copy() for a in arrays_]
            minus = [a.copy() for a in arrays_]
            plus[k][idx] += h
            minus[k][idx] -= h
            lp, _ = fm_loss(FlowModel(MlpParams.from_arrays(plus), 6, 2, 2, 3), x, cond, tau=tau, eps=eps)
            lm, _ = fm_loss(FlowModel(MlpParams.from_arrays(minus), 6, 2, 2, 3), x, cond, tau=tau, eps=eps)
            num = (lp - lm) / (2 * h)
            ana = grads.arrays()[k][idx]
            assert abs(ana - num) <= 1e-3 * max(abs(ana), abs(num), 1e-4)


def test_fm_loss_shape_errors(tiny_model):
    with pytest.raises(ValueError):
        fm_loss(tiny_model, np.zeros((2, 5)), np.zeros((2, 2)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        fm_loss(tiny_model, np.zeros((2, 6)), np.zeros((3, 2)), np.random.default_rng(0))


def test_flow_model_rejects_wrong_widths():
    with pytest.raises(ValueError):
        FlowModel(init_mlp([8, 4, 6], 0), 6, 2, 2, 3)  # input should be 6 + 2 + 1
    with pytest.raises(ValueError):
        FlowModel(init_mlp([9, 4, 5], 0), 6, 2, 2, 3)


class Field:
    """Test double: the exact single-datapoint velocity (z - x*) / tau."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def velocity(self, z, cond, tau):
        return (z - self.target) / tau


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3, 8, 64]))
@settings(max_examples=60, deadline=None)
def test_euler_is_exact_on_single_point_field(seed, steps):
    rng = np.random.default_rng(seed)
    x_star, z1 = rng.standard_normal(6), rng.standard_normal(6)
    out = sample(Field(x_star), None, z1, steps)
    np.testing.assert_allclose(out, x_star, atol=1e-5)


def test_one_step_is_single_euler_update(tiny_model):
    z1 = np.random.default_rng(0).standard_normal(6).astype(np.float32)
    cond = np.array([0.2, -0.4], dtype=np.float32)
    expected = z1 - tiny_model.velocity(z1, cond, 1.0)[0]
    np.testing.assert_array_equal(sample(tiny_model, cond, z1, 1), expected)


def test_sample_is_deterministic_and_steps_matter(tiny_model):
    z1 = np.random.default_rng(2).standard_normal(6).astype(np.float32)
    cond = np.zeros(2, dtype=np.float32)
    a = sample(tiny_model, cond, z1, 8)
    np.testing.assert_array_equal(a, sample(tiny_model, cond, z1, 8))
    b = sample(tiny_model, cond, z1, 2)
    assert a.shape == b.shape == (6,)
    assert np.all(np.isfinite(a - b))


def test_sample_rejects_zero_steps(tiny_model):
    with pytest.raises(ValueError):
        sample(tiny_model, np.zeros(2), np.zeros(6), 0)
    with pytest.raises(ValueError):
        sample(tiny_model, np.zeros(3), np.zeros(6), 2)


def small_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.standard_normal((n, 2)),
        rng.uniform(-1, 1, (n, 6)),
        rng.integers(0, 3, n),
        ["a", "b", "c"],
        "reach-pick",
        seed,
        horizon=2,
        action_dim=3,
        meta={"note": "synthetic"},
    )


def test_dataset_round_trip_and_hash():
    ds = small_dataset()
    back = Dataset.from_bytes(ds.to_bytes())
    np.testing.assert_array_equal(back.conds, ds.conds)
    np.testing.assert_array_equal(back.chunks, ds.chunks)
    np.testing.assert_array_equal(back.styles, ds.styles)
    assert back.meta == ds.meta and back.env_id == ds.env_id
    assert back.content_hash() == ds.content_hash()
    assert small_dataset(seed=1).content_hash() != ds.content_hash()


def test_dataset_rejects_corruption():
    blob = small_dataset().to_bytes()
    with pytest.raises(ValueError):
        Dataset.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        Dataset.from_bytes(blob[:-3])
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros((0, 6)), np.zeros(0), [], "x", 0, 2, 3)


def test_train_config_validation():
    for bad in [dict(epochs=0), dict(batch_size=0), dict(val_fraction=0.0), dict(val_fraction=1.0), dict(lr=0.0), dict(lr_schedule="step")]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        train(TrainConfig(batch_size=41), small_dataset(40))


def test_cosine_schedule_endpoints():
    assert scheduled_lr(1e-3, "constant", 50, 100) == 1e-3
    assert scheduled_lr(1e-3, "cosine", 0, 100) == 1e-3
    assert abs(scheduled_lr(1e-3, "cosine", 50, 100) - 5e-4) < 1e-15
    assert scheduled_lr(1e-3, "cosine", 100, 100) == 0.0


def test_train_is_deterministic_and_reduces_loss(tmp_path):
    ds = small_dataset(60)
    cfg = TrainConfig(epochs=15, batch_size=10, seed=4, hidden=(16, 16))
    m1, trace1 = train(cfg, ds)
    m2, trace2 = train(cfg, ds)
    assert checkpoint.to_bytes(m1) == checkpoint.to_bytes(m2)
    assert [t.val_loss for t in trace1] == [t.val_loss for t in trace2]
    assert len(trace1) == cfg.epochs + 1 and trace1[0].epoch == 0
    assert trace1[-1].val_loss < trace1[0].val_loss
    m3, _ = train(TrainConfig(epochs=15, batch_size=10, seed=5, hidden=(16, 16)), ds)
    assert checkpoint.to_bytes(m3) != checkpoint.to_bytes(m1)
    assert m1.config_digest == cfg.digest()
    write_trace_csv(trace1, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == cfg.epochs + 2


def test_train_stores_condition_normalization():
    ds = small_dataset(50)
    m, _ = train(TrainConfig(epochs=1, batch_size=10, seed=0, hidden=(4,)), ds)
    normed = m.normalize(ds.conds)
    np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-5)
    np.testing.assert_allclose(normed.std(axis=0), 1.0, atol=1e-4)
