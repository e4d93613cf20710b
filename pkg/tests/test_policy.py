import numpy as np
import pytest

from drltrade.errors import ArchitectureError, ConfigError, NonFiniteError, ShapeError
from drltrade.policy import ArchSpec, PolicyNet, build, load_policy, param_count, save_policy
from drltrade.tensor import Rng, Tensor, gaussian_log_prob_np
from helpers import rel_error

GRCNN = ArchSpec("grcnn")
CNN = ArchSpec("cnn_v1")
MLP = ArchSpec("mlp")

EXPECTED = {
    ("grcnn", 35): [("conv1", (32, 21, 7)), ("pool1", (32, 10, 3)), ("conv2", (64, 4, 1)), ("conv3", (128, 2, 1)),
                    ("conv4", (256, 1, 1)), ("flatten", (256,)), ("fc1", (512,))],
    ("grcnn", 291): [("conv1", (32, 21, 71)), ("pool1", (32, 10, 35)), ("conv2", (64, 4, 16)),
                     ("conv3", (128, 2, 14)), ("conv4", (256, 1, 12)), ("flatten", (3072,)), ("fc1", (512,))],
    ("grcnn", 494): [("conv1", (32, 21, 122)), ("pool1", (32, 10, 61)), ("conv2", (64, 4, 29)),
                     ("conv3", (128, 2, 27)), ("conv4", (256, 1, 25)), ("flatten", (6400,)), ("fc1", (512,))],
    ("cnn_v1", 35): [("conv1", (32, 21, 7)), ("conv2", (64, 9, 2)), ("flatten", (1152,)), ("fc1", (512,))],
    ("cnn_v1", 291): [("conv1", (32, 21, 71)), ("conv2", (64, 9, 34)), ("flatten", (19584,)), ("fc1", (512,))],
    ("mlp", 35): [("flatten", (3150,)), ("fc1", (64,)), ("fc2", (64,))],
    ("mlp", 494): [("flatten", (44460,)), ("fc1", (64,)), ("fc2", (64,))],
}


def obs_batch(n, window, feats, seed=0):
    rng = np.random.default_rng(seed)
    scales = 10.0 ** rng.uniform(-2, 6, feats)
    return rng.normal(size=(n, window, feats)) * scales + rng.normal(size=feats) * scales


def test_build_is_deterministic():
    a = build(GRCNN, (30, 35), 2, seed=3)
    b = build(GRCNN, (30, 35), 2, seed=3)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    c = build(GRCNN, (30, 35), 2, seed=4)
    assert not np.array_equal(a.params["fc1.weight"].data, c.params["fc1.weight"].data)
    assert np.all(a.params["log_std"].data == 0.0)


@pytest.mark.parametrize("kind, feats", sorted(EXPECTED))
def test_shape_audit(kind, feats):
    net = build(ArchSpec(kind), (90, feats), 2, seed=0)
    assert net.layer_shapes() == EXPECTED[(kind, feats)]
    trace = []
    mean, log_std, value = net.forward(obs_batch(2, 90, feats), mode="train", rng=Rng(0, 3), trace=trace)
    assert trace == EXPECTED[(kind, feats)]
    assert mean.shape == (2, 2) and log_std.shape == (2,) and value.shape == (2,)
    assert np.all(np.isfinite(mean.data)) and np.all(np.isfinite(value.data))
    assert net.n_params == param_count(ArchSpec(kind), (90, feats), 2)


def test_cnn_v1_wide_input_builds():
    assert param_count(CNN, (90, 494), 2) == (
        32 * 64 + 32 + 64 * 32 * 16 + 64 + 34560 * 512 + 512 + 512 * 2 + 2 + 512 + 1 + 2
    )


def test_mlp_param_count_formula():
    expected = (90 * 35) * 64 + 64 + 64 * 64 + 64 + (64 * 2 + 2) + (64 + 1) + 2
    assert expected == 206_021
    assert param_count(MLP, (90, 35), 2) == expected
    assert build(MLP, (90, 35), 2).n_params == expected


def test_grcnn_param_count_formula():
    # incoming extents 90x35, 10x3, 4x1, 2x1 shrink the later kernels
    conv = [(1, 32, 8, 8), (32, 64, 4, 3), (64, 128, 3, 1), (128, 256, 2, 1)]
    total = sum(o * c * kh * kw + o + 2 * o for c, o, kh, kw in conv)
    total += 256 * 512 + 512 + 512 * 2 + 2 + 512 + 1 + 2
    assert param_count(GRCNN, (90, 35), 2) == total


def test_too_small_input_names_layer():
    with pytest.raises(ArchitectureError, match="conv1"):
        build(GRCNN, (90, 5), 2)
    with pytest.raises(ArchitectureError, match="conv2"):
        build(CNN, (12, 8), 2)
    with pytest.raises(ConfigError):
        ArchSpec("transformer")


def test_grcnn_forces_input_norm():
    assert ArchSpec("grcnn", use_input_norm=False).use_input_norm


BN_CANCELLED = {f"conv{i}.bias" for i in range(1, 5)}


def _loss_fn(net, obs, cm, cv):
    mean, log_std, value = net.forward(obs, mode="train")
    return (mean * cm).sum() + (value * cv).sum() + (log_std * log_std).sum()


def test_grcnn_gradient_matches_finite_differences():
    net = build(GRCNN, (12, 8), 2, seed=1)
    rng = np.random.default_rng(0)
    for p in net.params.values():
        p.data = p.data + rng.normal(0, 0.05, p.shape)
    # batch norm over fewer values is too curved for central differences at this step
    obs = obs_batch(8, 12, 8, seed=2)
    cm = rng.normal(size=(8, 2))
    cv = rng.normal(size=8)
    net.zero_grad()
    _loss_fn(net, obs, cm, cv).backward()
    for name, p in net.params.items():
        analytic = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        # every coordinate of small tensors, a seeded sample of 40 from large ones
        idx = np.arange(flat.size) if flat.size <= 64 else rng.choice(flat.size, 40, replace=False)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + 1e-6
            up = _loss_fn(net, obs, cm, cv).item()
            flat[i] = orig - 1e-6
            down = _loss_fn(net, obs, cm, cv).item()
            flat[i] = orig
            numeric[k] = (up - down) / 2e-6
        if name in BN_CANCELLED:
            # a bias feeding straight into train-mode batch norm has zero gradient
            assert np.max(np.abs(analytic)) <= 1e-10 and np.max(np.abs(numeric)) <= 1e-6, name
        else:
            assert rel_error(analytic[idx], numeric) <= 1e-4, name


def test_constant_observation_grcnn():
    net = build(GRCNN, (30, 35), 2, seed=0)
    m1, _, v1 = net.forward(np.full((30, 35), 3.0))
    m2, _, v2 = net.forward(np.full((30, 35), -70.0))
    assert np.all(np.isfinite(m1.data))
    assert np.array_equal(m1.data, m2.data) and np.array_equal(v1.data, v2.data)


def test_column_normalisation_invariance():
    net = build(GRCNN, (30, 35), 2, seed=0)
    obs = obs_batch(1, 30, 35, seed=5)[0]
    m0, _, v0 = net.forward(obs)
    rng = np.random.default_rng(1)
    for col in rng.choice(35, 8, replace=False):
        o = obs.copy()
        o[:, col] = o[:, col] * rng.uniform(0.01, 100) + rng.normal() * 1e3
        m, _, v = net.forward(o)
        assert np.max(np.abs(m.data - m0.data)) <= 1e-6
        assert np.max(np.abs(v.data - v0.data)) <= 1e-6


def test_value_head_scalar_and_cnn_eval_determinism():
    for feats, d in [(35, 2), (60, 5)]:
        net = build(CNN, (90, feats), d)
        obs = obs_batch(1, 90, feats)[0]
        m, _, v = net.forward(obs)
        m2, _, v2 = net.forward(obs)
        assert v.shape == (1,) and m.shape == (1, d)
        assert m.data.tobytes() == m2.data.tobytes() and v.data.tobytes() == v2.data.tobytes()


def test_forward_rejects_bad_obs():
    net = build(MLP, (10, 4), 2)
    bad = np.zeros((10, 4))
    bad[3, 2] = np.nan
    with pytest.raises(NonFiniteError):
        net.forward(bad)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((10, 5)))


def test_act_degenerate_and_deterministic():
    net = build(MLP, (10, 4), 3, seed=2)
    obs = obs_batch(1, 10, 4)[0]
    net.params["actor.bias"].data = np.array([0.3, -2.0, 5.0])
    net.params["log_std"].data = np.full(3, np.log(1e-12))
    mean = net.forward(obs)[0].data[0]
    res = net.act(obs, Rng(0, 1))
    np.testing.assert_allclose(res.action, np.clip(mean, -1, 1), atol=1e-10)
    net.params["log_std"].data = np.zeros(3)
    a = net.act(obs, Rng(5, 1))
    b = net.act(obs, Rng(5, 1))
    assert a.action.tobytes() == b.action.tobytes() and a.log_prob == b.log_prob


def test_act_sample_mean_monte_carlo():
    net = build(MLP, (4, 3), 1, seed=0)
    net.params["actor.weight"].data[:] = 0.0
    rng = Rng(11, 1)
    obs = np.ones((4, 3))
    samples = np.array([net.act(obs, rng).sample[0] for _ in range(10_000)])
    assert abs(samples.mean()) <= 0.05
    assert np.all(np.abs([net.act(obs, rng).action for _ in range(100)]) <= 1.0)


@pytest.mark.parametrize("spec", [MLP, CNN, GRCNN])
def test_evaluate_matches_act(spec):
    net = build(spec, (30, 35), 2, seed=1)
    net.params["log_std"].data = np.array([-0.5, 0.3])
    obs = np.random.default_rng(0).normal(size=(4, 30, 35))
    rng = Rng(1, 1)
    acts = [net.act(o, rng) for o in obs]
    lp, ent, val = net.evaluate_actions(obs, np.array([a.sample for a in acts]), mode="eval")
    np.testing.assert_allclose(lp.data, [a.log_prob for a in acts], atol=1e-12, rtol=0)
    np.testing.assert_allclose(val.data, [a.value for a in acts], atol=1e-12, rtol=0)
    assert np.all(ent.data == ent.data[0])


def test_log_prob_monotone_away_from_mean():
    net = build(MLP, (5, 3), 1)
    obs = np.ones((5, 3))
    mu = net.forward(obs)[0].data[0, 0]
    lps = [net.evaluate_actions(obs, [[mu + d]], mode="eval")[0].item() for d in (0.0, 0.1, 0.5, 1.0, 3.0)]
    assert all(a > b for a, b in zip(lps, lps[1:]))
    assert lps[0] == pytest.approx(float(gaussian_log_prob_np(np.array([mu]), np.zeros(1), np.array([mu]))))


def test_evaluate_shape_mismatch():
    net = build(MLP, (5, 3), 2)
    with pytest.raises(ShapeError):
        net.evaluate_actions(np.ones((3, 5, 3)), np.zeros((2, 2)))


def test_train_mode_updates_running_stats_and_checkpoint_round_trip(tmp_path):
    net = build(GRCNN, (30, 35), 2, seed=0)
    net.forward(obs_batch(4, 30, 35), mode="train")
    assert net.running["bn1"].updates == 1
    save_policy(tmp_path / "ck", net, {"note": "x"})
    back, meta = load_policy(tmp_path / "ck")
    assert meta["note"] == "x" and meta["kind"] == "grcnn"
    obs = obs_batch(1, 30, 35, seed=9)[0]
    assert back.forward(obs)[0].data.tobytes() == net.forward(obs)[0].data.tobytes()
    with pytest.raises(ArchitectureError):
        build(GRCNN, (30, 36), 2).load_arrays(net.state_arrays())


def test_gradients_flow_to_every_parameter():
    net = build(CNN, (30, 35), 2, seed=0)
    lp, ent, val = net.evaluate_actions(obs_batch(3, 30, 35), np.zeros((3, 2)), rng=Rng(0, 4))
    (lp.sum() + val.sum()).backward()
    for name, p in net.params.items():
        assert p.grad is not None and np.all(np.isfinite(p.grad)), name
    assert isinstance(lp, Tensor)
