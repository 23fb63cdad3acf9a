import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobilecl import ppo
from mobilecl.ppo import Minibatch, ModelFileError, PpoConfig, RolloutBuffer
from oracles import fd_gradient_error, gae_brute_force, random_minibatch, ratios_near_kink

OBS, ACT = 45, 15


def params(seed=0):
    return ppo.init_params(OBS, ACT, np.random.default_rng(seed))


# ---------------------------------------------------------------- network


def test_shapes_and_zero_network():
    p = ppo.zero_params(OBS, ACT)
    assert p.shapes() == {
        "w1": (45, 64), "b1": (64,), "w2": (64, 64), "b2": (64,),
        "wp": (64, 15), "bp": (15,), "wv": (64, 1), "bv": (1,),
    }  # fmt: skip
    logits, value = ppo.forward(p, np.random.default_rng(0).random(OBS))
    assert not logits.any() and value == 0.0
    assert ppo.sigmoid(logits).tolist() == [0.5] * ACT


def test_forward_rejects_wrong_shape():
    with pytest.raises(ValueError):
        ppo.forward(params(), np.zeros(44))


def test_padded_slots_ignored_when_weights_zeroed():
    p = params()
    pad = np.zeros(OBS, dtype=bool)
    pad[[4, 19, 34]] = True
    p.w1[pad] = 0.0
    x = np.random.default_rng(1).random(OBS)
    y = x.copy()
    y[pad] = 123.0
    np.testing.assert_array_equal(ppo.forward(p, x)[0], ppo.forward(p, y)[0])


def test_batch_forward_matches_single():
    p = params()
    X = np.random.default_rng(2).random((7, OBS))
    logits, values = ppo.forward(p, X)
    for i in range(7):
        lg, v = ppo.forward(p, X[i])
        np.testing.assert_allclose(lg, logits[i], rtol=1e-12)
        assert v == pytest.approx(values[i], rel=1e-12)


# ---------------------------------------------------------------- action distribution


def test_sample_action_examples():
    rng = np.random.default_rng(0)
    bits, logp = ppo.sample_action(np.zeros(ACT), np.zeros(ACT, dtype=np.int8), rng)
    assert not bits.any() and logp == 0.0
    bits, logp = ppo.sample_action(np.full(ACT, 50.0), np.ones(ACT, dtype=np.int8), rng)
    assert bits.all() and logp == pytest.approx(0.0, abs=1e-15 * ACT + 1e-18)


@given(st.lists(st.floats(-8, 8), min_size=6, max_size=6), st.lists(st.integers(0, 1), min_size=6, max_size=6))
def test_joint_log_prob_is_product_over_valid_bits(logits, mask):
    logits = np.array(logits)
    mask = np.array(mask)
    for bits in np.ndindex(*(2,) * 6):
        bits = np.array(bits) * mask
        direct = 1.0
        for lg, b, mk in zip(logits, bits, mask):
            if mk:
                p1 = 1 / (1 + math.exp(-lg))
                direct *= p1 if b else 1 - p1
        assert ppo.bernoulli_log_prob(logits, bits, mask) == pytest.approx(math.log(direct), abs=1e-9)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=15))
def test_entropy_closed_form(logits):
    logits = np.array(logits)
    p = 1 / (1 + np.exp(-logits))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log(p), 0) + np.where(p < 1, (1 - p) * np.log1p(-p), 0))
    assert ppo.bernoulli_entropy(logits, np.ones_like(logits)) == pytest.approx(h.sum(), abs=1e-9)


def test_sampling_frequencies():
    rng = np.random.default_rng(0)
    logits = np.array([-1.0, 0.0, 2.0])
    bits = np.array([ppo.sample_action(logits, np.ones(3, dtype=np.int8), rng)[0] for _ in range(20000)])
    np.testing.assert_allclose(bits.mean(axis=0), ppo.sigmoid(logits), atol=0.015)


# ---------------------------------------------------------------- GAE


def test_gae_returns_example():
    adv, ret = ppo.gae([1, 2, 3], [0, 0, 0], [0, 0, 0], 0.0, gamma=0.5, lam=1.0)
    np.testing.assert_allclose(ret, [2.75, 3.5, 3.0])


def test_gae_lambda_zero_is_td_error():
    r = np.array([1.0, -0.5, 2.0, 0.3])
    v = np.array([0.2, 0.1, -0.4, 0.9])
    d = np.array([0, 1, 0, 0])
    adv, _ = ppo.gae(r, v, d, 0.7, gamma=0.9, lam=0.0)
    v_next = np.array([0.1, -0.4, 0.9, 0.7])
    np.testing.assert_allclose(adv, r + 0.9 * v_next * (1 - d) - v, atol=1e-15)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0), st.floats(0.01, 1.0))
def test_gae_matches_brute_force(seed, lam, gamma):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 12))
    r, v = rng.normal(size=T), rng.normal(size=T)
    d = (rng.random(T) < 0.2).astype(float)
    last = float(rng.normal())
    adv, ret = ppo.gae(r, v, d, last, gamma, lam)
    adv2, ret2 = gae_brute_force(r, v, d, last, gamma, lam)
    np.testing.assert_allclose(adv, adv2, atol=1e-10)
    np.testing.assert_allclose(ret, ret2, atol=1e-10)


# ---------------------------------------------------------------- loss


def one_sample_batch(adv, ratio):
    p = ppo.zero_params(OBS, ACT)
    mask = np.zeros((1, ACT))
    mask[0, 0] = 1
    # logits 0 -> logp of bit 0 is log(0.5); choose old_logp so exp(new - old) = ratio
    old = math.log(0.5) - math.log(ratio)
    return p, Minibatch(np.zeros((1, OBS)), np.zeros((1, ACT)), mask, np.array([old]), np.array([adv]), np.zeros(1))


@pytest.mark.parametrize("adv, ratio, expected", [(1.0, 1.5, 1.2), (-1.0, 0.5, -0.8), (1.0, 1.0, 1.0), (-2.0, 1.1, -2.2)])
def test_surrogate_examples(adv, ratio, expected):
    p, batch = one_sample_batch(adv, ratio)
    cfg = PpoConfig(value_coef=0.0, entropy_coef=0.0)
    _, _, stats = ppo.ppo_loss(p, batch, cfg)
    assert -stats["policy_loss"] == pytest.approx(expected, abs=1e-12)


def test_ratio_one_gives_minus_mean_advantage():
    p = params()
    rng = np.random.default_rng(0)
    batch = random_minibatch(rng, p, 16, old_logp_jitter=0.0)
    _, _, stats = ppo.ppo_loss(p, batch, PpoConfig())
    assert stats["policy_loss"] == pytest.approx(-batch.advantages.mean(), abs=1e-12)


def test_clipped_branch_has_zero_policy_gradient():
    p, batch = one_sample_batch(1.0, 1.5)
    cfg = PpoConfig(value_coef=0.0, entropy_coef=0.0)
    _, g, _ = ppo.ppo_loss(p, batch, cfg)
    assert not g.flat().any()


@pytest.mark.parametrize("seed", range(8))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = params(seed)
    for arr in p.arrays():
        arr += rng.normal(0, 0.3, size=arr.shape)
    cfg = PpoConfig(value_coef=float(rng.uniform(0.1, 1)), entropy_coef=float(rng.uniform(0, 0.1)))
    batch = random_minibatch(rng, p, 16)
    while ratios_near_kink(p, batch, cfg.clip_eps, 1e-3):
        batch = random_minibatch(rng, p, 16)
    assert fd_gradient_error(p, batch, cfg, rng) < 1e-4


def test_huge_clip_equals_policy_gradient():
    rng = np.random.default_rng(3)
    p = params(3)
    batch = random_minibatch(rng, p, 32, old_logp_jitter=0.0)
    cfg = PpoConfig(clip_eps=1e9, value_coef=0.0, entropy_coef=0.0)
    _, g, _ = ppo.ppo_loss(p, batch, cfg)
    # plain policy gradient: -mean(A * grad logp), via the same backprop with ratio 1 expressed directly
    logits, _ = ppo.forward(p, batch.obs)
    g_logits = -(batch.advantages / len(batch))[:, None] * batch.masks * (batch.actions - ppo.sigmoid(logits))
    _, h2 = ppo._trunk(p, batch.obs)
    pg_wp = h2.T @ g_logits
    cos = float((g.wp * pg_wp).sum() / (np.linalg.norm(g.wp) * np.linalg.norm(pg_wp)))
    assert cos == pytest.approx(1.0, abs=1e-8)


def test_non_finite_intermediate_is_named():
    p = params()
    batch = random_minibatch(np.random.default_rng(0), p, 4)
    batch.old_logp[0] = -1e6  # ratio overflows
    with pytest.raises(FloatingPointError, match="ratio"):
        ppo.ppo_loss(p, batch, PpoConfig())
    bad = p.copy()
    bad.w1[0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="logits"):
        ppo.ppo_loss(bad, batch, PpoConfig())


def test_empty_minibatch_rejected():
    p = params()
    empty = Minibatch(np.zeros((0, OBS)), np.zeros((0, ACT)), np.zeros((0, ACT)), np.zeros(0), np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        ppo.ppo_loss(p, empty, PpoConfig())


# ---------------------------------------------------------------- update


def filled_buffer(seed=0, n=200):
    rng = np.random.default_rng(seed)
    p = params(seed)
    buf = RolloutBuffer()
    mask = np.ones(ACT, dtype=np.int8)
    for t in range(n):
        obs = rng.random(OBS)
        logits, v = ppo.forward(p, obs)
        bits, logp = ppo.sample_action(logits, mask, rng)
        buf.add(obs, bits, mask, logp, v, float(bits[:3].sum()), t % 50 == 49)
    buf.finalize(0.0, 0.99, 0.95)
    return p, buf


def test_lr_zero_leaves_params_unchanged():
    p, buf = filled_buffer()
    new, _ = ppo.update(p, buf, PpoConfig(lr=0.0, epochs_per_update=2), np.random.default_rng(0))
    np.testing.assert_array_equal(new.flat(), p.flat())


def test_update_is_deterministic():
    p, buf = filled_buffer()
    a, _ = ppo.update(p, buf, PpoConfig(epochs_per_update=2), np.random.default_rng(5))
    b, _ = ppo.update(p, buf, PpoConfig(epochs_per_update=2), np.random.default_rng(5))
    np.testing.assert_array_equal(a.flat(), b.flat())


def test_repeated_sample_loss_decreases():
    p = params(1)
    rng = np.random.default_rng(1)
    batch = random_minibatch(rng, p, 1, old_logp_jitter=0.0)
    cfg = PpoConfig(normalize_advantages=False)
    opt = ppo.Adam()
    losses = []
    for _ in range(4):
        loss, g, _ = ppo.ppo_loss(p, batch, cfg)
        losses.append(loss)
        g, _ = ppo.clip_grad_norm(g, cfg.max_grad_norm)
        p = opt.step(p, g, cfg.lr)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_update_learns_a_bandit():
    # reward = number of set bits among the first 3 valid positions
    rng = np.random.default_rng(0)
    p = params(0)
    mask = np.zeros(ACT, dtype=np.int8)
    mask[:3] = 1
    cfg = PpoConfig(rollout_len=256, epochs_per_update=4, gamma=0.5)
    opt = ppo.Adam()
    obs = np.full(OBS, 0.5)
    for _ in range(15):
        buf = RolloutBuffer()
        for _ in range(cfg.rollout_len):
            logits, v = ppo.forward(p, obs)
            bits, logp = ppo.sample_action(logits, mask, rng)
            buf.add(obs, bits, mask, logp, v, float(bits.sum()), True)
        buf.finalize(0.0, cfg.gamma, cfg.gae_lambda)
        p, _ = ppo.update(p, buf, cfg, rng, opt)
    probs = ppo.sigmoid(ppo.forward(p, obs)[0][:3])
    assert (probs > 0.9).all()


def test_advantage_normalisation():
    adv = np.random.default_rng(0).normal(3.0, 7.0, size=64)
    z = ppo.normalize(adv)
    assert abs(z.mean()) < 1e-10
    assert abs(z.std() - 1) < 1e-6


def test_grad_clipping():
    g = ppo.zero_params(OBS, ACT)
    g.b1[:] = 1.0
    clipped, norm = ppo.clip_grad_norm(g, 0.5)
    assert norm == pytest.approx(8.0)
    assert np.linalg.norm(clipped.flat()) == pytest.approx(0.5, rel=1e-9)


def test_buffer_guards():
    buf = RolloutBuffer()
    with pytest.raises(RuntimeError):
        buf.minibatch(np.arange(0))
    buf.add(np.zeros(OBS), np.zeros(ACT), np.ones(ACT), 0.0, 0.0, 0.0, False)
    buf.finalize(0.0, 0.9, 0.9)
    with pytest.raises(RuntimeError):
        buf.add(np.zeros(OBS), np.zeros(ACT), np.ones(ACT), 0.0, 0.0, 0.0, False)


def test_config_invariants():
    for bad in ({"gamma": 0.0}, {"gamma": 1.5}, {"gae_lambda": -0.1}, {"clip_eps": 0.0}):
        with pytest.raises(ValueError):
            PpoConfig(**bad)
    with pytest.raises(ValueError, match="unknown"):
        PpoConfig.from_dict({"learning_rate": 1.0})
    assert PpoConfig.from_dict(PpoConfig().to_dict()) == PpoConfig()


# ---------------------------------------------------------------- model files


def test_save_load_round_trip(tmp_path):
    p = params(4)
    path = tmp_path / "model.json"
    ppo.save_model(p, path, {"note": "x"})
    q = ppo.load_model(path)
    np.testing.assert_array_equal(p.flat(), q.flat())
    x = np.random.default_rng(0).random(OBS)
    np.testing.assert_array_equal(ppo.forward(p, x)[0], ppo.forward(q, x)[0])
    assert ppo.load_model_metadata(path) == {"note": "x"}


def test_load_rejects_bad_files(tmp_path):
    p = params(4)
    path = tmp_path / "model.json"
    ppo.save_model(p, path)
    text = path.read_text()
    (tmp_path / "trunc.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFileError):
        ppo.load_model(tmp_path / "trunc.json")
    doc = json.loads(text)
    doc["weights"]["w1"][3] = float("nan")
    (tmp_path / "nan.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="non-finite"):
        ppo.load_model(tmp_path / "nan.json")
    doc = json.loads(text)
    doc["arch"]["shapes"]["w2"] = [64, 63]
    (tmp_path / "shape.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="shape"):
        ppo.load_model(tmp_path / "shape.json")
    doc = json.loads(text)
    del doc["weights"]["bv"]
    (tmp_path / "missing.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFileError):
        ppo.load_model(tmp_path / "missing.json")
    with pytest.raises(ModelFileError):
        ppo.load_model(tmp_path / "nope.json")
    bad = p.copy()
    bad.bv[0] = np.inf
    with pytest.raises(ModelFileError):
        ppo.save_model(bad, tmp_path / "x.json")


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_init_is_seeded(seed):
    np.testing.assert_array_equal(params(seed).flat(), params(seed).flat())
