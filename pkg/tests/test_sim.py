import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobilecl import sim
from mobilecl.sim import ConfigError, EnvConfig, NetworkState


def hata_oracle(d_m, f=900.0, hb=50.0, hm=1.5):
    # written out term by term, independent of sim.path_loss_db
    d_km = max(d_m, 10.0) / 1000.0
    a = (1.1 * math.log10(f) - 0.7) * hm - (1.56 * math.log10(f) - 0.8)
    return 69.55 + 26.16 * math.log10(f) - 13.82 * math.log10(hb) - a + (44.9 - 6.55 * math.log10(hb)) * math.log10(d_km)


def make_state(cfg, positions, assoc=None, prev=None):
    positions = np.asarray(positions, dtype=float)
    m, n = len(positions), cfg.num_bs
    zeros = np.zeros((m, n), dtype=np.int8)
    s = NetworkState(
        t=0,
        positions=positions,
        waypoints=positions.copy(),
        velocities=np.zeros(m),
        bs_positions=cfg.bs_array(),
        assoc=zeros,
        prev_assoc=zeros if prev is None else np.asarray(prev, dtype=np.int8),
        sinr=np.zeros((m, n)),
        rate=np.zeros((m, n)),
        qoe=np.zeros((m, n)),
    )
    s.sinr = sim.compute_sinr(s, cfg)
    if assoc is not None:
        s = sim.apply_action(s, np.asarray(assoc), cfg)
    return s


# ---------------------------------------------------------------- path loss


def test_hata_reference_value():
    cfg = EnvConfig()
    assert sim.path_loss_db(1000.0, cfg) == pytest.approx(123.34, abs=0.005)
    assert sim.path_loss_db(1000.0, cfg) == pytest.approx(hata_oracle(1000.0), abs=1e-12)


def test_hata_distance_floor():
    cfg = EnvConfig()
    assert sim.path_loss_db(5.0, cfg) == sim.path_loss_db(10.0, cfg)
    assert sim.path_loss_db(0.0, cfg) == sim.path_loss_db(10.0, cfg)


def test_hata_decade_slope():
    cfg = EnvConfig()
    diff = sim.path_loss_db(10_000.0, cfg) - sim.path_loss_db(1000.0, cfg)
    assert diff == pytest.approx(44.9 - 6.55 * math.log10(50.0), abs=1e-12)


@given(st.floats(0.0, 20_000.0), st.floats(150.0, 1500.0))
def test_hata_matches_oracle(d, f):
    cfg = EnvConfig(carrier_freq_mhz=f)
    assert sim.path_loss_db(d, cfg) == pytest.approx(hata_oracle(d, f=f), rel=1e-12, abs=1e-9)


def test_hata_vectorised():
    cfg = EnvConfig()
    d = np.array([[1.0, 100.0], [1000.0, 5000.0]])
    out = sim.path_loss_db(d, cfg)
    assert out.shape == (2, 2)
    for idx in np.ndindex(d.shape):
        assert out[idx] == pytest.approx(hata_oracle(d[idx]), abs=1e-12)


# ---------------------------------------------------------------- SINR


def test_sinr_db_arithmetic():
    # tx 40 dBm, PL 120 dB, noise -104 dBm -> 10^2.4
    cfg = EnvConfig(noise_dbm_per_hz=-104.0 - 10 * math.log10(9e6))
    assert sim.noise_power_dbm(cfg) == pytest.approx(-104.0, abs=1e-12)
    # find the distance at which PL = 120 dB by inverting the affine log-distance law
    slope = 44.9 - 6.55 * math.log10(50.0)
    d_km = 10 ** ((120.0 - hata_oracle(1000.0)) / slope)
    s = make_state(cfg, [[250.0 + d_km * 1000.0, 250.0]])
    assert s.sinr[0, 0] == pytest.approx(10**2.4, rel=1e-9)
    assert 10**2.4 == pytest.approx(251.19, abs=0.005)


def test_sinr_symmetry_and_monotonicity():
    cfg = EnvConfig(num_bs=1, bs_positions=[(500.0, 500.0)])
    s = make_state(cfg, [[600.0, 500.0], [500.0, 400.0], [700.0, 500.0]])
    assert s.sinr[0, 0] == pytest.approx(s.sinr[1, 0], rel=1e-12)
    assert s.sinr[2, 0] <= s.sinr[0, 0]


def test_interference_flag_lowers_sinr():
    cfg = EnvConfig()
    pos = [[100.0, 100.0], [600.0, 300.0]]
    clean = make_state(cfg, pos).sinr
    noisy = make_state(cfg.with_overrides(interference=True), pos).sinr
    assert (noisy < clean).all()


# ---------------------------------------------------------------- rates and QoE


def test_rates_examples():
    cfg = EnvConfig()
    sinr = np.full((2, 1), 3.0)
    alone = sim.compute_rates(np.array([[1], [0]]), sinr, cfg)
    assert alone[0, 0] == pytest.approx(18e6, rel=1e-12)
    assert alone[1, 0] == 0.0
    shared = sim.compute_rates(np.array([[1], [1]]), sinr, cfg)
    assert shared[:, 0] == pytest.approx([9e6, 9e6], rel=1e-12)


def rates_oracle(assoc, sinr, bw):
    m, n = assoc.shape
    out = np.zeros((m, n))
    for j in range(n):
        nj = sum(assoc[i][j] for i in range(m))
        for i in range(m):
            if assoc[i][j]:
                out[i, j] = bw / nj * math.log2(1 + sinr[i, j])
    return out


def qoe_oracle(rate, dmin=1e5, dmax=1e8):
    if rate == 0:
        return 0.0
    return min(1.0, max(0.0, (math.log(rate) - math.log(dmin)) / (math.log(dmax) - math.log(dmin))))


@given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_rates_and_qoe_match_double_loop(m, n, seed):
    rng = np.random.default_rng(seed)
    cfg = EnvConfig()
    assoc = rng.integers(0, 2, size=(m, n))
    sinr = rng.uniform(0.0, 1e4, size=(m, n))
    rates = sim.compute_rates(assoc, sinr, cfg)
    np.testing.assert_allclose(rates, rates_oracle(assoc, sinr, cfg.bandwidth_hz), rtol=1e-12)
    q = sim.qoe(rates, cfg)
    for idx in np.ndindex(q.shape):
        assert q[idx] == pytest.approx(qoe_oracle(rates[idx]), abs=1e-12)
    # per-BS conservation under equal split
    for j in range(n):
        assert rates[:, j].sum() <= cfg.bandwidth_hz * math.log2(1 + sinr[:, j].max()) * (1 + 1e-12)


def test_qoe_anchors():
    cfg = EnvConfig()
    assert sim.qoe(1e8, cfg) == 1.0
    assert sim.qoe(0.0, cfg) == 0.0
    assert sim.qoe(math.sqrt(1e5 * 1e8), cfg) == pytest.approx(0.5, abs=1e-12)
    assert sim.qoe(0.5e5, cfg) == 0.0
    assert sim.qoe(1e12, cfg) == 1.0


@given(st.floats(0.0, 1e10), st.floats(0.0, 1e10))
def test_qoe_monotone_and_bounded(a, b):
    cfg = EnvConfig()
    lo, hi = sorted((a, b))
    assert 0.0 <= sim.qoe(lo, cfg) <= sim.qoe(hi, cfg) <= 1.0


# ---------------------------------------------------------------- actions


def test_apply_action_gates_by_sinr():
    cfg = EnvConfig(num_bs=2, bs_positions=[(0.0, 0.0), (1000.0, 1000.0)], sinr_min=10.0**5)
    s = make_state(cfg, [[10.0, 10.0]])
    assert s.sinr[0, 0] >= cfg.sinr_min > s.sinr[0, 1]
    out = sim.apply_action(s, np.array([[1, 1]]), cfg)
    assert out.assoc.tolist() == [[1, 0]]
    assert out.rate[0, 1] == 0.0 and out.qoe[0, 1] == 0.0


def test_apply_action_zero_and_prev():
    cfg = EnvConfig()
    s = make_state(cfg, [[250.0, 250.0], [750.0, 250.0]], assoc=[[1, 0, 0], [0, 1, 0]])
    z = sim.apply_action(s, np.zeros((2, 3), dtype=int), cfg)
    assert not z.rate.any() and not z.qoe.any()
    assert z.prev_assoc.tolist() == [[1, 0, 0], [0, 1, 0]]


def test_apply_action_rejects_bad_input():
    cfg = EnvConfig()
    s = make_state(cfg, [[250.0, 250.0]])
    with pytest.raises(ValueError):
        sim.apply_action(s, np.zeros((2, 3)), cfg)
    with pytest.raises(ValueError):
        sim.apply_action(s, np.full((1, 3), 2), cfg)


# ---------------------------------------------------------------- mobility


def test_straight_line_step():
    cfg = EnvConfig(ue_velocity_range=(10.0, 10.0))
    s = make_state(cfg, [[0.0, 0.0]])
    s = s.replace(waypoints=np.array([[100.0, 0.0]]), velocities=np.array([10.0]))
    nxt = sim.advance_mobility(s, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(nxt.positions, [[10.0, 0.0]])
    assert nxt.t == 1


def test_stationary_ues_never_move():
    cfg = EnvConfig(ue_velocity_range=(0.0, 0.0))
    rng = np.random.default_rng(3)
    s = sim.reset(cfg, rng)
    start = s.positions.copy()
    for _ in range(50):
        s = sim.advance_mobility(s, cfg, rng)
    np.testing.assert_array_equal(s.positions, start)


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_mobility_bounds_and_speed(seed, v1, v2):
    lo, hi = sorted((v1, v2))
    cfg = EnvConfig(ue_velocity_range=(lo, hi), area_width=300.0, area_height=200.0)
    rng = np.random.default_rng(seed)
    s = sim.reset(cfg, rng)
    for _ in range(40):
        nxt = sim.advance_mobility(s, cfg, rng)
        step = np.linalg.norm(nxt.positions - s.positions, axis=1)
        assert (step <= hi * cfg.step_duration + 1e-9).all()
        assert (nxt.positions[:, 0] >= 0).all() and (nxt.positions[:, 0] <= 300.0).all()
        assert (nxt.positions[:, 1] >= 0).all() and (nxt.positions[:, 1] <= 200.0).all()
        assert ((nxt.velocities >= lo) & (nxt.velocities <= hi)).all()
        s = nxt


def test_mobility_drops_links_below_floor():
    cfg = EnvConfig(num_bs=1, bs_positions=[(0.0, 0.0)], sinr_min=1e8, ue_velocity_range=(5.0, 5.0))
    # start inside the floor radius and walk out
    s = make_state(cfg, [[1.0, 0.0]])
    assert s.sinr[0, 0] >= cfg.sinr_min
    s = sim.apply_action(s, np.array([[1]]), cfg)
    s = s.replace(waypoints=np.array([[1000.0, 0.0]]), velocities=np.array([5.0]))
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = sim.advance_mobility(s, cfg, rng)
        sim.check_invariants(s, cfg)
    assert s.assoc.sum() == 0


# ---------------------------------------------------------------- reset and determinism


def test_reset_examples():
    cfg = EnvConfig()
    a = sim.reset(cfg, np.random.default_rng(11))
    b = sim.reset(cfg, np.random.default_rng(11))
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.sinr, b.sinr)
    assert a.t == 0 and not a.assoc.any() and not a.prev_assoc.any()
    assert len(a.ues) == 5


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10)
def test_trajectory_determinism_and_invariants(seed):
    cfg = EnvConfig()
    actions = np.random.default_rng(seed).integers(0, 2, size=(30, 5, 3))

    def run():
        rng = np.random.default_rng(seed)
        s = sim.reset(cfg, rng)
        traj = []
        for a in actions:
            s = sim.apply_action(s, a, cfg)
            sim.check_invariants(s, cfg)
            traj.append((s.positions.copy(), s.assoc.copy(), s.qoe.copy()))
            s = sim.advance_mobility(s, cfg, rng)
            sim.check_invariants(s, cfg)
        return traj

    for (p1, a1, q1), (p2, a2, q2) in zip(run(), run()):
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(q1, q2)


# ---------------------------------------------------------------- oracle


def enumerate_oracle(state, cfg):
    """Independent itertools enumerator scored with the double-loop oracles."""
    m, n = state.assoc.shape
    best, best_val = None, -1.0
    for bits in itertools.product((0, 1), repeat=m * n):
        # itertools yields big-endian order; index by code to break ties the same way
        x = np.array(bits[::-1]).reshape(m, n)
        x = x * (state.sinr >= cfg.sinr_min)
        rates = rates_oracle(x, state.sinr, cfg.bandwidth_hz)
        val = sum(qoe_oracle(r) for r in rates.ravel()) / m
        code = sum(int(x_) << k for k, x_ in enumerate(np.array(bits[::-1])))
        if val > best_val + 1e-15 or (abs(val - best_val) <= 1e-15 and code < best[0]):
            best, best_val = (code, x), val
    return best[1], best_val


def test_oracle_trivial_cases():
    cfg = EnvConfig(num_bs=1, bs_positions=[(0.0, 0.0)])
    near = make_state(cfg, [[50.0, 0.0]])
    assoc, r = sim.oracle_step_assoc(near, cfg)
    assert assoc.tolist() == [[1]] and r > 0
    cfg_far = cfg.with_overrides(sinr_min=1e30)
    far = make_state(cfg_far, [[50.0, 0.0]])
    assoc, r = sim.oracle_step_assoc(far, cfg_far)
    assert assoc.tolist() == [[0]] and r == 0.0


def test_oracle_refuses_large():
    cfg = EnvConfig(num_ues=6, num_bs=3)
    s = sim.reset(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sim.oracle_step_assoc(s, cfg)


@settings(max_examples=25)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_oracle_dominates_every_feasible_matrix(m, n, seed):
    cfg = EnvConfig(num_ues=m, num_bs=n, sinr_min=10.0 ** 4)
    s = sim.reset(cfg, np.random.default_rng(seed))
    best, val = sim.oracle_step_assoc(s, cfg)
    for bits in itertools.product((0, 1), repeat=m * n):
        other = sim.apply_action(s, np.array(bits).reshape(m, n), cfg)
        assert other.qoe.sum() / m <= val + 1e-12
    acted = sim.apply_action(s, best, cfg)
    assert acted.qoe.sum() / m == pytest.approx(val, abs=1e-12)


def test_oracle_matches_independent_enumerator_2x2():
    cfg = EnvConfig(num_ues=2, num_bs=2, sinr_min=10.0 ** 4.5)
    rng = np.random.default_rng(5)
    for _ in range(40):
        s = sim.reset(cfg, rng)
        a1, v1 = sim.oracle_step_assoc(s, cfg)
        a2, v2 = enumerate_oracle(s, cfg)
        assert v1 == pytest.approx(v2, abs=1e-12)
        np.testing.assert_array_equal(a1, a2)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError):
        EnvConfig(num_ues=0)
    with pytest.raises(ConfigError):
        EnvConfig(d_min_bps=1e8, d_max_bps=1e5)
    with pytest.raises(ConfigError):
        EnvConfig(sinr_min=0.0)
    with pytest.raises(ConfigError):
        EnvConfig(num_bs=2, bs_positions=[(0.0, 0.0)])
    with pytest.raises(ConfigError):
        EnvConfig(num_bs=1, bs_positions=[(2000.0, 0.0)])
    with pytest.raises(ConfigError):
        EnvConfig(ue_velocity_range=(5.0, 1.0))
    with pytest.raises(ConfigError):
        EnvConfig(carrier_freq_mhz=2400.0)


def test_scenario_file_round_trip(tmp_path):
    cfg = EnvConfig(num_ues=4, num_bs=2, bs_positions=[(100.0, 200.0), (900.0, 800.0)], seed=7)
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert sim.load_scenario(p) == cfg
    p.write_text(json.dumps({**cfg.to_dict(), "colour": "blue"}))
    with pytest.raises(ConfigError, match="colour"):
        sim.load_scenario(p)


def test_grid_fallback_when_bs_count_changes():
    cfg = EnvConfig(num_bs=1, bs_positions=[(1.0, 1.0)])
    assert cfg.with_overrides(num_bs=3).bs_positions is None
    np.testing.assert_allclose(EnvConfig(num_bs=3).bs_array(), [[250, 250], [750, 250], [250, 750]])
