"""Discrete-time mobile network simulator.

UEs move under a random waypoint model, BS->UE links follow the Hata urban
path-loss formula, and connections are gated by a minimum SINR. Rates use
Shannon capacity with the BS bandwidth split equally among its connected UEs,
and each connected pair is scored with a log-normalised QoE in [0, 1].

Positions are kept as ``(M, 2)`` arrays; ``NetworkState.ues`` gives the
per-UE view when one is needed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

DISTANCE_FLOOR_M = 10.0
ORACLE_MAX_PAIRS = 16


class ConfigError(ValueError):
    """Raised for invalid scenario parameters."""


@dataclass(frozen=True)
class EnvConfig:
    num_ues: int = 5
    num_bs: int = 3
    area_width: float = 1000.0
    area_height: float = 1000.0
    bs_positions: tuple[tuple[float, float], ...] | None = None
    ue_velocity_range: tuple[float, float] = (1.0, 10.0)
    episode_len: int = 100
    step_duration: float = 1.0
    tx_power_dbm: float = 40.0
    bandwidth_hz: float = 9e6
    carrier_freq_mhz: float = 900.0
    bs_height_m: float = 50.0
    ue_height_m: float = 1.5
    noise_dbm_per_hz: float = -174.0
    sinr_min: float = 1.0
    d_min_bps: float = 1e5
    d_max_bps: float = 1e8
    seed: int = 0
    # add co-channel interference from the other BSs to the SINR denominator
    interference: bool = False

    def __post_init__(self) -> None:
        if self.bs_positions is not None:
            object.__setattr__(
                self,
                "bs_positions",
                tuple((float(x), float(y)) for x, y in self.bs_positions),
            )
        lo, hi = self.ue_velocity_range
        object.__setattr__(self, "ue_velocity_range", (float(lo), float(hi)))
        self.validate()

    def validate(self) -> None:
        if isinstance(self.num_ues, bool) or not isinstance(self.num_ues, int) or self.num_ues < 1:
            raise ConfigError(f"num_ues must be an integer >= 1, got {self.num_ues!r}")
        if isinstance(self.num_bs, bool) or not isinstance(self.num_bs, int) or self.num_bs < 1:
            raise ConfigError(f"num_bs must be an integer >= 1, got {self.num_bs!r}")
        if not (self.area_width > 0 and self.area_height > 0):
            raise ConfigError("area dimensions must be positive")
        if not self.d_min_bps > 0 or not self.d_min_bps < self.d_max_bps:
            raise ConfigError("need 0 < d_min_bps < d_max_bps")
        if not self.sinr_min > 0:
            raise ConfigError("sinr_min must be > 0")
        lo, hi = self.ue_velocity_range
        if not (0 <= lo <= hi) or not math.isfinite(hi):
            raise ConfigError(f"invalid ue_velocity_range {self.ue_velocity_range}")
        if isinstance(self.episode_len, bool) or not isinstance(self.episode_len, int) or self.episode_len < 1:
            raise ConfigError("episode_len must be an integer >= 1")
        if not self.step_duration > 0:
            raise ConfigError("step_duration must be > 0")
        if not self.bandwidth_hz > 0:
            raise ConfigError("bandwidth_hz must be > 0")
        if not 150.0 <= self.carrier_freq_mhz <= 1500.0:
            raise ConfigError("carrier_freq_mhz outside the Hata validity range [150, 1500]")
        if not (self.bs_height_m > 0 and self.ue_height_m > 0):
            raise ConfigError("antenna heights must be positive")
        if self.bs_positions is not None:
            if len(self.bs_positions) != self.num_bs:
                raise ConfigError(
                    f"bs_positions has {len(self.bs_positions)} entries, num_bs is {self.num_bs}"
                )
            for x, y in self.bs_positions:
                if not (0 <= x <= self.area_width and 0 <= y <= self.area_height):
                    raise ConfigError(f"BS position ({x}, {y}) outside the area")
        for name in ("tx_power_dbm", "noise_dbm_per_hz", "area_width", "area_height"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    def with_overrides(self, **overrides: Any) -> EnvConfig:
        """Copy with some fields replaced; BS positions fall back to the grid
        when the BS count changes and no positions are given."""
        if "num_bs" in overrides and "bs_positions" not in overrides:
            if overrides["num_bs"] != self.num_bs:
                overrides["bs_positions"] = None
        return dataclasses.replace(self, **overrides)

    def bs_array(self) -> np.ndarray:
        if self.bs_positions is not None:
            return np.asarray(self.bs_positions, dtype=float)
        return grid_bs_positions(self.num_bs, self.area_width, self.area_height)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["ue_velocity_range"] = list(self.ue_velocity_range)
        if self.bs_positions is not None:
            d["bs_positions"] = [list(p) for p in self.bs_positions]
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EnvConfig:
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(unknown)}")
        kwargs = dict(data)
        try:
            if "ue_velocity_range" in kwargs:
                lo, hi = kwargs["ue_velocity_range"]
                kwargs["ue_velocity_range"] = (lo, hi)
            if kwargs.get("bs_positions") is not None:
                kwargs["bs_positions"] = tuple((x, y) for x, y in kwargs["bs_positions"])
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed scenario: {exc}") from exc


def load_scenario(path: str | Path) -> EnvConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return EnvConfig.from_dict(data)


def grid_bs_positions(num_bs: int, width: float, height: float) -> np.ndarray:
    """Centres of the first ``num_bs`` cells of a near-square grid, row-major."""
    cols = math.ceil(math.sqrt(num_bs))
    rows = math.ceil(num_bs / cols)
    pos = []
    for k in range(num_bs):
        r, c = divmod(k, cols)
        pos.append(((c + 0.5) * width / cols, (r + 0.5) * height / rows))
    return np.asarray(pos, dtype=float)


@dataclass
class UEState:
    position: tuple[float, float]
    waypoint: tuple[float, float]
    velocity: float


@dataclass
class NetworkState:
    t: int
    positions: np.ndarray  # (M, 2)
    waypoints: np.ndarray  # (M, 2)
    velocities: np.ndarray  # (M,)
    bs_positions: np.ndarray  # (N, 2)
    assoc: np.ndarray  # (M, N) int8
    prev_assoc: np.ndarray
    sinr: np.ndarray  # (M, N) linear
    rate: np.ndarray  # (M, N) bit/s
    qoe: np.ndarray = field(default=None)  # (M, N) in [0, 1]

    @property
    def num_ues(self) -> int:
        return self.assoc.shape[0]

    @property
    def num_bs(self) -> int:
        return self.assoc.shape[1]

    @property
    def ues(self) -> list[UEState]:
        return [
            UEState(tuple(p), tuple(w), float(v))
            for p, w, v in zip(self.positions.tolist(), self.waypoints.tolist(), self.velocities)
        ]

    def replace(self, **changes: Any) -> NetworkState:
        return dataclasses.replace(self, **changes)


def path_loss_db(distance_m, config: EnvConfig):
    """Hata urban (small/medium city) path loss in dB; distance floored at 10 m."""
    f = config.carrier_freq_mhz
    hb = config.bs_height_m
    hm = config.ue_height_m
    log_f = math.log10(f)
    a_hm = (1.1 * log_f - 0.7) * hm - (1.56 * log_f - 0.8)
    d_km = np.maximum(np.asarray(distance_m, dtype=float), DISTANCE_FLOOR_M) / 1000.0
    pl = (
        69.55
        + 26.16 * log_f
        - 13.82 * math.log10(hb)
        - a_hm
        + (44.9 - 6.55 * math.log10(hb)) * np.log10(d_km)
    )
    return float(pl) if np.ndim(pl) == 0 else pl


def noise_power_dbm(config: EnvConfig) -> float:
    return config.noise_dbm_per_hz + 10.0 * math.log10(config.bandwidth_hz)


def _distances(positions: np.ndarray, bs_positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - bs_positions[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def compute_sinr(state: NetworkState, config: EnvConfig) -> np.ndarray:
    rx_dbm = config.tx_power_dbm - path_loss_db(_distances(state.positions, state.bs_positions), config)
    rx_mw = 10.0 ** (rx_dbm / 10.0)
    noise_mw = 10.0 ** (noise_power_dbm(config) / 10.0)
    if config.interference:
        interf = rx_mw.sum(axis=1, keepdims=True) - rx_mw
        return rx_mw / (noise_mw + interf)
    return rx_mw / noise_mw


def compute_rates(assoc: np.ndarray, sinr: np.ndarray, config: EnvConfig) -> np.ndarray:
    """Equal-split Shannon rate for every connected pair, 0 elsewhere."""
    load = assoc.sum(axis=0)
    share = np.where(load > 0, config.bandwidth_hz / np.maximum(load, 1), 0.0)
    return assoc * share[None, :] * np.log2(1.0 + sinr)


def qoe(rate_bps, config: EnvConfig):
    rate = np.asarray(rate_bps, dtype=float)
    lo = math.log(config.d_min_bps)
    span = math.log(config.d_max_bps) - lo
    with np.errstate(divide="ignore"):
        q = (np.log(np.where(rate > 0, rate, 1.0)) - lo) / span
    q = np.where(rate > 0, np.clip(q, 0.0, 1.0), 0.0)
    return float(q) if q.ndim == 0 else q


def _refresh(state: NetworkState, assoc: np.ndarray, config: EnvConfig) -> NetworkState:
    rate = compute_rates(assoc, state.sinr, config)
    return state.replace(assoc=assoc, rate=rate, qoe=qoe(rate, config))


def apply_action(state: NetworkState, proposed_assoc, config: EnvConfig) -> NetworkState:
    """Gate the proposed association by SINR and recompute rates and QoE."""
    proposed = np.asarray(proposed_assoc)
    if proposed.shape != state.assoc.shape:
        raise ValueError(
            f"proposed association has shape {proposed.shape}, expected {state.assoc.shape}"
        )
    if not np.isin(proposed, (0, 1)).all():
        raise ValueError("proposed association must be binary")
    assoc = (proposed.astype(bool) & (state.sinr >= config.sinr_min)).astype(np.int8)
    prev = state.assoc
    return _refresh(state.replace(prev_assoc=prev), assoc, config)


def advance_mobility(state: NetworkState, config: EnvConfig, rng: np.random.Generator) -> NetworkState:
    """Move every UE one step toward its waypoint (zero pause time)."""
    pos = state.positions.copy()
    wp = state.waypoints.copy()
    vel = state.velocities.copy()
    delta = wp - pos
    dist = np.sqrt((delta**2).sum(axis=1))
    travel = vel * config.step_duration
    arrived = dist <= travel
    moving = ~arrived
    pos[moving] += delta[moving] * (travel[moving] / dist[moving])[:, None]
    pos[arrived] = wp[arrived]
    k = int(arrived.sum())
    if k:
        wp[arrived] = _uniform_points(rng, k, config)
        vel[arrived] = rng.uniform(*config.ue_velocity_range, size=k)
    moved = state.replace(t=state.t + 1, positions=pos, waypoints=wp, velocities=vel)
    moved.sinr = compute_sinr(moved, config)
    # links that fell below the SINR floor drop
    assoc = (state.assoc.astype(bool) & (moved.sinr >= config.sinr_min)).astype(np.int8)
    return _refresh(moved, assoc, config)


def _uniform_points(rng: np.random.Generator, k: int, config: EnvConfig) -> np.ndarray:
    return np.column_stack(
        [rng.uniform(0.0, config.area_width, size=k), rng.uniform(0.0, config.area_height, size=k)]
    )


def reset(config: EnvConfig, rng: np.random.Generator, bs_positions: np.ndarray | None = None) -> NetworkState:
    m, n = config.num_ues, config.num_bs
    bs = config.bs_array() if bs_positions is None else np.asarray(bs_positions, dtype=float)
    pos = _uniform_points(rng, m, config)
    wp = _uniform_points(rng, m, config)
    vel = rng.uniform(*config.ue_velocity_range, size=m)
    zeros = np.zeros((m, n), dtype=np.int8)
    state = NetworkState(
        t=0,
        positions=pos,
        waypoints=wp,
        velocities=vel,
        bs_positions=bs,
        assoc=zeros,
        prev_assoc=zeros.copy(),
        sinr=np.zeros((m, n)),
        rate=np.zeros((m, n)),
        qoe=np.zeros((m, n)),
    )
    state.sinr = compute_sinr(state, config)
    return state


def check_invariants(state: NetworkState, config: EnvConfig) -> None:
    """Assert the association constraints; raises AssertionError on violation."""
    a = state.assoc
    assert np.isin(a, (0, 1)).all(), "association not binary"
    assert (a.sum(axis=1) <= a.shape[1]).all(), "per-UE connection count exceeds N"
    assert (state.sinr[a == 1] >= config.sinr_min).all(), "connection below SINR floor"
    assert ((state.qoe >= 0) & (state.qoe <= 1)).all(), "QoE outside [0, 1]"
    assert (state.rate[a == 0] == 0).all(), "rate on a disconnected pair"


def oracle_step_assoc(state: NetworkState, config: EnvConfig) -> tuple[np.ndarray, float]:
    """Exhaustive best association for the instantaneous average-QoE reward.

    Matrix code is ``sum(x[i, j] << (i * N + j))``; ties go to the lowest code.
    """
    m, n = state.assoc.shape
    pairs = m * n
    if pairs > ORACLE_MAX_PAIRS:
        raise ValueError(f"oracle refuses M*N = {pairs} > {ORACLE_MAX_PAIRS}")
    codes = np.arange(2**pairs, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(pairs)) & 1).reshape(-1, m, n)
    feasible = state.sinr >= config.sinr_min
    cand = bits * feasible[None]
    load = cand.sum(axis=1, keepdims=True)
    share = np.where(load > 0, config.bandwidth_hz / np.maximum(load, 1), 0.0)
    rates = cand * share * np.log2(1.0 + state.sinr)[None]
    rewards = qoe(rates, config).sum(axis=(1, 2)) / m
    best = int(np.argmax(rewards))
    return cand[best].astype(np.int8), float(rewards[best])
