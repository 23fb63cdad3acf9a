"""Fixed-size observation/action encoding and the gym-style association env.

Observations are ``3 * m_max * n_max`` floats laid out as three contiguous
row-major blocks ``[assoc | sinr | qoe]``; slots for UEs/BSs beyond the
current scenario are zero. Actions are one bit per (UE, BS) slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim
from .reward_dsl import RewardExpr
from .sim import EnvConfig, NetworkState


@dataclass(frozen=True)
class EncodingSpec:
    m_max: int = 5
    n_max: int = 3
    sinr_norm_range_db: tuple[float, float] = (-10.0, 40.0)

    def __post_init__(self) -> None:
        lo, hi = self.sinr_norm_range_db
        object.__setattr__(self, "sinr_norm_range_db", (float(lo), float(hi)))
        if self.m_max < 1 or self.n_max < 1:
            raise ValueError("m_max and n_max must be >= 1")
        if not lo < hi:
            raise ValueError("sinr_norm_range_db needs lo < hi")

    @property
    def slots(self) -> int:
        return self.m_max * self.n_max

    @property
    def obs_dim(self) -> int:
        return 3 * self.slots

    def fits(self, num_ues: int, num_bs: int) -> bool:
        return num_ues <= self.m_max and num_bs <= self.n_max

    def to_dict(self) -> dict:
        return {"m_max": self.m_max, "n_max": self.n_max, "sinr_norm_range_db": list(self.sinr_norm_range_db)}


def normalize_sinr_db(sinr: np.ndarray, spec: EncodingSpec) -> np.ndarray:
    lo, hi = spec.sinr_norm_range_db
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(sinr)
    return np.clip((db - lo) / (hi - lo), 0.0, 1.0)


def encode_blocks(assoc: np.ndarray, sinr: np.ndarray, q: np.ndarray, spec: EncodingSpec) -> np.ndarray:
    m, n = assoc.shape
    if not spec.fits(m, n):
        raise ValueError(f"state is {m}x{n}, encoding holds at most {spec.m_max}x{spec.n_max}")
    obs = np.zeros((3, spec.m_max, spec.n_max))
    obs[0, :m, :n] = assoc
    obs[1, :m, :n] = normalize_sinr_db(sinr, spec)
    obs[2, :m, :n] = q
    return obs.reshape(-1)


def encode(state: NetworkState, spec: EncodingSpec) -> np.ndarray:
    return encode_blocks(state.assoc, state.sinr, state.qoe, spec)


def action_mask(num_ues: int, num_bs: int, spec: EncodingSpec) -> np.ndarray:
    if not spec.fits(num_ues, num_bs):
        raise ValueError(f"{num_ues}x{num_bs} does not fit {spec.m_max}x{spec.n_max}")
    mask = np.zeros((spec.m_max, spec.n_max), dtype=np.int8)
    mask[:num_ues, :num_bs] = 1
    return mask.reshape(-1)


def decode_action(raw_bits, mask: np.ndarray, spec: EncodingSpec) -> np.ndarray:
    bits = np.asarray(raw_bits)
    if bits.shape != (spec.slots,) or mask.shape != (spec.slots,):
        raise ValueError(f"expected {spec.slots} action bits, got shape {bits.shape}")
    grid_mask = mask.reshape(spec.m_max, spec.n_max)
    m = int(grid_mask.any(axis=1).sum())
    n = int(grid_mask.any(axis=0).sum())
    masked = (bits.astype(bool) & mask.astype(bool)).reshape(spec.m_max, spec.n_max)
    return masked[:m, :n].astype(np.int8)


def base_reward(state: NetworkState) -> float:
    """Average QoE per UE, summed over all of a UE's connections."""
    return float(state.qoe.sum()) / state.assoc.shape[0]


def count_dropouts(state: NetworkState, config: EnvConfig) -> int:
    """UEs with no connection although at least one BS clears the SINR floor."""
    feasible = (state.sinr >= config.sinr_min).any(axis=1)
    unconnected = state.assoc.sum(axis=1) == 0
    return int((feasible & unconnected).sum())


@dataclass
class StepInfo:
    base_reward: float
    connected_fraction: float
    dropouts: int
    oracle_reward: float | None = None


class AssociationEnv:
    """One scenario under one reward expression, with its own RNG.

    ``step`` applies the action at the current positions, scores the
    resulting association, then advances mobility to produce the next
    observation. Episodes end after ``config.episode_len`` steps.
    """

    def __init__(
        self,
        config: EnvConfig,
        reward: RewardExpr | str = "mean_qoe()",
        spec: EncodingSpec | None = None,
        seed: int | None = None,
        track_oracle: bool = False,
    ):
        self.config = config
        self.reward = reward if isinstance(reward, RewardExpr) else RewardExpr(reward)
        self.spec = spec or EncodingSpec()
        if not self.spec.fits(config.num_ues, config.num_bs):
            raise ValueError(
                f"scenario {config.num_ues}x{config.num_bs} exceeds encoding "
                f"{self.spec.m_max}x{self.spec.n_max}"
            )
        self.rng = np.random.default_rng(config.seed if seed is None else seed)
        self.mask = action_mask(config.num_ues, config.num_bs, self.spec)
        self.track_oracle = track_oracle
        self.state: NetworkState | None = None

    def reset(self) -> np.ndarray:
        self.state = sim.reset(self.config, self.rng)
        return encode(self.state, self.spec)

    def step(self, bits) -> tuple[np.ndarray, float, bool, StepInfo]:
        if self.state is None:
            raise RuntimeError("call reset() first")
        cfg = self.config
        oracle = None
        if self.track_oracle:
            oracle = sim.oracle_step_assoc(self.state, cfg)[1]
        proposed = decode_action(bits, self.mask, self.spec)
        acted = sim.apply_action(self.state, proposed, cfg)
        reward = self.reward(acted)
        info = StepInfo(
            base_reward=base_reward(acted),
            connected_fraction=float((acted.assoc.sum(axis=1) > 0).mean()),
            dropouts=count_dropouts(acted, cfg),
            oracle_reward=oracle,
        )
        self.state = sim.advance_mobility(acted, cfg, self.rng)
        done = self.state.t >= cfg.episode_len
        return encode(self.state, self.spec), reward, done, info
