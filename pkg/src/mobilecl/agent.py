"""PPO agent driving an AssociationEnv: rollout collection and per-episode stats."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ppo
from .mdp import AssociationEnv, EncodingSpec
from .ppo import Adam, PolicyParams, PpoConfig, RolloutBuffer
from .reward_dsl import RewardExpr
from .sim import EnvConfig


@dataclass
class EpisodeStats:
    reward: float  # mean per-step stage reward
    mean_qoe: float  # mean per-step average-QoE reward
    connected_fraction: float
    dropouts: int
    steps: int
    oracle_reward: float | None = None
    end_step: int = 0  # agent-lifetime env step at which the episode ended


@dataclass
class IterationResult:
    episodes: list[EpisodeStats]
    env_steps: int
    update_stats: dict[str, float] = field(default_factory=dict)


class _EpisodeAccumulator:
    def __init__(self) -> None:
        self.reward = self.qoe = self.conn = self.oracle = 0.0
        self.dropouts = self.steps = 0
        self.has_oracle = False

    def add(self, reward: float, info) -> None:
        self.reward += reward
        self.qoe += info.base_reward
        self.conn += info.connected_fraction
        self.dropouts += info.dropouts
        self.steps += 1
        if info.oracle_reward is not None:
            self.has_oracle = True
            self.oracle += info.oracle_reward

    def close(self, end_step: int = 0) -> EpisodeStats:
        n = self.steps
        return EpisodeStats(
            reward=self.reward / n,
            mean_qoe=self.qoe / n,
            connected_fraction=self.conn / n,
            dropouts=self.dropouts,
            steps=n,
            oracle_reward=self.oracle / n if self.has_oracle else None,
            end_step=end_step,
        )


class PpoAgent:
    """Owns the policy parameters, optimizer state and RNG.

    Call ``begin_stage`` to attach a scenario, then ``train_iteration`` to
    collect ``rollout_len`` steps and run one PPO update.
    """

    def __init__(self, encoding: EncodingSpec, config: PpoConfig, seed: int = 0, params: PolicyParams | None = None):
        self.encoding = encoding
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.params = params if params is not None else ppo.init_params(encoding.obs_dim, encoding.slots, self.rng)
        if self.params.obs_dim != encoding.obs_dim or self.params.n_actions != encoding.slots:
            raise ValueError("policy parameters do not match the encoding")
        self.optimizer = Adam()
        self.env: AssociationEnv | None = None
        self._obs: np.ndarray | None = None
        self._episode: _EpisodeAccumulator | None = None
        self.total_env_steps = 0

    def reset_optimizer(self) -> None:
        self.optimizer = Adam()

    def begin_stage(self, env_config: EnvConfig, reward: RewardExpr | str, seed: int, track_oracle: bool = False) -> None:
        self.env = AssociationEnv(env_config, reward, self.encoding, seed=seed, track_oracle=track_oracle)
        self._obs = self.env.reset()
        self._episode = _EpisodeAccumulator()

    def train_iteration(self) -> IterationResult:
        if self.env is None:
            raise RuntimeError("begin_stage() first")
        cfg = self.config
        env = self.env
        buf = RolloutBuffer()
        finished: list[EpisodeStats] = []
        obs = self._obs
        for i in range(cfg.rollout_len):
            logits, value = ppo.forward(self.params, obs)
            bits, logp = ppo.sample_action(logits, env.mask, self.rng)
            next_obs, reward, done, info = env.step(bits)
            target = reward
            if done:
                # time limit is a truncation of a continuing task: bootstrap through it
                target += cfg.gamma * ppo.forward(self.params, next_obs)[1]
            buf.add(obs, bits, env.mask, logp, value, target, done)
            self._episode.add(reward, info)
            if done:
                finished.append(self._episode.close(self.total_env_steps + i + 1))
                self._episode = _EpisodeAccumulator()
                next_obs = env.reset()
            obs = next_obs
        self._obs = obs
        _, last_value = ppo.forward(self.params, obs)
        buf.finalize(last_value, cfg.gamma, cfg.gae_lambda)
        self.params, stats = ppo.update(self.params, buf, cfg, self.rng, self.optimizer)
        self.total_env_steps += cfg.rollout_len
        return IterationResult(finished, cfg.rollout_len, stats)

    def act_greedy(self, obs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        logits, _ = ppo.forward(self.params, obs)
        return ppo.greedy_action(logits, mask)
