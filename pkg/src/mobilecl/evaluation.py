"""Greedy evaluation of a trained policy, including scenarios with more UEs
than the policy's encoding holds.

A policy sized for ``m_max`` UEs is applied to larger populations by sorting
UEs by distance to their nearest BS and running the policy once per group of
at most ``m_max`` UEs; the groups' proposals are stacked into one association
matrix and applied to the shared network, so bandwidth is split across all
UEs exactly as in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ppo, sim
from .mdp import EncodingSpec, action_mask, base_reward, count_dropouts, encode_blocks
from .ppo import PolicyParams
from .sim import EnvConfig, NetworkState

BS_MARGIN_FRACTION = 0.1


def eval_cap(encoding: EncodingSpec) -> int:
    """Largest UE count accepted by ``evaluate_policy``."""
    return 2 * encoding.m_max


def ue_groups(state: NetworkState, m_max: int) -> list[np.ndarray]:
    """UE indices ordered by nearest-BS distance, chunked into groups of <= m_max."""
    d = np.linalg.norm(state.positions[:, None, :] - state.bs_positions[None, :, :], axis=-1).min(axis=1)
    order = np.argsort(d, kind="stable")
    return [order[i : i + m_max] for i in range(0, len(order), m_max)]


def greedy_assoc(params: PolicyParams, state: NetworkState, encoding: EncodingSpec) -> np.ndarray:
    """Deterministic association proposal (bit = logit > 0) for any M."""
    m, n = state.assoc.shape
    proposed = np.zeros((m, n), dtype=np.int8)
    for group in ue_groups(state, encoding.m_max):
        obs = encode_blocks(state.assoc[group], state.sinr[group], state.qoe[group], encoding)
        mask = action_mask(len(group), n, encoding)
        logits, _ = ppo.forward(params, obs)
        bits = ppo.greedy_action(logits, mask).reshape(encoding.m_max, encoding.n_max)
        proposed[group] = bits[: len(group), :n]
    return proposed


def shuffled_bs_positions(config: EnvConfig, seed: int) -> np.ndarray:
    """Fresh BS layout drawn uniformly from the area minus a 10% border."""
    rng = np.random.default_rng(seed)
    w, h = config.area_width, config.area_height
    lo = np.array([w, h]) * BS_MARGIN_FRACTION
    hi = np.array([w, h]) * (1 - BS_MARGIN_FRACTION)
    return rng.uniform(lo, hi, size=(config.num_bs, 2))


@dataclass
class EvalRow:
    num_ues: int
    num_bs: int
    episodes: int
    bs_shuffle_seed: int | None
    mean_qoe: float  # per-step average QoE per UE, averaged over steps and episodes
    std_qoe: float  # std of the per-episode means
    mean_connected_ues: float  # UEs with >= 1 connection, per step
    dropouts: int  # summed over all steps of all episodes


def run_episode(params: PolicyParams, config: EnvConfig, encoding: EncodingSpec, rng: np.random.Generator) -> tuple[float, float, int]:
    """One greedy episode: (mean QoE reward, mean connected UEs, dropouts)."""
    state = sim.reset(config, rng)
    qoe_sum = conn_sum = 0.0
    drops = 0
    for _ in range(config.episode_len):
        acted = sim.apply_action(state, greedy_assoc(params, state, encoding), config)
        qoe_sum += base_reward(acted)
        conn_sum += float((acted.assoc.sum(axis=1) > 0).sum())
        drops += count_dropouts(acted, config)
        state = sim.advance_mobility(acted, config, rng)
    n = config.episode_len
    return qoe_sum / n, conn_sum / n, drops


def evaluate_policy(
    params: PolicyParams,
    config: EnvConfig,
    encoding: EncodingSpec,
    num_ues: int,
    episodes: int,
    *,
    seed: int = 0,
    bs_shuffle_seed: int | None = None,
) -> EvalRow:
    if not 1 <= num_ues <= eval_cap(encoding):
        raise ValueError(f"num_ues={num_ues} outside the evaluation range 1..{eval_cap(encoding)}")
    if config.num_bs > encoding.n_max:
        raise ValueError(f"{config.num_bs} BSs exceed the policy's n_max={encoding.n_max}")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if params.obs_dim != encoding.obs_dim or params.n_actions != encoding.slots:
        raise ValueError("policy parameters do not match the encoding")
    overrides: dict = {"num_ues": num_ues}
    if bs_shuffle_seed is not None:
        overrides["bs_positions"] = tuple(map(tuple, shuffled_bs_positions(config, bs_shuffle_seed).tolist()))
    cfg = config.with_overrides(**overrides)
    per_ep = []
    for k in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, num_ues, k]))
        per_ep.append(run_episode(params, cfg, encoding, rng))
    q = np.array([e[0] for e in per_ep])
    return EvalRow(
        num_ues=num_ues,
        num_bs=cfg.num_bs,
        episodes=episodes,
        bs_shuffle_seed=bs_shuffle_seed,
        mean_qoe=float(q.mean()),
        std_qoe=float(q.std()),
        mean_connected_ues=float(np.mean([e[1] for e in per_ep])),
        dropouts=int(sum(e[2] for e in per_ep)),
    )
