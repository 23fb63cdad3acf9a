"""PPO with a 2x64 tanh trunk, factored-Bernoulli policy head and a value head.

Gradients are derived by hand for this fixed topology; ``tests/test_ppo.py``
pins them against central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

HIDDEN = 64
PARAM_NAMES = ("w1", "b1", "w2", "b2", "wp", "bp", "wv", "bv")
MODEL_FORMAT = "mobilecl-policy/1"


class ModelFileError(ValueError):
    """A model file could not be read or failed validation."""


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 5e-4
    minibatch: int = 64
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    rollout_len: int = 2048
    epochs_per_update: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be > 0")
        if self.minibatch < 1 or self.rollout_len < 1 or self.epochs_per_update < 0:
            raise ValueError("minibatch, rollout_len must be >= 1 and epochs_per_update >= 0")
        if self.lr < 0 or self.max_grad_norm <= 0:
            raise ValueError("lr must be >= 0 and max_grad_norm > 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PpoConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown ppo keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class PolicyParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wp: np.ndarray
    bp: np.ndarray
    wv: np.ndarray
    bv: np.ndarray

    @property
    def obs_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def n_actions(self) -> int:
        return self.wp.shape[1]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: getattr(self, k).shape for k in PARAM_NAMES}

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in PARAM_NAMES]

    def copy(self) -> PolicyParams:
        return PolicyParams(*(a.copy() for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> PolicyParams:
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i : i + a.size], dtype=float).reshape(a.shape).copy())
            i += a.size
        return PolicyParams(*out)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def init_params(obs_dim: int, n_actions: int, rng: np.random.Generator) -> PolicyParams:
    """Orthogonal init; small policy-head gain so initial bit probabilities are ~0.5."""
    g = math.sqrt(2.0)
    return PolicyParams(
        w1=_orthogonal(rng, obs_dim, HIDDEN, g),
        b1=np.zeros(HIDDEN),
        w2=_orthogonal(rng, HIDDEN, HIDDEN, g),
        b2=np.zeros(HIDDEN),
        wp=_orthogonal(rng, HIDDEN, n_actions, 0.01),
        bp=np.zeros(n_actions),
        wv=_orthogonal(rng, HIDDEN, 1, 1.0),
        bv=np.zeros(1),
    )


def zero_params(obs_dim: int, n_actions: int) -> PolicyParams:
    return PolicyParams(
        np.zeros((obs_dim, HIDDEN)), np.zeros(HIDDEN),
        np.zeros((HIDDEN, HIDDEN)), np.zeros(HIDDEN),
        np.zeros((HIDDEN, n_actions)), np.zeros(n_actions),
        np.zeros((HIDDEN, 1)), np.zeros(1),
    )  # fmt: skip


def _trunk(p: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h1 = np.tanh(x @ p.w1 + p.b1)
    h2 = np.tanh(h1 @ p.w2 + p.b2)
    return h1, h2


def forward(params: PolicyParams, observation: np.ndarray) -> tuple[np.ndarray, Any]:
    """Logits and value for one observation (1-D) or a batch (2-D)."""
    x = np.asarray(observation, dtype=float)
    if x.shape[-1] != params.obs_dim or x.ndim not in (1, 2):
        raise ValueError(f"observation has shape {x.shape}, network expects (..., {params.obs_dim})")
    _, h2 = _trunk(params, x)
    logits = h2 @ params.wp + params.bp
    value = h2 @ params.wv + params.bv
    if x.ndim == 1:
        return logits, float(value[0])
    return logits, value[:, 0]


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bernoulli_log_prob(logits: np.ndarray, bits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Joint log-probability summed over valid bits (last axis)."""
    return (mask * (bits * logits - softplus(logits))).sum(axis=-1)


def bernoulli_entropy(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return (mask * (softplus(logits) - logits * sigmoid(logits))).sum(axis=-1)


def sample_action(logits: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    logits = np.asarray(logits, dtype=float)
    if logits.shape != mask.shape:
        raise ValueError("logits and mask lengths differ")
    u = rng.random(logits.shape)
    bits = ((u < sigmoid(logits)) & (mask == 1)).astype(np.int8)
    return bits, float(bernoulli_log_prob(logits, bits, mask))


def greedy_action(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return ((np.asarray(logits) > 0) & (mask == 1)).astype(np.int8)


def gae(rewards, values, dones, last_value: float, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and returns (advantages + values).

    ``dones[t]`` marks that the episode ended after step t, so no value is
    bootstrapped across it; ``last_value`` is V of the state after the final step.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not r.shape == v.shape == d.shape:
        raise ValueError("rewards, values and dones must have equal lengths")
    adv = np.zeros_like(r)
    next_value, running = float(last_value), 0.0
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_value * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    masks: np.ndarray
    old_logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)


def _check_finite(name: str, x) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite value in {name}")


def ppo_loss(params: PolicyParams, batch: Minibatch, config: PpoConfig) -> tuple[float, PolicyParams, dict[str, float]]:
    """Clipped-surrogate loss with value and entropy terms, plus its exact gradient.

    Where the clipped branch of the min is strictly smaller it contributes no
    policy gradient.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty minibatch")
    x, a, m, adv = batch.obs, batch.actions, batch.masks, batch.advantages
    h1, h2 = _trunk(params, x)
    logits = h2 @ params.wp + params.bp
    value = (h2 @ params.wv + params.bv)[:, 0]
    _check_finite("logits", logits)
    _check_finite("value", value)

    sig = sigmoid(logits)
    sp = softplus(logits)
    logp = (m * (a * logits - sp)).sum(axis=1)
    log_ratio = logp - batch.old_logp
    _check_finite("log-ratio", log_ratio)
    with np.errstate(over="ignore"):
        ratio = np.exp(log_ratio)
    _check_finite("probability ratio", ratio)
    eps = config.clip_eps
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    s1 = ratio * adv
    s2 = clipped * adv
    unclipped = s1 <= s2
    policy_loss = -float(np.mean(np.minimum(s1, s2)))
    err = value - batch.returns
    value_loss = float(np.mean(err**2))
    ent_bits = m * (sp - logits * sig)
    entropy = float(ent_bits.sum(axis=1).mean())
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    _check_finite("loss", loss)

    g_logp = np.where(unclipped, -adv * ratio / n, 0.0)
    g_logits = g_logp[:, None] * m * (a - sig)
    g_logits += (config.entropy_coef / n) * m * logits * sig * (1.0 - sig)
    g_value = (2.0 * config.value_coef / n) * err

    g_h2 = g_logits @ params.wp.T + np.outer(g_value, params.wv[:, 0])
    g_z2 = g_h2 * (1.0 - h2**2)
    g_h1 = g_z2 @ params.w2.T
    g_z1 = g_h1 * (1.0 - h1**2)
    grads = PolicyParams(
        w1=x.T @ g_z1,
        b1=g_z1.sum(axis=0),
        w2=h1.T @ g_z2,
        b2=g_z2.sum(axis=0),
        wp=h2.T @ g_logits,
        bp=g_logits.sum(axis=0),
        wv=(h2.T @ g_value)[:, None],
        bv=np.array([g_value.sum()]),
    )
    stats = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    return loss, grads, stats


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: PolicyParams, grads: PolicyParams, lr: float) -> PolicyParams:
        if not self.m:
            self.m = [np.zeros_like(a) for a in params.arrays()]
            self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = []
        for k, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            out.append(p - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps))
        return PolicyParams(*out)


def clip_grad_norm(grads: PolicyParams, max_norm: float) -> tuple[PolicyParams, float]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.arrays())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = PolicyParams(*(g * scale for g in grads.arrays()))
    return grads, norm


def normalize(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class RolloutBuffer:
    def __init__(self) -> None:
        self.obs: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.masks: list[np.ndarray] = []
        self.logp: list[float] = []
        self.values: list[float] = []
        self.rewards: list[float] = []
        self.dones: list[bool] = []
        self.advantages: np.ndarray | None = None
        self.returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rewards)

    def add(self, obs, action, mask, logp, value, reward, done) -> None:
        if self.advantages is not None:
            raise RuntimeError("buffer already finalized")
        self.obs.append(obs)
        self.actions.append(action)
        self.masks.append(mask)
        self.logp.append(logp)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)

    def finalize(self, last_value: float, gamma: float, lam: float) -> None:
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones, last_value, gamma, lam)

    def minibatch(self, idx: np.ndarray) -> Minibatch:
        if self.advantages is None:
            raise RuntimeError("finalize() the buffer before sampling")
        return Minibatch(
            obs=np.asarray(self.obs)[idx],
            actions=np.asarray(self.actions, dtype=float)[idx],
            masks=np.asarray(self.masks, dtype=float)[idx],
            old_logp=np.asarray(self.logp)[idx],
            advantages=self.advantages[idx],
            returns=self.returns[idx],
        )


def update(
    params: PolicyParams,
    buffer: RolloutBuffer,
    config: PpoConfig,
    rng: np.random.Generator,
    optimizer: Adam | None = None,
) -> tuple[PolicyParams, dict[str, float]]:
    """Epochs of shuffled minibatch Adam steps; returns new params and mean stats."""
    if buffer.advantages is None:
        raise RuntimeError("finalize() the buffer before updating")
    optimizer = optimizer if optimizer is not None else Adam()
    full = buffer.minibatch(np.arange(len(buffer)))
    params = params.copy()
    totals: dict[str, float] = {}
    steps = 0
    for _ in range(config.epochs_per_update):
        order = rng.permutation(len(buffer))
        for start in range(0, len(order), config.minibatch):
            idx = order[start : start + config.minibatch]
            adv = full.advantages[idx]
            batch = Minibatch(
                full.obs[idx], full.actions[idx], full.masks[idx], full.old_logp[idx],
                normalize(adv) if config.normalize_advantages else adv,
                full.returns[idx],
            )  # fmt: skip
            _, grads, stats = ppo_loss(params, batch, config)
            grads, gnorm = clip_grad_norm(grads, config.max_grad_norm)
            params = optimizer.step(params, grads, config.lr)
            stats["grad_norm"] = gnorm
            for k, val in stats.items():
                totals[k] = totals.get(k, 0.0) + val
            steps += 1
    return params, {k: v / max(steps, 1) for k, v in totals.items()}


def save_model(params: PolicyParams, path: str | Path, metadata: dict[str, Any] | None = None) -> None:
    if not params.is_finite():
        raise ModelFileError("refusing to save non-finite parameters")
    doc = {
        "format": MODEL_FORMAT,
        "arch": {
            "obs_dim": params.obs_dim,
            "n_actions": params.n_actions,
            "hidden": [HIDDEN, HIDDEN],
            "shapes": {k: list(s) for k, s in params.shapes().items()},
        },
        "activation": "tanh",
        "weights": {k: getattr(params, k).ravel().tolist() for k in PARAM_NAMES},
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> PolicyParams:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    try:
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFileError(f"unsupported model format {doc.get('format')!r}")
        if doc.get("activation") != "tanh":
            raise ModelFileError("unsupported activation")
        obs_dim = int(doc["arch"]["obs_dim"])
        n_actions = int(doc["arch"]["n_actions"])
        expected = zero_params(obs_dim, n_actions).shapes()
        arrays = []
        for k in PARAM_NAMES:
            if tuple(doc["arch"]["shapes"][k]) != expected[k]:
                raise ModelFileError(f"shape mismatch for {k}")
            a = np.asarray(doc["weights"][k], dtype=float)
            if a.size != math.prod(expected[k]):
                raise ModelFileError(f"{k} has {a.size} values, expected {math.prod(expected[k])}")
            if not np.isfinite(a).all():
                raise ModelFileError(f"non-finite values in {k}")
            arrays.append(a.reshape(expected[k]))
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ModelFileError(f"malformed model file {path}: {exc}") from exc
    return PolicyParams(*arrays)


def load_model_metadata(path: str | Path) -> dict[str, Any]:
    try:
        return dict(json.loads(Path(path).read_text()).get("metadata", {}))
    except (OSError, json.JSONDecodeError, AttributeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
