"""Curriculum data model, validation, the scripted four-stage curriculum and
the stage-progression loop (train, advance, detect stagnation, adjust, regress).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Protocol

import jsonschema
import numpy as np

from .agent import EpisodeStats, IterationResult
from .mdp import EncodingSpec
from .reward_dsl import ParseError, parse
from .sim import ConfigError, EnvConfig

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 20
DEFAULT_SLOPE_TOL = 1e-3
EASE_FACTOR = 0.75

STAGE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "env", "reward", "threshold", "window", "max_env_steps"],
    "properties": {
        "name": {"type": "string", "minLength": 1, "maxLength": 128},
        "env": {
            "type": "object",
            "additionalProperties": False,
            "required": ["num_ues", "num_bs", "ue_velocity_range", "episode_len"],
            "properties": {
                "num_ues": {"type": "integer", "minimum": 1},
                "num_bs": {"type": "integer", "minimum": 1},
                "ue_velocity_range": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "episode_len": {"type": "integer", "minimum": 1},
                "bs_positions": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
            },
        },
        "reward": {"type": "string", "minLength": 1, "maxLength": 1024},
        "threshold": {"type": "number"},
        "window": {"type": "integer", "minimum": 1},
        "max_env_steps": {"type": "integer", "minimum": 1},
    },
}

CURRICULUM_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["stages"],
    "properties": {"stages": {"type": "array", "minItems": 1, "maxItems": 32, "items": STAGE_SCHEMA}},
}

_VALIDATOR = jsonschema.Draft7Validator(CURRICULUM_SCHEMA)


class CurriculumValidationError(ValueError):
    """Carries every problem found, each as ``"<json path>: <message>"``."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class AdjustmentRejected(ValueError):
    pass


class CurriculumAborted(RuntimeError):
    """The provider failed; ``result`` holds everything done up to that point."""

    def __init__(self, message: str, result: CurriculumResult):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class StageEnv:
    num_ues: int
    num_bs: int
    ue_velocity_range: tuple[float, float]
    episode_len: int
    bs_positions: tuple[tuple[float, float], ...] | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "num_ues": self.num_ues,
            "num_bs": self.num_bs,
            "ue_velocity_range": list(self.ue_velocity_range),
            "episode_len": self.episode_len,
        }
        if self.bs_positions is not None:
            d["bs_positions"] = [list(p) for p in self.bs_positions]
        return d


@dataclass(frozen=True)
class Stage:
    name: str
    env: StageEnv
    reward: str
    threshold: float
    window: int = DEFAULT_WINDOW
    max_env_steps: int = 100_000

    def env_config(self, target: EnvConfig) -> EnvConfig:
        overrides: dict[str, Any] = {
            "num_ues": self.env.num_ues,
            "num_bs": self.env.num_bs,
            "ue_velocity_range": self.env.ue_velocity_range,
            "episode_len": self.env.episode_len,
        }
        if self.env.bs_positions is not None:
            overrides["bs_positions"] = self.env.bs_positions
        return target.with_overrides(**overrides)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "env": self.env.to_dict(),
            "reward": self.reward,
            "threshold": self.threshold,
            "window": self.window,
            "max_env_steps": self.max_env_steps,
        }


@dataclass(frozen=True)
class Curriculum:
    stages: tuple[Stage, ...]
    provenance: str = "scripted"  # scripted | llm | replay
    raw_text: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"stages": [s.to_dict() for s in self.stages]}

    def to_json(self) -> str:
        return json.dumps(
            {"provenance": self.provenance, **self.to_dict(), "raw_text": self.raw_text}, indent=2
        )


def _path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def validate_stage_list(items: Any, target: EnvConfig, encoding: EncodingSpec, *, require_target_last: bool = True) -> list[Stage]:
    """Structural and semantic validation of a list of stage documents."""
    doc = {"stages": items}
    errors = [f"{_path(e)}: {e.message}" for e in sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))]
    if errors:
        raise CurriculumValidationError(errors)
    stages = []
    for k, item in enumerate(items):
        where = f"$.stages[{k}]"
        env = item["env"]
        lo, hi = env["ue_velocity_range"]
        if not all(math.isfinite(v) for v in (lo, hi, item["threshold"])):
            errors.append(f"{where}: non-finite number")
            continue
        if lo > hi:
            errors.append(f"{where}.env.ue_velocity_range: min exceeds max")
        if not encoding.fits(env["num_ues"], env["num_bs"]):
            errors.append(
                f"{where}.env: {env['num_ues']}x{env['num_bs']} exceeds encoding "
                f"{encoding.m_max}x{encoding.n_max}"
            )
        positions = env.get("bs_positions")
        if positions is not None:
            if len(positions) != env["num_bs"]:
                errors.append(f"{where}.env.bs_positions: expected {env['num_bs']} positions")
            elif not all(
                math.isfinite(x) and math.isfinite(y) and 0 <= x <= target.area_width and 0 <= y <= target.area_height
                for x, y in positions
            ):
                errors.append(f"{where}.env.bs_positions: position outside the area")
        try:
            parse(item["reward"])
        except ParseError as exc:
            errors.append(f"{where}.reward: {exc}")
        stages.append(
            Stage(
                name=item["name"],
                env=StageEnv(
                    num_ues=env["num_ues"],
                    num_bs=env["num_bs"],
                    ue_velocity_range=(float(lo), float(hi)),
                    episode_len=env["episode_len"],
                    bs_positions=None if positions is None else tuple((float(x), float(y)) for x, y in positions),
                ),
                reward=item["reward"],
                threshold=float(item["threshold"]),
                window=item["window"],
                max_env_steps=item["max_env_steps"],
            )
        )
    if not errors and require_target_last:
        last = stages[-1].env
        if (last.num_ues, last.num_bs) != (target.num_ues, target.num_bs):
            errors.append(
                f"$.stages[{len(stages) - 1}].env: final stage must be the target task "
                f"({target.num_ues} UEs, {target.num_bs} BSs)"
            )
    if not errors:
        for k, st in enumerate(stages):
            try:
                st.env_config(target)
            except ConfigError as exc:
                errors.append(f"$.stages[{k}].env: {exc}")
    if errors:
        raise CurriculumValidationError(errors)
    return stages


def curriculum_from_dict(doc: Any, target: EnvConfig, encoding: EncodingSpec, provenance: str = "llm", raw_text: str = "") -> Curriculum:
    if not isinstance(doc, dict):
        raise CurriculumValidationError(["$: expected a JSON object"])
    extra = sorted(set(doc) - {"stages"})
    if extra:
        raise CurriculumValidationError([f"$: unexpected keys {extra}"])
    if "stages" not in doc:
        raise CurriculumValidationError(["$: 'stages' is a required property"])
    stages = validate_stage_list(doc["stages"], target, encoding)
    return Curriculum(tuple(stages), provenance, raw_text)


def validate_curriculum(curriculum: Curriculum, target: EnvConfig, encoding: EncodingSpec) -> None:
    curriculum_from_dict(curriculum.to_dict(), target, encoding)


def scripted_curriculum(
    target: EnvConfig,
    encoding: EncodingSpec | None = None,
    *,
    thresholds: tuple[float, float, float, float] = (1.8, 3.2, 0.5, 0.6),
    budgets: tuple[int, int, int, int] = (50_000, 50_000, 100_000, 300_000),
    window: int = DEFAULT_WINDOW,
    slow_velocity: tuple[float, float] = (1.0, 3.0),
) -> Curriculum:
    """Four stages: basic connectivity, mobility, preliminary QoE, target task."""
    encoding = encoding or EncodingSpec()
    if target.num_ues < 3 or target.num_bs < 2:
        raise ValueError("target task must have at least 3 UEs and 2 BSs to host the easier stages")
    if not encoding.fits(target.num_ues, target.num_bs):
        raise ValueError("target task exceeds the encoding")
    T = target.episode_len
    vel = target.ue_velocity_range
    stages = (
        Stage("basic-connectivity", StageEnv(2, 1, (0.0, 0.0), T), "sum_connected()", thresholds[0], window, budgets[0]),
        Stage("mobility-management", StageEnv(2, 2, slow_velocity, T), "persistence()", thresholds[1], window, budgets[1]),
        Stage("preliminary-qoe", StageEnv(3, 2, vel, T), "mean_qoe()", thresholds[2], window, budgets[2]),
        Stage(
            "target-task",
            StageEnv(target.num_ues, target.num_bs, vel, T, target.bs_positions),
            "mean_qoe()",
            thresholds[3],
            window,
            budgets[3],
        ),
    )
    cur = Curriculum(stages, "scripted", "")
    return replace(cur, raw_text=json.dumps(cur.to_dict()))


@dataclass
class StageVisit:
    stage_index: int
    stage_name: str
    rewards: list[float] = field(default_factory=list)
    env_steps: int = 0
    outcome: str = "running"  # running | advanced | stagnant | abandoned


@dataclass
class RewardHistory:
    visits: list[StageVisit] = field(default_factory=list)
    passed_at: dict[str, int] = field(default_factory=dict)  # stage name -> total env steps when passed

    def open(self, index: int, stage: Stage) -> StageVisit:
        visit = StageVisit(index, stage.name)
        self.visits.append(visit)
        return visit

    @property
    def current(self) -> StageVisit | None:
        return self.visits[-1] if self.visits else None

    def per_stage_rewards(self) -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for v in self.visits:
            out.setdefault(v.stage_name, []).extend(v.rewards)
        return out

    def per_stage_steps(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for v in self.visits:
            out[v.stage_name] = out.get(v.stage_name, 0) + v.env_steps
        return out

    @property
    def total_env_steps(self) -> int:
        return sum(v.env_steps for v in self.visits)


class Progress(Enum):
    ADVANCE = "advance"
    CONTINUE = "continue"
    STAGNANT = "stagnant"


def ls_slope(values) -> float:
    y = np.asarray(values, dtype=float)
    if len(y) < 2:
        return 0.0
    return float(np.polyfit(np.arange(len(y), dtype=float), y, 1)[0])


def check_progress(
    visit: StageVisit,
    stage: Stage,
    slope_tol: float = DEFAULT_SLOPE_TOL,
    next_chunk: int = 0,
) -> Progress:
    """Advance once the last-W mean clears the threshold; stagnant when the
    last 2W episodes trend flat below it, or the stage budget cannot fund
    another ``next_chunk`` steps."""
    w = stage.window
    r = visit.rewards
    mean = float(np.mean(r[-w:])) if len(r) >= w else -math.inf
    if len(r) >= w and mean >= stage.threshold:
        return Progress.ADVANCE
    if visit.env_steps + next_chunk > stage.max_env_steps:
        return Progress.STAGNANT
    if len(r) >= 2 * w and ls_slope(r[-2 * w :]) < slope_tol:
        return Progress.STAGNANT
    return Progress.CONTINUE


@dataclass(frozen=True)
class Adjustment:
    action: str  # keep | adjust
    stages: tuple[Stage, ...] = ()

    @classmethod
    def keep(cls) -> Adjustment:
        return cls("keep")


def ease_stage(stage: Stage) -> Stage:
    t = stage.threshold
    eased = t * EASE_FACTOR if t > 0 else t - (1 - EASE_FACTOR) * abs(t)
    return replace(stage, name=f"{stage.name}-eased", threshold=eased)


def apply_adjustment(
    curriculum: Curriculum,
    s: int,
    adjustment: Adjustment,
    target: EnvConfig | None = None,
    encoding: EncodingSpec | None = None,
) -> Curriculum:
    """Replace stages ``s`` onward with the adjusted ones; stages before ``s``
    have been passed and stay untouched."""
    if adjustment.action == "keep":
        return curriculum
    if adjustment.action != "adjust" or not adjustment.stages:
        raise AdjustmentRejected(f"invalid adjustment action {adjustment.action!r}")
    new = Curriculum(curriculum.stages[:s] + tuple(adjustment.stages), curriculum.provenance, curriculum.raw_text)
    if target is not None:
        try:
            validate_curriculum(new, target, encoding or EncodingSpec())
        except CurriculumValidationError as exc:
            raise AdjustmentRejected(str(exc)) from exc
    return new


class CurriculumProvider(Protocol):
    def generate(self, target: EnvConfig, encoding: EncodingSpec) -> Curriculum: ...

    def review(self, history: RewardHistory, curriculum: Curriculum, s: int) -> Adjustment: ...


class ScriptedProvider:
    """Deterministic stand-in for the language model: the four scripted stages,
    and on stagnation an eased copy of the failing stage inserted before it."""

    def __init__(self, **curriculum_kwargs: Any):
        self.curriculum_kwargs = curriculum_kwargs

    def generate(self, target: EnvConfig, encoding: EncodingSpec) -> Curriculum:
        return scripted_curriculum(target, encoding, **self.curriculum_kwargs)

    def review(self, history: RewardHistory, curriculum: Curriculum, s: int) -> Adjustment:
        failing = curriculum.stages[s]
        return Adjustment("adjust", (ease_stage(failing),) + curriculum.stages[s:])


class Trainable(Protocol):
    params: Any

    def begin_stage(self, env_config: EnvConfig, reward: str, seed: int, track_oracle: bool = False) -> None: ...

    def train_iteration(self) -> IterationResult: ...


EpisodeCallback = Callable[[str, EpisodeStats, int], None]


@dataclass
class CurriculumResult:
    agent: Any
    history: RewardHistory
    curriculum: Curriculum
    status: str  # completed | budget_exhausted | stage_budget_exhausted | adjustments_exhausted
    total_env_steps: int
    transitions: list[tuple[str, int, int]] = field(default_factory=list)  # (event, from s, to s)
    adjustments: int = 0

    def steps_to_pass(self, stage_name: str) -> int | None:
        return self.history.passed_at.get(stage_name)


def stage_seed(seed: int, visit_no: int) -> int:
    return int(np.random.SeedSequence([seed, visit_no]).generate_state(1)[0])


def _shapes(agent: Any) -> dict:
    return agent.params.shapes() if hasattr(agent.params, "shapes") else {}


def run_curriculum(
    agent: Trainable,
    curriculum: Curriculum,
    provider: CurriculumProvider,
    target: EnvConfig,
    encoding: EncodingSpec | None = None,
    *,
    seed: int = 0,
    total_step_budget: int = 1_000_000,
    slope_tol: float = DEFAULT_SLOPE_TOL,
    max_adjustments: int = 8,
    fill_budget: bool = False,
    reset_optimizer_between_stages: bool = False,
    on_episode: EpisodeCallback | None = None,
) -> CurriculumResult:
    """Train through the stages in order.

    After each PPO iteration: advance when the stage threshold is met; on
    stagnation ask the provider for an adjustment, splice it in at the failing
    stage and step back one stage. Stops when every stage has passed or the
    global budget cannot fund another iteration. With ``fill_budget`` the
    remaining budget is spent training on the final stage.
    """
    encoding = encoding or EncodingSpec()
    validate_curriculum(curriculum, target, encoding)
    chunk = int(getattr(getattr(agent, "config", None), "rollout_len", 0) or 0)
    history = RewardHistory()
    result = CurriculumResult(agent, history, curriculum, "running", 0)
    shapes = _shapes(agent)
    s = 0
    visit: StageVisit | None = None
    total = 0

    def enter(index: int) -> StageVisit:
        stage = result.curriculum.stages[index]
        if reset_optimizer_between_stages and hasattr(agent, "reset_optimizer"):
            agent.reset_optimizer()
        agent.begin_stage(stage.env_config(target), stage.reward, seed=stage_seed(seed, len(history.visits)))
        if _shapes(agent) != shapes:
            raise AssertionError("policy shapes changed across a stage transition")
        log.info("entering stage %d (%s) at env step %d", index, stage.name, total)
        return history.open(index, stage)

    def iterate(stage: Stage, v: StageVisit) -> None:
        nonlocal total
        it = agent.train_iteration()
        total += it.env_steps
        v.env_steps += it.env_steps
        for ep in it.episodes:
            v.rewards.append(ep.reward)
            if on_episode is not None:
                on_episode(stage.name, ep, total)

    while s < len(result.curriculum.stages):
        if total + chunk > total_step_budget:
            result.status = "budget_exhausted"
            break
        stage = result.curriculum.stages[s]
        if visit is None:
            visit = enter(s)
        iterate(stage, visit)
        progress = check_progress(visit, stage, slope_tol, chunk)
        if progress is Progress.ADVANCE:
            visit.outcome = "advanced"
            history.passed_at[stage.name] = total
            result.transitions.append(("advance", s, s + 1))
            s += 1
            visit = None
        elif progress is Progress.STAGNANT:
            budget_gone = visit.env_steps + chunk > stage.max_env_steps
            if result.adjustments >= max_adjustments:
                visit.outcome = "abandoned"
                result.status = "adjustments_exhausted"
                break
            try:
                adjustment = provider.review(history, result.curriculum, s)
            except Exception as exc:
                result.status = "provider_failed"
                result.total_env_steps = total
                raise CurriculumAborted(f"provider failed during review: {exc}", result) from exc
            if adjustment.action == "keep":
                if budget_gone:
                    visit.outcome = "abandoned"
                    result.status = "stage_budget_exhausted"
                    break
                continue
            visit.outcome = "stagnant"
            try:
                result.curriculum = apply_adjustment(result.curriculum, s, adjustment, target, encoding)
            except AdjustmentRejected as exc:
                log.warning("adjustment rejected, keeping curriculum: %s", exc)
            result.adjustments += 1
            new_s = max(s - 1, 0)
            result.transitions.append(("regress", s, new_s))
            s = new_s
            visit = None
    else:
        result.status = "completed"

    if result.status == "completed" and fill_budget:
        final = result.curriculum.stages[-1]
        visit = enter(len(result.curriculum.stages) - 1)
        while total + chunk <= total_step_budget and chunk > 0:
            iterate(final, visit)
        visit.outcome = "fill"

    result.total_env_steps = total
    return result


@dataclass
class BaselineResult:
    agent: Any
    updates: list[float]  # mean episode reward per update (nan if no episode closed)
    episodes: list[EpisodeStats]
    total_env_steps: int
    steps_to_threshold: int | None = None


def train_baseline(
    agent: Trainable,
    target: EnvConfig,
    budget: int,
    *,
    seed: int = 0,
    reward: str = "mean_qoe()",
    threshold: float | None = None,
    window: int = DEFAULT_WINDOW,
    track_oracle: bool = False,
    on_episode: EpisodeCallback | None = None,
) -> BaselineResult:
    """Train directly on the target task for ``budget // rollout_len`` updates."""
    chunk = agent.config.rollout_len
    result = BaselineResult(agent, [], [], 0)
    n_updates = budget // chunk
    if n_updates == 0:
        return result
    agent.begin_stage(target, reward, seed=stage_seed(seed, 0), track_oracle=track_oracle)
    rewards: list[float] = []
    for _ in range(n_updates):
        it = agent.train_iteration()
        result.total_env_steps += it.env_steps
        for ep in it.episodes:
            result.episodes.append(ep)
            rewards.append(ep.reward)
            if on_episode is not None:
                on_episode("baseline", ep, result.total_env_steps)
        result.updates.append(float(np.mean([e.reward for e in it.episodes])) if it.episodes else math.nan)
        if (
            threshold is not None
            and result.steps_to_threshold is None
            and len(rewards) >= window
            and float(np.mean(rewards[-window:])) >= threshold
        ):
            result.steps_to_threshold = result.total_env_steps
    return result
