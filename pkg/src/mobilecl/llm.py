"""Chat-completions client, prompt templates and record/replay cassettes.

The model is asked for JSON that follows ``CURRICULUM_SCHEMA`` with reward
expressions written in the reward DSL. Every response goes through the same
validator as scripted curricula; invalid ones are re-prompted with the error
appended, at most ``MAX_ATTEMPTS`` times in total.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import httpx
import numpy as np

from .curriculum import (
    STAGE_SCHEMA,
    Adjustment,
    Curriculum,
    CurriculumValidationError,
    RewardHistory,
    curriculum_from_dict,
    ls_slope,
    validate_stage_list,
)
from .mdp import EncodingSpec
from .reward_dsl import PRIMITIVE_DOCS
from .sim import EnvConfig

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
DEFAULT_MODEL = "gpt-4"
DEFAULT_TEMPERATURE = 0.2
DEFAULT_TIMEOUT_S = 60.0
API_KEY_ENV = "LLM_API_KEY"
HISTORY_TAIL = 60

DEFAULT_TASK = (
    "Learn a user-association policy that maximises the long-run average QoE per UE "
    "on the target scenario."
)


class ProviderError(RuntimeError):
    """The language-model endpoint (or its cassette) could not supply a response."""


class CassetteMiss(ProviderError):
    pass


class LlmResponseError(ProviderError):
    """Every attempt produced an unusable response."""

    def __init__(self, message: str, raw_texts: list[str]):
        super().__init__(message)
        self.raw_texts = raw_texts


class PromptKind(Enum):
    GENERATE_CURRICULUM = "generate_curriculum"
    REVIEW_PROGRESS = "review_progress"


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    kind: PromptKind

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]


SYSTEM_TEXT = (
    "You design training curricula for a reinforcement-learning agent that controls "
    "user association in a cellular network. A curriculum is an ordered list of stages, "
    "each a simplified environment plus a reward expression, ending with the target task. "
    "Reply with exactly one JSON object and nothing that contradicts the required schema. "
    "Reward expressions must use only the reward language described in the request."
)


def _dsl_reference() -> str:
    lines = [
        "Reward language: arithmetic over primitives, grammar",
        "  expr := term (('+'|'-') term)* ; term := factor (('*'|'/') factor)* ;",
        "  factor := NUMBER | NAME '(' ')' | '(' expr ')' | '-' factor",
        "Primitives (evaluated after the action at each step):",
    ]
    lines += [f"  {name}(): {doc}" for name, doc in PRIMITIVE_DOCS.items()]
    return "\n".join(lines)


def _schema_text() -> str:
    return json.dumps({"stages": [STAGE_SCHEMA]}, sort_keys=True)


def describe(env_config: EnvConfig, encoding: EncodingSpec | None = None, task: str = DEFAULT_TASK) -> PromptBundle:
    """Render the target scenario, the agent's spaces and the output contract."""
    enc = encoding or EncodingSpec()
    cfg = env_config
    bs = [[round(float(x), 1), round(float(y), 1)] for x, y in cfg.bs_array()]
    lo_db, hi_db = enc.sinr_norm_range_db
    text = f"""Task: {task}

Target scenario:
- M = {cfg.num_ues} UEs and N = {cfg.num_bs} base stations in a {cfg.area_width:g} m x {cfg.area_height:g} m area.
- BS positions (m): {json.dumps(bs)}.
- UEs follow a random waypoint model with speeds drawn from {list(cfg.ue_velocity_range)} m/s; time advances in steps of {cfg.step_duration:g} s; episodes last {cfg.episode_len} steps.
- Path loss: Hata urban model at {cfg.carrier_freq_mhz:g} MHz, BS height {cfg.bs_height_m:g} m, UE height {cfg.ue_height_m:g} m; transmit power {cfg.tx_power_dbm:g} dBm, bandwidth {cfg.bandwidth_hz:g} Hz per BS.
- A UE may connect to several BSs at once; a BS splits its bandwidth equally among its connected UEs.
- QoE of a connected pair is log(rate) normalised between {cfg.d_min_bps:g} and {cfg.d_max_bps:g} bit/s, clipped to [0, 1]; 0 when disconnected.

Agent:
- Observation: fixed vector of 3 * M_max * N_max = {enc.obs_dim} values with M_max = {enc.m_max}, N_max = {enc.n_max}: blocks of association bits, SINR (dB clipped to [{lo_db:g}, {hi_db:g}] and scaled to [0, 1]) and QoE, each row-major over (UE, BS); slots beyond the stage's M and N are zero.
- Action: M_max * N_max = {enc.slots} binary decisions x_ij (connect UE i to BS j); slots beyond the stage's M and N are ignored.

Objective: maximise the long-run average over time of (1/M) * sum_i sum_j x_ij * Q_ij.
Constraints: x_ij is binary; each UE has at most N connections; a connection is only established when SINR >= {cfg.sinr_min:g} (linear), otherwise it is dropped by the network.

{_dsl_reference()}

Output: a JSON object matching this schema (extra keys are rejected):
{_schema_text()}
Rules:
- Every stage must have num_ues <= M_max and num_bs <= N_max.
- The final stage must be the target scenario: num_ues = {cfg.num_ues}, num_bs = {cfg.num_bs}.
- "threshold" applies to the mean over the last "window" episodes of the per-episode average step reward.
- "max_env_steps" is the environment-step budget for the stage.
"""
    return PromptBundle(SYSTEM_TEXT, text, PromptKind.GENERATE_CURRICULUM)


def describe_review(history: RewardHistory, curriculum: Curriculum, s: int) -> PromptBundle:
    stage = curriculum.stages[s]
    visit = history.current
    rewards = list(visit.rewards) if visit is not None else []
    w = stage.window
    tail = [round(r, 4) for r in rewards[-HISTORY_TAIL:]]
    window_mean = float(np.mean(rewards[-w:])) if rewards else float("nan")
    slope = ls_slope(rewards[-2 * w :])
    steps = visit.env_steps if visit is not None else 0
    text = f"""Training progress report.
Current stage: index {s} of {len(curriculum.stages)} ("{stage.name}"), reward "{stage.reward}", threshold {stage.threshold:g} over a window of {w} episodes.
Episodes completed in this stage: {len(rewards)}; environment steps used: {steps} of {stage.max_env_steps}.
Mean reward over the last {w} episodes: {window_mean:.4f}.
Least-squares slope over the last {2 * w} episodes: {slope:.6f} per episode.
Per-episode mean rewards (most recent last, up to {HISTORY_TAIL}): {json.dumps(tail)}

Current curriculum:
{json.dumps(curriculum.to_dict(), sort_keys=True)}

Decide whether the curriculum should change. Reply with {{"action": "keep"}} to continue unchanged, or {{"action": "adjust", "stages": [...]}} where the stages replace the current stage and everything after it (same stage schema as before; the final stage must remain the target scenario).
"""
    return PromptBundle(SYSTEM_TEXT, text, PromptKind.REVIEW_PROGRESS)


def extract_json(text: str) -> Any:
    """Decode the first JSON object embedded in ``text``."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise ValueError("no JSON object found in response")


def request_body(messages: list[dict[str, str]], model: str, temperature: float) -> dict[str, Any]:
    return {"model": model, "messages": messages, "temperature": temperature}


def request_hash(body: dict[str, Any]) -> str:
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class HttpChatClient:
    """Blocking chat-completions POST with bounded retries on transport errors."""

    def __init__(
        self,
        base_url: str,
        *,
        api_key: str | None = None,
        timeout: float = DEFAULT_TIMEOUT_S,
        transport: httpx.BaseTransport | None = None,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._http = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.sleep = sleep

    def complete(self, body: dict[str, Any]) -> str:
        last: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._http.post("/chat/completions", json=body)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise ProviderError(f"endpoint returned HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise ProviderError(f"endpoint rejected the request: HTTP {resp.status_code} {resp.text[:200]}")
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.TransportError, ProviderError) as exc:
                if isinstance(exc, ProviderError) and "rejected" in str(exc):
                    raise
                last = exc
                log.warning("chat request failed (attempt %d/%d): %s", attempt + 1, self.max_retries, exc)
                if attempt + 1 < self.max_retries:
                    self.sleep(self.backoff_s * (attempt + 1))
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"malformed chat-completions payload: {exc}") from exc
        raise ProviderError(f"chat endpoint unavailable after {self.max_retries} attempts: {last}")

    def close(self) -> None:
        self._http.close()


class Cassette:
    """JSON-lines log of (request hash, request, response, timestamp) records."""

    def __init__(self, path: str | Path, mode: str):
        if mode not in ("record", "replay"):
            raise ValueError("cassette mode must be 'record' or 'replay'")
        self.path = Path(path)
        self.mode = mode
        self._replay: dict[str, list[str]] = {}
        if mode == "replay":
            if not self.path.exists():
                raise ProviderError(f"cassette {self.path} does not exist")
            for n, line in enumerate(self.path.read_text().splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    self._replay.setdefault(rec["request_hash"], []).append(rec["response"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ProviderError(f"{self.path}:{n}: corrupt cassette record ({exc})") from exc
        elif self.path.exists() and self.path.stat().st_size > 0:
            raise ProviderError(f"refusing to overwrite recorded cassette {self.path}")

    def lookup(self, h: str) -> str:
        queue = self._replay.get(h)
        if not queue:
            raise CassetteMiss(f"no recorded response for request {h[:12]} in {self.path}")
        return queue.pop(0) if len(queue) > 1 else queue[0]

    def append(self, h: str, body: dict[str, Any], response: str) -> None:
        rec = {
            "request_hash": h,
            "request": json.dumps(body, sort_keys=True, ensure_ascii=False),
            "response": response,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec) + "\n")


class ChatSession:
    """Routes chat requests to the live client, the cassette, or both."""

    def __init__(
        self,
        mode: str = "live",
        client: HttpChatClient | None = None,
        cassette: Cassette | None = None,
        model: str = DEFAULT_MODEL,
        temperature: float = DEFAULT_TEMPERATURE,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode in ("live", "record") and client is None:
            raise ValueError(f"{mode} mode needs an HTTP client")
        if mode in ("record", "replay") and cassette is None:
            raise ValueError(f"{mode} mode needs a cassette")
        self.mode = mode
        self.client = client if mode != "replay" else None
        self.cassette = cassette
        self.model = model
        self.temperature = temperature

    def ask(self, messages: list[dict[str, str]]) -> str:
        body = request_body(messages, self.model, self.temperature)
        h = request_hash(body)
        if self.mode == "replay":
            return self.cassette.lookup(h)
        text = self.client.complete(body)
        if self.mode == "record":
            self.cassette.append(h, body, text)
        return text


def _converse(session: ChatSession, prompt: PromptBundle, parse_fn: Callable[[str], Any]) -> Any:
    messages = prompt.messages()
    raw: list[str] = []
    for attempt in range(MAX_ATTEMPTS):
        text = session.ask(messages)
        raw.append(text)
        try:
            return parse_fn(text)
        except (ValueError, CurriculumValidationError) as exc:
            log.warning("invalid model response (attempt %d/%d): %s", attempt + 1, MAX_ATTEMPTS, exc)
            messages = messages + [
                {"role": "assistant", "content": text},
                {
                    "role": "user",
                    "content": f"The response was rejected: {exc}. Reply again with one JSON object that satisfies the schema.",
                },
            ]
    raise LlmResponseError(f"no valid response after {MAX_ATTEMPTS} attempts", raw)


def generate_curriculum(
    session: ChatSession, prompt: PromptBundle, target: EnvConfig, encoding: EncodingSpec | None = None
) -> Curriculum:
    enc = encoding or EncodingSpec()
    provenance = "replay" if session.mode == "replay" else "llm"

    def parse_fn(text: str) -> Curriculum:
        return curriculum_from_dict(extract_json(text), target, enc, provenance=provenance, raw_text=text)

    return _converse(session, prompt, parse_fn)


def parse_review(text: str, target: EnvConfig, encoding: EncodingSpec) -> Adjustment:
    doc = extract_json(text)
    action = doc.get("action")
    if action == "keep":
        if set(doc) != {"action"}:
            raise CurriculumValidationError([f"$: unexpected keys {sorted(set(doc) - {'action'})}"])
        return Adjustment.keep()
    if action == "adjust":
        if set(doc) != {"action", "stages"}:
            raise CurriculumValidationError(["$: 'adjust' takes exactly the keys 'action' and 'stages'"])
        return Adjustment("adjust", tuple(validate_stage_list(doc["stages"], target, encoding)))
    raise CurriculumValidationError([f"$.action: expected 'keep' or 'adjust', got {action!r}"])


def review_progress(
    session: ChatSession,
    history: RewardHistory,
    curriculum: Curriculum,
    s: int,
    target: EnvConfig,
    encoding: EncodingSpec | None = None,
) -> Adjustment:
    if history.current is None or not history.current.rewards:
        raise ValueError("review needs at least one completed episode")
    enc = encoding or EncodingSpec()
    return _converse(session, describe_review(history, curriculum, s), lambda t: parse_review(t, target, enc))


class LlmProvider:
    """Curriculum provider backed by a chat session (live, record or replay)."""

    def __init__(self, session: ChatSession, target: EnvConfig, encoding: EncodingSpec | None = None, task: str = DEFAULT_TASK):
        self.session = session
        self.target = target
        self.encoding = encoding or EncodingSpec()
        self.task = task

    def generate(self, target: EnvConfig, encoding: EncodingSpec) -> Curriculum:
        return generate_curriculum(self.session, describe(target, encoding, self.task), target, encoding)

    def review(self, history: RewardHistory, curriculum: Curriculum, s: int) -> Adjustment:
        return review_progress(self.session, history, curriculum, s, self.target, self.encoding)
