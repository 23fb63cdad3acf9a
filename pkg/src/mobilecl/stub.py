"""Deterministic stand-in for a chat-completions endpoint.

Answers curriculum requests with the scripted four-stage curriculum and
progress reviews with the scripted easing rule, in the same JSON contract a
real model must follow. Mounted on an ``httpx.MockTransport`` it lets
cassettes be recorded without network access, and lets tests count requests.
"""

from __future__ import annotations

import json
import re
from typing import Any

import httpx

from .curriculum import ease_stage, scripted_curriculum, validate_stage_list
from .mdp import EncodingSpec
from .sim import EnvConfig

_REVIEW_MARK = "Training progress report."
_STAGE_INDEX = re.compile(r"Current stage: index (\d+) of")


class StubModel:
    """Callable ``httpx`` handler; ``canned`` responses are served first, in order."""

    def __init__(
        self,
        target: EnvConfig,
        encoding: EncodingSpec | None = None,
        canned: list[str] | None = None,
        **curriculum_kwargs: Any,
    ):
        self.target = target
        self.encoding = encoding or EncodingSpec()
        self.canned = list(canned or [])
        self.curriculum_kwargs = curriculum_kwargs
        self.requests: list[dict[str, Any]] = []

    def reply(self, messages: list[dict[str, str]]) -> str:
        if self.canned:
            return self.canned.pop(0)
        prompt = messages[1]["content"]
        if prompt.startswith(_REVIEW_MARK):
            return self._review(prompt)
        cur = scripted_curriculum(self.target, self.encoding, **self.curriculum_kwargs)
        return "Proposed curriculum:\n```json\n" + json.dumps(cur.to_dict(), indent=1) + "\n```\n"

    def _review(self, prompt: str) -> str:
        s = int(_STAGE_INDEX.search(prompt).group(1))
        doc = json.loads(prompt.split("Current curriculum:\n", 1)[1].split("\n", 1)[0])
        stages = validate_stage_list(doc["stages"], self.target, self.encoding)
        new = [ease_stage(stages[s]).to_dict()] + [st.to_dict() for st in stages[s:]]
        return json.dumps({"action": "adjust", "stages": new})

    def __call__(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        self.requests.append(body)
        text = self.reply(body["messages"])
        return httpx.Response(200, json={"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]})

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self)
