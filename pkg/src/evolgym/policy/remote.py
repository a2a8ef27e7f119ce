"""Chat-completion client that drives an agent through a remote LLM endpoint."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import numpy as np
import requests

from ..core import EvolGymError
from .context import Decision, PolicyContext
from .react import ReActOutput, parse_react, render_react

log = logging.getLogger(__name__)

API_KEY_ENV_VAR = "EVOLGYM_API_KEY"


class TransportError(EvolGymError):
    """The endpoint could not produce a usable reply after all retries."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    api_key: str | None = None

    def key(self) -> str | None:
        return self.api_key if self.api_key is not None else os.environ.get(API_KEY_ENV_VAR)


def render_messages(context: PolicyContext) -> list[dict[str, str]]:
    """system prompt, instruction, then one assistant/user pair per past step."""
    messages = [{"role": "system", "content": context.system_prompt},
                {"role": "user", "content": context.instruction}]
    for step in context.history:
        messages.append({"role": "assistant", "content": render_react(ReActOutput(step.thought, step.action))})
        messages.append({"role": "user", "content": step.observation})
    return messages


class RemotePolicy:
    kind = "remote"

    def __init__(self, config: EndpointConfig, session: requests.Session | None = None,
                 sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep

    def complete(self, messages: list[dict[str, str]], temperature: float) -> str:
        cfg = self.config
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if cfg.key():
            headers["Authorization"] = f"Bearer {cfg.key()}"
        payload = {"model": cfg.model, "messages": messages, "temperature": temperature}
        delay = cfg.backoff
        last_error: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            try:
                resp = self.session.post(url, json=payload, headers=headers, timeout=cfg.timeout)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise TransportError(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, ValueError, KeyError, IndexError, TypeError,
                    TransportError) as exc:
                last_error = exc
                if attempt < cfg.max_retries:
                    log.warning("chat completion failed (%s); retry %d in %.2fs", exc, attempt + 1, delay)
                    self._sleep(delay)
                    delay *= 2
        raise TransportError(f"chat completion failed after {cfg.max_retries} retries: {last_error}")

    def act(self, context: PolicyContext, temperature: float, rng: np.random.Generator | None = None) -> Decision:
        text = self.complete(render_messages(context), temperature)
        out = parse_react(text)
        return Decision(out.thought, out.action)


def remote_act(config: EndpointConfig, context: PolicyContext, temperature: float = 0.0) -> ReActOutput:
    return RemotePolicy(config).act(context, temperature).react
