"""Uniform environment interface and the JSON-over-HTTP session protocol.

Every environment is served through a :class:`SessionManager`, which owns the
live sessions.  :meth:`SessionManager.dispatch` maps a request (method, path,
query, body) to a ``(status, payload)`` pair; the HTTP server below and the
in-process client both go through it, so the wire format is identical in
either mode.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping
from urllib.parse import parse_qs, urlsplit

from .core import Instruction, InstructionSet

log = logging.getLogger(__name__)

DEFAULT_IDLE_TIMEOUT = 600.0
BIND_ENV_VAR = "EVOLGYM_BIND"


@dataclass(frozen=True)
class EnvDescriptor:
    env_name: str
    max_rounds: int
    reward_kind: str
    system_prompt: str


@dataclass(frozen=True)
class Transition:
    """What a world reports for one action; ``outcome`` is set once the task ends."""

    observation: str
    step_reward: float
    outcome: str | None = None  # "success" | "failure"


@dataclass(frozen=True)
class StepResult:
    observation: str
    step_reward: float
    reward: float
    done: bool
    available_actions: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"observation": self.observation, "step_reward": self.step_reward,
                "reward": self.reward, "done": self.done,
                "available_actions": list(self.available_actions)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StepResult":
        return cls(d["observation"], d["step_reward"], d["reward"], d["done"],
                   list(d["available_actions"]))


class World(ABC):
    """Hidden, mutable state of one environment instance."""

    @abstractmethod
    def first_observation(self) -> str: ...

    @abstractmethod
    def step(self, action: str) -> Transition: ...

    @abstractmethod
    def available_actions(self) -> list[str]: ...

    @abstractmethod
    def fingerprint(self) -> str:
        """Canonical rendering of the full state, used for purity checks."""


class EnvSpec(ABC):
    """Registry entry: static description plus a seeded instance generator."""

    descriptor: EnvDescriptor
    default_difficulty: int

    @property
    def name(self) -> str:
        return self.descriptor.env_name

    @abstractmethod
    def check_difficulty(self, difficulty: int) -> None: ...

    @abstractmethod
    def build(self, seed: int, difficulty: int) -> tuple[str, World]:
        """Return (instruction text, initial world) for ``seed``."""


class ProtocolError(Exception):
    status = 400
    code = "bad_request"

    def payload(self) -> dict[str, Any]:
        return {"error": {"code": self.code, "message": str(self)}}


class BadRequest(ProtocolError):
    pass


class NotFound(ProtocolError):
    status = 404
    code = "not_found"


class Conflict(ProtocolError):
    status = 409
    code = "conflict"


class Session:
    def __init__(self, session_id: str, spec: EnvSpec, seed: int, difficulty: int,
                 instruction_id: str | None):
        self.session_id = session_id
        self.spec = spec
        self.seed = seed
        self.difficulty = difficulty
        self.instruction_id = instruction_id
        self.lock = threading.Lock()
        self.last_access = time.monotonic()
        self._init_state()

    def _init_state(self) -> None:
        self.instruction_text, self.world = self.spec.build(self.seed, self.difficulty)
        self.round = 0
        self.done = False
        self.final_reward = 0.0
        self.observation = self.world.first_observation()

    @property
    def max_rounds(self) -> int:
        return self.spec.descriptor.max_rounds

    def reset(self) -> str:
        self._init_state()
        return self.observation

    def step(self, action: str) -> StepResult:
        if self.done:
            raise Conflict(f"session {self.session_id} is finished")
        tr = self.world.step(action)
        self.round += 1
        self.observation = tr.observation
        if tr.outcome == "success":
            self.done, self.final_reward = True, 1.0
        elif tr.outcome == "failure" or self.round >= self.max_rounds:
            self.done, self.final_reward = True, 0.0
        return StepResult(tr.observation, float(tr.step_reward), self.final_reward, self.done,
                          [] if self.done else self.available_actions())

    def available_actions(self) -> list[str]:
        return sorted(self.world.available_actions())

    def fingerprint(self) -> str:
        return f"{self.round}|{self.done}|{self.final_reward}|{self.observation}|{self.world.fingerprint()}"


class SessionManager:
    """Server-side state for one or more environments."""

    def __init__(self, specs: Mapping[str, EnvSpec], difficulties: Mapping[str, int] | None = None,
                 instructions: InstructionSet | None = None,
                 idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                 clock: Callable[[], float] = time.monotonic):
        self.specs = dict(specs)
        self.difficulties = {name: (difficulties or {}).get(name, spec.default_difficulty)
                             for name, spec in self.specs.items()}
        for name, d in self.difficulties.items():
            self.specs[name].check_difficulty(d)
        self.instructions = instructions
        self.idle_timeout = idle_timeout
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # -- session table ---------------------------------------------------
    def _expire(self) -> None:
        now = self.clock()
        with self._lock:
            stale = [sid for sid, s in self._sessions.items() if now - s.last_access > self.idle_timeout]
            for sid in stale:
                del self._sessions[sid]
        if stale:
            log.debug("expired %d idle sessions", len(stale))

    def _get(self, session_id: Any) -> Session:
        if not isinstance(session_id, str):
            raise BadRequest("session_id must be a string")
        with self._lock:
            s = self._sessions.get(session_id)
        if s is None:
            raise NotFound(f"unknown session {session_id!r}")
        s.last_access = self.clock()
        return s

    def __len__(self) -> int:
        return len(self._sessions)

    def session(self, session_id: str) -> Session:
        return self._get(session_id)

    # -- handlers ----------------------------------------------------------
    def create_env(self, env: Any, instruction_id: Any = None, seed: Any = None) -> dict[str, Any]:
        self._expire()
        if not isinstance(env, str):
            raise BadRequest("env must be a string")
        spec = self.specs.get(env)
        if spec is None:
            raise NotFound(f"unknown environment {env!r}")
        if instruction_id is not None:
            if not isinstance(instruction_id, str):
                raise BadRequest("instruction_id must be a string or null")
            ins: Instruction | None = None
            if self.instructions is not None:
                ins = self.instructions.index.get((env, instruction_id))
            if ins is None:
                raise NotFound(f"unknown instruction {instruction_id!r} for environment {env!r}")
            seed = ins.seed
        elif seed is None:
            raise BadRequest("one of instruction_id or seed is required")
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise BadRequest("seed must be an integer")
        sid = uuid.uuid4().hex
        s = Session(sid, spec, seed, self.difficulties[env], instruction_id)
        s.last_access = self.clock()
        with self._lock:
            self._sessions[sid] = s
        return {"session_id": sid, "system_prompt": spec.descriptor.system_prompt,
                "observation": s.observation}

    def step(self, session_id: Any, action: Any) -> dict[str, Any]:
        if not isinstance(action, str):
            raise BadRequest("action must be a string")
        s = self._get(session_id)
        with s.lock:
            return s.step(action).to_dict()

    def observation(self, session_id: Any) -> dict[str, Any]:
        s = self._get(session_id)
        with s.lock:
            return {"observation": s.observation}

    def available_actions(self, session_id: Any) -> dict[str, Any]:
        s = self._get(session_id)
        with s.lock:
            return {"actions": [] if s.done else s.available_actions()}

    def reset(self, session_id: Any) -> dict[str, Any]:
        s = self._get(session_id)
        with s.lock:
            return {"observation": s.reset()}

    def close(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)

    # -- routing -----------------------------------------------------------
    def dispatch(self, method: str, path: str, query: Mapping[str, str] | None = None,
                 body: Any = None) -> tuple[int, dict[str, Any]]:
        query = query or {}
        try:
            if method == "POST":
                if not isinstance(body, dict):
                    raise BadRequest("request body must be a JSON object")
                if path == "/createEnv":
                    return 200, self.create_env(body.get("env"), body.get("instruction_id"), body.get("seed"))
                if path == "/step":
                    return 200, self.step(body.get("session_id"), body.get("action"))
                if path == "/reset":
                    return 200, self.reset(body.get("session_id"))
            elif method == "GET":
                if path == "/observation":
                    return 200, self.observation(query.get("session_id"))
                if path == "/available_actions":
                    return 200, self.available_actions(query.get("session_id"))
            raise NotFound(f"no route for {method} {path}")
        except ProtocolError as exc:
            return exc.status, exc.payload()


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "EnvServer"

    def log_message(self, fmt, *args):  # route through logging, not stderr
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, payload: dict[str, Any]) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        parts = urlsplit(self.path)
        query = {k: v[0] for k, v in parse_qs(parts.query).items()}
        self._send(*self.server.manager.dispatch("GET", parts.path, query))

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8")) if raw else None
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._send(400, BadRequest("body is not valid JSON").payload())
            return
        self._send(*self.server.manager.dispatch("POST", urlsplit(self.path).path, None, body))


class EnvServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, manager: SessionManager, host: str | None = None, port: int = 0):
        self.manager = manager
        super().__init__((host or default_bind(), port), _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name=f"env-server-{self.server_address[1]}",
                             daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def default_bind() -> str:
    return os.environ.get(BIND_ENV_VAR, "127.0.0.1")
