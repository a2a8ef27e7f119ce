"""ReAct text format: ``Thought: ...`` followed by ``Action: ...``."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..core import EvolGymError


class ReActParseError(EvolGymError, ValueError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class ReActOutput:
    thought: str
    action: str

    def __post_init__(self):
        if not self.action.strip():
            raise ReActParseError("empty action")


_LABEL_RE = re.compile(r"^[ \t]*(thought|action)[ \t]*:", re.IGNORECASE | re.MULTILINE)
_FENCE_RE = re.compile(r"^```[\w-]*\s*\n?(.*?)\n?```$", re.DOTALL)
_QUOTES = "\"'`"


def _clean_action(text: str) -> str:
    s = text.strip()
    m = _FENCE_RE.match(s)
    if m:
        s = m.group(1).strip()
    while len(s) >= 2 and s[0] == s[-1] and s[0] in _QUOTES:
        s = s[1:-1].strip()
    return s


def parse_react(text: str) -> ReActOutput:
    """Take the last Thought block and the last Action block; Thought is optional."""
    blocks: dict[str, str] = {}
    matches = list(_LABEL_RE.finditer(text))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        blocks[m.group(1).lower()] = text[m.end():end]
    if "action" not in blocks:
        raise ReActParseError("no 'Action:' label in agent output", text)
    action = _clean_action(blocks["action"])
    if not action:
        raise ReActParseError("empty action after 'Action:' label", text)
    return ReActOutput(blocks.get("thought", "").strip(), action)


def render_react(out: ReActOutput) -> str:
    return f"Thought: {out.thought}\nAction: {out.action}"
