"""Wordle over a fixed vocabulary prefix of the shipped word list."""

from __future__ import annotations

import math
import re
from collections import Counter
from functools import lru_cache
from importlib import resources

import numpy as np

from ..protocol import EnvDescriptor, EnvSpec, Transition, World

MAX_ROUNDS = 8
MAX_ATTEMPTS = 6
MIN_VOCAB, MAX_VOCAB = 50, 500

SYSTEM_PROMPT = (
    "You are an expert wordle player. Welcome to the game of Wordle. Your objective is to guess a "
    "hidden 5 letter word. You have 6 attempts to guess it correctly and you should try to guess it "
    "in as few attempts as possible. When guessing the word, you should format your word as a space "
    "separated sequence of letters, like \"s h i r e\" for example. After guessing the word, you "
    "will receive feedback from the game environment in the form of a sequence of 5 space separated "
    "letters like \"b y g g b\", where each letter indicates some information about the hidden word. "
    "The environment will return one of three letters - \"b\", \"g\", or \"y\" - for each letter in "
    "the word you guessed.\n"
    "\"b\": the letter at that position in your guessed word is not in the hidden word.\n"
    "\"y\": the letter at that position in your guessed word is in the hidden word but is not in "
    "the correct position.\n"
    "\"g\": the letter at that position in your guessed word is in the hidden word and is in the "
    "correct position.\n"
    "If you guess an invalid word (e.g. not a 5 letter word or a word not in the vocabulary), the "
    "environment will respond with an \"invalid word\" message. Your response should use the "
    "following format:\n\nThought: <Your Thought>\nAction: <Your Action>"
)
INSTRUCTION_TEXT = (
    "Now let's start a new game. Remember, the word you guess should be strictly in the "
    "vocabulary. You should return your thought and your word strictly in the formation mentioned "
    "above.\nVocabulary: {vocab}"
)
INVALID = "invalid word"

DESCRIPTOR = EnvDescriptor("wordle", MAX_ROUNDS, "binary", SYSTEM_PROMPT)

_VOCAB_RE = re.compile(r"^Vocabulary: (.*)$", re.MULTILINE)


@lru_cache(maxsize=1)
def word_list() -> tuple[str, ...]:
    text = resources.files("evolgym.envs").joinpath("assets/vocab.txt").read_text(encoding="utf-8")
    return tuple(w for w in text.split() if w)


def load_vocabulary(size: int) -> tuple[str, ...]:
    words = word_list()
    if not MIN_VOCAB <= size <= min(MAX_VOCAB, len(words)):
        raise ValueError(f"wordle vocabulary size must be in [{MIN_VOCAB}, {MAX_VOCAB}], got {size}")
    return words[:size]


def vocabulary_from_text(text: str) -> list[str]:
    m = _VOCAB_RE.search(text)
    return m.group(1).split() if m else []


def wordle_feedback(target: str, guess: str) -> str:
    """Per-letter marks: green for exact, yellow for count-limited misplaced, else black."""
    if len(target) != 5 or len(guess) != 5:
        raise ValueError("wordle words have exactly 5 letters")
    marks = ["b"] * 5
    remaining = Counter()
    for i, (t, g) in enumerate(zip(target, guess)):
        if t == g:
            marks[i] = "g"
        else:
            remaining[t] += 1
    for i, g in enumerate(guess):
        if marks[i] == "b" and remaining[g] > 0:
            marks[i] = "y"
            remaining[g] -= 1
    return " ".join(marks)


def normalize_guess(action: str) -> str:
    s = action.strip().strip(".").strip("\"'").lower()
    parts = s.split()
    if len(parts) > 1 and all(len(p) == 1 for p in parts):
        return "".join(parts)
    return s


class WordleWorld(World):
    def __init__(self, vocabulary: tuple[str, ...], target: str):
        self.vocabulary = vocabulary
        self._vocab_set = frozenset(vocabulary)
        self.target = target
        self.attempts_used = 0

    def first_observation(self) -> str:
        return INSTRUCTION_TEXT.format(vocab=" ".join(self.vocabulary))

    def step(self, action: str) -> Transition:
        guess = normalize_guess(action)
        if len(guess) != 5 or guess not in self._vocab_set:
            return Transition(INVALID, -1.0)
        self.attempts_used += 1
        fb = wordle_feedback(self.target, guess)
        if guess == self.target:
            return Transition(fb, -1.0, "success")
        if self.attempts_used >= MAX_ATTEMPTS:
            return Transition(fb, -1.0, "failure")
        return Transition(fb, -1.0)

    def available_actions(self) -> list[str]:
        return []

    def fingerprint(self) -> str:
        return f"wordle|{len(self.vocabulary)}|{self.target}|{self.attempts_used}"


class WordleSpec(EnvSpec):
    descriptor = DESCRIPTOR
    default_difficulty = 100

    def check_difficulty(self, difficulty: int) -> None:
        load_vocabulary(difficulty)

    def build(self, seed: int, difficulty: int) -> tuple[str, WordleWorld]:
        vocab = load_vocabulary(difficulty)
        rng = np.random.default_rng([seed, difficulty, 0x776F7264])
        world = WordleWorld(vocab, vocab[int(rng.integers(len(vocab)))])
        return world.first_observation(), world


def consistent(candidates: list[str], history: list[tuple[str, str]]) -> list[str]:
    return [w for w in candidates if all(wordle_feedback(w, g) == fb for g, fb in history)]


def feedback_entropy(guess: str, candidates: list[str]) -> float:
    counts = Counter(wordle_feedback(c, guess) for c in candidates)
    n = len(candidates)
    return -sum(k / n * math.log(k / n) for k in counts.values())


def entropy_greedy_guess(vocabulary: list[str], history: list[tuple[str, str]]) -> str:
    """Consistent candidate with maximal feedback entropy; ties go to the smaller word."""
    cands = consistent(sorted(vocabulary), history) or sorted(vocabulary)
    if len(cands) <= 2:
        return cands[0]
    return max(cands, key=lambda w: (feedback_entropy(w, cands), [-ord(ch) for ch in w]))
