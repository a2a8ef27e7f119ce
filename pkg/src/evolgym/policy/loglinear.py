"""Trainable log-linear (softmax) policy over a closed action set."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..core import DomainError
from .context import Decision, PolicyContext, candidate_actions
from .features import DIM, FEATURE_MAP_VERSION, ContextFeatures, SparseVec, feature_index


def log_softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max()
    z = scores - m
    return z - np.log(np.exp(z).sum())


def sample_index(scores: np.ndarray, temperature: float, rng: np.random.Generator | None) -> int:
    """Argmax at temperature 0 (first maximum wins), else one draw from the tempered softmax."""
    if temperature == 0:
        return int(np.argmax(scores))
    p = np.exp(log_softmax(scores / temperature))
    i = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(i, len(scores) - 1)


class LogLinearPolicy:
    """pi(a | context) proportional to exp(theta . phi(context, a) / temperature).

    Instances are immutable snapshots: training returns a new policy.
    """

    kind = "log_linear"

    def __init__(self, weights: np.ndarray | None = None, dim: int = DIM):
        w = np.zeros(dim) if weights is None else np.array(weights, dtype=np.float64)
        if w.shape != (dim,):
            raise ValueError(f"weights must have shape ({dim},)")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        self.weights = w
        self.dim = dim

    def with_weights(self, weights: np.ndarray) -> "LogLinearPolicy":
        return LogLinearPolicy(weights, self.dim)

    # -- scoring -----------------------------------------------------------
    def featurize_all(self, context: PolicyContext) -> tuple[list[str], list[SparseVec]]:
        actions = sorted(candidate_actions(context))
        if not actions:
            raise DomainError("log-linear policy needs a non-empty action set")
        cf = ContextFeatures(context)
        return actions, [cf.vector(a) for a in actions]

    def scores(self, vecs: list[SparseVec]) -> np.ndarray:
        w = self.weights
        return np.array([float(w[idx] @ val) for idx, val in vecs])

    def distribution(self, context: PolicyContext, temperature: float = 1.0) -> tuple[list[str], np.ndarray]:
        if temperature <= 0:
            raise ValueError("distribution needs a positive temperature")
        actions, vecs = self.featurize_all(context)
        return actions, np.exp(log_softmax(self.scores(vecs) / temperature))

    def _index(self, actions: list[str], action: str) -> int:
        try:
            return actions.index(action)
        except ValueError:
            raise DomainError(f"action {action!r} is not available in this context") from None

    def log_prob(self, context: PolicyContext, action: str) -> float:
        actions, vecs = self.featurize_all(context)
        i = self._index(actions, action)
        return float(log_softmax(self.scores(vecs))[i])

    def grad_log_prob(self, context: PolicyContext, action: str) -> SparseVec:
        """phi(a) - E_pi[phi]; returned sparse (sorted indices, values)."""
        actions, vecs = self.featurize_all(context)
        i = self._index(actions, action)
        p = np.exp(log_softmax(self.scores(vecs)))
        coef = -p
        coef[i] += 1.0
        idx = np.concatenate([v[0] for v in vecs])
        val = np.concatenate([v[1] * c for v, c in zip(vecs, coef)])
        uniq, inv = np.unique(idx, return_inverse=True)
        return uniq, np.bincount(inv, weights=val, minlength=len(uniq))

    # -- acting --------------------------------------------------------------
    def act(self, context: PolicyContext, temperature: float, rng: np.random.Generator) -> Decision:
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        actions, vecs = self.featurize_all(context)
        s = self.scores(vecs)
        logp = log_softmax(s)
        i = sample_index(s, temperature, rng)
        action = actions[i]
        return Decision(self.explain(context, action), action, float(logp[i]))

    def explain(self, context: PolicyContext, action: str) -> str:
        names = ContextFeatures(context).names(action)
        contrib = [(self.weights[feature_index(n)] * v, n) for n, v in names.items() if n.startswith("cue=")]
        top = [n[4:].replace("_", " ") for c, n in sorted(contrib, reverse=True) if c > 0][:2]
        reason = " and ".join(top) if top else "it scores highest"
        return f"I will {action} because {reason}."

    # -- persistence ---------------------------------------------------------
    def to_json(self) -> str:
        nz = np.flatnonzero(self.weights)
        return json.dumps({
            "kind": self.kind,
            "dimension": self.dim,
            "feature_map_version": FEATURE_MAP_VERSION,
            "format": "sparse",
            "indices": [int(i) for i in nz],
            "values": [float(self.weights[i]) for i in nz],
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "LogLinearPolicy":
        d = json.loads(text)
        if d.get("feature_map_version") != FEATURE_MAP_VERSION:
            raise ValueError(f"snapshot feature map {d.get('feature_map_version')!r} "
                             f"does not match {FEATURE_MAP_VERSION!r}")
        w = np.zeros(int(d["dimension"]))
        if d.get("format", "sparse") == "dense":
            w[:] = d["weights"]
        else:
            w[np.asarray(d["indices"], dtype=np.int64)] = d["values"]
        return cls(w, int(d["dimension"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LogLinearPolicy":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        return hashlib.sha256((self.weights + 0.0).tobytes()).hexdigest()  # -0.0 and 0.0 hash alike

    def __eq__(self, other) -> bool:
        return isinstance(other, LogLinearPolicy) and np.array_equal(self.weights, other.weights)

    __hash__ = None
