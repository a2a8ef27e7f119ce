"""Reward maximization as posterior inference, checked on finite trajectory spaces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import DomainError

SUM_TOL = 1e-12


class ZeroEvidenceError(DomainError):
    """The success event has probability zero under the policy; its log is -inf."""

    value = -math.inf


class SupportError(DomainError):
    pass


@dataclass(frozen=True)
class EnumeratedSpace:
    trajectories: tuple
    pi: np.ndarray
    p: np.ndarray

    def __init__(self, pi: Sequence[float], p: Sequence[float], trajectories: Sequence | None = None):
        pi_a = np.asarray(pi, dtype=np.float64)
        p_a = np.asarray(p, dtype=np.float64)
        if pi_a.ndim != 1 or pi_a.shape != p_a.shape or len(pi_a) == 0:
            raise DomainError("pi and p must be equal-length non-empty vectors")
        if np.any(pi_a < 0) or abs(pi_a.sum() - 1.0) > SUM_TOL:
            raise DomainError(f"policy probabilities must be >= 0 and sum to 1 (sum {pi_a.sum()!r})")
        if np.any(p_a < 0) or np.any(p_a > 1):
            raise DomainError("success likelihoods must lie in [0, 1]")
        trajs = tuple(trajectories) if trajectories is not None else tuple(range(len(pi_a)))
        if len(trajs) != len(pi_a):
            raise DomainError("one trajectory label per probability")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "pi", pi_a)
        object.__setattr__(self, "p", p_a)

    def __len__(self) -> int:
        return len(self.pi)


def evidence(space: EnumeratedSpace) -> float:
    return float(np.dot(space.pi, space.p))


def log_evidence(space: EnumeratedSpace) -> float:
    """ln sum_tau pi(tau) p(O=1 | tau); raises ZeroEvidenceError when that sum is 0."""
    z = evidence(space)
    if z <= 0.0:
        raise ZeroEvidenceError("success has zero probability under the policy")
    return math.log(z)


def optimal_q(space: EnumeratedSpace) -> np.ndarray:
    z = evidence(space)
    if z <= 0.0:
        raise ZeroEvidenceError("posterior undefined: zero evidence")
    return space.pi * space.p / z


def elbo(q: Sequence[float], space: EnumeratedSpace) -> float:
    """E_q[ln p] - KL(q || pi).  Returns -inf when q puts mass where p = 0."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != space.pi.shape:
        raise DomainError("q must cover the same trajectories as the space")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise DomainError("q must be a probability vector")
    on = q > 0
    if np.any(space.pi[on] <= 0):
        raise SupportError("q assigns mass to a trajectory with pi = 0")
    if np.any(space.p[on] <= 0):
        return -math.inf
    qs, ps, pis = q[on], space.p[on], space.pi[on]
    return float(np.sum(qs * np.log(ps)) - np.sum(qs * (np.log(qs) - np.log(pis))))


def kl(q: Sequence[float], pi: Sequence[float]) -> float:
    q, pi = np.asarray(q, float), np.asarray(pi, float)
    on = q > 0
    if np.any(pi[on] <= 0):
        raise SupportError("q not absolutely continuous w.r.t. pi")
    return float(np.sum(q[on] * (np.log(q[on]) - np.log(pi[on]))))
