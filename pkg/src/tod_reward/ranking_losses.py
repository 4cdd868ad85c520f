"""Listwise and pairwise reward-learning losses over trajectory returns.

Every loss here takes a vector of trajectory returns ``J`` (the summed
turn-level rewards) and, where needed, the automatic evaluation scores
``S`` of the same trajectories. Computation happens in log space so the
softmax transform never overflows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

SOFTMAX = "softmax"
ESCORT = "escort"

REWARD_NET = "reward_net"
REWARD_MLE = "reward_mle"
LOSS_KINDS = (REWARD_NET, REWARD_MLE)

ESCORT_POWERS = (1, 2, 3, 4)


class TransformDomainError(ValueError):
    """Input outside the domain of a probabilistic transform."""


@dataclass(frozen=True)
class Transform:
    """Monotone positive map used to turn returns into a simplex.

    ``Transform("softmax")`` is ``exp``; ``Transform("escort", p)`` is ``x**p``
    and is only defined for ``x > 0``.
    """

    kind: str = SOFTMAX
    power: int = 1

    def __post_init__(self):
        if self.kind not in (SOFTMAX, ESCORT):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == ESCORT and self.power not in ESCORT_POWERS:
            raise ValueError(f"escort power must be one of {ESCORT_POWERS}, got {self.power}")

    @classmethod
    def softmax(cls) -> "Transform":
        return cls(SOFTMAX)

    @classmethod
    def escort(cls, power: int = 1) -> "Transform":
        return cls(ESCORT, power)

    @classmethod
    def from_dict(cls, d: dict) -> "Transform":
        if not isinstance(d, dict) or set(d) - {"kind", "power"}:
            raise ValueError(f"transform must be a dict with keys 'kind' and 'power', got {d!r}")
        return cls(d.get("kind", SOFTMAX), int(d.get("power", 1)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "power": self.power}

    def __str__(self):
        return "softmax" if self.kind == SOFTMAX else f"escort{self.power}"

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == ESCORT and np.any(x <= 0):
            raise TransformDomainError("escort transform requires strictly positive inputs")
        return x

    def log_apply(self, x):
        x = self._check(x)
        if self.kind == SOFTMAX:
            return x.copy()
        return self.power * np.log(x)

    def apply(self, x):
        x = self._check(x)
        if self.kind == SOFTMAX:
            return np.exp(x)
        return x**self.power

    def dlog(self, x):
        """Derivative of ``log(apply(x))``."""
        x = self._check(x)
        if self.kind == SOFTMAX:
            return np.ones_like(x)
        return self.power / x


def apply_transform(t: Transform, x):
    out = t.apply(x)
    return float(out) if np.ndim(out) == 0 else out


def normalize(t: Transform, xs) -> np.ndarray:
    """``Phi(x_i) / sum_k Phi(x_k)``, evaluated with a log-sum-exp."""
    logphi = t.log_apply(np.atleast_1d(xs))
    if logphi.size == 0:
        raise ValueError("cannot normalize an empty vector")
    return np.exp(logphi - logsumexp(logphi))


def score_distribution(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("scores must be strictly positive")
    return S / S.sum()


def check_ranked_scores(S) -> np.ndarray:
    """Validate a score vector sorted in strictly decreasing order."""
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("scores must be strictly positive")
    if np.any(np.diff(S) >= 0):
        raise ValueError("scores must be strictly decreasing (ties are not allowed)")
    return S


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    return float(-np.sum(p * np.log(p)))


def bt_pairwise_loss(J_i: float, J_j: float) -> float:
    """Bradley-Terry loss for ``tau_i`` preferred over ``tau_j``."""
    return float(np.logaddexp(0.0, J_j - J_i))


def reward_net_loss(S, J, t: Transform) -> float:
    """Cross entropy between the score distribution and the transformed returns."""
    S = np.asarray(S, dtype=float)
    J = np.asarray(J, dtype=float)
    if S.shape != J.shape or S.size < 2:
        raise ValueError("S and J must have the same length N >= 2")
    p_s = score_distribution(S)
    logphi = t.log_apply(J)
    log_pj = logphi - logsumexp(logphi)
    return float(-np.sum(p_s * log_pj))


def _suffix_logsumexp(logphi: np.ndarray) -> np.ndarray:
    # out[i] = log sum_{k >= i} exp(logphi[k]), accumulated right to left
    return np.logaddexp.accumulate(logphi[::-1])[::-1]


def reward_mle_loss(J_sorted, t: Transform) -> float:
    """Negative Plackett-Luce log-likelihood of the order ``0, 1, ..., N-1``.

    ``J_sorted[0]`` belongs to the most preferred trajectory.
    """
    J = np.atleast_1d(np.asarray(J_sorted, dtype=float))
    if J.size < 1:
        raise ValueError("need at least one return")
    logphi = t.log_apply(J)
    return float(-np.sum(logphi - _suffix_logsumexp(logphi)))


def plackett_luce_prob(order, J, t: Transform) -> float:
    """Probability of ranking ``order`` (0-based indices, best first)."""
    J = np.atleast_1d(np.asarray(J, dtype=float))
    order = np.asarray(order)
    if order.shape != J.shape or sorted(order.tolist()) != list(range(J.size)):
        raise ValueError(f"{order.tolist()} is not a permutation of 0..{J.size - 1}")
    return float(np.exp(-reward_mle_loss(J[order], t)))


def loss_grad_wrt_returns(loss_kind: str, S, J, t: Transform) -> np.ndarray:
    """Analytic gradient of a ranking loss with respect to the returns."""
    J = np.asarray(J, dtype=float)
    d = t.dlog(J)
    logphi = t.log_apply(J)
    if loss_kind == REWARD_NET:
        p_s = score_distribution(S)
        p_j = np.exp(logphi - logsumexp(logphi))
        return (p_j - p_s) * d
    if loss_kind == REWARD_MLE:
        suffix = _suffix_logsumexp(logphi)
        # item j appears in the denominators of stages 0..j
        mass = np.exp(logphi[None, :] - suffix[:, None])
        mass = np.cumsum(np.triu(mass), axis=0).diagonal()
        return d * (mass - 1.0)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def ranking_loss(loss_kind: str, S, J, t: Transform) -> float:
    if loss_kind == REWARD_NET:
        return reward_net_loss(S, J, t)
    if loss_kind == REWARD_MLE:
        return reward_mle_loss(J, t)
    raise ValueError(f"unknown loss kind {loss_kind!r}")
