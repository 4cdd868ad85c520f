"""Turn-level reward model ``R(belief, action, goal)`` and its ranking-based training.

Each input field is embedded and mean-pooled over its slots. An action is
either a discrete id or a point on the action simplex, and a simplex action
is embedded as the convex combination of the action embeddings, so the
reward is differentiable in the action. The three field vectors are
concatenated and passed through a two-layer tanh MLP with a sigmoid output,
giving a reward in ``(0, 1)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import params as P
from .ranking_losses import (
    LOSS_KINDS,
    Transform,
    check_ranked_scores,
    loss_grad_wrt_returns,
    ranking_loss,
)
from .slotworld import SlotWorldConfig, vocab_for

MAX_SAMPLE_ATTEMPTS = 64


class RewardTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    env: SlotWorldConfig = field(default_factory=SlotWorldConfig)
    embed_dim: int = 16
    hidden: int = 32

    @property
    def belief_cards(self):
        return vocab_for(self.env).belief_cards

    @property
    def goal_cards(self):
        return vocab_for(self.env).goal_cards

    @property
    def n_actions(self):
        return vocab_for(self.env).n_actions

    def shapes(self) -> dict:
        E, H = self.embed_dim, self.hidden
        return {
            "belief_emb": (sum(self.belief_cards), E),
            "goal_emb": (sum(self.goal_cards), E),
            "action_emb": (self.n_actions, E),
            "W1": (3 * E, H),
            "b1": (H,),
            "W2": (H, H),
            "b2": (H,),
            "w_out": (H,),
            "b_out": (1,),
        }

    def to_dict(self) -> dict:
        return {"model": "reward", "env": self.env.to_dict(), "embed_dim": self.embed_dim, "hidden": self.hidden}

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        return cls(SlotWorldConfig.from_dict(d["env"]), int(d["embed_dim"]), int(d["hidden"]))


def _offsets(cards):
    return np.concatenate([[0], np.cumsum(cards)[:-1]]).astype(int)


def _check_ids(ids, cards, what):
    ids = np.atleast_2d(np.asarray(ids))
    if ids.shape[1] != len(cards):
        raise ValueError(f"{what} must have width {len(cards)}, got {ids.shape[1]}")
    if np.any(ids < 0) or np.any(ids >= np.asarray(cards)):
        raise ValueError(f"{what} id out of bounds")
    return ids


class RewardModel:
    """A reward network: config plus a dict of named parameters."""

    def __init__(self, cfg: RewardConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self._b_off = _offsets(cfg.belief_cards)
        self._g_off = _offsets(cfg.goal_cards)

    @classmethod
    def init(cls, cfg: RewardConfig, rng, scale=0.1) -> "RewardModel":
        return cls(cfg, P.init_uniform(cfg.shapes(), rng, scale))

    @classmethod
    def zeros(cls, cfg: RewardConfig) -> "RewardModel":
        return cls(cfg, {k: np.zeros(s) for k, s in cfg.shapes().items()})

    def copy(self) -> "RewardModel":
        return RewardModel(self.cfg, P.copy_params(self.params))

    # forward / backward over a stack of turns

    def _prepare(self, belief, goal, actions, validate=True):
        belief = np.atleast_2d(belief)
        goal = np.atleast_2d(goal)
        if validate:
            belief = _check_ids(belief, self.cfg.belief_cards, "belief state")
            goal = _check_ids(goal, self.cfg.goal_cards, "goal")
        if goal.shape[0] == 1 and belief.shape[0] > 1:
            goal = np.repeat(goal, belief.shape[0], axis=0)
        actions = np.asarray(actions)
        if actions.ndim == 0:
            actions = actions[None]
        if validate:
            if actions.ndim == 1:
                if not np.issubdtype(actions.dtype, np.integer):
                    raise ValueError("discrete actions must be integer ids")
                if np.any(actions < 0) or np.any(actions >= self.cfg.n_actions):
                    raise ValueError("action id out of bounds")
            else:
                if actions.shape[1] != self.cfg.n_actions:
                    raise ValueError("simplex action has the wrong width")
                if np.any(actions < 0) or np.any(np.abs(actions.sum(axis=1) - 1) > 1e-9):
                    raise ValueError("simplex action must be nonnegative and sum to 1")
        return belief + self._b_off, goal + self._g_off, actions

    def forward(self, belief, goal, actions, validate=True):
        """Rewards for a stack of turns; returns ``(r, cache)``."""
        p = self.params
        B, G, A = self._prepare(belief, goal, actions, validate)
        xb = p["belief_emb"][B].mean(axis=1)
        xg = p["goal_emb"][G].mean(axis=1)
        xa = p["action_emb"][A] if A.ndim == 1 else A @ p["action_emb"]
        z = np.concatenate([xb, xg, xa], axis=1)
        h1 = np.tanh(z @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        r = expit(h2 @ p["w_out"] + p["b_out"][0])
        return r, (B, G, A, z, h1, h2, r)

    def backward(self, cache, dr, want_action_grad=False):
        """Gradients of ``sum(dr * r)``; optionally also d/d(simplex action)."""
        p = self.params
        B, G, A, z, h1, h2, r = cache
        E = self.cfg.embed_dim
        g = {}
        dlogit = dr * r * (1 - r)
        g["w_out"] = h2.T @ dlogit
        g["b_out"] = np.array([dlogit.sum()])
        da2 = np.outer(dlogit, p["w_out"]) * (1 - h2**2)
        g["W2"] = h1.T @ da2
        g["b2"] = da2.sum(axis=0)
        da1 = (da2 @ p["W2"].T) * (1 - h1**2)
        g["W1"] = z.T @ da1
        g["b1"] = da1.sum(axis=0)
        dz = da1 @ p["W1"].T
        dxb, dxg, dxa = dz[:, :E], dz[:, E : 2 * E], dz[:, 2 * E :]
        g["belief_emb"] = np.zeros_like(p["belief_emb"])
        np.add.at(g["belief_emb"], B, np.repeat(dxb[:, None, :] / B.shape[1], B.shape[1], axis=1))
        g["goal_emb"] = np.zeros_like(p["goal_emb"])
        np.add.at(g["goal_emb"], G, np.repeat(dxg[:, None, :] / G.shape[1], G.shape[1], axis=1))
        if A.ndim == 1:
            g["action_emb"] = np.zeros_like(p["action_emb"])
            np.add.at(g["action_emb"], A, dxa)
        else:
            g["action_emb"] = A.T @ dxa
        if want_action_grad:
            return g, dxa @ p["action_emb"].T
        return g

    # public evaluation API

    def turn_reward(self, belief, action, goal) -> float:
        r, _ = self.forward(belief, goal, action)
        return float(r[0])

    def turn_rewards(self, belief, goal, actions) -> np.ndarray:
        return self.forward(belief, goal, actions)[0]

    def trajectory_return(self, traj) -> float:
        if traj.n_turns < 1:
            raise ValueError("trajectory has no turns")
        return float(self.turn_rewards(traj.belief_ids, traj.goal_ids, traj.actions).sum())

    def returns(self, trajectories) -> np.ndarray:
        return np.array([self.trajectory_return(t) for t in trajectories])

    def evaluate(self, belief, goal, actions, need_grad=False):
        """Reward-function protocol used by policy training.

        ``actions`` is an ``(n, |A|)`` simplex matrix. Returns the rewards and,
        when ``need_grad``, the per-row gradient with respect to the action.
        """
        r, cache = self.forward(belief, goal, actions, validate=False)
        if not need_grad:
            return r, None
        _, dA = self.backward(cache, np.ones_like(r), want_action_grad=True)
        return r, dA

    def save(self, path):
        P.save_checkpoint(path, "reward", self.cfg.to_dict(), self.params)

    @classmethod
    def load(cls, path, expected: RewardConfig | None = None) -> "RewardModel":
        config, params = P.load_checkpoint(path, "reward", expected.to_dict() if expected else None)
        cfg = RewardConfig.from_dict(config)
        shapes = cfg.shapes()
        if set(params) != set(shapes) or any(params[k].shape != tuple(shapes[k]) for k in shapes):
            raise P.CheckpointError("checkpoint tensors do not match the declared config")
        return cls(cfg, params)


def save_checkpoint(model: RewardModel, path):
    model.save(path)


def load_checkpoint(path, expected: RewardConfig | None = None) -> RewardModel:
    return RewardModel.load(path, expected)


@dataclass
class RankedBatch:
    trajectories: list
    scores: np.ndarray

    def __post_init__(self):
        self.scores = check_ranked_scores(self.scores)
        if len(self.trajectories) != len(self.scores) or len(self.scores) < 2:
            raise ValueError("a ranked batch needs N >= 2 trajectories aligned with their scores")
        if len({t.n_turns for t in self.trajectories}) != 1:
            raise ValueError("trajectories in a ranked batch must share one length")


def length_buckets(corpus) -> dict:
    buckets = {}
    for i, t in enumerate(corpus):
        buckets.setdefault(t.n_turns, []).append(i)
    return dict(sorted(buckets.items()))


def _sample(corpus, buckets, N, rng):
    eligible = [(L, idx) for L, idx in buckets.items() if len(idx) >= N]
    if not eligible:
        return None
    sizes = np.array([len(idx) for _, idx in eligible], dtype=float)
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        _, idx = eligible[int(rng.choice(len(eligible), p=sizes / sizes.sum()))]
        pick = [idx[k] for k in rng.choice(len(idx), size=N, replace=False)]
        scores = np.array([corpus[i].score.combined for i in pick], dtype=float)
        if len(set(scores.tolist())) < N or np.any(scores <= 0):
            continue
        order = np.argsort(-scores, kind="stable")
        return RankedBatch([corpus[pick[k]] for k in order], scores[order])
    return None


def sample_ranked_batch(corpus, N: int, rng):
    """N same-length trajectories with distinct scores, best first, or ``None``.

    ``None`` signals that no batch was found within 64 attempts.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    return _sample(corpus, length_buckets(corpus), N, rng)


def reward_backprop(model: RewardModel, batch: RankedBatch, loss_kind: str, t: Transform):
    """Ranking loss of the batch's returns and its gradient w.r.t. every parameter."""
    trajs = batch.trajectories
    n_turns = trajs[0].n_turns
    belief = np.concatenate([tr.belief_ids for tr in trajs])
    goal = np.concatenate([np.repeat(tr.goal_ids[None], tr.n_turns, axis=0) for tr in trajs])
    actions = np.concatenate([tr.actions for tr in trajs])
    r, cache = model.forward(belief, goal, actions, validate=False)
    J = r.reshape(len(trajs), n_turns).sum(axis=1)
    loss = ranking_loss(loss_kind, batch.scores, J, t)
    dJ = loss_grad_wrt_returns(loss_kind, batch.scores, J, t)
    grads = model.backward(cache, np.repeat(dJ, n_turns))
    return loss, grads


@dataclass
class RewardTrace:
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    skipped: int = 0

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss"])
        for s, l in zip(self.steps, self.losses):
            w.writerow([s, repr(l)])
        return buf.getvalue()


def train_reward(
    corpus,
    loss_kind: str,
    N: int,
    t: Transform,
    steps: int,
    lr: float = 0.05,
    seed: int = 0,
    cfg: RewardConfig | None = None,
):
    """Plain SGD on a ranking loss over sampled same-length batches.

    Returns ``(model, trace)``. Iterations whose batch sampling fails are
    skipped; training aborts if more than half of them fail.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    cfg = cfg or RewardConfig(corpus[0].cfg if corpus else SlotWorldConfig())
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    model = RewardModel.init(cfg, np.random.default_rng(init_seq))
    rng = np.random.default_rng(sample_seq)
    trace = RewardTrace()
    if steps == 0:
        return model, trace
    buckets = length_buckets(corpus)
    if not any(len(idx) >= N for idx in buckets.values()):
        raise RewardTrainingError(f"no length bucket holds {N} trajectories")
    for step in range(steps):
        batch = _sample(corpus, buckets, N, rng)
        if batch is None:
            trace.skipped += 1
            if step + 1 >= 20 and trace.skipped > 0.5 * (step + 1):
                raise RewardTrainingError(f"{trace.skipped} of {step + 1} sampled batches were unusable (tied scores)")
            continue
        loss, grads = reward_backprop(model, batch, loss_kind, t)
        if not np.isfinite(loss):
            raise RewardTrainingError(f"non-finite reward loss at step {step}")
        P.sgd_update(model.params, grads, lr)
        trace.steps.append(step)
        trace.losses.append(loss)
    if trace.skipped > 0.5 * steps:
        raise RewardTrainingError(f"{trace.skipped} of {steps} sampled batches were unusable (tied scores)")
    return model, trace


def pairwise_accuracy(model: RewardModel, trajectories) -> float:
    """Fraction of same-length, distinct-score pairs whose returns order agrees with their scores."""
    J = model.returns(trajectories)
    S = np.array([t.score.combined for t in trajectories])
    L = np.array([t.n_turns for t in trajectories])
    agree = total = 0
    for length in np.unique(L):
        idx = np.nonzero(L == length)[0]
        dS = np.sign(S[idx][:, None] - S[idx][None, :])
        dJ = np.sign(J[idx][:, None] - J[idx][None, :])
        mask = np.triu(dS != 0, 1)
        agree += int(np.sum((dS == dJ) & mask))
        total += int(mask.sum())
    return agree / total if total else float("nan")
