"""Dialogue policy, policy-gradient estimators and the agent-training loop.

The policy embeds a bag of history tokens (the last two turns plus the
current belief state), applies one tanh layer, and reads out action logits
and one categorical belief-state prediction per slot.

Agent training minimizes

    gen_loss + dst_loss,   gen_loss = -alpha * J + weighted_bc

where ``weighted_bc = -mean(log pi(a_t | h_t) * R(o_t, a_t, g))`` treats the
learned reward as a fixed per-turn weight, and ``J`` is the expected
reward of the policy's own action, estimated with Gumbel-softmax
relaxation (default), REINFORCE, or exact enumeration. The reward model is
never updated here; with Gumbel-softmax, gradients flow through the reward
network's action input into the policy only.

Anything exposing ``evaluate(belief, goal, actions, need_grad)`` can act as
the reward: see :class:`ConstantReward`, :class:`LinearReward` and
:class:`~tod_reward.reward_model.RewardModel`.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from . import params as P
from .slotworld import SlotWorldConfig, history_bag, track_beliefs, trajectory_bags, vocab_for

EXACT = "exact"
REINFORCE = "reinforce"
GUMBEL = "gumbel_softmax"
ESTIMATORS = (EXACT, REINFORCE, GUMBEL)
MAX_ENUMERABLE_ACTIONS = 1024


class PolicyTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = GUMBEL
    temperature: float = 1.0
    alpha: float = 0.1

    def __post_init__(self):
        if self.kind not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass(frozen=True)
class PolicyConfig:
    env: SlotWorldConfig = field(default_factory=SlotWorldConfig)
    embed_dim: int = 16
    hidden: int = 32
    window: int = 2

    @property
    def belief_cards(self):
        return vocab_for(self.env).belief_cards

    @property
    def n_actions(self):
        return vocab_for(self.env).n_actions

    def shapes(self) -> dict:
        V = vocab_for(self.env).history_size
        E, H = self.embed_dim, self.hidden
        return {
            "hist_emb": (V, E),
            "W1": (E, H),
            "b1": (H,),
            "W_act": (H, self.n_actions),
            "b_act": (self.n_actions,),
            "W_bs": (H, sum(self.belief_cards)),
            "b_bs": (sum(self.belief_cards),),
        }

    def to_dict(self) -> dict:
        return {"model": "policy", "env": self.env.to_dict(), "embed_dim": self.embed_dim, "hidden": self.hidden, "window": self.window}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(SlotWorldConfig.from_dict(d["env"]), int(d["embed_dim"]), int(d["hidden"]), int(d["window"]))


class ConstantReward:
    def __init__(self, value=1.0):
        self.value = float(value)

    def evaluate(self, belief, goal, actions, need_grad=False):
        n = len(actions)
        r = np.full(n, self.value)
        return r, (np.zeros_like(actions, dtype=float) if need_grad else None)


class LinearReward:
    """``R = <w, action>``, independent of belief and goal."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)

    def evaluate(self, belief, goal, actions, need_grad=False):
        actions = np.asarray(actions, dtype=float)
        r = actions @ self.weights
        return r, (np.broadcast_to(self.weights, actions.shape).copy() if need_grad else None)


@dataclass
class TurnBatch:
    """Stacked turns: history bags, dataset actions, belief labels, goals."""

    bags: np.ndarray
    actions: np.ndarray
    belief: np.ndarray
    goal: np.ndarray

    def __len__(self):
        return len(self.actions)

    def take(self, idx) -> "TurnBatch":
        return TurnBatch(self.bags[idx], self.actions[idx], self.belief[idx], self.goal[idx])


def corpus_turns(corpus, window=2) -> TurnBatch:
    bags, acts, bel, goals = [], [], [], []
    for tr in corpus:
        bags.append(trajectory_bags(tr, window))
        acts.append(tr.actions)
        bel.append(tr.belief_ids)
        goals.append(np.repeat(tr.goal_ids[None], tr.n_turns, axis=0))
    return TurnBatch(np.concatenate(bags), np.concatenate(acts), np.concatenate(bel), np.concatenate(goals))


def _one_hot(a, n):
    return np.eye(n)[a]


class Policy:
    def __init__(self, cfg: PolicyConfig, params: dict):
        self.cfg = cfg
        self.params = params
        cards = np.asarray(cfg.belief_cards)
        self._bs_off = np.concatenate([[0], np.cumsum(cards)[:-1]]).astype(int)

    @classmethod
    def init(cls, cfg: PolicyConfig, rng, scale=0.1) -> "Policy":
        return cls(cfg, P.init_uniform(cfg.shapes(), rng, scale))

    @classmethod
    def zeros(cls, cfg: PolicyConfig) -> "Policy":
        return cls(cfg, {k: np.zeros(s) for k, s in cfg.shapes().items()})

    def copy(self) -> "Policy":
        return Policy(self.cfg, P.copy_params(self.params))

    def forward(self, bags):
        p = self.params
        bags = np.atleast_2d(bags)
        x = bags @ p["hist_emb"]
        h = np.tanh(x @ p["W1"] + p["b1"])
        logits = h @ p["W_act"] + p["b_act"]
        bs_logits = h @ p["W_bs"] + p["b_bs"]
        return logits, bs_logits, (bags, x, h)

    def backward(self, cache, dlogits, dbs=None, per_sample=False):
        """Parameter gradients from upstream logit gradients.

        With ``per_sample`` every tensor gains a leading batch axis holding
        each row's own contribution (meant for small configs).
        """
        p = self.params
        bags, x, h = cache
        if dbs is None:
            dbs = np.zeros((len(h), p["b_bs"].size))
        dh = dlogits @ p["W_act"].T + dbs @ p["W_bs"].T
        da = dh * (1 - h**2)
        dx = da @ p["W1"].T
        if per_sample:
            return {
                "W_act": np.einsum("nh,na->nha", h, dlogits),
                "b_act": dlogits.copy(),
                "W_bs": np.einsum("nh,nb->nhb", h, dbs),
                "b_bs": dbs.copy(),
                "W1": np.einsum("ne,nh->neh", x, da),
                "b1": da.copy(),
                "hist_emb": np.einsum("nv,ne->nve", bags, dx),
            }
        return {
            "W_act": h.T @ dlogits,
            "b_act": dlogits.sum(axis=0),
            "W_bs": h.T @ dbs,
            "b_bs": dbs.sum(axis=0),
            "W1": x.T @ da,
            "b1": da.sum(axis=0),
            "hist_emb": bags.T @ dx,
        }

    def action_distribution(self, bags):
        logits, _, _ = self.forward(bags)
        return logits, softmax(logits, axis=1)

    def belief_distributions(self, bags):
        _, bs, _ = self.forward(bags)
        return [softmax(bs[:, o : o + c], axis=1) for o, c in zip(self._bs_off, self.cfg.belief_cards)]

    def gumbel_relaxed_sample(self, bags, eps, temperature=1.0):
        logits, _, _ = self.forward(bags)
        return relaxed_one_hot(logits, eps, temperature)

    def act(self, state) -> int:
        """Greedy action for a live :class:`~tod_reward.slotworld.DialogueState`."""
        beliefs = track_beliefs(state.utterances, state.cfg)
        t = len(state.utterances) - 1
        bag = history_bag(state.utterances, state.actions, beliefs, t, state.cfg, self.cfg.window)
        logits, _, _ = self.forward(bag)
        return int(np.argmax(logits[0]))

    __call__ = act

    def save(self, path):
        P.save_checkpoint(path, "policy", self.cfg.to_dict(), self.params)

    @classmethod
    def load(cls, path, expected: PolicyConfig | None = None) -> "Policy":
        config, params = P.load_checkpoint(path, "policy", expected.to_dict() if expected else None)
        cfg = PolicyConfig.from_dict(config)
        shapes = cfg.shapes()
        if set(params) != set(shapes) or any(params[k].shape != tuple(shapes[k]) for k in shapes):
            raise P.CheckpointError("checkpoint tensors do not match the declared config")
        return cls(cfg, params)

    def _dst(self, bs_logits, labels):
        n = len(labels)
        loss = 0.0
        dbs = np.zeros_like(bs_logits)
        for j, (o, c) in enumerate(zip(self._bs_off, self.cfg.belief_cards)):
            seg = bs_logits[:, o : o + c]
            logp = log_softmax(seg, axis=1)
            loss -= logp[np.arange(n), labels[:, j]].sum() / n
            dbs[:, o : o + c] = (np.exp(logp) - _one_hot(labels[:, j], c)) / n
        return loss, dbs


def relaxed_one_hot(logits, eps, temperature=1.0):
    return softmax((np.atleast_2d(logits) + eps) / temperature, axis=1)


# upstream gradients at the logits; each returns (value, d value / d logits)


def weighted_nll(logits, actions, weights):
    """``-mean(w * log softmax(logits)[a])`` and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(logits)
    n, A = logits.shape
    w = np.asarray(weights, dtype=float)
    logp = log_softmax(logits, axis=1)
    loss = -np.mean(logp[np.arange(n), actions] * w)
    dlogits = (w[:, None] * (softmax(logits, axis=1) - _one_hot(actions, A))) / n
    return loss, dlogits


def _weighted_bc_logits(logits, reward, batch):
    w, _ = reward.evaluate(batch.belief, batch.goal, _one_hot(batch.actions, logits.shape[1]))
    return weighted_nll(logits, batch.actions, w)


def _gs_logits(logits, reward, batch, temperature, eps):
    n = len(logits)
    f = relaxed_one_hot(logits, eps, temperature)
    r, dR = reward.evaluate(batch.belief, batch.goal, f, need_grad=True)
    inner = np.sum(f * dR, axis=1, keepdims=True)
    return r.mean(), f * (dR - inner) / temperature / n


def _sample_actions(probs, rng):
    u = rng.random(len(probs))
    return np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def _reinforce_logits(logits, reward, batch, actions):
    n, A = logits.shape
    probs = softmax(logits, axis=1)
    onehot = _one_hot(actions, A)
    G, _ = reward.evaluate(batch.belief, batch.goal, onehot)
    return G.mean(), G[:, None] * (onehot - probs) / n


def _exact_logits(logits, reward, batch):
    n, A = logits.shape
    if A > MAX_ENUMERABLE_ACTIONS:
        raise ValueError(f"cannot enumerate {A} actions (limit {MAX_ENUMERABLE_ACTIONS})")
    probs = softmax(logits, axis=1)
    R = np.empty((n, A))
    for a in range(A):
        R[:, a], _ = reward.evaluate(batch.belief, batch.goal, np.tile(_one_hot(a, A), (n, 1)))
    mean = np.sum(probs * R, axis=1, keepdims=True)
    return mean.mean(), probs * (R - mean) / n


# public estimator API; gradients are of the objective being maximized


def weighted_bc_loss(policy: Policy, reward, batch: TurnBatch, return_grad=False):
    logits, _, cache = policy.forward(batch.bags)
    loss, dlogits = _weighted_bc_logits(logits, reward, batch)
    if return_grad:
        return loss, policy.backward(cache, dlogits)
    return loss


def gs_objective_and_grad(policy: Policy, reward, batch: TurnBatch, temperature=1.0, rng=None, eps=None):
    """Single-draw Gumbel-softmax estimate of the expected reward and its gradient."""
    logits, _, cache = policy.forward(batch.bags)
    if eps is None:
        eps = rng.gumbel(size=logits.shape)
    J, dlogits = _gs_logits(logits, reward, batch, temperature, eps)
    return J, policy.backward(cache, dlogits)


def reinforce_grad(policy: Policy, reward, batch: TurnBatch, rng=None, actions=None, per_sample=False):
    """Score-function gradient with ``G = R(o_t, a~_t, g)``; returns ``(J estimate, grads)``.

    With ``per_sample`` the gradients keep a leading axis with one
    single-sample estimate per batch row (each scaled as if the batch held
    that row alone).
    """
    logits, _, cache = policy.forward(batch.bags)
    if actions is None:
        actions = _sample_actions(softmax(logits, axis=1), rng)
    J, dlogits = _reinforce_logits(logits, reward, batch, np.asarray(actions))
    if per_sample:
        return J, policy.backward(cache, dlogits * len(logits), per_sample=True)
    return J, policy.backward(cache, dlogits)


def gs_per_sample_grads(policy: Policy, reward, batch: TurnBatch, eps, temperature=1.0):
    logits, _, cache = policy.forward(batch.bags)
    J, dlogits = _gs_logits(logits, reward, batch, temperature, eps)
    return J, policy.backward(cache, dlogits * len(logits), per_sample=True)


def exact_policy_grad(policy: Policy, reward, batch: TurnBatch):
    """Gradient of the mean over rows of ``sum_a pi(a | h) R(o, a, g)`` by enumeration."""
    logits, _, cache = policy.forward(batch.bags)
    J, dlogits = _exact_logits(logits, reward, batch)
    return J, policy.backward(cache, dlogits)


def dst_loss(policy: Policy, batch: TurnBatch):
    """Per-slot cross entropy of the belief head, summed over slots and averaged over rows."""
    labels = np.atleast_2d(batch.belief)
    if labels.shape[1] != len(policy.cfg.belief_cards) or np.any(labels < 0) or np.any(labels >= np.asarray(policy.cfg.belief_cards)):
        raise ValueError("belief label out of schema bounds")
    _, bs, cache = policy.forward(batch.bags)
    loss, dbs = policy._dst(bs, labels)
    return loss, policy.backward(cache, np.zeros((len(labels), policy.cfg.n_actions)), dbs)


def _gen_logits(logits, reward, batch, est: EstimatorConfig, rng=None, eps=None, actions=None):
    loss, dlogits = _weighted_bc_logits(logits, reward, batch)
    J = float("nan")
    if est.alpha == 0:
        return loss, dlogits, J
    if est.kind == GUMBEL:
        if eps is None:
            eps = rng.gumbel(size=logits.shape)
        J, dJ = _gs_logits(logits, reward, batch, est.temperature, eps)
    elif est.kind == REINFORCE:
        if actions is None:
            actions = _sample_actions(softmax(logits, axis=1), rng)
        J, dJ = _reinforce_logits(logits, reward, batch, actions)
    else:
        J, dJ = _exact_logits(logits, reward, batch)
    return loss - est.alpha * J, dlogits - est.alpha * dJ, J


def gen_loss(policy: Policy, reward, batch: TurnBatch, est: EstimatorConfig, rng=None, eps=None, actions=None):
    """``-alpha * J + weighted_bc``; returns ``(loss, grads, J estimate)``.

    ``eps`` (Gumbel noise) or ``actions`` (REINFORCE draws) freeze the
    randomness; otherwise it comes from ``rng``.
    """
    logits, _, cache = policy.forward(batch.bags)
    loss, dlogits, J = _gen_logits(logits, reward, batch, est, rng, eps, actions)
    return loss, policy.backward(cache, dlogits), J


@dataclass
class PolicyTrace:
    rows: list = field(default_factory=list)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "gen_loss", "dst_loss", "jgs_estimate"])
        for step, g, d, j in self.rows:
            w.writerow([step, repr(g), repr(d), "" if np.isnan(j) else repr(j)])
        return buf.getvalue()


def train_policy(
    corpus,
    reward,
    est: EstimatorConfig,
    steps: int,
    lr: float = 0.5,
    seed: int = 0,
    batch_size: int = 64,
    cfg: PolicyConfig | None = None,
    turns: TurnBatch | None = None,
):
    """SGD on ``gen_loss + dst_loss`` over turns sampled with replacement.

    Returns ``(policy, trace)``. ``reward`` is held fixed.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    cfg = cfg or PolicyConfig(corpus[0].cfg if corpus else SlotWorldConfig())
    init_seq, batch_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
    policy = Policy.init(cfg, np.random.default_rng(init_seq))
    trace = PolicyTrace()
    if steps == 0:
        return policy, trace
    turns = turns if turns is not None else corpus_turns(corpus, cfg.window)
    batch_rng = np.random.default_rng(batch_seq)
    noise_rng = np.random.default_rng(noise_seq)
    for step in range(steps):
        batch = turns.take(batch_rng.integers(len(turns), size=batch_size))
        logits, bs, cache = policy.forward(batch.bags)
        g_loss, dlogits, J = _gen_logits(logits, reward, batch, est, noise_rng)
        d_loss, dbs = policy._dst(bs, batch.belief)
        if not (np.isfinite(g_loss) and np.isfinite(d_loss)):
            raise PolicyTrainingError(f"non-finite loss at step {step}")
        P.sgd_update(policy.params, policy.backward(cache, dlogits, dbs), lr)
        trace.rows.append((step, float(g_loss), float(d_loss), float(J)))
    return policy, trace


def save_checkpoint(policy: Policy, path):
    policy.save(path)


def load_checkpoint(path, expected: PolicyConfig | None = None) -> Policy:
    return Policy.load(path, expected)


def estimator_dict(est: EstimatorConfig) -> dict:
    return asdict(est)
