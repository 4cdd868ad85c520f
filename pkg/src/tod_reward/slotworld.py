"""SlotWorld: a small slot-filling dialogue environment with a scripted user.

The user holds a goal: values for a subset of the constraint slots plus a
set of requestable info slots (phone, address, ...). The system should
request every constraint slot it does not know yet, offer an entity once
the belief state pins the goal down, answer each info request, and say bye.

Responses are delexicalized: ``OFFER`` refers to the entity matching the
current belief state, so an offer is correct exactly when every goal
constraint has been filled in.

Corpus dialogues come from the scripted expert with per-turn action
substitution. A substituted action is, with probability
``systematic_error``, the typical mistake for that context (confirming
instead of asking, acknowledging instead of answering, ...) and otherwise a
uniformly random action. Typical mistakes are never expert actions, so a
learner that copies the majority action can pick them up.
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

FILLER_WORDS = 8


@dataclass(frozen=True)
class SlotWorldConfig:
    n_constraint_slots: int = 4
    values_per_slot: int = 4
    n_info_slots: int = 3
    max_turns: int = 8
    systematic_error: float = 0.8
    filler_prob: float = 0.3

    def __post_init__(self):
        if not 1 <= self.n_constraint_slots <= 4:
            raise ValueError("n_constraint_slots must be in 1..4")
        if not 2 <= self.values_per_slot <= 8:
            raise ValueError("values_per_slot must be in 2..8")
        if self.n_info_slots < 0:
            raise ValueError("n_info_slots must be >= 0")
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if not 0 <= self.systematic_error <= 1 or not 0 <= self.filler_prob <= 1:
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SlotWorldConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown env keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class Vocab:
    """Token ids for user utterances, system actions and belief-state tokens.

    System actions occupy ids ``0 .. n_actions - 1`` so an action id is also
    its token id.
    """

    def __init__(self, cfg: SlotWorldConfig):
        C, V, I = cfg.n_constraint_slots, cfg.values_per_slot, cfg.n_info_slots
        self.cfg = cfg
        names = []
        # system actions
        names += [f"sys_request_{s}" for s in range(C)]
        names += [f"sys_confirm_{s}" for s in range(C)]
        names += ["sys_offer", "sys_book"]
        names += [f"sys_answer_{i}" for i in range(I)]
        names += ["sys_reqmore", "sys_ack", "sys_bye"]
        self.n_actions = len(names)
        # user tokens
        names += ["usr_greet", "usr_thanks", "usr_reject"]
        names += [f"usr_inform_{s}_{v}" for s in range(C) for v in range(V)]
        names += [f"usr_dontcare_{s}" for s in range(C)]
        names += [f"usr_request_{i}" for i in range(I)]
        names += [f"usr_filler_{k}" for k in range(FILLER_WORDS)]
        self.n_tokens = len(names)
        self.names = names
        self.ids = {n: k for k, n in enumerate(names)}
        # belief-state tokens live after the utterance vocabulary
        self.belief_cards = (V + 2,) * C + (2,) * I
        self.belief_offsets = self.n_tokens + np.concatenate([[0], np.cumsum(self.belief_cards)[:-1]]).astype(int)
        self.history_size = self.n_tokens + int(sum(self.belief_cards))
        self.goal_cards = (V + 1,) * C + (2,) * I

    def __getitem__(self, name):
        return self.ids[name]

    def request(self, s):
        return self.ids[f"sys_request_{s}"]

    def answer(self, i):
        return self.ids[f"sys_answer_{i}"]

    def inform(self, s, v):
        return self.ids[f"usr_inform_{s}_{v}"]

    def dontcare(self, s):
        return self.ids[f"usr_dontcare_{s}"]

    def user_request(self, i):
        return self.ids[f"usr_request_{i}"]

    def decode(self, token):
        return self.names[token]


@dataclass(frozen=True)
class Goal:
    constraints: dict  # slot -> value
    requested: tuple = ()

    def __post_init__(self):
        if not self.constraints:
            raise ValueError("a goal needs at least one constraint")

    def ids(self, cfg: SlotWorldConfig) -> np.ndarray:
        out = np.zeros(cfg.n_constraint_slots + cfg.n_info_slots, dtype=int)
        for s, v in self.constraints.items():
            out[s] = 1 + v
        for i in self.requested:
            out[cfg.n_constraint_slots + i] = 1
        return out

    def to_json(self) -> dict:
        return {"constraints": {str(s): v for s, v in sorted(self.constraints.items())}, "requested": list(self.requested)}

    @classmethod
    def from_json(cls, d) -> "Goal":
        return cls({int(s): int(v) for s, v in d["constraints"].items()}, tuple(int(i) for i in d["requested"]))


@dataclass(frozen=True)
class ScoreBreakdown:
    inform: float
    success: float
    fluency: float

    @property
    def combined(self) -> float:
        return combined_score(self.inform, self.success, self.fluency)

    def to_json(self) -> dict:
        return {"inform": self.inform, "success": self.success, "fluency": self.fluency, "combined": self.combined}


def combined_score(inform, success, fluency):
    return (inform + success) * 0.5 + fluency


@dataclass
class Turn:
    obs: tuple  # user utterance token ids
    act: int  # system action id


@dataclass
class Trajectory:
    goal: Goal
    turns: list
    terminal: bool = False
    score: ScoreBreakdown | None = None
    cfg: SlotWorldConfig = field(default_factory=SlotWorldConfig, repr=False)

    @property
    def n_turns(self):
        return len(self.turns)

    @property
    def actions(self) -> np.ndarray:
        return np.array([t.act for t in self.turns], dtype=int)

    @cached_property
    def belief_ids(self) -> np.ndarray:
        """Belief state after each user utterance, shape ``(n_turns, n_slots)``."""
        return track_beliefs([t.obs for t in self.turns], self.cfg)

    @cached_property
    def goal_ids(self) -> np.ndarray:
        return self.goal.ids(self.cfg)

    def to_json(self) -> dict:
        d = {"goal": self.goal.to_json(), "turns": [{"obs": list(t.obs), "act": t.act} for t in self.turns], "terminal": self.terminal}
        if self.score is not None:
            d["score"] = self.score.to_json()
        return d

    @classmethod
    def from_json(cls, d, cfg: SlotWorldConfig) -> "Trajectory":
        score = None
        if "score" in d:
            s = d["score"]
            score = ScoreBreakdown(float(s["inform"]), float(s["success"]), float(s["fluency"]))
        turns = [Turn(tuple(int(x) for x in t["obs"]), int(t["act"])) for t in d["turns"]]
        return cls(Goal.from_json(d["goal"]), turns, bool(d.get("terminal", False)), score, cfg)


def track_beliefs(utterances, cfg: SlotWorldConfig) -> np.ndarray:
    """Rule-based tracker: fold user utterances into per-turn belief states.

    Constraint slot ``s`` reads 0 (unknown), 1 (don't care) or ``2 + value``;
    info slot ``i`` reads 1 once the user has requested it.
    """
    vocab = _vocab(cfg)
    C = cfg.n_constraint_slots
    state = np.zeros(C + cfg.n_info_slots, dtype=int)
    out = np.zeros((len(utterances), state.size), dtype=int)
    for t, utt in enumerate(utterances):
        for tok in utt:
            name = vocab.decode(tok)
            if name.startswith("usr_inform_"):
                s, v = map(int, name.split("_")[2:])
                state[s] = 2 + v
            elif name.startswith("usr_dontcare_"):
                state[int(name.rsplit("_", 1)[1])] = 1
            elif name.startswith("usr_request_"):
                state[C + int(name.rsplit("_", 1)[1])] = 1
        out[t] = state
    return out


_VOCABS = {}


def _vocab(cfg: SlotWorldConfig) -> Vocab:
    if cfg not in _VOCABS:
        _VOCABS[cfg] = Vocab(cfg)
    return _VOCABS[cfg]


def vocab_for(cfg: SlotWorldConfig) -> Vocab:
    return _vocab(cfg)


def sample_goal(cfg: SlotWorldConfig, rng) -> Goal:
    C = cfg.n_constraint_slots
    k = int(rng.integers(1, C + 1))
    slots = sorted(int(s) for s in rng.choice(C, size=k, replace=False))
    values = {s: int(rng.integers(cfg.values_per_slot)) for s in slots}
    requested = ()
    while cfg.n_info_slots and not requested:
        requested = tuple(i for i in range(cfg.n_info_slots) if rng.random() < 0.5)
    return Goal(values, requested)


class ScriptedUser:
    """Agenda-style user that answers system acts from its goal."""

    def __init__(self, goal: Goal, cfg: SlotWorldConfig, rng=None):
        self.goal = goal
        self.cfg = cfg
        self.vocab = _vocab(cfg)
        self.rng = rng
        self.known = {}
        self.offer_ok = False
        self.answered = set()
        self.last = ()
        self.done = False

    def _say(self, toks):
        toks = list(toks)
        if self.rng is not None and self.cfg.filler_prob > 0 and self.rng.random() < self.cfg.filler_prob:
            toks.append(self.vocab[f"usr_filler_{int(self.rng.integers(FILLER_WORDS))}"])
        self.last = tuple(toks)
        return self.last

    def _repeat(self):
        # repeats its intent; filler words are resampled
        v = self.vocab
        core = tuple(t for t in self.last if not v.decode(t).startswith("usr_filler_"))
        return self._say(core)

    def _inform(self, s):
        if s in self.goal.constraints:
            self.known[s] = self.goal.constraints[s]
            return self.vocab.inform(s, self.goal.constraints[s])
        self.known[s] = None
        return self.vocab.dontcare(s)

    def _next_request_or_thanks(self):
        pending = [i for i in self.goal.requested if i not in self.answered]
        if pending:
            return self._say([self.vocab.user_request(pending[0])])
        return self._say([self.vocab["usr_thanks"]])

    def entity_correct(self):
        return all(self.known.get(s) == v for s, v in self.goal.constraints.items())

    def open(self):
        first = min(self.goal.constraints)
        return self._say([self.vocab["usr_greet"], self._inform(first)])

    def respond(self, act):
        v = self.vocab
        name = v.decode(act)
        if name == "sys_bye":
            self.done = True
            return None
        if name.startswith("sys_request_"):
            return self._say([self._inform(int(name.rsplit("_", 1)[1]))])
        if name == "sys_offer":
            if self.entity_correct():
                self.offer_ok = True
                return self._next_request_or_thanks()
            return self._say([v["usr_reject"]])
        if name.startswith("sys_answer_"):
            i = int(name.rsplit("_", 1)[1])
            if self.offer_ok and i in self.goal.requested and i not in self.answered:
                self.answered.add(i)
                return self._next_request_or_thanks()
        return self._repeat()


def expert_action(obs, belief, cfg: SlotWorldConfig) -> int:
    """The scripted expert's action given the latest utterance and belief state."""
    v = _vocab(cfg)
    names = [v.decode(t) for t in obs]
    if "usr_thanks" in names:
        return v["sys_bye"]
    for n in names:
        if n.startswith("usr_request_"):
            return v.answer(int(n.rsplit("_", 1)[1]))
    unknown = [s for s in range(cfg.n_constraint_slots) if belief[s] == 0]
    if unknown:
        return v.request(unknown[0])
    return v["sys_offer"]


def typical_mistake(expert: int, cfg: SlotWorldConfig) -> int:
    """The systematic error substituted for ``expert``; never an expert action itself."""
    v = _vocab(cfg)
    name = v.decode(expert)
    if name.startswith("sys_request_"):
        return v["sys_confirm_" + name.rsplit("_", 1)[1]]
    if name.startswith("sys_answer_"):
        return v["sys_ack"]
    return v["sys_reqmore"]


class DialogueState:
    """What a policy gets to see when choosing the next action."""

    def __init__(self, cfg: SlotWorldConfig, goal: Goal):
        self.cfg = cfg
        self.goal = goal
        self.utterances = []
        self.actions = []

    @property
    def obs(self):
        return self.utterances[-1]

    @property
    def belief(self):
        return track_beliefs(self.utterances, self.cfg)[-1]


def rollout(policy, goal: Goal, cfg: SlotWorldConfig, user_rng=None) -> Trajectory:
    """Run ``policy(state) -> action`` against the scripted user for one goal."""
    user = ScriptedUser(goal, cfg, user_rng)
    state = DialogueState(cfg, goal)
    state.utterances.append(user.open())
    turns = []
    terminal = False
    while len(turns) < cfg.max_turns:
        act = int(policy(state))
        turns.append(Turn(state.obs, act))
        state.actions.append(act)
        reply = user.respond(act)
        if reply is None:
            terminal = True
            break
        state.utterances.append(reply)
    return Trajectory(goal, turns, terminal, None, cfg)


def expert_policy(state: DialogueState) -> int:
    return expert_action(state.obs, state.belief, state.cfg)


def noisy_expert_policy(noise: float, rng):
    def policy(state):
        act = expert_policy(state)
        if rng.random() < noise:
            if rng.random() < state.cfg.systematic_error:
                return typical_mistake(act, state.cfg)
            return int(rng.integers(_vocab(state.cfg).n_actions))
        return act

    return policy


def random_policy(rng):
    return lambda state: int(rng.integers(_vocab(state.cfg).n_actions))


def reference_trajectory(goal: Goal, cfg: SlotWorldConfig) -> Trajectory:
    return rollout(expert_policy, goal, cfg)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(hyp, ref, n) -> float:
    h = _ngrams(hyp, n)
    total = sum(h.values())
    if total == 0:
        return 0.0
    r = _ngrams(ref, n)
    return sum(min(c, r[g]) for g, c in h.items()) / total


def fluency(hyp, ref) -> float:
    """Mean of clipped unigram and bigram precision, scaled to 0..100."""
    return 100.0 * 0.5 * (modified_precision(hyp, ref, 1) + modified_precision(hyp, ref, 2))


def score_trajectory(traj: Trajectory, reference: Trajectory) -> ScoreBreakdown:
    if traj.goal != reference.goal:
        raise ValueError("trajectory and reference goals differ")
    cfg = traj.cfg
    v = _vocab(cfg)
    if not traj.turns:
        return ScoreBreakdown(0.0, 0.0, 0.0)
    beliefs = traj.belief_ids
    inform = 0.0
    for t, turn in enumerate(traj.turns):
        if turn.act == v["sys_offer"] and all(beliefs[t][s] == 2 + val for s, val in traj.goal.constraints.items()):
            inform = 100.0
            break
    acts = set(traj.actions.tolist())
    answered = all(v.answer(i) in acts for i in traj.goal.requested)
    success = 100.0 if inform == 100.0 and answered else 0.0
    flu = fluency(traj.actions.tolist(), reference.actions.tolist())
    return ScoreBreakdown(inform, success, flu)


DEFAULT_NOISE_LEVELS = (0.0, 0.3, 0.6, 0.8, 0.9, 1.0)


def generate_dataset(cfg: SlotWorldConfig, num_dialogues: int, noise_levels=DEFAULT_NOISE_LEVELS, seed=0) -> list:
    """Scored corpus of noisy-expert dialogues; each dialogue draws one noise level."""
    if num_dialogues < 1:
        raise ValueError("num_dialogues must be >= 1")
    noise_levels = [float(q) for q in noise_levels]
    if not noise_levels or any(not 0 <= q <= 1 for q in noise_levels):
        raise ValueError("noise levels must be a nonempty list of values in [0, 1]")
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(num_dialogues):
        goal = sample_goal(cfg, rng)
        q = noise_levels[int(rng.integers(len(noise_levels)))]
        traj = rollout(noisy_expert_policy(q, rng), goal, cfg, user_rng=rng)
        traj.score = score_trajectory(traj, reference_trajectory(goal, cfg))
        corpus.append(traj)
    return corpus


def dumps_corpus(corpus) -> str:
    return "".join(json.dumps(t.to_json(), sort_keys=True) + "\n" for t in corpus)


def save_corpus(corpus, path):
    with open(path, "w") as fh:
        fh.write(dumps_corpus(corpus))


def load_corpus(path, cfg: SlotWorldConfig) -> list:
    with open(path) as fh:
        return [Trajectory.from_json(json.loads(line), cfg) for line in fh if line.strip()]


def history_bag(utterances, actions, beliefs, t, cfg: SlotWorldConfig, window=2) -> np.ndarray:
    """Normalized bag of token ids visible at turn ``t``.

    Covers the user utterances and system actions of the last ``window``
    turns (the current turn's action excluded) plus the current belief state.
    """
    vocab = _vocab(cfg)
    bag = np.zeros(vocab.history_size)
    for k in range(max(0, t - window + 1), t + 1):
        for tok in utterances[k]:
            bag[tok] += 1
        if k < t:
            bag[actions[k]] += 1
    bag[vocab.belief_offsets + beliefs[t]] += 1
    return bag / bag.sum()


def trajectory_bags(traj: Trajectory, window=2) -> np.ndarray:
    utts = [t.obs for t in traj.turns]
    acts = traj.actions
    beliefs = traj.belief_ids
    return np.array([history_bag(utts, acts, beliefs, t, traj.cfg, window) for t in range(traj.n_turns)])


def evaluate_policy(policy, cfg: SlotWorldConfig, episodes: int, seed=0):
    """Roll out ``policy`` on sampled goals; returns (mean scores dict, per-episode CSV text)."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for ep in range(episodes):
        goal = sample_goal(cfg, rng)
        traj = rollout(policy, goal, cfg, user_rng=rng)
        sc = score_trajectory(traj, reference_trajectory(goal, cfg))
        rows.append((ep, sc.inform, sc.success, sc.fluency, sc.combined))
    arr = np.array([r[1:] for r in rows])
    means = dict(zip(("inform", "success", "fluency", "combined"), arr.mean(axis=0).tolist()))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "inform", "success", "fluency", "combined"])
    for r in rows:
        w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
    return means, buf.getvalue()
