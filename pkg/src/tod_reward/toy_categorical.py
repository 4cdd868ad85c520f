"""Toy categorical reward maximization: exact gradient vs REINFORCE vs Gumbel-softmax.

We maximize ``E_{x ~ Cate(p(psi))} f(x)`` with ``f(x) = 0.5 + x / (D * R)``
for ``x`` in ``1..D``, starting from ``psi = 0`` and taking one single-sample
gradient-ascent step per iteration.

The category probabilities come from positive weights ``w(psi)`` normalized
to sum to one. Two links are available:

* ``"softmax"`` (default): ``w = exp(psi)``.
* ``"sigmoid"``: ``w = sigmoid(psi)``, renormalized.

Both recover the optimum ``(0, ..., 0, 1)`` as ``psi_D -> inf`` and both
give the uniform distribution at ``psi = 0``. The Gumbel-softmax logits are
``log w(psi)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, log_expit, softmax

EXACT = "exact"
REINFORCE = "reinforce"
GUMBEL = "gumbel_softmax"
ESTIMATORS = (EXACT, REINFORCE, GUMBEL)
LINKS = ("softmax", "sigmoid")


@dataclass(frozen=True)
class ToyConfig:
    D: int = 30
    R: int = 30
    lr: float = 1.0
    steps: int = 5000
    estimator: str = GUMBEL
    temperature: float = 1.0
    seed: int = 0
    variance_samples: int = 500
    record_every: int = 100
    link: str = "softmax"

    def __post_init__(self):
        if self.D < 2 or self.R < 1:
            raise ValueError("need D >= 2 and R >= 1")
        if self.lr <= 0 or self.temperature <= 0:
            raise ValueError("lr and temperature must be positive")
        if self.variance_samples < 2:
            raise ValueError("variance_samples must be >= 2")
        if self.record_every < 1 or self.steps < 0:
            raise ValueError("record_every must be >= 1 and steps >= 0")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")


def toy_reward(x: int, D: int, R: int) -> float:
    if not 1 <= x <= D:
        raise ValueError(f"x must lie in 1..{D}, got {x}")
    return 0.5 + x / (D * R)


def reward_table(D: int, R: int) -> np.ndarray:
    return 0.5 + np.arange(1, D + 1) / (D * R)


def log_weights(psi, link="softmax"):
    psi = np.asarray(psi, dtype=float)
    return psi.copy() if link == "softmax" else log_expit(psi)


def _dlog_weights(psi, link):
    # d log w_i / d psi_i
    return np.ones_like(psi) if link == "softmax" else 1.0 - expit(psi)


def probs_from_psi(psi, link="softmax") -> np.ndarray:
    return softmax(log_weights(psi, link))


def exact_objective(psi, D: int, R: int, link="softmax") -> float:
    return float(probs_from_psi(psi, link) @ reward_table(D, R))


def exact_grad(psi, D: int, R: int, link="softmax") -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    f = reward_table(D, R)
    p = probs_from_psi(psi, link)
    return p * _dlog_weights(psi, link) * (f - p @ f)


def reinforce_grads(psi, cfg: ToyConfig, rng, n=1, f=None) -> np.ndarray:
    """``n`` single-sample score-function gradients, shape ``(n, D)``."""
    psi = np.asarray(psi, dtype=float)
    f = reward_table(cfg.D, cfg.R) if f is None else np.asarray(f, dtype=float)
    p = probs_from_psi(psi, cfg.link)
    x = np.minimum(np.searchsorted(np.cumsum(p), rng.random(n) * p.sum(), side="right"), cfg.D - 1)
    score = np.eye(cfg.D)[x] - p
    return f[x][:, None] * score * _dlog_weights(psi, cfg.link)


def gumbel_relaxed_grads(psi, cfg: ToyConfig, eps, f=None) -> np.ndarray:
    """Gradient of ``sum_i s_i f(i)``, ``s = softmax((log w + eps) / lambda)``, per row of ``eps``."""
    psi = np.asarray(psi, dtype=float)
    f = reward_table(cfg.D, cfg.R) if f is None else np.asarray(f, dtype=float)
    eps = np.atleast_2d(eps)
    lam = cfg.temperature
    s = softmax((log_weights(psi, cfg.link) + eps) / lam, axis=1)
    return s * (f - (s @ f)[:, None]) / lam * _dlog_weights(psi, cfg.link)


def gumbel_relaxed_objective(psi, cfg: ToyConfig, eps) -> float:
    s = softmax((log_weights(psi, cfg.link) + eps) / cfg.temperature)
    return float(s @ reward_table(cfg.D, cfg.R))


def sample_grads(psi, cfg: ToyConfig, estimator: str, rng, n=1) -> np.ndarray:
    if estimator == EXACT:
        return np.tile(exact_grad(psi, cfg.D, cfg.R, cfg.link), (n, 1))
    if estimator == REINFORCE:
        return reinforce_grads(psi, cfg, rng, n)
    if estimator == GUMBEL:
        return gumbel_relaxed_grads(psi, cfg, rng.gumbel(size=(n, cfg.D)))
    raise ValueError(f"unknown estimator {estimator!r}")


def reinforce_step(psi, cfg: ToyConfig, rng):
    g = reinforce_grads(psi, cfg, rng)[0]
    return psi + cfg.lr * g, g


def gs_step(psi, cfg: ToyConfig, rng):
    g = gumbel_relaxed_grads(psi, cfg, rng.gumbel(size=cfg.D))[0]
    return psi + cfg.lr * g, g


def grad_variance_estimate(psi, estimator: str, n: int, cfg: ToyConfig, rng) -> float:
    """Mean over components of the per-component sample variance of ``n`` gradients."""
    if n < 2:
        raise ValueError("need n >= 2")
    if estimator == EXACT:
        return 0.0
    grads = sample_grads(psi, cfg, estimator, rng, n)
    return float(grads.var(axis=0, ddof=1).mean())


@dataclass
class ToyTrace:
    objective: list = field(default_factory=list)
    grad_first: list = field(default_factory=list)
    grad_last: list = field(default_factory=list)
    variance: dict = field(default_factory=dict)
    probs: dict = field(default_factory=dict)
    psi: np.ndarray | None = None

    @property
    def final_objective(self):
        return self.objective[-1]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "objective", "grad_first", "grad_last", "variance"])
        for step, (obj, g1, gd) in enumerate(zip(self.objective, self.grad_first, self.grad_last)):
            var = self.variance.get(step)
            w.writerow([step, repr(obj), repr(g1), repr(gd), "" if var is None else repr(var)])
        return buf.getvalue()

    def probs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.probs:
            D = len(next(iter(self.probs.values())))
            w.writerow(["step"] + [f"p{i}" for i in range(1, D + 1)])
            for step in sorted(self.probs):
                w.writerow([step] + [repr(float(v)) for v in self.probs[step]])
        return buf.getvalue()


def run_toy(cfg: ToyConfig, track_variance=True) -> ToyTrace:
    """Gradient ascent from ``psi = 0``.

    Row ``k`` of the trace holds the objective at the start of step ``k`` and
    the gradient sampled there; the final row (``k = steps``) holds the
    objective after the last update and a gradient that is never applied. Variance
    estimates draw from their own stream, so turning them off leaves the
    optimization path unchanged.
    """
    train_seq, var_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(train_seq)
    var_rng = np.random.default_rng(var_seq)
    psi = np.zeros(cfg.D)
    trace = ToyTrace()
    for step in range(cfg.steps + 1):
        obj = exact_objective(psi, cfg.D, cfg.R, cfg.link)
        if step % cfg.record_every == 0 or step == cfg.steps:
            trace.probs[step] = probs_from_psi(psi, cfg.link)
            if track_variance:
                trace.variance[step] = grad_variance_estimate(
                    psi, cfg.estimator, cfg.variance_samples, cfg, var_rng
                )
        g = sample_grads(psi, cfg, cfg.estimator, rng)[0]
        if step < cfg.steps:
            psi = psi + cfg.lr * g
        trace.objective.append(obj)
        trace.grad_first.append(float(g[0]))
        trace.grad_last.append(float(g[-1]))
    trace.psi = psi
    return trace


def config_dict(cfg: ToyConfig) -> dict:
    return asdict(cfg)
