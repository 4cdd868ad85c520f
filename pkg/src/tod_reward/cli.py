"""Command-line entry point: ``tod-reward <command> --config FILE --out DIR``.

Commands: gen-data, train-reward, train-policy, eval, toy. Each takes one
JSON config whose keys override the defaults below (unknown keys are an
error) and writes ``resolved_config.json`` next to its outputs. Feeding
that file back in reproduces the outputs byte for byte.

Exit codes: 0 success, 2 bad config, 3 missing or unreadable input,
4 numerical abort. Failures print one JSON line to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import params as P
from .policy_training import (
    ConstantReward,
    EstimatorConfig,
    Policy,
    PolicyConfig,
    PolicyTrainingError,
    train_policy,
)
from .ranking_losses import LOSS_KINDS, Transform, TransformDomainError
from .reward_model import RewardConfig, RewardModel, RewardTrainingError, train_reward
from .slotworld import DEFAULT_NOISE_LEVELS, SlotWorldConfig, evaluate_policy, generate_dataset, load_corpus, save_corpus
from .toy_categorical import ToyConfig, config_dict, run_toy

DEFAULTS = {
    "gen-data": {"env": {}, "num_dialogues": 2000, "noise_levels": list(DEFAULT_NOISE_LEVELS), "seed": 0},
    "train-reward": {
        "corpus": None,
        "env": {},
        "loss": "reward_net",
        "N": 3,
        "transform": {"kind": "escort", "power": 1},
        "steps": 2000,
        "lr": 0.05,
        "seed": 0,
        "embed_dim": 16,
        "hidden": 32,
    },
    "train-policy": {
        "corpus": None,
        "env": {},
        "reward": None,
        "constant_reward": None,
        "estimator": {"kind": "gumbel_softmax", "temperature": 1.0, "alpha": 0.1},
        "steps": 3000,
        "lr": 1.0,
        "batch_size": 64,
        "seed": 0,
        "embed_dim": 16,
        "hidden": 32,
        "window": 2,
    },
    "eval": {"policy": None, "episodes": 200, "seed": 0},
    "toy": config_dict(ToyConfig()),
}
PATH_KEYS = {"corpus", "reward", "policy"}


class CliError(Exception):
    code = 1
    kind = "error"


class ConfigError(CliError):
    code = 2
    kind = "config"


class InputError(CliError):
    code = 3
    kind = "input"


class NumericalError(CliError):
    code = 4
    kind = "numerical"


def resolve_config(command: str, raw: dict, base: Path) -> dict:
    """Merge ``raw`` over the command defaults; input paths become absolute."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = {k: v for k, v in raw.items() if k != "command"}
    defaults = DEFAULTS[command]
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    cfg = json.loads(json.dumps(defaults))
    cfg.update(raw)
    try:
        if "env" in cfg:
            cfg["env"] = SlotWorldConfig.from_dict(cfg["env"]).to_dict()
        if "transform" in cfg:
            cfg["transform"] = Transform.from_dict(cfg["transform"]).to_dict()
        if command == "train-policy":
            if not isinstance(cfg["estimator"], dict):
                raise ValueError("estimator must be an object")
            cfg["estimator"] = asdict(EstimatorConfig(**cfg["estimator"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    for key in PATH_KEYS & set(cfg):
        if cfg[key] is not None:
            if not isinstance(cfg[key], str):
                raise ConfigError(f"{key} must be a path string")
            cfg[key] = str((base / cfg[key]).resolve())
    return {"command": command, **cfg}


def _require(cfg, key):
    if cfg.get(key) is None:
        raise ConfigError(f"missing required key {key!r}")
    path = Path(cfg[key])
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    return path


def _env(cfg) -> SlotWorldConfig:
    return SlotWorldConfig.from_dict(cfg["env"])


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text)


def cmd_gen_data(cfg, out: Path):
    corpus = generate_dataset(_env(cfg), int(cfg["num_dialogues"]), cfg["noise_levels"], int(cfg["seed"]))
    save_corpus(corpus, out / "corpus.jsonl")


def _load_corpus(cfg):
    path = _require(cfg, "corpus")
    env = _env(cfg)
    try:
        corpus = load_corpus(path, env)
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise InputError(f"unreadable corpus {path}: {exc}") from exc
    if not corpus:
        raise InputError(f"empty corpus {path}")
    if any(t.score is None for t in corpus):
        raise InputError(f"corpus {path} has unscored trajectories")
    return env, corpus


def cmd_train_reward(cfg, out: Path):
    if cfg["loss"] not in LOSS_KINDS:
        raise ConfigError(f"loss must be one of {LOSS_KINDS}")
    transform = Transform.from_dict(cfg["transform"])
    env, corpus = _load_corpus(cfg)
    rcfg = RewardConfig(env, int(cfg["embed_dim"]), int(cfg["hidden"]))
    try:
        model, trace = train_reward(corpus, cfg["loss"], int(cfg["N"]), transform, int(cfg["steps"]), float(cfg["lr"]), int(cfg["seed"]), rcfg)
    except (RewardTrainingError, TransformDomainError, FloatingPointError) as exc:
        raise NumericalError(str(exc)) from exc
    model.save(out / "reward.ckpt")
    _write(out, "reward_trace.csv", trace.csv())


def cmd_train_policy(cfg, out: Path):
    est = EstimatorConfig(**cfg["estimator"])
    if (cfg["reward"] is None) == (cfg["constant_reward"] is None):
        raise ConfigError("set exactly one of 'reward' (checkpoint path) or 'constant_reward' (number)")
    env, corpus = _load_corpus(cfg)
    if cfg["reward"] is not None:
        path = _require(cfg, "reward")
        try:
            reward = RewardModel.load(path)
        except P.CheckpointError as exc:
            raise InputError(str(exc)) from exc
        if reward.cfg.env != env:
            raise InputError("reward checkpoint was trained on a different environment config")
    else:
        reward = ConstantReward(float(cfg["constant_reward"]))
    pcfg = PolicyConfig(env, int(cfg["embed_dim"]), int(cfg["hidden"]), int(cfg["window"]))
    try:
        policy, trace = train_policy(corpus, reward, est, int(cfg["steps"]), float(cfg["lr"]), int(cfg["seed"]), int(cfg["batch_size"]), pcfg)
    except (PolicyTrainingError, FloatingPointError) as exc:
        raise NumericalError(str(exc)) from exc
    policy.save(out / "policy.ckpt")
    _write(out, "policy_trace.csv", trace.csv())


def cmd_eval(cfg, out: Path):
    path = _require(cfg, "policy")
    try:
        policy = Policy.load(path)
    except P.CheckpointError as exc:
        raise InputError(str(exc)) from exc
    means, table = evaluate_policy(policy, policy.cfg.env, int(cfg["episodes"]), int(cfg["seed"]))
    _write(out, "eval.csv", table)
    _write(out, "metrics.json", json.dumps(means, indent=2, sort_keys=True) + "\n")


def cmd_toy(cfg, out: Path):
    params = {k: v for k, v in cfg.items() if k != "command"}
    trace = run_toy(ToyConfig(**params))
    _write(out, "toy_trace.csv", trace.trace_csv())
    _write(out, "probs_snapshot.csv", trace.probs_csv())


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-reward": cmd_train_reward,
    "train-policy": cmd_train_policy,
    "eval": cmd_eval,
    "toy": cmd_toy,
}


def run(command: str, config_path: str | None, out_dir: str) -> dict:
    if config_path is None:
        raw, base = {}, Path.cwd()
    else:
        path = Path(config_path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        base = path.resolve().parent
        if isinstance(raw, dict) and raw.get("command", command) != command:
            raise ConfigError(f"config was written for {raw['command']!r}, not {command!r}")
    cfg = resolve_config(command, raw, base)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[command](cfg, out)
    except CliError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc
    _write(out, "resolved_config.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tod-reward", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults are used for missing keys)")
        p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args.command, args.config, args.out)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "code": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
