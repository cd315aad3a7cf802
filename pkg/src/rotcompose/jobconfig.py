"""Job-level configuration: schemas, defaults, and dotted-path overrides.

Each CLI verb takes a JSON config file. ``resolve_*`` materializes every
default into a flat dict (the snapshot written next to run outputs), and
``apply_overrides`` applies ``--set key=value`` pairs with strict key
checking against the verb's schema.
"""

from __future__ import annotations

import json
from dataclasses import fields as dc_fields

from .data import SynthConfig
from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .training import TrainConfig


def _leaf_keys(cls, prefix="") -> set[str]:
    keys = set()
    for f in dc_fields(cls):
        if f.type in ("ModelConfig", "LossWeights") or f.name in ("model", "weights"):
            sub = {"model": ModelConfig, "weights": LossWeights}[f.name]
            keys |= _leaf_keys(sub, prefix=f"{prefix}{f.name}.")
        else:
            keys.add(prefix + f.name)
    return keys


SYNTH_KEYS = {f.name for f in dc_fields(SynthConfig)} | {"holdout", "name"}
TRAIN_KEYS = _leaf_keys(TrainConfig) | {
    "data.train", "data.eval", "data.ks", "data.normalize"}
EVAL_KEYS = {"checkpoint", "dataset", "ks", "normalize"}
GRADCHECK_KEYS = {"seed", "batch", "eps"}

KEYS_BY_VERB = {
    "synth": SYNTH_KEYS,
    "train": TRAIN_KEYS,
    "eval": EVAL_KEYS,
    "gradcheck": GRADCHECK_KEYS,
    "selftest": set(),
}


def apply_overrides(config: dict, overrides: list[str], verb: str) -> dict:
    """Apply ``key=value`` pairs to a config dict; keys must be known."""
    allowed = KEYS_BY_VERB[verb]
    out = json.loads(json.dumps(config))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        if key not in allowed:
            raise ConfigError(f"unknown config key: {key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def check_keys(config: dict, verb: str):
    """Reject config dicts containing keys outside the verb's schema."""
    allowed = KEYS_BY_VERB[verb]

    def walk(node: dict, prefix=""):
        for k, v in node.items():
            path = prefix + k
            if path in allowed:
                continue
            if isinstance(v, dict) and any(a.startswith(path + ".") for a in allowed):
                walk(v, path + ".")
                continue
            raise ConfigError(f"unknown config key: {path}")

    walk(config)


def resolve_synth(config: dict) -> dict:
    check_keys(config, "synth")
    cfg = dict(config)
    holdout = int(cfg.pop("holdout", 0))
    name = str(cfg.pop("name", "data"))
    synth = SynthConfig.from_dict(cfg)
    out = synth.to_dict()
    out["holdout"] = holdout
    out["name"] = name
    if not 0 <= holdout < synth.n:
        raise ConfigError(f"holdout must lie in [0, n={synth.n})")
    return out


def resolve_train(config: dict) -> tuple[TrainConfig, dict]:
    check_keys(config, "train")
    cfg = json.loads(json.dumps(config))
    data = cfg.pop("data", None)
    if not data or "train" not in data:
        raise ConfigError("train config needs data.train (path to a CRF1 manifest)")
    tc = TrainConfig.from_dict(cfg)
    resolved = tc.to_dict()
    resolved["data"] = {
        "train": data["train"],
        "eval": data.get("eval"),
        "ks": list(data.get("ks", [1, 5, 10])),
        "normalize": bool(data.get("normalize", False)),
    }
    return tc, resolved


def resolve_eval(config: dict) -> dict:
    check_keys(config, "eval")
    for key in ("checkpoint", "dataset"):
        if key not in config:
            raise ConfigError(f"eval config needs {key!r}")
    return {
        "checkpoint": config["checkpoint"],
        "dataset": config["dataset"],
        "ks": list(config.get("ks", [1, 5, 10])),
        "normalize": bool(config.get("normalize", False)),
    }


def resolve_gradcheck(config: dict) -> dict:
    check_keys(config, "gradcheck")
    return {
        "seed": int(config.get("seed", 0)),
        "batch": int(config.get("batch", 3)),
        "eps": float(config.get("eps", 1e-5)),
    }
