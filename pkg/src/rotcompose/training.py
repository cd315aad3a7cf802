"""Mini-batch training loop, checkpointing, repeated-run orchestration."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import SGDMomentum, Tensor
from .data import FeatureDataset, sample_batch
from .errors import ConfigError, FormatError, NumericError
from .losses import (LossWeights, batch_softmax_loss, reconstruction_loss,
                     rotational_symmetry_loss, soft_triplet_loss, total_loss,
                     transpose)
from .model import ModelConfig, compose, compose_conjugate, decode, init_params

CHECKPOINT_VERSION = "CKP1"


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    repeats: int = 5
    eval_every: int = 1

    def validate(self) -> "TrainConfig":
        self.model.validate()
        self.weights.validate()
        for name in ("learning_rate", "batch_size", "epochs", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"TrainConfig.{name} must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("TrainConfig.momentum must lie in [0, 1)")
        if self.repeats < 1:
            raise ConfigError("TrainConfig.repeats must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        return cls(**d).validate()


@dataclass
class Checkpoint:
    version: str
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    step: int
    epoch: int
    rng_state: dict


@dataclass
class MetricsHistory:
    records: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def final_record(self) -> dict:
        return self.records[-1] if self.records else {}


def params_from_checkpoint(ckpt: Checkpoint) -> dict[str, Tensor]:
    expected = init_params(ckpt.model_config, seed=0)
    if set(expected) != set(ckpt.params):
        raise FormatError(
            f"checkpoint params {sorted(ckpt.params)} do not match config "
            f"reconstruction {sorted(expected)}")
    out = {}
    for name, ref in expected.items():
        arr = ckpt.params[name]
        if arr.shape != ref.shape:
            raise FormatError(
                f"checkpoint param {name}: shape {arr.shape} vs expected {ref.shape}")
        out[name] = ad.parameter(arr.copy(), name=name)
    return out


def _resolve_base(config: TrainConfig, ds: FeatureDataset) -> str:
    if config.weights.base is not None:
        return config.weights.base
    return ds.base_loss_hint or "smax"


def _effective_weights(config: TrainConfig) -> LossWeights:
    w = LossWeights(**asdict(config.weights))
    if config.model.variant == "composeae_no_sym":
        w.lambda_sym = 0.0
    return w


def train(config: TrainConfig, dataset: FeatureDataset,
          eval_dataset: FeatureDataset | None = None,
          start: Checkpoint | None = None,
          ks: tuple[int, ...] = (1, 5, 10)) -> tuple[Checkpoint, MetricsHistory]:
    """Train the configured model; optionally resume from a checkpoint.

    Per step: compose the batch, assemble the weighted loss (the conjugate
    path and the decoders are only evaluated when their weights are
    nonzero), backpropagate, and apply an SGD-with-momentum update.
    """
    from .evaluation import compose_all, recall_at_k

    config.validate()
    cfg = config.model
    if dataset.d != cfg.d or dataset.h != cfg.h:
        raise ConfigError(
            f"dataset dims (d={dataset.d}, h={dataset.h}) vs model "
            f"(d={cfg.d}, h={cfg.h})")
    weights = _effective_weights(config)
    base = _resolve_base(config, dataset)
    opt = SGDMomentum(config.learning_rate, config.momentum)

    if start is not None:
        if start.model_config.to_dict() != cfg.to_dict():
            raise ConfigError("resume checkpoint model config differs from TrainConfig")
        params = params_from_checkpoint(start)
        opt.velocity = {k: v.copy() for k, v in start.velocity.items()}
        rng = np.random.default_rng()
        rng.bit_generator.state = start.rng_state
        step_counter = start.step
        start_epoch = start.epoch
    else:
        params = init_params(cfg, seed=config.seed)
        rng = np.random.default_rng(config.seed)
        step_counter = 0
        start_epoch = 0

    steps_per_epoch = max(1, dataset.n // config.batch_size)
    history = MetricsHistory()

    for epoch in range(start_epoch, config.epochs):
        sums = {"base": 0.0, "sym": 0.0, "ri": 0.0, "rt": 0.0, "total": 0.0}
        for _ in range(steps_per_epoch):
            batch = sample_batch(dataset, config.batch_size, weights.M, rng)
            idx = batch.sample_indices
            z = ad.constant(dataset.query_feats[idx])
            q = ad.constant(dataset.text_feats[idx])
            y = ad.constant(dataset.target_feats[dataset.target_index[idx]])

            composed = compose(z, q, params, cfg)
            if base == "smax":
                l_base = batch_softmax_loss(ad.matmul(composed, transpose(y)))
            else:
                pos = ad.rowwise_dot(composed, y)
                neg_bank = ad.constant(dataset.target_feats[batch.negative_indices])
                neg = ad.rows_bank_dot(composed, neg_bank)
                l_base = _soft_triplet_from(pos, neg, weights.M)

            zero = ad.constant(0.0, dtype=composed.dtype)
            l_sym = zero
            if weights.lambda_sym > 0 and cfg.uses_complex_block():
                conj = compose_conjugate(y, q, params, cfg)
                if base == "smax":
                    l_sym = rotational_symmetry_loss(conj, z, "smax")
                else:
                    neg_q = _query_negatives(dataset, idx, weights.M, rng)
                    l_sym = rotational_symmetry_loss(conj, z, "st",
                                                     negatives=ad.constant(neg_q))
            l_ri, l_rt = zero, zero
            if weights.lambda_ri > 0 or weights.lambda_rt > 0:
                z_hat, q_hat = decode(composed, params)
                l_ri = reconstruction_loss(z, z_hat)
                l_rt = reconstruction_loss(q, q_hat)

            try:
                loss = total_loss(l_base, l_sym, l_ri, l_rt, weights)
            except NumericError as exc:
                raise NumericError(f"training step {step_counter}: {exc}") from exc

            grad_map = ad.backward(loss)
            by_id = {id(t): name for name, t in params.items()}
            grads = {by_id[id(t)]: g for t, g in grad_map.items() if id(t) in by_id}
            for name, p in params.items():
                grads.setdefault(name, np.zeros_like(p.data))
            opt.step(params, grads)
            step_counter += 1

            sums["base"] += float(l_base.data)
            sums["sym"] += float(l_sym.data)
            sums["ri"] += float(l_ri.data)
            sums["rt"] += float(l_rt.data)
            sums["total"] += float(loss.data)

        record = {
            "epoch": epoch,
            "L_BASE": sums["base"] / steps_per_epoch,
            "L_SYM": sums["sym"] / steps_per_epoch,
            "L_RI": sums["ri"] / steps_per_epoch,
            "L_RT": sums["rt"] / steps_per_epoch,
            "L_T": sums["total"] / steps_per_epoch,
        }
        if eval_dataset is not None and (epoch + 1) % config.eval_every == 0:
            embs = compose_all(params, cfg, eval_dataset)
            report = recall_at_k(embs, eval_dataset, list(ks))
            record["recall"] = {str(k): v for k, v in report.recall.items()}
        history.records.append(record)

    ckpt = Checkpoint(
        version=CHECKPOINT_VERSION,
        model_config=cfg,
        params={k: v.data.copy() for k, v in params.items()},
        velocity={k: v.copy() for k, v in opt.velocity.items()},
        step=step_counter,
        epoch=config.epochs,
        rng_state=rng.bit_generator.state,
    )
    return ckpt, history


def _soft_triplet_from(pos: Tensor, neg: Tensor, m: int) -> Tensor:
    from .losses import _tile_cols
    pos_rep = ad.reshape(_tile_cols(pos, m), (-1,))
    return soft_triplet_loss(pos_rep, ad.reshape(neg, (-1,)))


def _query_negatives(ds: FeatureDataset, idx: np.ndarray, m: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Negative query features for the soft-triplet symmetry loss."""
    n = len(idx)
    out = np.empty((n, m, ds.d), dtype=np.float32)
    for row in range(n):
        others = np.delete(np.arange(n), row)
        pick = rng.choice(others, size=m, replace=len(others) < m)
        out[row] = ds.query_feats[idx[pick]]
    return out


# ---------------------------------------------------------------------------
# checkpoint serialization: JSON header + float32 blob
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    names = sorted(ckpt.params)
    vel_names = sorted(ckpt.velocity)
    header = {
        "version": ckpt.version,
        "model_config": ckpt.model_config.to_dict(),
        "params": {n: list(ckpt.params[n].shape) for n in names},
        "velocity": {n: list(ckpt.velocity[n].shape) for n in vel_names},
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "rng_state": _rng_state_to_json(ckpt.rng_state),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        [np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes() for n in names] +
        [np.ascontiguousarray(ckpt.velocity[n], dtype="<f4").tobytes() for n in vel_names])
    path.write_bytes(struct.pack("<I", len(head)) + head + blob)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing checkpoint: {path}")
    raw = path.read_bytes()
    if len(raw) < 4:
        raise FormatError(f"checkpoint {path.name}: truncated header")
    (hlen,) = struct.unpack("<I", raw[:4])
    try:
        header = json.loads(raw[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint {path.name}: bad header ({exc})")
    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {version!r}, expected "
            f"{CHECKPOINT_VERSION!r}")
    cfg = ModelConfig.from_dict(header["model_config"])
    offset = 4 + hlen

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 4
        if end > len(raw):
            raise FormatError(f"checkpoint {path.name}: blob truncated")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
        return arr

    params = {n: take(tuple(s)) for n, s in sorted(header["params"].items())}
    velocity = {n: take(tuple(s)) for n, s in sorted(header["velocity"].items())}
    if offset != len(raw):
        raise FormatError(f"checkpoint {path.name}: {len(raw) - offset} trailing bytes")
    ckpt = Checkpoint(version=version, model_config=cfg, params=params,
                      velocity=velocity, step=int(header["step"]),
                      epoch=int(header["epoch"]),
                      rng_state=_rng_state_from_json(header["rng_state"]))
    params_from_checkpoint(ckpt)  # shape check against the config
    return ckpt


def _rng_state_to_json(state: dict) -> dict:
    out = dict(state)
    out["state"] = {k: str(v) for k, v in state["state"].items()}
    return out


def _rng_state_from_json(state: dict) -> dict:
    out = dict(state)
    out["state"] = {k: int(v) for k, v in state["state"].items()}
    return out


# ---------------------------------------------------------------------------
# repeated runs
# ---------------------------------------------------------------------------

def run_repeats(config: TrainConfig, dataset: FeatureDataset,
                eval_dataset: FeatureDataset | None = None,
                ks: tuple[int, ...] = (1, 5, 10)):
    """Train ``config.repeats`` times with distinct seeds; summarize mean/std."""
    runs = []
    for r in range(config.repeats):
        c = TrainConfig.from_dict(config.to_dict())
        c.seed = config.seed + r
        runs.append(train(c, dataset, eval_dataset=eval_dataset, ks=ks))
    summary = summarize_runs([h for _, h in runs])
    return runs, summary


def summarize_runs(histories: list[MetricsHistory]) -> dict:
    """Mean and standard deviation of the final-epoch metrics across runs."""
    finals = [h.final_record() for h in histories]
    summary: dict = {"runs": len(finals), "metrics": {}}
    keys = ["L_BASE", "L_SYM", "L_RI", "L_RT", "L_T"]
    for key in keys:
        vals = [f[key] for f in finals if key in f]
        if vals:
            summary["metrics"][key] = {"mean": float(np.mean(vals)),
                                       "std": float(np.std(vals))}
    recall_ks = sorted({k for f in finals for k in f.get("recall", {})}, key=int)
    for k in recall_ks:
        vals = [f["recall"][k] for f in finals if k in f.get("recall", {})]
        summary["metrics"][f"recall@{k}"] = {"mean": float(np.mean(vals)),
                                             "std": float(np.std(vals))}
    return summary
