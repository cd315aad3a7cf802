"""Training losses.

All losses accept Tensors (gradients flow) or raw arrays (wrapped as
constants) and return a scalar Tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractViolation, NumericError

BASE_LOSSES = ("smax", "st")


@dataclass
class LossWeights:
    lambda_sym: float = 0.1
    lambda_ri: float = 0.01
    lambda_rt: float = 0.01
    base: str | None = None   # "smax" | "st"; None defers to the dataset hint
    M: int = 3                # negatives per sample for the soft-triplet form

    def validate(self):
        for name in ("lambda_sym", "lambda_ri", "lambda_rt"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"LossWeights.{name} must be finite and >= 0")
        if self.M < 1:
            raise ConfigError("LossWeights.M must be >= 1")
        if self.base is not None and self.base not in BASE_LOSSES:
            raise ConfigError(f"LossWeights.base must be one of {BASE_LOSSES}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown LossWeights keys: {sorted(unknown)}")
        return cls(**d).validate()


def soft_triplet_loss(pos_sims, neg_sims) -> Tensor:
    """Mean softplus(neg - pos) over all (sample, negative) pairs."""
    pos, neg = ad._as_tensor(pos_sims), ad._as_tensor(neg_sims)
    if pos.data.shape != neg.data.shape:
        raise ContractViolation(
            f"soft_triplet_loss: length mismatch {pos.shape} vs {neg.shape}")
    return ad.tmean(ad.softplus(ad.sub(neg, pos)))


def batch_softmax_loss(sim_matrix) -> Tensor:
    """Mean over rows of -log softmax at the diagonal entry."""
    s = ad._as_tensor(sim_matrix)
    if s.data.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ContractViolation(
            f"batch_softmax_loss: need a square matrix, got {s.shape}")
    return ad.tmean(ad.sub(ad.logsumexp_rows(s), ad.take_diag(s)))


def reconstruction_loss(original, reconstructed) -> Tensor:
    """Mean over the batch of squared Euclidean distance per sample."""
    o, r = ad._as_tensor(original), ad._as_tensor(reconstructed)
    if o.data.shape != r.data.shape or o.data.ndim != 2:
        raise ContractViolation(
            f"reconstruction_loss: shapes {o.shape} vs {r.shape} (need equal, 2-d)")
    diff = ad.sub(o, r)
    n = o.shape[0]
    return ad.scale(ad.tsum(ad.mul(diff, diff)), 1.0 / n)


def rotational_symmetry_loss(conj_composed, query_feats, base: str,
                             negatives=None) -> Tensor:
    """Penalty pulling the conjugate-composed target back to the query features.

    ``base="smax"``: softmax over the similarity matrix conj_composed @ query^T
    with positives on the diagonal. ``base="st"``: soft-triplet against
    ``negatives``, a (N, M, d) bank of negative query features.
    """
    c = ad._as_tensor(conj_composed)
    z = ad._as_tensor(query_feats)
    if c.data.shape != z.data.shape or c.data.ndim != 2:
        raise ContractViolation(
            f"rotational_symmetry_loss: shapes {c.shape} vs {z.shape}")
    if base == "smax":
        return batch_softmax_loss(ad.matmul(c, transpose(z)))
    if base == "st":
        if negatives is None:
            raise ContractViolation("rotational_symmetry_loss: st form needs negatives")
        bank = ad._as_tensor(negatives)
        m = bank.shape[1]
        pos = ad.rowwise_dot(c, z)                      # (N,)
        neg = ad.rows_bank_dot(c, bank)                 # (N, M)
        pos_rep = ad.reshape(_tile_cols(pos, m), (-1,))
        return soft_triplet_loss(pos_rep, ad.reshape(neg, (-1,)))
    raise ConfigError(f"rotational_symmetry_loss: unknown base {base!r}")


def transpose(t) -> Tensor:
    t = ad._as_tensor(t)
    if t.data.ndim != 2:
        raise ContractViolation(f"transpose: need 2-d input, got {t.shape}")

    def push(g, acc):
        acc(t, g.T)

    return ad._node(t.data.T.copy(), (t,), push, "transpose")


def _tile_cols(v: Tensor, m: int) -> Tensor:
    """(N,) -> (N, m) by repeating each entry across m columns."""

    def push(g, acc):
        acc(v, g.sum(axis=1))

    return ad._node(np.repeat(v.data[:, None], m, axis=1), (v,), push, "tile_cols")


def total_loss(base, sym, ri, rt, weights: LossWeights) -> Tensor:
    """Weighted sum: base + lambda_sym*sym + lambda_ri*ri + lambda_rt*rt."""
    parts = {"base": base, "sym": sym, "ri": ri, "rt": rt}
    for name, part in parts.items():
        val = part.data if isinstance(part, Tensor) else part
        if not np.all(np.isfinite(val)):
            raise NumericError(f"total_loss: component {name!r} is not finite")
    out = ad._as_tensor(base)
    for lam, part in ((weights.lambda_sym, sym), (weights.lambda_ri, ri),
                      (weights.lambda_rt, rt)):
        if lam != 0.0:
            out = ad.add(out, ad.scale(ad._as_tensor(part), lam))
    return out
