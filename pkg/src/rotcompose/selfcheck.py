"""Built-in diagnostics: full-graph gradient check and a quick self-test.

These back the ``gradcheck`` and ``selftest`` service endpoints / CLI
verbs. They run at tiny dimensions in float64 so the whole battery
finishes in seconds.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .data import SynthConfig, gen_synthetic_with_oracle, oracle_recall_at_1
from .losses import (LossWeights, batch_softmax_loss, reconstruction_loss,
                     soft_triplet_loss, total_loss, transpose)
from .model import ModelConfig, compose, compose_conjugate, decode, init_params


def tiny_config(variant: str = "composeae") -> ModelConfig:
    return ModelConfig(d=4, h=3, k=2, variant=variant,
                       angle_hidden=5, embed_hidden=5, project_hidden=5,
                       decoder_hidden=5, conv_hidden=6, conv_len=4,
                       conv_filters=2, baseline_hidden=5).validate()


def full_graph_grad_check(seed: int = 0, batch: int = 3,
                          eps: float = 1e-5) -> float:
    """Gradient-check the composition plus the full weighted loss.

    Builds the tiny float64 model, runs compose, the conjugate path, the
    decoders and the total loss, and compares every parameter gradient
    against central finite differences. Returns the max relative error.
    """
    cfg = tiny_config()
    params = init_params(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    z = ad.constant(rng.standard_normal((batch, cfg.d)), dtype=np.float64)
    q = ad.constant(rng.standard_normal((batch, cfg.h)), dtype=np.float64)
    y = ad.constant(rng.standard_normal((batch, cfg.d)), dtype=np.float64)
    weights = LossWeights(lambda_sym=0.3, lambda_ri=0.2, lambda_rt=0.2)

    def f():
        composed = compose(z, q, params, cfg)
        l_base = batch_softmax_loss(ad.matmul(composed, transpose(y)))
        conj = compose_conjugate(y, q, params, cfg)
        l_sym = batch_softmax_loss(ad.matmul(conj, transpose(z)))
        z_hat, q_hat = decode(composed, params)
        return total_loss(l_base, l_sym,
                          reconstruction_loss(z, z_hat),
                          reconstruction_loss(q, q_hat), weights)

    return ad.grad_check(f, list(params.values()), eps=eps)


def run_selftest() -> list[dict]:
    """A battery of fast closed-form and invariant checks.

    Returns one record per check: {name, passed, detail}.
    """
    checks: list[dict] = []

    def check(name, passed, detail=""):
        checks.append({"name": name, "passed": bool(passed), "detail": str(detail)})

    # optimizer recurrence: momentum 0.9, lr 0.1, two unit gradients
    p = ad.parameter(0.0, dtype=np.float64)
    opt = ad.SGDMomentum(0.1, 0.9)
    opt.step({"p": p}, {"p": np.asarray(1.0)})
    opt.step({"p": p}, {"p": np.asarray(1.0)})
    check("sgd_momentum_two_steps", abs(float(p.data) + 0.29) < 1e-12, float(p.data))

    # quadratic derivative through the tape
    w = ad.parameter([3.0], dtype=np.float64)
    loss = ad.tsum(ad.mul(w, w))
    g = ad.backward(loss)[w]
    check("square_gradient", abs(float(g[0]) - 6.0) < 1e-12, float(g[0]))

    # loss closed forms
    v = soft_triplet_loss(np.zeros(4), np.zeros(4)).item()
    check("soft_triplet_symmetric_log2", abs(v - math.log(2)) < 1e-9, v)
    v = batch_softmax_loss(np.array([[2.0, 0.0], [0.0, 2.0]])).item()
    check("batch_softmax_n2", abs(v - math.log(1 + math.exp(-2))) < 1e-9, v)
    v = batch_softmax_loss(np.zeros((5, 5))).item()
    check("batch_softmax_uniform_logN", abs(v - math.log(5)) < 1e-9, v)

    # rotation invariants at small scale
    rng = np.random.default_rng(0)
    theta = rng.uniform(-np.pi, np.pi, size=64)
    delta = np.empty(128)
    delta[0::2], delta[1::2] = np.cos(theta), np.sin(theta)
    vvec = rng.standard_normal(128)
    from .model import conjugate, rotate
    back = rotate(conjugate(delta), rotate(delta, vvec))
    check("conjugate_inverse", np.max(np.abs(back - vvec)) < 1e-9,
          float(np.max(np.abs(back - vvec))))

    # planted generator oracle
    ds, planted = gen_synthetic_with_oracle(
        SynthConfig(n=50, g=60, d=8, h=6, k_true=4, noise_sigma=0.0,
                    num_text_concepts=3, seed=1))
    r1 = oracle_recall_at_1(ds, planted)
    check("planted_oracle_recall1", r1 == 1.0, r1)

    # full-graph gradient check
    err = full_graph_grad_check()
    check("full_graph_grad_check", err <= 5e-3, err)

    return checks
