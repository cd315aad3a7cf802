"""Query composition networks.

The main encoder maps an image feature vector z (R^d) and a text feature
vector q (R^h) into a shared complex space: a two-layer MLP turns q into k
rotation angles, z is embedded as k complex numbers, rotated elementwise,
and mapped back to R^d through two parallel heads (a plain MLP and a
conv-over-features head) mixed by learnable scalars a and b.

Two simpler compositions are provided as baselines: a gated-residual
network and a plain MLP over the concatenated features.

Complex vectors are stored as interleaved (real, imaginary) float pairs,
so a k-dimensional complex vector occupies 2k reals.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractViolation, NumericError

VARIANTS = ("composeae", "composeae_no_sym", "composeae_concat",
            "composeae_no_rhoconv", "composeae_no_rho", "tirg", "concat")

# variants that build the complex-rotation encoder
_COMPLEX_VARIANTS = ("composeae", "composeae_no_sym",
                     "composeae_no_rhoconv", "composeae_no_rho")


@dataclass
class ModelConfig:
    d: int = 512            # image feature dim
    h: int = 768            # text feature dim
    k: int = 512            # complex space dim
    variant: str = "composeae"
    angle_hidden: int = 512     # MLP q -> angles
    embed_hidden: int = 512     # MLP z -> complex space
    project_hidden: int = 512   # MLP complex -> R^d
    decoder_hidden: int = 512
    conv_hidden: int = 1024     # first FC of the conv head
    conv_len: int = 16          # sequence length fed to the convolution
    conv_filters: int = 64
    baseline_hidden: int = 512  # gated-residual / concat baselines

    def validate(self):
        for name in ("d", "h", "k", "angle_hidden", "embed_hidden",
                     "project_hidden", "decoder_hidden", "conv_hidden",
                     "conv_len", "conv_filters", "baseline_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ModelConfig.{name} must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.uses_conv_head() and self.d % self.conv_filters != 0:
            raise ConfigError(
                f"d = {self.d} must be divisible by conv_filters = {self.conv_filters}")
        return self

    def uses_complex_block(self) -> bool:
        return self.variant in _COMPLEX_VARIANTS

    def uses_conv_head(self) -> bool:
        return self.variant in _COMPLEX_VARIANTS and self.variant != "composeae_no_rhoconv"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d).validate()


def init_params(cfg: ModelConfig, seed: int, dtype=None) -> dict[str, Tensor]:
    """Create all learnable tensors for the configured variant."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    p: dict[str, Tensor] = {}

    def lin(name, fan_in, fan_out):
        w, b = ad.init_linear(rng, fan_in, fan_out, name, dtype=dtype)
        p[f"{name}.w"], p[f"{name}.b"] = w, b

    d, h, k = cfg.d, cfg.h, cfg.k
    if cfg.uses_complex_block():
        lin("angle.fc1", h, cfg.angle_hidden)
        lin("angle.fc2", cfg.angle_hidden, k)
        lin("embed.fc1", d, cfg.embed_hidden)
        lin("embed.fc2", cfg.embed_hidden, 2 * k)
        lin("project.fc1", 2 * k, cfg.project_hidden)
        lin("project.fc2", cfg.project_hidden, d)
        if cfg.uses_conv_head():
            lin("conv.fc1", 2 * k + d + h, cfg.conv_hidden)
            lin("conv.fc2", cfg.conv_hidden, cfg.conv_filters * cfg.conv_len)
            bound = 1.0 / np.sqrt(cfg.conv_filters * 3)
            p["conv.kernel"] = ad.parameter(
                rng.uniform(-bound, bound,
                            size=(cfg.conv_filters, cfg.conv_filters, 3)),
                name="conv.kernel", dtype=dtype)
            p["conv.bias"] = ad.parameter(np.zeros(cfg.conv_filters),
                                          name="conv.bias", dtype=dtype)
        # mixing scalars; the plain projection head dominates early training
        a0 = 0.0 if cfg.variant == "composeae_no_rho" else 1.0
        b0 = 0.0 if cfg.variant == "composeae_no_rhoconv" else 0.1
        p["mix.a"] = ad.parameter(a0, name="mix.a", dtype=dtype)
        p["mix.b"] = ad.parameter(b0, name="mix.b", dtype=dtype)
    elif cfg.variant in ("composeae_concat", "concat"):
        lin("cat.fc1", d + h, cfg.baseline_hidden)
        lin("cat.fc2", cfg.baseline_hidden, d)
    elif cfg.variant == "tirg":
        lin("gate.fc1", d + h, cfg.baseline_hidden)
        lin("gate.fc2", cfg.baseline_hidden, d)
        lin("res.fc1", d + h, cfg.baseline_hidden)
        lin("res.fc2", cfg.baseline_hidden, d)
        p["mix.wg"] = ad.parameter(1.0, name="mix.wg", dtype=dtype)
        p["mix.wr"] = ad.parameter(0.1, name="mix.wr", dtype=dtype)

    lin("dec_img.fc1", d, cfg.decoder_hidden)
    lin("dec_img.fc2", cfg.decoder_hidden, d)
    lin("dec_txt.fc1", d, cfg.decoder_hidden)
    lin("dec_txt.fc2", cfg.decoder_hidden, h)
    return p


def _mlp(x: Tensor, params, name: str) -> Tensor:
    """Two fully connected layers, ReLU after the first only."""
    hid = ad.relu(ad.add_bias(ad.matmul(x, params[f"{name}.fc1.w"]),
                              params[f"{name}.fc1.b"]))
    return ad.add_bias(ad.matmul(hid, params[f"{name}.fc2.w"]),
                       params[f"{name}.fc2.b"])


def _check_batch(x: Tensor, dim: int, what: str):
    if x.data.ndim != 2 or x.shape[1] != dim:
        raise ContractViolation(
            f"{what}: expected (N, {dim}), got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{what}: non-finite input")


def text_to_rotation(q: Tensor, params, cfg: ModelConfig,
                     conjugate: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """Map text features to rotation angles and the unit-modulus rotation.

    Returns (angles, re, im) where re_i = cos(angle_i), im_i = sin(angle_i);
    conjugation flips the sign of the imaginary part.
    """
    _check_batch(q, cfg.h, "text_to_rotation")
    theta = _mlp(q, params, "angle")
    re = ad.cos(theta)
    im = ad.sin(theta)
    if conjugate:
        im = ad.neg(im)
    return theta, re, im


def rotate(delta: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Elementwise complex product of interleaved complex vectors."""
    delta, v = np.asarray(delta), np.asarray(v)
    if delta.shape != v.shape or delta.shape[-1] % 2 != 0:
        raise ContractViolation(
            f"rotate: shapes {delta.shape} vs {v.shape} (need equal, even last dim)")
    dr, di = delta[..., 0::2], delta[..., 1::2]
    vr, vi = v[..., 0::2], v[..., 1::2]
    out = np.empty_like(v)
    out[..., 0::2] = dr * vr - di * vi
    out[..., 1::2] = dr * vi + di * vr
    return out


def conjugate(delta: np.ndarray) -> np.ndarray:
    """Complex conjugate of an interleaved complex vector."""
    out = np.array(delta)
    out[..., 1::2] = -out[..., 1::2]
    return out


def _rotate_nodes(rot_re: Tensor, rot_im: Tensor, v: Tensor) -> Tensor:
    """Differentiable rotation of an interleaved complex batch."""
    vr, vi = ad.deinterleave(v)
    out_re = ad.sub(ad.mul(rot_re, vr), ad.mul(rot_im, vi))
    out_im = ad.add(ad.mul(rot_re, vi), ad.mul(rot_im, vr))
    return ad.interleave(out_re, out_im)


def _conv_head(phi: Tensor, z: Tensor, q: Tensor, params, cfg: ModelConfig) -> Tensor:
    """FC -> FC -> 1-d conv (kernel 3, same padding) -> adaptive max pool."""
    n = z.shape[0]
    x = ad.concat_cols([phi, z, q])
    x = ad.relu(ad.add_bias(ad.matmul(x, params["conv.fc1.w"]), params["conv.fc1.b"]))
    x = ad.relu(ad.add_bias(ad.matmul(x, params["conv.fc2.w"]), params["conv.fc2.b"]))
    x = ad.reshape(x, (n, cfg.conv_filters, cfg.conv_len))
    x = ad.conv1d(x, params["conv.kernel"], params["conv.bias"])
    x = ad.adaptive_max_pool1d(x, cfg.d // cfg.conv_filters)
    return ad.reshape(x, (n, cfg.d))


def compose(z: Tensor, q: Tensor, params, cfg: ModelConfig,
            conjugate_rotation: bool = False) -> Tensor:
    """Compose image and text features into a query embedding in R^d.

    With ``conjugate_rotation`` the rotation is replaced by its complex
    conjugate, which encodes the reverse target-to-query transition.
    """
    z, q = ad._as_tensor(z), ad._as_tensor(q)
    _check_batch(z, cfg.d, "compose(z)")
    _check_batch(q, cfg.h, "compose(q)")
    if cfg.variant in ("composeae_concat", "concat"):
        return concat_compose(z, q, params)
    if cfg.variant == "tirg":
        return tirg_compose(z, q, params)

    _, rot_re, rot_im = text_to_rotation(q, params, cfg, conjugate=conjugate_rotation)
    embedded = _mlp(z, params, "embed")
    phi = _rotate_nodes(rot_re, rot_im, embedded)
    out = ad.mul(params["mix.a"], _mlp(phi, params, "project"))
    if cfg.uses_conv_head():
        out = ad.add(out, ad.mul(params["mix.b"], _conv_head(phi, z, q, params, cfg)))
    if not np.all(np.isfinite(out.data)):
        raise NumericError("compose: non-finite output")
    return out


def compose_conjugate(y_feat: Tensor, q: Tensor, params, cfg: ModelConfig) -> Tensor:
    """Same graph as compose, with target features and the conjugate rotation."""
    return compose(y_feat, q, params, cfg, conjugate_rotation=True)


def decode(composed: Tensor, params) -> tuple[Tensor, Tensor]:
    """Reconstruct image and text features from the composed embedding."""
    composed = ad._as_tensor(composed)
    if composed.data.ndim != 2 or \
            composed.shape[1] != params["dec_img.fc1.w"].shape[0]:
        raise ContractViolation(
            f"decode: expected (N, {params['dec_img.fc1.w'].shape[0]}), "
            f"got {composed.shape}")
    return _mlp(composed, params, "dec_img"), _mlp(composed, params, "dec_txt")


def tirg_compose(z: Tensor, q: Tensor, params) -> Tensor:
    """Gated-residual baseline: wg * z * sigmoid(gate) + wr * residual."""
    z, q = ad._as_tensor(z), ad._as_tensor(q)
    cat = ad.concat_cols([z, q])
    gate = ad.sigmoid(_mlp(cat, params, "gate"))
    res = _mlp(cat, params, "res")
    return ad.add(ad.mul(params["mix.wg"], ad.mul(z, gate)),
                  ad.mul(params["mix.wr"], res))


def concat_compose(z: Tensor, q: Tensor, params) -> Tensor:
    """Plain two-layer MLP over the concatenated features."""
    z, q = ad._as_tensor(z), ad._as_tensor(q)
    return _mlp(ad.concat_cols([z, q]), params, "cat")
