"""Feature datasets: file format, synthetic generation, batch sampling.

On-disk format ("CRF1"): a UTF-8 JSON manifest next to raw little-endian
float32 blobs (row-major, no header). The manifest records dimensions,
blob file names (relative to the manifest), the per-sample target index
into the gallery, and the per-sample target group. Samples sharing a
target group have interchangeable correct targets at evaluation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation, FormatError

CRF_VERSION = "CRF1"


@dataclass
class FeatureDataset:
    query_feats: np.ndarray    # (n, d) image features of the queries
    text_feats: np.ndarray     # (n, h)
    target_feats: np.ndarray   # (g, d) gallery of target image features
    target_index: np.ndarray   # (n,) int, gallery index of each query's target
    target_group: np.ndarray   # (n,) int, equivalence class of correct targets
    gallery_group: np.ndarray  # (g,) int, group label of each gallery entry
    base_loss_hint: str | None = None

    @property
    def n(self) -> int:
        return self.query_feats.shape[0]

    @property
    def g(self) -> int:
        return self.target_feats.shape[0]

    @property
    def d(self) -> int:
        return self.query_feats.shape[1]

    @property
    def h(self) -> int:
        return self.text_feats.shape[1]

    def validate(self) -> "FeatureDataset":
        if self.text_feats.shape[0] != self.n or len(self.target_index) != self.n \
                or len(self.target_group) != self.n:
            raise FormatError("dataset: per-sample arrays disagree on sample count")
        if self.target_feats.shape[1] != self.d:
            raise FormatError(
                f"dataset: target dim {self.target_feats.shape[1]} != query dim {self.d}")
        if len(self.gallery_group) != self.g:
            raise FormatError("dataset: gallery_group length != gallery size")
        if self.target_index.min(initial=0) < 0 or \
                self.target_index.max(initial=-1) >= self.g:
            raise FormatError(f"dataset: target_index out of range [0, {self.g})")
        for name in ("query_feats", "text_feats", "target_feats"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FormatError(f"dataset: non-finite values in {name}")
        groups = set(self.target_group.tolist())
        if not groups <= set(self.gallery_group.tolist()):
            raise FormatError("dataset: a target_group has no gallery entry")
        return self


@dataclass
class SynthConfig:
    n: int = 1000
    g: int = 1000              # gallery size; must be >= n
    d: int = 64
    h: int = 32
    k_true: int = 32           # dimension of the planted rotation space
    noise_sigma: float = 0.05
    num_text_concepts: int = 8
    seed: int = 0

    def validate(self) -> "SynthConfig":
        for name in ("n", "g", "d", "h", "k_true", "num_text_concepts"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"SynthConfig.{name} must be positive")
        if self.g < self.n:
            raise ConfigError("SynthConfig.g must be >= n")
        if self.noise_sigma < 0:
            raise ConfigError("SynthConfig.noise_sigma must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class Batch:
    sample_indices: np.ndarray     # (N,) int
    negative_indices: np.ndarray   # (N, M) int, gallery indices


@dataclass
class PlantedMap:
    """Ground-truth structure of a synthetic dataset, for oracle retrieval."""
    embedding: np.ndarray       # (k_true, d) complex
    inverse: np.ndarray         # (d, k_true) complex pseudo-inverse
    concept_angles: np.ndarray  # (C, k_true)
    concepts: np.ndarray        # (g,) concept per sample slot

    def apply(self, z: np.ndarray, concept: int) -> np.ndarray:
        """Embed, rotate by the concept's angles, invert; real output."""
        w = np.exp(1j * self.concept_angles[concept]) * (self.embedding @ z)
        return np.real(self.inverse @ w)


# ---------------------------------------------------------------------------
# CRF1 save / load
# ---------------------------------------------------------------------------

def _write_blob(path: Path, arr: np.ndarray):
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(path: Path, rows: int, cols: int) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"missing blob file: {path}")
    raw = path.read_bytes()
    expect = rows * cols * 4
    if len(raw) != expect:
        got_cols = len(raw) / 4 / rows if rows else 0
        raise FormatError(
            f"blob {path.name}: expected {expect} bytes for {rows}x{cols} "
            f"float32 ({cols} columns), got {len(raw)} (implies {got_cols:g})")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()


def save_dataset(ds: FeatureDataset, manifest_path) -> None:
    ds.validate()
    manifest_path = Path(manifest_path)
    stem = manifest_path.stem
    blobs = {"query": f"{stem}.query.f32",
             "text": f"{stem}.text.f32",
             "target": f"{stem}.target.f32"}
    manifest = {
        "version": CRF_VERSION,
        "n": ds.n, "g": ds.g, "d": ds.d, "h": ds.h,
        "blobs": blobs,
        "target_index": ds.target_index.tolist(),
        "target_group": ds.target_group.tolist(),
        "gallery_group": ds.gallery_group.tolist(),
    }
    if ds.base_loss_hint is not None:
        manifest["base_loss"] = ds.base_loss_hint
    _write_blob(manifest_path.parent / blobs["query"], ds.query_feats)
    _write_blob(manifest_path.parent / blobs["text"], ds.text_feats)
    _write_blob(manifest_path.parent / blobs["target"], ds.target_feats)
    manifest_path.write_text(json.dumps(manifest, sort_keys=True), encoding="utf-8")


def load_dataset(manifest_path) -> FeatureDataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FormatError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {manifest_path.name}: invalid JSON ({exc})")
    version = manifest.get("version")
    if version != CRF_VERSION:
        raise FormatError(
            f"unsupported dataset version {version!r}, expected {CRF_VERSION!r}")
    for key in ("n", "g", "d", "h", "blobs", "target_index", "target_group"):
        if key not in manifest:
            raise FormatError(f"manifest missing key {key!r}")
    n, g, d, h = (int(manifest[k]) for k in ("n", "g", "d", "h"))
    root = manifest_path.parent
    ds = FeatureDataset(
        query_feats=_read_blob(root / manifest["blobs"]["query"], n, d),
        text_feats=_read_blob(root / manifest["blobs"]["text"], n, h),
        target_feats=_read_blob(root / manifest["blobs"]["target"], g, d),
        target_index=np.asarray(manifest["target_index"], dtype=np.int64),
        target_group=np.asarray(manifest["target_group"], dtype=np.int64),
        gallery_group=np.asarray(
            manifest.get("gallery_group", manifest["target_group"]), dtype=np.int64),
        base_loss_hint=manifest.get("base_loss"),
    )
    return ds.validate()


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

def gen_synthetic_with_oracle(cfg: SynthConfig) -> tuple[FeatureDataset, PlantedMap]:
    """Generate a dataset with planted rotation structure plus its oracle.

    A fixed complex linear embedding maps image features into C^{k_true};
    each text concept owns an angle vector, and every target is the
    (pseudo-)inverse image of the rotated query embedding plus noise. Each
    sample slot gets its own gallery entry and group.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    emb = (rng.standard_normal((cfg.k_true, cfg.d)) +
           1j * rng.standard_normal((cfg.k_true, cfg.d))) / np.sqrt(2.0 * cfg.k_true)
    inv = np.linalg.pinv(emb)
    angles = rng.uniform(-np.pi, np.pi, size=(cfg.num_text_concepts, cfg.k_true))
    codes = rng.standard_normal((cfg.num_text_concepts, cfg.h))

    z = rng.standard_normal((cfg.g, cfg.d))
    concepts = rng.integers(0, cfg.num_text_concepts, size=cfg.g)
    q = codes[concepts] + 0.1 * rng.standard_normal((cfg.g, cfg.h))
    rot = np.exp(1j * angles[concepts])                       # (g, k_true)
    y = np.real((rot * (z @ emb.T)) @ inv.T)
    y = y + cfg.noise_sigma * rng.standard_normal((cfg.g, cfg.d))

    ds = FeatureDataset(
        query_feats=z[:cfg.n].astype(np.float32),
        text_feats=q[:cfg.n].astype(np.float32),
        target_feats=y.astype(np.float32),
        target_index=np.arange(cfg.n, dtype=np.int64),
        target_group=np.arange(cfg.n, dtype=np.int64),
        gallery_group=np.arange(cfg.g, dtype=np.int64),
        base_loss_hint="smax",
    ).validate()
    planted = PlantedMap(embedding=emb, inverse=inv,
                         concept_angles=angles, concepts=concepts)
    return ds, planted


def gen_synthetic(cfg: SynthConfig) -> FeatureDataset:
    return gen_synthetic_with_oracle(cfg)[0]


def oracle_recall_at_1(ds: FeatureDataset, planted: PlantedMap) -> float:
    """Fraction of queries whose planted-map image ranks its own target first.

    Scores by dot product on L2-normalized features, so an exact match
    always wins at zero noise.
    """
    gallery = ds.target_feats.astype(np.float64)
    gallery = gallery / np.maximum(1e-12, np.linalg.norm(gallery, axis=1))[:, None]
    hits = 0
    for i in range(ds.n):
        pred = planted.apply(ds.query_feats[i].astype(np.float64),
                             int(planted.concepts[i]))
        pred = pred / max(1e-12, np.linalg.norm(pred))
        sims = gallery @ pred
        best = int(np.flatnonzero(sims == sims.max())[0])
        if ds.gallery_group[best] == ds.target_group[i]:
            hits += 1
    return hits / ds.n


def split_dataset(ds: FeatureDataset, n_train: int) -> tuple[FeatureDataset, FeatureDataset]:
    """Split into train/held-out parts, restricting each gallery to its own targets.

    Requires the one-entry-per-sample layout produced by gen_synthetic
    (target_index == arange). Gallery entries beyond n stay with the
    held-out part as distractors.
    """
    if not np.array_equal(ds.target_index, np.arange(ds.n)):
        raise ContractViolation("split_dataset: needs one gallery entry per sample")
    if not 0 < n_train < ds.n:
        raise ContractViolation(f"split_dataset: n_train must be in (0, {ds.n})")
    train = FeatureDataset(
        query_feats=ds.query_feats[:n_train].copy(),
        text_feats=ds.text_feats[:n_train].copy(),
        target_feats=ds.target_feats[:n_train].copy(),
        target_index=np.arange(n_train, dtype=np.int64),
        target_group=np.arange(n_train, dtype=np.int64),
        gallery_group=np.arange(n_train, dtype=np.int64),
        base_loss_hint=ds.base_loss_hint,
    ).validate()
    n_eval = ds.n - n_train
    g_eval = ds.g - n_train
    hold = FeatureDataset(
        query_feats=ds.query_feats[n_train:].copy(),
        text_feats=ds.text_feats[n_train:].copy(),
        target_feats=ds.target_feats[n_train:].copy(),
        target_index=np.arange(n_eval, dtype=np.int64),
        target_group=np.arange(n_eval, dtype=np.int64),
        gallery_group=np.arange(g_eval, dtype=np.int64),
        base_loss_hint=ds.base_loss_hint,
    ).validate()
    return train, hold


# ---------------------------------------------------------------------------
# batch sampling
# ---------------------------------------------------------------------------

def sample_batch(ds: FeatureDataset, batch_size: int, num_negatives: int,
                 rng: np.random.Generator) -> Batch:
    """Draw a batch of samples plus uniform negatives from the gallery.

    A negative never equals the sample's own target and never shares its
    target group.
    """
    if batch_size > ds.n:
        raise ConfigError(f"batch size {batch_size} exceeds dataset size {ds.n}")
    samples = rng.choice(ds.n, size=batch_size, replace=False)
    negatives = np.empty((batch_size, num_negatives), dtype=np.int64)
    for row, i in enumerate(samples):
        valid = np.flatnonzero(ds.gallery_group != ds.target_group[i])
        if len(valid) < num_negatives:
            raise ConfigError(
                f"gallery has only {len(valid)} valid negatives for sample {i}, "
                f"need {num_negatives}")
        negatives[row] = rng.choice(valid, size=num_negatives, replace=False)
    return Batch(sample_indices=samples.astype(np.int64),
                 negative_indices=negatives)
