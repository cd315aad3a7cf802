"""Retrieval evaluation: similarity kernel, gallery ranking, recall@k."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ContractViolation
from .data import FeatureDataset


@dataclass
class RetrievalReport:
    recall: dict[int, float]        # k -> recall in [0, 1]
    first_correct_rank: list[int]   # per query, 1-based rank of first hit
    gallery_size: int
    num_queries: int
    elapsed_seconds: float
    normalized: bool = False
    clamped_ks: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall"] = {str(k): v for k, v in self.recall.items()}
        return d


def similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Dot-product similarity kernel."""
    u, v = np.asarray(u), np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise ContractViolation(f"similarity: shapes {u.shape} vs {v.shape}")
    return float(u @ v)


def rank_gallery(query_embedding: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Gallery indices sorted by descending similarity, ties by ascending index."""
    query_embedding = np.asarray(query_embedding)
    gallery = np.asarray(gallery)
    if gallery.ndim != 2 or gallery.shape[0] == 0:
        raise ContractViolation("rank_gallery: gallery must be a non-empty matrix")
    if query_embedding.shape != (gallery.shape[1],):
        raise ContractViolation(
            f"rank_gallery: query dim {query_embedding.shape} vs gallery {gallery.shape}")
    sims = gallery @ query_embedding
    # stable sort on the negated scores keeps ties in ascending index order
    return np.argsort(-sims, kind="stable")


def recall_at_k(query_embeddings: np.ndarray, ds: FeatureDataset,
                ks: list[int], normalize: bool = False) -> RetrievalReport:
    """Rank every query against the gallery and score recall at each k.

    A query counts as a hit at k when any of its top-k gallery entries
    shares the query's target group. ks must be sorted ascending; a k
    beyond the gallery size is clamped and flagged in the report.
    """
    if ks != sorted(ks) or any(k < 1 for k in ks):
        raise ContractViolation("recall_at_k: ks must be ascending and >= 1")
    query_embeddings = np.asarray(query_embeddings, dtype=np.float64)
    if query_embeddings.shape != (ds.n, ds.d):
        raise ConfigError(
            f"recall_at_k: embeddings {query_embeddings.shape} vs dataset ({ds.n}, {ds.d})")
    start = time.perf_counter()
    gallery = ds.target_feats.astype(np.float64)
    clamped = [k for k in ks if k > ds.g]
    ks_eff = [min(k, ds.g) for k in ks]

    if normalize:
        gallery = gallery / np.maximum(1e-12, np.linalg.norm(gallery, axis=1))[:, None]
        norms = np.maximum(1e-12, np.linalg.norm(query_embeddings, axis=1))
        query_embeddings = query_embeddings / norms[:, None]

    hits = {k: 0 for k in ks}
    first_rank = []
    for i in range(ds.n):
        order = rank_gallery(query_embeddings[i], gallery)
        correct = ds.gallery_group[order] == ds.target_group[i]
        pos = np.flatnonzero(correct)
        rank1 = int(pos[0]) + 1 if len(pos) else ds.g + 1
        first_rank.append(rank1)
        for k, ke in zip(ks, ks_eff):
            if rank1 <= ke:
                hits[k] += 1
    recall = {k: hits[k] / ds.n for k in ks}
    return RetrievalReport(recall=recall, first_correct_rank=first_rank,
                           gallery_size=ds.g, num_queries=ds.n,
                           elapsed_seconds=time.perf_counter() - start,
                           normalized=normalize, clamped_ks=clamped)


def compose_all(params, cfg, ds: FeatureDataset, batch: int = 256) -> np.ndarray:
    """Run the composition over every query in the dataset."""
    from .model import compose
    out = np.empty((ds.n, ds.d), dtype=np.float32)
    for lo in range(0, ds.n, batch):
        hi = min(lo + batch, ds.n)
        out[lo:hi] = compose(ds.query_feats[lo:hi], ds.text_feats[lo:hi],
                             params, cfg).data
    return out


def evaluate(checkpoint, ds: FeatureDataset, ks: list[int],
             normalize: bool = False) -> RetrievalReport:
    """Compose every query with a checkpoint's model and score recall@k."""
    from .training import params_from_checkpoint
    cfg = checkpoint.model_config
    if cfg.d != ds.d or cfg.h != ds.h:
        raise ConfigError(
            f"evaluate: model dims (d={cfg.d}, h={cfg.h}) vs dataset "
            f"(d={ds.d}, h={ds.h})")
    params = params_from_checkpoint(checkpoint)
    return recall_at_k(compose_all(params, cfg, ds), ds, ks, normalize=normalize)
