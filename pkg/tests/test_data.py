"""CRF1 round trips, synthetic generator structure, batch sampling."""

import json

import numpy as np
import pytest

from rotcompose.data import (Batch, FeatureDataset, SynthConfig, gen_synthetic,
                             gen_synthetic_with_oracle, load_dataset,
                             oracle_recall_at_1, sample_batch, save_dataset,
                             split_dataset)
from rotcompose.errors import ConfigError, FormatError


def random_dataset(rng, n=10, g=12, d=6, h=4):
    return FeatureDataset(
        query_feats=rng.standard_normal((n, d)).astype(np.float32),
        text_feats=rng.standard_normal((n, h)).astype(np.float32),
        target_feats=rng.standard_normal((g, d)).astype(np.float32),
        target_index=rng.integers(0, g, size=n).astype(np.int64),
        target_group=np.arange(n, dtype=np.int64) % g,
        gallery_group=np.arange(g, dtype=np.int64),
        base_loss_hint="smax",
    )


def groups_consistent(ds):
    # make target_group match the gallery entry the index points to
    ds.target_group = ds.gallery_group[ds.target_index].copy()
    return ds.validate()


def test_round_trip_many(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        ds = groups_consistent(random_dataset(rng))
        path = tmp_path / f"ds{i}.json"
        save_dataset(ds, path)
        back = load_dataset(path)
        np.testing.assert_array_equal(ds.query_feats, back.query_feats)
        np.testing.assert_array_equal(ds.text_feats, back.text_feats)
        np.testing.assert_array_equal(ds.target_feats, back.target_feats)
        np.testing.assert_array_equal(ds.target_index, back.target_index)
        np.testing.assert_array_equal(ds.target_group, back.target_group)
        np.testing.assert_array_equal(ds.gallery_group, back.gallery_group)
        assert back.base_loss_hint == "smax"


def test_truncated_blob_named(tmp_path):
    ds = groups_consistent(random_dataset(np.random.default_rng(1)))
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    blob = tmp_path / "ds.query.f32"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(FormatError, match="ds.query.f32"):
        load_dataset(path)


def test_dim_mismatch_reports_both_numbers(tmp_path):
    ds = groups_consistent(random_dataset(np.random.default_rng(2), d=6))
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    manifest = json.loads(path.read_text())
    manifest["d"] = 7
    path.write_text(json.dumps(manifest))
    with pytest.raises(FormatError) as err:
        load_dataset(path)
    assert "7" in str(err.value) and "6" in str(err.value)


def test_rejects_wrong_version(tmp_path):
    ds = groups_consistent(random_dataset(np.random.default_rng(3)))
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    manifest = json.loads(path.read_text())
    manifest["version"] = "CRF9"
    path.write_text(json.dumps(manifest))
    with pytest.raises(FormatError, match="CRF9"):
        load_dataset(path)


def test_rejects_non_finite_values(tmp_path):
    ds = groups_consistent(random_dataset(np.random.default_rng(4)))
    ds.query_feats[0, 0] = np.nan
    with pytest.raises(FormatError, match="query_feats"):
        save_dataset(ds, tmp_path / "ds.json")


def test_rejects_out_of_range_index():
    ds = random_dataset(np.random.default_rng(5))
    ds.target_index[0] = ds.g
    with pytest.raises(FormatError, match="target_index"):
        ds.validate()


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def test_synthetic_deterministic():
    cfg = SynthConfig(n=40, g=50, d=8, h=6, k_true=4, seed=9)
    a = gen_synthetic(cfg)
    b = gen_synthetic(cfg)
    np.testing.assert_array_equal(a.query_feats, b.query_feats)
    np.testing.assert_array_equal(a.text_feats, b.text_feats)
    np.testing.assert_array_equal(a.target_feats, b.target_feats)


def test_identity_rotation_with_orthogonal_embedding():
    # zero angles, square real-orthogonal-like embedding: target == pinv(E) E z
    cfg = SynthConfig(n=20, g=20, d=6, h=4, k_true=6, noise_sigma=0.0,
                      num_text_concepts=1, seed=10)
    ds, planted = gen_synthetic_with_oracle(cfg)
    planted.concept_angles[...] = 0.0
    for i in range(ds.n):
        expect = np.real(planted.inverse @ (planted.embedding @
                                            ds.query_feats[i].astype(np.float64)))
        got = planted.apply(ds.query_feats[i].astype(np.float64), 0)
        np.testing.assert_allclose(got, expect, atol=1e-10)
    # and with k_true == d the complex embedding is invertible: pinv(E) E == I
    recon = np.real(planted.inverse @ planted.embedding)
    np.testing.assert_allclose(recon, np.eye(cfg.d), atol=1e-8)


def test_noiseless_targets_match_planted_map():
    cfg = SynthConfig(n=30, g=30, d=8, h=5, k_true=4, noise_sigma=0.0,
                      num_text_concepts=3, seed=11)
    ds, planted = gen_synthetic_with_oracle(cfg)
    for i in range(ds.n):
        expect = planted.apply(ds.query_feats[i].astype(np.float64),
                               int(planted.concepts[i]))
        np.testing.assert_allclose(ds.target_feats[i], expect, atol=1e-5)


def test_oracle_retrieval_perfect_at_zero_noise():
    cfg = SynthConfig(n=100, g=120, d=8, h=6, k_true=4, noise_sigma=0.0,
                      num_text_concepts=4, seed=12)
    ds, planted = gen_synthetic_with_oracle(cfg)
    assert oracle_recall_at_1(ds, planted) == 1.0


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(n=10, g=5).validate()
    with pytest.raises(ConfigError):
        SynthConfig(noise_sigma=-1).validate()


def test_split_dataset_partition():
    cfg = SynthConfig(n=30, g=40, d=6, h=4, k_true=3, seed=13)
    ds = gen_synthetic(cfg)
    train, hold = split_dataset(ds, 20)
    assert train.n == 20 and train.g == 20
    assert hold.n == 10 and hold.g == 20  # distractor entries stay held-out
    np.testing.assert_array_equal(train.query_feats, ds.query_feats[:20])
    np.testing.assert_array_equal(hold.query_feats, ds.query_feats[20:])
    np.testing.assert_array_equal(hold.target_feats, ds.target_feats[20:])


# ---------------------------------------------------------------------------
# batch sampling
# ---------------------------------------------------------------------------

def test_batch_negatives_avoid_target_group():
    ds = gen_synthetic(SynthConfig(n=10, g=12, d=4, h=3, k_true=2, seed=14))
    rng = np.random.default_rng(0)
    for _ in range(50):
        batch = sample_batch(ds, 8, 3, rng)
        for row, i in enumerate(batch.sample_indices):
            own = ds.target_group[i]
            assert not np.any(ds.gallery_group[batch.negative_indices[row]] == own)
            assert not np.any(batch.negative_indices[row] == ds.target_index[i])


def test_batch_deterministic_with_seed():
    ds = gen_synthetic(SynthConfig(n=10, g=12, d=4, h=3, k_true=2, seed=15))
    b1 = sample_batch(ds, 5, 2, np.random.default_rng(7))
    b2 = sample_batch(ds, 5, 2, np.random.default_rng(7))
    np.testing.assert_array_equal(b1.sample_indices, b2.sample_indices)
    np.testing.assert_array_equal(b1.negative_indices, b2.negative_indices)


def test_batch_insufficient_negatives():
    ds = gen_synthetic(SynthConfig(n=3, g=3, d=4, h=3, k_true=2, seed=16))
    with pytest.raises(ConfigError):
        sample_batch(ds, 2, 5, np.random.default_rng(0))


def test_negative_sampling_uniform():
    # 5-entry gallery, one excluded per sample: each of the 4 valid
    # negatives should appear with frequency 1/4 +- 0.02 over 10k draws
    ds = gen_synthetic(SynthConfig(n=5, g=5, d=4, h=3, k_true=2, seed=17))
    rng = np.random.default_rng(1)
    counts = np.zeros(ds.g)
    draws = 10_000
    sample = 2
    for _ in range(draws):
        batch = sample_batch(ds, 5, 1, rng)
        row = int(np.flatnonzero(batch.sample_indices == sample)[0])
        counts[batch.negative_indices[row, 0]] += 1
    assert counts[ds.target_index[sample]] == 0
    valid = np.delete(np.arange(ds.g), ds.target_index[sample])
    freqs = counts[valid] / draws
    assert np.all(np.abs(freqs - 0.25) <= 0.02)
