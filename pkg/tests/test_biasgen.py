"""Bias-generator checks: exact counts, binomial concentration, purity."""

import numpy as np
import pytest

from metaweight.biasgen import (
    BiasedDataset,
    GaussianMixtureSpec,
    ImbalanceSpec,
    NoiseSpec,
    apply_flip_noise,
    apply_longtail,
    apply_uniform_noise,
    circle_means,
    gen_gaussians,
    load_dataset,
    longtail_counts,
    rng_stream,
    sample_batch,
    save_dataset,
    split_meta,
)


def toy_dataset(c=3, per_class=100, spread=0.5, seed=0):
    return gen_gaussians(GaussianMixtureSpec(c, 2, circle_means(c), spread, per_class), seed)


def binom_3sigma(n, p):
    return 3.0 * np.sqrt(p * (1.0 - p) / n)


def test_spec_validation():
    with pytest.raises(ValueError):
        GaussianMixtureSpec(1, 2, np.zeros((1, 2)), 1.0, 10)
    with pytest.raises(ValueError):
        GaussianMixtureSpec(3, 2, np.zeros((2, 2)), 1.0, 10)
    with pytest.raises(ValueError):
        ImbalanceSpec(base_count=0, factor=2.0)
    with pytest.raises(ValueError):
        ImbalanceSpec(base_count=10, factor=0.5)
    with pytest.raises(ValueError):
        NoiseSpec(kind="gauss", rate=0.1, seed=0)
    with pytest.raises(ValueError):
        NoiseSpec(kind="uniform", rate=1.5, seed=0)


def test_dataset_invariants_enforced():
    feats = np.zeros((4, 2))
    labels = np.array([0, 1, 2, 0])
    with pytest.raises(ValueError):
        BiasedDataset(feats, labels, labels, np.array([True, False, False, False]), 3)
    with pytest.raises(ValueError):
        BiasedDataset(feats, np.array([0, 1, 3, 0]), labels, np.zeros(4, bool), 3)


def test_gen_gaussians_counts_and_determinism():
    ds = toy_dataset(c=3, per_class=100)
    assert ds.n == 300
    assert ds.class_counts.tolist() == [100, 100, 100]
    assert not ds.corrupted.any()
    assert np.array_equal(ds.observed_labels, ds.true_labels)

    again = toy_dataset(c=3, per_class=100)
    assert np.array_equal(again.features, ds.features)
    other = toy_dataset(c=3, per_class=100, seed=1)
    assert not np.array_equal(other.features, ds.features)
    assert other.class_counts.tolist() == [100, 100, 100]


def test_gen_gaussians_zero_spread_collapses_to_means():
    means = circle_means(3)
    ds = gen_gaussians(GaussianMixtureSpec(3, 2, means, 0.0, 5), seed=4)
    for k in range(3):
        rows = ds.features[ds.true_labels == k]
        assert np.allclose(rows, means[k])


def test_longtail_counts_formula():
    # factor^(-1/(c-1)) per class step, rounded
    assert longtail_counts(2, ImbalanceSpec(100, 4.0)).tolist() == [100, 25]
    counts = longtail_counts(10, ImbalanceSpec(5000, 100.0))
    assert counts[0] == 5000
    assert counts[-1] == 50
    mu = 100.0 ** (-1.0 / 9.0)
    assert counts.tolist() == [round(5000 * mu**i) for i in range(10)]
    with pytest.raises(ValueError):
        longtail_counts(5, ImbalanceSpec(3, 100.0))


def test_apply_longtail_end_to_end():
    ds = toy_dataset(c=10, per_class=5000, spread=1.0)
    tail = apply_longtail(ds, ImbalanceSpec(5000, 100.0), seed=7)
    assert tail.class_counts.tolist() == longtail_counts(10, ImbalanceSpec(5000, 100.0)).tolist()
    assert not tail.corrupted.any()
    # no fabricated samples: every kept row exists in the source
    src = {tuple(row) for row in ds.features}
    assert all(tuple(row) in src for row in tail.features[:50])


def test_apply_longtail_factor_one_is_identity():
    ds = toy_dataset(c=3, per_class=50)
    same = apply_longtail(ds, ImbalanceSpec(50, 1.0), seed=3)
    assert same.class_counts.tolist() == [50, 50, 50]
    assert np.array_equal(np.sort(same.features, axis=0), np.sort(ds.features, axis=0))


def test_apply_longtail_requires_balance():
    ds = toy_dataset(c=3, per_class=60)
    tail = apply_longtail(ds, ImbalanceSpec(60, 4.0), seed=1)
    with pytest.raises(ValueError):
        apply_longtail(tail, ImbalanceSpec(60, 2.0), seed=1)


def test_uniform_noise_rate_zero_and_determinism():
    ds = toy_dataset()
    same = apply_uniform_noise(ds, 0.0, seed=5)
    assert np.array_equal(same.observed_labels, ds.observed_labels)
    a = apply_uniform_noise(ds, 0.4, seed=5)
    b = apply_uniform_noise(ds, 0.4, seed=5)
    assert np.array_equal(a.observed_labels, b.observed_labels)
    assert not np.array_equal(a.observed_labels, apply_uniform_noise(ds, 0.4, seed=6).observed_labels)


def test_uniform_noise_corruption_concentrates():
    # resampling over all c classes: corrupted fraction -> p(c-1)/c
    c, n_per, p = 10, 1000, 1.0
    ds = toy_dataset(c=c, per_class=n_per)
    noisy = apply_uniform_noise(ds, p, seed=9)
    frac = noisy.corrupted.mean()
    expect = p * (c - 1) / c
    assert abs(frac - expect) < binom_3sigma(ds.n, expect)
    assert np.array_equal(noisy.true_labels, ds.true_labels)

    p = 0.4
    noisy = apply_uniform_noise(ds, p, seed=10)
    expect = p * (c - 1) / c
    assert abs(noisy.corrupted.mean() - expect) < binom_3sigma(ds.n, expect)


def test_flip_noise_rate_and_targets():
    ds = toy_dataset(c=5, per_class=2000, spread=1.0)
    p = 0.4
    noisy = apply_flip_noise(ds, p, seed=21)
    assert abs(noisy.corrupted.mean() - p) < binom_3sigma(ds.n, p)
    # flips land on exactly two target classes per source class, never the source
    for k in range(5):
        flipped = noisy.observed_labels[(ds.true_labels == k) & noisy.corrupted]
        targets = set(flipped.tolist())
        assert len(targets) <= 2
        assert k not in targets
    again = apply_flip_noise(ds, p, seed=21)
    assert np.array_equal(again.observed_labels, noisy.observed_labels)


def test_flip_noise_needs_three_classes():
    ds = toy_dataset(c=2, per_class=10)
    with pytest.raises(ValueError):
        apply_flip_noise(ds, 0.2, seed=0)
    same = apply_flip_noise(toy_dataset(c=3, per_class=10), 0.0, seed=0)
    assert not same.corrupted.any()


def test_split_meta_balanced_and_disjoint():
    ds = apply_uniform_noise(toy_dataset(c=3, per_class=100), 0.4, seed=2)
    meta, rest = split_meta(ds, 10, seed=3)
    assert meta.n == 30
    assert meta.class_counts.tolist() == [10, 10, 10]
    assert not meta.corrupted.any()
    assert meta.n + rest.n == ds.n
    meta_rows = {tuple(r) for r in meta.features}
    assert not any(tuple(r) in meta_rows for r in rest.features)


def test_split_meta_insufficient_clean():
    ds = toy_dataset(c=3, per_class=5)
    with pytest.raises(ValueError):
        split_meta(ds, 6, seed=0)
    meta, rest = split_meta(ds, 0, seed=0)
    assert meta.n == 0
    assert rest.n == ds.n


def test_sample_batch_uniform_marginals():
    ds = toy_dataset(c=3, per_class=20)  # N=60
    rng = rng_stream(33, 9)
    hits = np.zeros(ds.n)
    draws = 2000
    for _ in range(draws):
        idx, rng = sample_batch(ds, 6, rng)
        assert len(set(idx.tolist())) == 6
        hits[idx] += 1
    p = 6 / ds.n
    bound = 3.0 * np.sqrt(p * (1 - p) / draws)
    assert np.all(np.abs(hits / draws - p) < bound)


def test_sample_batch_full_size_is_permutation():
    ds = toy_dataset(c=2, per_class=5)
    idx, _ = sample_batch(ds, ds.n, rng_stream(1, 2))
    assert sorted(idx.tolist()) == list(range(ds.n))
    with pytest.raises(ValueError):
        sample_batch(ds, ds.n + 1, rng_stream(1, 2))


def test_sample_batch_same_state_same_batch():
    ds = toy_dataset()
    a, _ = sample_batch(ds, 8, rng_stream(7, 1))
    b, _ = sample_batch(ds, 8, rng_stream(7, 1))
    assert np.array_equal(a, b)


def test_dataset_csv_round_trip(tmp_path):
    ds = apply_uniform_noise(toy_dataset(c=3, per_class=40), 0.3, seed=8)
    path = tmp_path / "data.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.observed_labels, ds.observed_labels)
    assert np.array_equal(back.true_labels, ds.true_labels)
    assert np.array_equal(back.corrupted, ds.corrupted)
    assert back.c == ds.c
    path2 = tmp_path / "data2.csv"
    save_dataset(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_dataset_rejects_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("")
    with pytest.raises(ValueError):
        load_dataset(path)
    path.write_text("2,2,3\n0.0,0.0,0,0,0\n")
    with pytest.raises(ValueError):
        load_dataset(path)
    path.write_text("1,2,3\n0.0,0.0,0,0\n")
    with pytest.raises(ValueError):
        load_dataset(path)
