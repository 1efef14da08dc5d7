"""Tests for experiment orchestration, baselines and report round trips."""

import filecmp
import json
import os

import numpy as np
import pytest

from metaweight.biasgen import (
    BiasedDataset,
    GaussianMixtureSpec,
    circle_means,
    derive_seed,
    gen_gaussians,
    longtail_counts,
    ImbalanceSpec,
    save_dataset,
    split_meta,
)
from metaweight.config import parse_config
from metaweight.harness import (
    BaselineSpec,
    evaluate,
    generate_biased,
    load_report,
    monotonicity_score,
    render_plots,
    run_baseline,
    run_experiment,
    save_experiment,
    save_report,
    stability_trace,
    summarize,
    weight_distribution,
)
from metaweight.metaopt import TrainConfig, TrainState, train
from metaweight.nnet import DenseNet, LayerSpec, init_net
from metaweight.weightnet import init_mwnet, load_mwnet

SMALL_LAYERS = (LayerSpec(2, 8, "relu"), LayerSpec(8, 3, "identity"))

REPORT_FILES = [
    "metrics.csv",
    "weight_curve.csv",
    "weight_dist.csv",
    "stability.csv",
    "tracked_weights.csv",
    "confusion.csv",
    "config.json",
]


def tiny_doc(**overrides):
    doc = {
        "dataset": {"kind": "gaussians", "classes": 3, "per_class": 10, "spread": 0.6, "test_per_class": 5},
        "meta": {"per_class": 2},
        "model": {"classifier_hidden": [8], "mwnet_hidden": [5]},
        "optim": {"alpha": 0.1, "beta": 0.01, "n": 8, "m": 4, "T": 6},
        "seeds": [0],
    }
    doc.update(overrides)
    return doc


def make_sets(seed=0, per_class=10):
    spec = GaussianMixtureSpec(3, 2, circle_means(3), 0.6, per_class)
    pool = gen_gaussians(spec, seed)
    meta, rest = split_meta(pool, 2, seed)
    test_set = gen_gaussians(GaussianMixtureSpec(3, 2, circle_means(3), 0.6, 5), derive_seed(seed, 9))
    return rest, meta, test_set


# ---------------------------------------------------------------- evaluate


def test_evaluate_perfect_classifier():
    labels = np.array([0, 0, 1, 1, 2, 2])
    features = np.eye(3)[labels]
    ds = BiasedDataset(features, labels, labels, np.zeros(6, dtype=bool), 3)
    # One identity layer reading out 10 * feature: argmax equals the label.
    net = DenseNet((LayerSpec(3, 3, "identity"),), np.concatenate([10.0 * np.eye(3).ravel(), np.zeros(3)]))
    accuracy, confusion = evaluate(net, ds)
    assert accuracy == 1.0
    assert np.array_equal(confusion, 2 * np.eye(3, dtype=np.int64))


def test_evaluate_constant_classifier_scores_class_share():
    labels = np.array([0, 1, 1, 2, 2, 2])
    ds = BiasedDataset(np.random.default_rng(0).normal(size=(6, 2)), labels, labels, np.zeros(6, dtype=bool), 3)
    # Zero weights, bias favoring class 2: every prediction is class 2.
    params = np.concatenate([np.zeros(6), np.array([0.0, 0.0, 1.0])])
    net = DenseNet((LayerSpec(2, 3, "identity"),), params)
    accuracy, confusion = evaluate(net, ds)
    assert accuracy == pytest.approx(3 / 6)
    assert np.all(confusion[:, :2] == 0)
    assert np.array_equal(confusion[:, 2], [1, 2, 3])


def test_evaluate_uses_true_labels():
    labels = np.array([0, 0, 1, 1, 2, 2])
    observed = np.array([1, 0, 1, 2, 2, 0])
    ds = BiasedDataset(np.eye(3)[labels], observed, labels, observed != labels, 3)
    net = DenseNet((LayerSpec(3, 3, "identity"),), np.concatenate([10.0 * np.eye(3).ravel(), np.zeros(3)]))
    accuracy, _ = evaluate(net, ds)
    assert accuracy == 1.0  # predictions match the true labels, not the noisy ones


# ------------------------------------------------------- weight distribution


def test_weight_distribution_fresh_net_near_half():
    train_set, _, _ = make_sets(3)
    state = TrainState(
        w=init_net(SMALL_LAYERS, 0),
        theta=init_mwnet((5,), 1),
        velocity=np.zeros(init_net(SMALL_LAYERS, 0).params.size),
    )
    weights, corrupted = weight_distribution(state, train_set)
    assert weights.shape == (train_set.n,)
    assert np.all((weights > 0.3) & (weights < 0.7))
    assert np.array_equal(corrupted, train_set.corrupted)
    corrupted[0] = True  # the returned flag vector is a copy
    assert not train_set.corrupted[0]


# ---------------------------------------------------------------- stability


def test_stability_trace_selects_columns():
    snaps = np.array(
        [
            [0.1, 0.5, 0.9],
            [0.2, 0.5, 0.8],
            [0.4, 0.5, 0.6],
        ]
    )
    mean_all, _ = stability_trace(snaps)
    assert np.allclose(mean_all, [(0.1 + 0.0 + 0.1) / 3, (0.2 + 0.0 + 0.2) / 3], atol=1e-15)
    mean_sel, std_sel = stability_trace(snaps, np.array([1]))
    assert np.all(mean_sel == 0.0) and np.all(std_sel == 0.0)
    with pytest.raises(ValueError):
        stability_trace(snaps[:1])


# ---------------------------------------------------------------- baselines


def test_baseline_spec_validation():
    with pytest.raises(ValueError):
        BaselineSpec("focal")
    with pytest.raises(ValueError):
        BaselineSpec("ramp", gamma=-1.0)
    with pytest.raises(ValueError):
        BaselineSpec("step", lam=0.0)
    assert BaselineSpec("uniform").kind == "uniform"


def test_baseline_weight_rules():
    losses = np.array([0.0, 1.0, 2.0, 4.0])
    assert np.array_equal(BaselineSpec("uniform").weight_fn()(losses), np.ones(4))

    ramp = BaselineSpec("ramp", gamma=2.0).weight_fn()
    assert np.allclose(ramp(losses), (losses / 4.0) ** 2, atol=1e-15)
    assert np.array_equal(ramp(np.zeros(3)), np.ones(3))  # degenerate all-zero batch
    assert np.array_equal(BaselineSpec("ramp", gamma=0.0).weight_fn()(losses), np.ones(4))

    step = BaselineSpec("step", lam=2.0).weight_fn()
    assert np.array_equal(step(losses), [1.0, 1.0, 0.0, 0.0])  # strict threshold


def test_run_baseline_uniform_equals_weight_fn_training():
    train_set, meta_set, test_set = make_sets(4)
    config = TrainConfig(alpha=0.1, beta=0.01, n=8, m=4, T=6, seed=5)
    report_b = run_baseline(train_set, meta_set, test_set, config, BaselineSpec("uniform"),
                            classifier_specs=SMALL_LAYERS)
    _, report_w = train(train_set, meta_set, test_set, config, classifier_specs=SMALL_LAYERS,
                        weight_fn=lambda losses: np.ones_like(losses))
    assert np.array_equal(report_b.accuracy_history, report_w.accuracy_history)
    assert np.array_equal(report_b.train_loss_history, report_w.train_loss_history)
    assert np.all(report_b.dist_weights == 1.0)
    assert np.all(report_b.grad_norm_history == 0.0)
    assert report_b.config_echo["baseline"]["kind"] == "uniform"


def test_run_baseline_degenerate_rules_match_uniform():
    train_set, meta_set, test_set = make_sets(6)
    config = TrainConfig(alpha=0.1, beta=0.01, n=8, m=4, T=6, seed=7)
    uniform = run_baseline(train_set, meta_set, test_set, config, BaselineSpec("uniform"),
                           classifier_specs=SMALL_LAYERS)
    # A step threshold above every loss keeps every sample: identical run.
    step = run_baseline(train_set, meta_set, test_set, config, BaselineSpec("step", lam=1e9),
                        classifier_specs=SMALL_LAYERS)
    assert np.array_equal(step.accuracy_history, uniform.accuracy_history)
    assert np.array_equal(step.dist_weights, uniform.dist_weights)
    # gamma = 0 flattens the ramp to 1 everywhere.
    ramp = run_baseline(train_set, meta_set, test_set, config, BaselineSpec("ramp", gamma=0.0),
                        classifier_specs=SMALL_LAYERS)
    assert np.array_equal(ramp.accuracy_history, uniform.accuracy_history)


# ------------------------------------------------------------- monotonicity


def test_monotonicity_score_wrapper():
    losses = np.linspace(0, 5, 50)
    rho, deg = monotonicity_score((losses, np.exp(-losses)))
    assert rho == pytest.approx(-1.0)
    assert not deg
    rho, deg = monotonicity_score((losses, np.full(50, 0.5)))
    assert rho == 0.0 and deg
    with pytest.raises(ValueError):
        monotonicity_score((losses[:5], losses[:5]))


# ------------------------------------------------------------- round trips


def run_tiny_experiment(tmp_path, doc=None):
    cfg = parse_config(doc or tiny_doc())
    return cfg, run_experiment(cfg)


def test_report_save_load_round_trip(tmp_path):
    _, result = run_tiny_experiment(tmp_path)
    report = result.reports[0]
    out = tmp_path / "run"
    save_report(report, out, mwnet=result.mwnets[0])
    loaded = load_report(out)

    for name in (
        "accuracy_history", "train_loss_history", "meta_loss_history", "grad_norm_history",
        "curve_losses", "curve_weights", "dist_weights", "stability_mean", "stability_std",
        "tracked_weight_history",
    ):
        assert np.array_equal(getattr(loaded, name), getattr(report, name)), name
    assert np.array_equal(loaded.dist_ids, report.dist_ids)
    assert np.array_equal(loaded.dist_corrupted, report.dist_corrupted)
    assert np.array_equal(loaded.tracked_ids, report.tracked_ids)
    assert np.array_equal(loaded.final_confusion, report.final_confusion)
    assert loaded.config_echo == report.config_echo
    assert loaded.warnings == report.warnings

    # Saving the loaded report again reproduces every file byte for byte.
    again = tmp_path / "run2"
    save_report(loaded, again, mwnet=load_mwnet(out / "mwnet.json"))
    for name in REPORT_FILES + ["mwnet.json"]:
        assert filecmp.cmp(out / name, again / name, shallow=False), name


def test_report_round_trip_with_no_completed_epochs(tmp_path):
    train_set, meta_set, test_set = make_sets(8)
    config = TrainConfig(alpha=0.1, beta=0.01, n=8, m=4, T=1, seed=1)
    _, report = train(train_set, meta_set, test_set, config, classifier_specs=SMALL_LAYERS, mwnet_hidden=(5,))
    out = tmp_path / "short"
    save_report(report, out)
    loaded = load_report(out)
    assert loaded.accuracy_history.size == 0
    assert loaded.stability_mean.size == 0
    assert loaded.tracked_weight_history.shape == report.tracked_weight_history.shape
    assert np.array_equal(loaded.dist_weights, report.dist_weights)


def test_render_plots_deterministic(tmp_path):
    _, result = run_tiny_experiment(tmp_path)
    out = tmp_path / "run"
    save_report(result.reports[0], out)
    written = render_plots(out)
    assert [os.path.basename(p) for p in written] == ["weight_curve.svg", "accuracy.svg"]
    first = {p: open(p, "rb").read() for p in written}
    for p, blob in first.items():
        assert blob.startswith(b"<svg")
    again = render_plots(out)
    for p in again:
        assert open(p, "rb").read() == first[p]


# ------------------------------------------------------------- experiments


def test_run_experiment_single_seed_layout(tmp_path):
    doc = tiny_doc(baselines=[{"kind": "uniform"}])
    cfg, result = run_tiny_experiment(tmp_path, doc)
    assert len(result.reports) == 1
    assert len(result.mwnets) == 1
    assert list(result.baseline_reports) == ["uniform"]

    out = tmp_path / "exp"
    save_experiment(result, out)
    for name in REPORT_FILES + ["mwnet.json", "summary.json"]:
        assert (out / name).is_file(), name
    assert (out / "baseline_uniform" / "metrics.csv").is_file()
    assert not (out / "baseline_uniform" / "mwnet.json").exists()

    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0]
    assert "mean" in summary["final_accuracy"]
    assert "uniform" in summary["baselines"]
    assert len(summary["monotonicity"]["per_seed"]) == 1


def test_run_experiment_multi_seed_layout_and_determinism(tmp_path):
    doc = tiny_doc(seeds=[3, 5])
    cfg, result = run_tiny_experiment(tmp_path, doc)
    assert result.seeds == (3, 5)
    assert len(result.reports) == 2

    out = tmp_path / "exp"
    save_experiment(result, out)
    assert (out / "seed_3" / "metrics.csv").is_file()
    assert (out / "seed_5" / "metrics.csv").is_file()
    assert (out / "summary.json").is_file()
    assert not (out / "metrics.csv").exists()

    # Per-seed optimizer seeds differ, so the two runs are distinct.
    a, b = result.reports
    assert not np.array_equal(a.accuracy_history, b.accuracy_history) or not np.array_equal(
        a.dist_weights, b.dist_weights
    )

    _, rerun = run_tiny_experiment(tmp_path, tiny_doc(seeds=[3, 5]))
    assert json.dumps(rerun.summary, sort_keys=True) == json.dumps(result.summary, sort_keys=True)
    for r1, r2 in zip(result.reports, rerun.reports):
        assert np.array_equal(r1.dist_weights, r2.dist_weights)


def test_run_experiment_echo_names_the_seed(tmp_path):
    doc = tiny_doc(seeds=[9])
    _, result = run_tiny_experiment(tmp_path, doc)
    echo = result.reports[0].config_echo
    assert echo["run_seed"] == 9
    assert echo["seed"] == 9
    assert echo["experiment"]["optim"]["T"] == 6


def test_summarize_reports_clean_noisy_gap(tmp_path):
    doc = tiny_doc(bias={"noise": {"kind": "uniform", "rate": 0.4}})
    _, result = run_tiny_experiment(tmp_path, doc)
    gap = result.summary["clean_noisy_weight_gap"]["per_seed"][0]
    assert gap is not None and np.isfinite(gap)
    # Clean data has no corrupted samples: the gap is undefined.
    _, clean = run_tiny_experiment(tmp_path)
    assert clean.summary["clean_noisy_weight_gap"]["per_seed"][0] is None


def test_meta_set_is_carved_before_bias_injection(tmp_path):
    # Even with every training label resampled (draws land back on the
    # original class 1/c of the time), the meta set stays clean and
    # balanced, or train() would refuse it.
    doc = tiny_doc(bias={"noise": {"kind": "uniform", "rate": 1.0}})
    doc["optim"]["T"] = 2
    _, result = run_tiny_experiment(tmp_path, doc)
    corrupted = result.reports[0].dist_corrupted
    assert corrupted.mean() > 0.4  # expectation (c-1)/c = 2/3


def test_generate_biased_applies_longtail_and_noise():
    doc = tiny_doc(bias={"imbalance": {"factor": 5}, "noise": {"kind": "uniform", "rate": 0.5}})
    cfg = parse_config(doc)
    ds = generate_biased(cfg, 0)
    expected_counts = longtail_counts(3, ImbalanceSpec(base_count=10, factor=5))
    assert np.array_equal(np.bincount(ds.true_labels, minlength=3), expected_counts)
    assert ds.corrupted.any()
    again = generate_biased(cfg, 0)
    assert np.array_equal(ds.features, again.features)
    assert np.array_equal(ds.observed_labels, again.observed_labels)


def test_file_dataset_pipeline(tmp_path):
    pool = gen_gaussians(GaussianMixtureSpec(3, 2, circle_means(3), 0.6, 12), 1)
    path = tmp_path / "pool.csv"
    save_dataset(pool, path)
    doc = tiny_doc(dataset={"kind": "file", "path": str(path), "test_fraction": 0.2})
    doc["optim"] = {"alpha": 0.1, "beta": 0.01, "n": 6, "m": 4, "T": 4}
    cfg = parse_config(doc)
    result = run_experiment(cfg)
    report = result.reports[0]
    # 36 samples: round(36 * 0.2) = 7 test, 29 pool, minus 6 meta = 23 train.
    assert report.final_confusion.sum() == 7
    assert report.dist_weights.size == 23


def test_summarize_shape():
    train_set, meta_set, test_set = make_sets(11)
    config = TrainConfig(alpha=0.1, beta=0.01, n=8, m=4, T=6, seed=2)
    _, r1 = train(train_set, meta_set, test_set, config, classifier_specs=SMALL_LAYERS, mwnet_hidden=(5,))
    summary = summarize((2,), [r1], {})
    assert summary["seeds"] == [2]
    assert summary["final_accuracy"]["per_seed"] == [r1.final_accuracy]
    assert summary["final_accuracy"]["std"] == 0.0
    assert summary["baselines"] == {}
