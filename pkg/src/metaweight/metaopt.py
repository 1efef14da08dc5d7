"""The bilevel training loop: weighted loss, virtual step, meta-gradient.

One iteration does three things with a shared training mini-batch and an
independent meta mini-batch:

1. Virtual step: w_hat(Theta) = w - alpha * sum_i coeff_i * d L_i/d w,
   a plain SGD step whose coefficients coeff_i come from the weighting
   net (raw weight / n, or the normalized eta_i).
2. Meta step: the meta-set loss at w_hat is differentiated through the
   virtual step analytically. With G_ij the inner product between meta
   sample i's gradient at w_hat and training sample j's gradient at w,
   the unnormalized case gives

       grad_theta = -(alpha/(n*m)) * sum_j (sum_i G_ij) * dV(L_j)/dTheta

   and Theta moves by -beta * grad_theta, so a training sample whose
   gradient aligns with the meta gradients gets its weight pushed up.
   Under normalization the coefficients couple through their sum and the
   quotient rule replaces the simple per-sample factor.
3. Actual step: the classifier redoes the weighted step from w with the
   weights recomputed under the new Theta, this time with the configured
   momentum and weight decay.

Per-sample training gradients are computed once per iteration and reused
in step 3 (they do not depend on Theta).
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from metaweight import weightnet
from metaweight.biasgen import BiasedDataset, derive_seed, rng_stream, sample_batch
from metaweight.metrics import confusion_matrix, stability_from_history
from metaweight.nnet import (
    DenseNet,
    LayerSpec,
    forward,
    init_net,
    per_sample_gradients,
    sgd_step,
    softmax_cross_entropy,
)
from metaweight.weightnet import MWNet, init_mwnet, mw_forward, mw_jacobian

WEIGHT_CURVE_POINTS = 200
TRACKED_SAMPLES = 10
CURVE_PERCENTILE = 99.0


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer-level settings for one training run."""

    alpha: float = 0.1
    beta: float = 1e-2
    n: int = 32
    m: int = 16
    T: int = 100
    tau: float = 1e-8
    normalize: bool = False
    classifier_momentum: float = 0.0
    classifier_weight_decay: float = 0.0
    lr_schedule: tuple[tuple[int, float], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        # beta == 0 freezes the weighting net, used by baselines and tests
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.n < 1 or self.m < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.classifier_momentum < 1.0:
            raise ValueError("classifier_momentum must be in [0, 1)")
        if self.classifier_weight_decay < 0:
            raise ValueError("classifier_weight_decay must be >= 0")
        schedule = tuple((int(it), float(mult)) for it, mult in self.lr_schedule)
        for it, mult in schedule:
            if it < 0 or mult <= 0:
                raise ValueError(f"bad lr_schedule entry ({it}, {mult})")
        object.__setattr__(self, "lr_schedule", schedule)


@dataclass
class TrainState:
    """Classifier, weighting net and momentum buffer at one iteration."""

    w: DenseNet
    theta: MWNet
    velocity: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.velocity.shape != self.w.params.shape:
            raise ValueError("velocity must match classifier parameter shape")
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")


@dataclass
class Batch:
    """A mini-batch; samples are sorted by dataset index at construction
    so reductions run in one canonical order regardless of draw order."""

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids.size == 0:
            raise ValueError("empty batch")
        if self.features.shape[0] != self.ids.size or self.labels.shape != self.ids.shape:
            raise ValueError("batch field lengths disagree")
        order = np.argsort(self.ids, kind="stable")
        self.ids = self.ids[order]
        self.features = self.features[order]
        self.labels = self.labels[order]

    @property
    def size(self) -> int:
        return self.ids.size

    @classmethod
    def from_dataset(cls, dataset: BiasedDataset, indices: np.ndarray) -> "Batch":
        indices = np.asarray(indices, dtype=np.int64)
        return cls(indices, dataset.features[indices], dataset.observed_labels[indices])


@dataclass
class VirtualCache:
    """Intermediates of one virtual step, reused by the actual update."""

    losses: np.ndarray
    grads: np.ndarray
    raw_weights: np.ndarray
    coeffs: np.ndarray


@dataclass
class MetaGradientReport:
    """The analytic meta-gradient and the pieces it is assembled from."""

    grad_theta: np.ndarray
    G: np.ndarray
    mean_G_per_j: np.ndarray
    per_sample_weights: np.ndarray
    train_losses: np.ndarray
    train_grads: np.ndarray
    w_hat: np.ndarray
    weighted_loss: float
    meta_loss: float


@dataclass
class RunReport:
    """Everything a finished run exposes for analysis.

    Histories hold one entry per completed epoch (an epoch is
    ceil(N_train / n) iterations); stability rows sit between adjacent
    epochs, so there are len(histories) - 1 of them.
    """

    accuracy_history: np.ndarray
    train_loss_history: np.ndarray
    meta_loss_history: np.ndarray
    grad_norm_history: np.ndarray
    final_confusion: np.ndarray
    curve_losses: np.ndarray
    curve_weights: np.ndarray
    dist_ids: np.ndarray
    dist_weights: np.ndarray
    dist_corrupted: np.ndarray
    tracked_ids: np.ndarray
    tracked_weight_history: np.ndarray
    stability_mean: np.ndarray
    stability_std: np.ndarray
    config_echo: dict
    warnings: list[str] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        total = self.final_confusion.sum()
        return float(np.trace(self.final_confusion) / total)


def _per_sample_losses_grads(net: DenseNet, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    out, cache = forward(net, batch.features)
    losses, dlogits = softmax_cross_entropy(out, batch.labels)
    grads = per_sample_gradients(net, cache, dlogits)
    return losses, grads


def _coefficients(raw: np.ndarray, normalize: bool, tau: float) -> np.ndarray:
    if normalize:
        return weightnet.normalize(raw, tau)
    return raw / raw.size


def weighted_train_loss(
    w: DenseNet,
    theta: MWNet,
    batch: Batch,
    normalize: bool = False,
    tau: float = 1e-8,
) -> float:
    """The weighted objective (1/n) * sum_i V(L_i; Theta) * L_i, or
    sum_i eta_i * L_i when normalizing."""
    out, _ = forward(w, batch.features)
    losses, _ = softmax_cross_entropy(out, batch.labels)
    raw = mw_forward(theta, losses)
    value = float(_coefficients(raw, normalize, tau) @ losses)
    if not np.isfinite(value):
        raise ValueError("non-finite weighted loss")
    return value


def virtual_update(
    state: TrainState,
    batch: Batch,
    alpha: float,
    normalize: bool = False,
    tau: float = 1e-8,
) -> tuple[np.ndarray, VirtualCache]:
    """One plain SGD step on the weighted loss, kept as a function of
    Theta: w_hat = w - alpha * sum_i coeff_i * grad_i. No momentum, no
    weight decay; those belong to the actual update."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    losses, grads = _per_sample_losses_grads(state.w, batch)
    raw = mw_forward(state.theta, losses)
    coeffs = _coefficients(raw, normalize, tau)
    w_hat = state.w.params - alpha * (coeffs @ grads)
    return w_hat, VirtualCache(losses, grads, raw, coeffs)


def meta_gradient_direct(
    state: TrainState,
    train_batch: Batch,
    meta_batch: Batch,
    alpha: float,
    normalize: bool = False,
    tau: float = 1e-8,
) -> MetaGradientReport:
    """Exact gradient of the mean meta loss at w_hat(Theta) w.r.t. Theta.

    Unnormalized, this is the closed form
    -(alpha/(n*m)) * sum_j (sum_i G_ij) * dV(L_j; Theta)/dTheta; under
    normalization the same chain rule runs through eta = raw/sum(raw)
    and picks up the quotient-rule coupling between samples.
    """
    w_hat, cache = virtual_update(state, train_batch, alpha, normalize, tau)
    net_hat = state.w.with_params(w_hat)
    meta_losses, meta_grads = _per_sample_losses_grads(net_hat, meta_batch)

    G = meta_grads @ cache.grads.T
    mean_G_per_j = G.mean(axis=0)
    _, jac = mw_jacobian(state.theta, cache.losses)

    n = train_batch.size
    if normalize:
        total = float(cache.raw_weights.sum())
        denom = total if total > 0.0 else tau
        if total > 0.0:
            # d(eta_j)/d(raw_k) = delta_jk/denom - raw_j/denom^2
            coupled = float(mean_G_per_j @ cache.raw_weights) / denom**2
            dmeta_draw = -alpha * (mean_G_per_j / denom - coupled)
        else:
            dmeta_draw = -alpha * mean_G_per_j / denom
        grad_theta = dmeta_draw @ jac
    else:
        grad_theta = -(alpha / n) * (mean_G_per_j @ jac)

    if not np.all(np.isfinite(grad_theta)):
        raise ValueError("non-finite meta-gradient")
    return MetaGradientReport(
        grad_theta=grad_theta,
        G=G,
        mean_G_per_j=mean_G_per_j,
        per_sample_weights=cache.raw_weights,
        train_losses=cache.losses,
        train_grads=cache.grads,
        w_hat=w_hat,
        weighted_loss=float(cache.coeffs @ cache.losses),
        meta_loss=float(meta_losses.mean()),
    )


def meta_gradient_fd(
    state: TrainState,
    train_batch: Batch,
    meta_batch: Batch,
    alpha: float,
    eps: float,
    normalize: bool = False,
    tau: float = 1e-8,
) -> np.ndarray:
    """Central-difference oracle for the meta-gradient: perturb each
    Theta coordinate, rebuild w_hat(Theta), re-evaluate the meta loss."""
    from metaweight.nnet import fd_gradient

    losses, grads = _per_sample_losses_grads(state.w, train_batch)

    def mean_meta_loss(theta_params: np.ndarray) -> float:
        mw = state.theta.with_theta(theta_params)
        raw = mw_forward(mw, losses)
        coeffs = _coefficients(raw, normalize, tau)
        w_hat = state.w.params - alpha * (coeffs @ grads)
        out, _ = forward(state.w.with_params(w_hat), meta_batch.features)
        meta_losses, _ = softmax_cross_entropy(out, meta_batch.labels)
        return float(meta_losses.mean())

    return fd_gradient(mean_meta_loss, state.theta.theta, eps)


def update_theta(state: TrainState, grad_theta: np.ndarray, beta: float) -> TrainState:
    """Plain SGD on the weighting net: Theta' = Theta - beta * grad_theta."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    grad_theta = np.asarray(grad_theta, dtype=np.float64)
    if grad_theta.shape != state.theta.theta.shape:
        raise ValueError("grad_theta shape mismatch")
    return TrainState(
        w=state.w,
        theta=state.theta.with_theta(state.theta.theta - beta * grad_theta),
        velocity=state.velocity,
        iteration=state.iteration,
    )


def update_classifier(
    state: TrainState,
    batch: Batch,
    alpha: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    normalize: bool = False,
    tau: float = 1e-8,
    losses: np.ndarray | None = None,
    grads: np.ndarray | None = None,
) -> TrainState:
    """The actual weighted step from w, with weights recomputed under the
    state's (already updated) Theta. Momentum and weight decay apply here
    and only here; zero both for the bare one-step form.

    losses/grads may be passed in from the virtual step of the same
    iteration (they depend on w only, not on Theta).
    """
    if losses is None or grads is None:
        losses, grads = _per_sample_losses_grads(state.w, batch)
    raw = mw_forward(state.theta, losses)
    coeffs = _coefficients(raw, normalize, tau)
    grad = coeffs @ grads
    new_params, new_velocity = sgd_step(
        state.w.params, grad, alpha, momentum=momentum, weight_decay=weight_decay, state=state.velocity
    )
    return TrainState(
        w=state.w.with_params(new_params),
        theta=state.theta,
        velocity=new_velocity,
        iteration=state.iteration,
    )


def train_step(
    state: TrainState,
    train_batch: Batch,
    meta_batch: Batch,
    config: TrainConfig,
    alpha: float | None = None,
) -> tuple[TrainState, MetaGradientReport]:
    """One full iteration: virtual step, Theta update, classifier update.

    `alpha` overrides config.alpha so the driver can apply its schedule.
    """
    if train_batch.size != config.n:
        raise ValueError(f"train batch size {train_batch.size} != config.n {config.n}")
    if meta_batch.size != config.m:
        raise ValueError(f"meta batch size {meta_batch.size} != config.m {config.m}")
    if alpha is None:
        alpha = config.alpha
    report = meta_gradient_direct(state, train_batch, meta_batch, alpha, config.normalize, config.tau)
    state = update_theta(state, report.grad_theta, config.beta)
    state = update_classifier(
        state,
        train_batch,
        alpha,
        momentum=config.classifier_momentum,
        weight_decay=config.classifier_weight_decay,
        normalize=config.normalize,
        tau=config.tau,
        losses=report.train_losses,
        grads=report.train_grads,
    )
    state.iteration += 1
    return state, report


def _evaluate(net: DenseNet, dataset: BiasedDataset) -> tuple[float, np.ndarray]:
    out, _ = forward(net, dataset.features)
    predictions = np.argmax(out, axis=1)
    confusion = confusion_matrix(dataset.true_labels, predictions, dataset.c)
    return float(np.trace(confusion) / dataset.n), confusion


def _check_meta_set(meta_set: BiasedDataset, train_set: BiasedDataset) -> list[str]:
    if meta_set.n == 0:
        raise ValueError("meta set is empty")
    if np.any(meta_set.corrupted):
        raise ValueError("meta set must have clean labels")
    counts = meta_set.class_counts
    if np.any(counts != counts[0]):
        raise ValueError(f"meta set must be class-balanced, got counts {counts.tolist()}")
    notes = []
    if meta_set.n > train_set.n:
        msg = f"meta set ({meta_set.n}) larger than train set ({train_set.n}); expected M << N"
        _warnings.warn(msg)
        notes.append(msg)
    return notes


def _pick_tracked(train_set: BiasedDataset, seed: int, count: int = TRACKED_SAMPLES) -> np.ndarray:
    """Sample ids whose weights get traced per epoch: noisy ones when
    available, otherwise arbitrary samples."""
    rng = rng_stream(seed, 200)
    pool = np.flatnonzero(train_set.corrupted)
    if pool.size == 0:
        pool = np.arange(train_set.n)
    take = min(count, pool.size)
    return np.sort(rng.choice(pool, size=take, replace=False))


def train(
    train_set: BiasedDataset,
    meta_set: BiasedDataset,
    test_set: BiasedDataset,
    config: TrainConfig,
    classifier_specs: Sequence[LayerSpec] | None = None,
    mwnet_hidden: tuple[int, ...] = (100,),
    weight_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    tracked_ids: np.ndarray | None = None,
    config_echo: dict | None = None,
) -> tuple[TrainState, RunReport]:
    """Run T iterations of the bilevel loop and assemble the run report.

    weight_fn replaces the weighting net with a fixed losses -> weights
    map (baselines); in that mode Theta is never touched and recorded
    meta-gradient norms are zero.
    """
    notes = _check_meta_set(meta_set, train_set)
    if config.n > train_set.n:
        raise ValueError(f"batch size n={config.n} exceeds train set size {train_set.n}")
    if config.m > meta_set.n:
        raise ValueError(f"meta batch size m={config.m} exceeds meta set size {meta_set.n}")
    if test_set.n == 0:
        raise ValueError("test set is empty")

    if classifier_specs is None:
        classifier_specs = (
            LayerSpec(train_set.d, 32, "relu"),
            LayerSpec(32, train_set.c, "identity"),
        )
    classifier = init_net(classifier_specs, derive_seed(config.seed, 1))
    mwnet = init_mwnet(mwnet_hidden, derive_seed(config.seed, 2))
    state = TrainState(w=classifier, theta=mwnet, velocity=np.zeros_like(classifier.params))

    if tracked_ids is None:
        tracked_ids = _pick_tracked(train_set, config.seed)
    tracked_ids = np.asarray(tracked_ids, dtype=np.int64)
    tracked_batch = Batch.from_dataset(train_set, tracked_ids)

    def batch_weights(net: DenseNet, theta: MWNet, batch: Batch) -> np.ndarray:
        out, _ = forward(net, batch.features)
        losses, _ = softmax_cross_entropy(out, batch.labels)
        return weight_fn(losses) if weight_fn is not None else mw_forward(theta, losses)

    rng_train = rng_stream(config.seed, 100)
    rng_meta = rng_stream(config.seed, 101)
    schedule = sorted(config.lr_schedule)
    iters_per_epoch = -(-train_set.n // config.n)

    alpha = config.alpha
    acc_hist, loss_hist, meta_hist, norm_hist = [], [], [], []
    tracked_hist = []
    epoch_losses, epoch_norms = [], []

    for t in range(config.T):
        for it, mult in schedule:
            if it == t:
                alpha *= mult
        idx, rng_train = sample_batch(train_set, config.n, rng_train)
        train_batch = Batch.from_dataset(train_set, idx)

        if weight_fn is None:
            midx, rng_meta = sample_batch(meta_set, config.m, rng_meta)
            meta_batch = Batch.from_dataset(meta_set, midx)
            state, report = train_step(state, train_batch, meta_batch, config, alpha=alpha)
            epoch_losses.append(report.weighted_loss)
            epoch_norms.append(float(np.linalg.norm(report.grad_theta)))
        else:
            losses, grads = _per_sample_losses_grads(state.w, train_batch)
            raw = np.asarray(weight_fn(losses), dtype=np.float64)
            if raw.shape != losses.shape or np.any(raw < 0) or not np.all(np.isfinite(raw)):
                raise ValueError("weight_fn must return finite nonnegative weights, one per sample")
            coeffs = _coefficients(raw, config.normalize, config.tau)
            grad = coeffs @ grads
            new_params, new_velocity = sgd_step(
                state.w.params,
                grad,
                alpha,
                momentum=config.classifier_momentum,
                weight_decay=config.classifier_weight_decay,
                state=state.velocity,
            )
            state = TrainState(state.w.with_params(new_params), state.theta, new_velocity, state.iteration + 1)
            epoch_losses.append(float(coeffs @ losses))
            epoch_norms.append(0.0)

        if (t + 1) % iters_per_epoch == 0:
            accuracy, _ = _evaluate(state.w, test_set)
            acc_hist.append(accuracy)
            loss_hist.append(float(np.mean(epoch_losses)))
            norm_hist.append(float(np.mean(epoch_norms)))
            meta_out, _ = forward(state.w, meta_set.features)
            meta_losses, _ = softmax_cross_entropy(meta_out, meta_set.observed_labels)
            meta_hist.append(float(np.mean(meta_losses)))
            tracked_hist.append(batch_weights(state.w, state.theta, tracked_batch))
            epoch_losses, epoch_norms = [], []

    _, final_confusion = _evaluate(state.w, test_set)

    full_batch = Batch.from_dataset(train_set, np.arange(train_set.n))
    out, _ = forward(state.w, full_batch.features)
    final_losses, _ = softmax_cross_entropy(out, full_batch.labels)
    final_weights = weight_fn(final_losses) if weight_fn is not None else mw_forward(state.theta, final_losses)

    hi = max(float(np.percentile(final_losses, CURVE_PERCENTILE)), 1e-6)
    grid = np.linspace(0.0, hi, WEIGHT_CURVE_POINTS)
    curve_weights = weight_fn(grid) if weight_fn is not None else mw_forward(state.theta, grid)

    tracked_matrix = np.array(tracked_hist) if tracked_hist else np.empty((0, tracked_ids.size))
    if tracked_matrix.shape[0] >= 2:
        stab_mean, stab_std = stability_from_history(tracked_matrix)
    else:
        stab_mean, stab_std = np.empty(0), np.empty(0)

    echo = asdict(config)
    echo["classifier_layers"] = [
        {"input_dim": s.input_dim, "output_dim": s.output_dim, "activation": s.activation}
        for s in classifier_specs
    ]
    echo["mwnet_hidden"] = list(mwnet_hidden)
    echo["lr_schedule"] = [list(entry) for entry in config.lr_schedule]
    if config_echo:
        echo.update(config_echo)

    report = RunReport(
        accuracy_history=np.array(acc_hist),
        train_loss_history=np.array(loss_hist),
        meta_loss_history=np.array(meta_hist),
        grad_norm_history=np.array(norm_hist),
        final_confusion=final_confusion,
        curve_losses=grid,
        curve_weights=np.asarray(curve_weights, dtype=np.float64),
        dist_ids=full_batch.ids,
        dist_weights=np.asarray(final_weights, dtype=np.float64),
        dist_corrupted=train_set.corrupted[full_batch.ids],
        tracked_ids=tracked_ids,
        tracked_weight_history=tracked_matrix,
        stability_mean=stab_mean,
        stability_std=stab_std,
        config_echo=echo,
        warnings=notes,
    )
    return state, report
