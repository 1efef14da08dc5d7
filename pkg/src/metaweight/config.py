"""Experiment configuration: one strict JSON document.

Unknown keys anywhere in the document are errors, so a typoed
hyperparameter fails loudly instead of silently training with defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from metaweight.biasgen import FLIP, UNIFORM, ImbalanceSpec, NoiseSpec
from metaweight.metaopt import TrainConfig


class ConfigError(ValueError):
    """Raised for malformed or contradictory experiment configs."""


def _require_keys(block: dict, allowed: set[str], required: set[str], context: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{context} must be a JSON object")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}")
    missing = required - set(block)
    if missing:
        raise ConfigError(f"missing required key(s) {sorted(missing)} in {context}")


def _number(block: dict, key: str, context: str, default=None, lo=None, integer=False):
    if key not in block:
        return default
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context}.{key} must be a number")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{context}.{key} must be an integer")
        value = int(value)
    if lo is not None and value < lo:
        raise ConfigError(f"{context}.{key} must be >= {lo}")
    return value


@dataclass(frozen=True)
class DatasetBlock:
    kind: str
    classes: int = 3
    dim: int = 2
    per_class: int = 200
    radius: float = 2.0
    spread: float = 1.0
    test_per_class: int = 200
    path: str = ""
    test_fraction: float = 0.2


@dataclass(frozen=True)
class BaselineBlock:
    kind: str
    gamma: float = 1.0
    lam: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetBlock
    meta_per_class: int
    optim: TrainConfig
    seeds: tuple[int, ...]
    imbalance_factor: float | None = None
    noise: NoiseSpec | None = None
    classifier_hidden: tuple[int, ...] = (32,)
    mwnet_hidden: tuple[int, ...] = (100,)
    out_dir: str = ""
    plots: bool = False
    baselines: tuple[BaselineBlock, ...] = ()
    raw: dict = field(default_factory=dict)

    def imbalance_spec(self, base_count: int) -> ImbalanceSpec | None:
        if self.imbalance_factor is None:
            return None
        return ImbalanceSpec(base_count=base_count, factor=self.imbalance_factor)


def parse_config(doc: dict) -> ExperimentConfig:
    _require_keys(
        doc,
        {"dataset", "bias", "meta", "model", "optim", "output", "seeds", "baselines"},
        {"dataset", "meta", "optim", "seeds"},
        "config",
    )

    ds_block = doc["dataset"]
    _require_keys(
        ds_block,
        {"kind", "classes", "dim", "per_class", "radius", "spread", "test_per_class", "path", "test_fraction"},
        {"kind"},
        "dataset",
    )
    kind = ds_block["kind"]
    if kind == "gaussians":
        dataset = DatasetBlock(
            kind=kind,
            classes=_number(ds_block, "classes", "dataset", 3, lo=2, integer=True),
            dim=_number(ds_block, "dim", "dataset", 2, lo=1, integer=True),
            per_class=_number(ds_block, "per_class", "dataset", 200, lo=1, integer=True),
            radius=_number(ds_block, "radius", "dataset", 2.0, lo=0),
            spread=_number(ds_block, "spread", "dataset", 1.0, lo=0),
            test_per_class=_number(ds_block, "test_per_class", "dataset", 200, lo=1, integer=True),
        )
        if dataset.dim != 2:
            raise ConfigError("dataset.dim must be 2 for gaussians on a circle of class means")
    elif kind == "file":
        if not ds_block.get("path"):
            raise ConfigError("dataset.path required when dataset.kind is 'file'")
        dataset = DatasetBlock(
            kind=kind,
            path=str(ds_block["path"]),
            test_fraction=_number(ds_block, "test_fraction", "dataset", 0.2, lo=0.0),
        )
        if not 0.0 < dataset.test_fraction < 1.0:
            raise ConfigError("dataset.test_fraction must be in (0, 1)")
    else:
        raise ConfigError(f"dataset.kind must be 'gaussians' or 'file', got {kind!r}")

    imbalance_factor = None
    noise = None
    if doc.get("bias") is not None:
        bias = doc["bias"]
        _require_keys(bias, {"imbalance", "noise"}, set(), "bias")
        if bias.get("imbalance") is not None:
            imb = bias["imbalance"]
            _require_keys(imb, {"factor"}, {"factor"}, "bias.imbalance")
            imbalance_factor = _number(imb, "factor", "bias.imbalance", lo=1)
        if bias.get("noise") is not None:
            nz = bias["noise"]
            _require_keys(nz, {"kind", "rate"}, {"kind", "rate"}, "bias.noise")
            if nz["kind"] not in (UNIFORM, FLIP):
                raise ConfigError(f"bias.noise.kind must be '{UNIFORM}' or '{FLIP}'")
            try:
                noise = NoiseSpec(kind=nz["kind"], rate=_number(nz, "rate", "bias.noise"), seed=0)
            except ValueError as exc:
                raise ConfigError(f"bias.noise: {exc}") from exc

    if noise is not None and noise.kind == FLIP and kind == "gaussians" and dataset.classes < 3:
        raise ConfigError("flip noise needs at least 3 classes")

    meta = doc["meta"]
    _require_keys(meta, {"per_class"}, {"per_class"}, "meta")
    meta_per_class = _number(meta, "per_class", "meta", lo=0, integer=True)

    classifier_hidden = (32,)
    mwnet_hidden = (100,)
    if doc.get("model") is not None:
        model = doc["model"]
        _require_keys(model, {"classifier_hidden", "mwnet_hidden"}, set(), "model")
        if "classifier_hidden" in model:
            classifier_hidden = _int_tuple(model["classifier_hidden"], "model.classifier_hidden")
        if "mwnet_hidden" in model:
            mwnet_hidden = _int_tuple(model["mwnet_hidden"], "model.mwnet_hidden")

    optim_block = doc["optim"]
    _require_keys(
        optim_block,
        {"alpha", "beta", "n", "m", "T", "tau", "normalize", "momentum", "weight_decay", "lr_schedule"},
        {"alpha", "beta", "n", "m", "T"},
        "optim",
    )
    schedule = optim_block.get("lr_schedule", [])
    if not isinstance(schedule, list) or not all(
        isinstance(e, list) and len(e) == 2 for e in schedule
    ):
        raise ConfigError("optim.lr_schedule must be a list of [iteration, multiplier] pairs")
    normalize = optim_block.get("normalize", False)
    if not isinstance(normalize, bool):
        raise ConfigError("optim.normalize must be a boolean")
    try:
        optim = TrainConfig(
            alpha=_number(optim_block, "alpha", "optim"),
            beta=_number(optim_block, "beta", "optim"),
            n=_number(optim_block, "n", "optim", integer=True),
            m=_number(optim_block, "m", "optim", integer=True),
            T=_number(optim_block, "T", "optim", integer=True),
            tau=_number(optim_block, "tau", "optim", 1e-8),
            normalize=normalize,
            classifier_momentum=_number(optim_block, "momentum", "optim", 0.0),
            classifier_weight_decay=_number(optim_block, "weight_decay", "optim", 0.0),
            lr_schedule=tuple((int(it), float(mult)) for it, mult in schedule),
        )
    except ValueError as exc:
        raise ConfigError(f"optim: {exc}") from exc

    out_dir = ""
    plots = False
    if doc.get("output") is not None:
        output = doc["output"]
        _require_keys(output, {"dir", "plots"}, set(), "output")
        out_dir = str(output.get("dir", ""))
        plots = output.get("plots", False)
        if not isinstance(plots, bool):
            raise ConfigError("output.plots must be a boolean")

    seeds = doc["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
    ):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")

    baselines = []
    for k, entry in enumerate(doc.get("baselines") or []):
        _require_keys(entry, {"kind", "gamma", "lam"}, {"kind"}, f"baselines[{k}]")
        if entry["kind"] not in ("uniform", "ramp", "step"):
            raise ConfigError(f"baselines[{k}].kind must be uniform, ramp or step")
        gamma = _number(entry, "gamma", f"baselines[{k}]", 1.0)
        lam = _number(entry, "lam", f"baselines[{k}]", 1.0)
        if entry["kind"] == "ramp" and gamma < 0:
            raise ConfigError(f"baselines[{k}].gamma must be >= 0")
        if entry["kind"] == "step" and lam <= 0:
            raise ConfigError(f"baselines[{k}].lam must be > 0")
        baselines.append(BaselineBlock(kind=entry["kind"], gamma=gamma, lam=lam))

    return ExperimentConfig(
        dataset=dataset,
        meta_per_class=meta_per_class,
        optim=optim,
        seeds=tuple(seeds),
        imbalance_factor=imbalance_factor,
        noise=noise,
        classifier_hidden=classifier_hidden,
        mwnet_hidden=mwnet_hidden,
        out_dir=out_dir,
        plots=plots,
        baselines=tuple(baselines),
        raw=doc,
    )


def _int_tuple(value, context: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not value or not all(
        isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in value
    ):
        raise ConfigError(f"{context} must be a non-empty list of positive integers")
    return tuple(value)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(doc)
