"""Base-model dispatch: a CRF for sequence datasets, a patch classifier for grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset
from .crf import CrfModel, TrainConfig, crf_predict, crf_predict_marginals, crf_train
from .patch import PatchClassifier, PatchConfig, patch_predict_dataset, patch_train


@dataclass
class BaseConfigs:
    crf: TrainConfig = field(default_factory=TrainConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)


def train_base(ds: Dataset, cfgs: BaseConfigs, seed: int | None = None):
    """Fresh base model for ``ds``; ``seed`` overrides the configured training seed."""
    if ds.kind == "grid":
        cfg = cfgs.patch if seed is None else _with_seed(cfgs.patch, seed)
        return patch_train(ds, cfg)
    cfg = cfgs.crf if seed is None else _with_seed(cfgs.crf, seed)
    return crf_train(ds, cfg)


def _with_seed(cfg, seed):
    return type(cfg)(**{**cfg.__dict__, "seed": seed})


def predict_labels(model, ds: Dataset) -> list[np.ndarray]:
    if ds.tagset != model.tagset:
        raise ValueError("dataset tag set does not match the model")
    if isinstance(model, CrfModel):
        return [np.asarray(p, dtype=np.int64) for p in crf_predict(model, ds)]
    return [p.argmax(axis=2) for p in patch_predict_dataset(model, ds)]


def predict_distributions(model, ds: Dataset) -> list[np.ndarray]:
    """Per-element label distributions: (d, K) for sequences, (H, W, K) for grids."""
    if ds.tagset != model.tagset:
        raise ValueError("dataset tag set does not match the model")
    if isinstance(model, CrfModel):
        return crf_predict_marginals(model, ds)
    return patch_predict_dataset(model, ds)


def relabel(model, ds: Dataset, role: str | None = None) -> Dataset:
    return ds.with_labels(predict_labels(model, ds), role=role)


def is_base_model(model) -> bool:
    return isinstance(model, (CrfModel, PatchClassifier))
