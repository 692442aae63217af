"""Comparison strategies: the reference points every ECN variant is scored against."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from .basemodel import BaseConfigs, predict_labels, relabel, train_base
from .core import Dataset, DatasetError
from .ecn import EcnTrainConfig, RelevantSubsetSpec, ecn_pipeline
from .metrics import ResultRow, score_pair

STRATEGIES = ("clean", "corrupted_only", "gold_only", "combined", "pseudolabel",
              "ecn_x_only", "ecn_y_only", "ecn_full")
ECN_VARIANTS = {"ecn_x_only": "x_only", "ecn_y_only": "y_only", "ecn_full": "full"}


@dataclass(frozen=True)
class BaselineStrategy:
    kind: str

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")

    @property
    def is_ecn(self) -> bool:
        return self.kind in ECN_VARIANTS


@dataclass
class StrategyConfigs:
    base: BaseConfigs = field(default_factory=BaseConfigs)
    ecn: EcnTrainConfig = field(default_factory=EcnTrainConfig)
    rs: RelevantSubsetSpec = field(default_factory=RelevantSubsetSpec)


class ModelCache:
    """Base models shared between strategies of one run (f on corrupted, f on gold)."""

    def __init__(self):
        self._models: dict = {}

    def get(self, key: str, build):
        if key not in self._models:
            self._models[key] = build()
        return self._models[key]


def _rows(scores: dict, dataset: str, strategy: str, seed: int, runtime: float) -> list[ResultRow]:
    return [ResultRow(dataset, strategy, metric, float(value), seed, runtime) for metric, value in scores.items()]


def _evaluate(model, test: Dataset) -> dict:
    return score_pair(test.with_labels(predict_labels(model, test)), test)


def run_baseline(strategy, corrupted: Dataset, gold: Dataset, test: Dataset, clean: Dataset | None = None,
                 cfgs: StrategyConfigs | None = None, dataset_name: str = "custom", seed: int = 0,
                 cache: ModelCache | None = None) -> list[ResultRow]:
    """Train the strategy's final model, score it on ``test``; one row per metric."""
    strategy = strategy if isinstance(strategy, BaselineStrategy) else BaselineStrategy(strategy)
    cfgs = cfgs or StrategyConfigs()
    cache = cache or ModelCache()
    tagsets = {corrupted.tagset, gold.tagset, test.tagset} | ({clean.tagset} if clean is not None else set())
    if len(tagsets) != 1:
        raise ValueError("all datasets must share one tag set")
    kind = strategy.kind
    start = time.perf_counter()

    def f_corrupted():
        return cache.get("corrupted", lambda: train_base(corrupted, cfgs.base))

    def f_gold():
        if len(gold) == 0:
            raise DatasetError("gold set is empty")
        return cache.get("gold", lambda: train_base(gold, cfgs.base))

    if kind == "clean":
        if clean is None:
            raise ValueError("the clean strategy needs the uncorrupted training set")
        scores = _evaluate(train_base(clean, cfgs.base), test)
    elif kind == "corrupted_only":
        scores = _evaluate(f_corrupted(), test)
    elif kind == "gold_only":
        scores = _evaluate(f_gold(), test)
    elif kind == "combined":
        scores = _evaluate(train_base(corrupted.concat(gold), cfgs.base), test)
    elif kind == "pseudolabel":
        relabeled = relabel(f_gold(), corrupted, role="corrupted")
        scores = _evaluate(train_base(relabeled, cfgs.base), test)
    else:
        spec = replace(cfgs.rs, variant=ECN_VARIANTS[kind])
        result = ecn_pipeline(corrupted, gold, test, spec, cfgs.base, cfgs.ecn, base_model=f_corrupted(),
                              dataset_name=dataset_name, strategy=kind, seed=seed)
        scores = result.scores
    return _rows(scores, dataset_name, kind, seed, time.perf_counter() - start)
