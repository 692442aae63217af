"""Experiment configuration, shipped presets, and the run/sweep drivers.

A run generates (or loads) clean/gold/test data, corrupts the training set,
runs every requested strategy for every seed, and writes a new run directory
containing results.csv, a markdown table and figures, all rendered from one
in-memory :class:`ResultTable`.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .baselines import STRATEGIES, ModelCache, StrategyConfigs, run_baseline
from .basemodel import BaseConfigs
from .core import Dataset
from .corruption import KINDS, CorruptionSpec, RuleTagger, apply_corruption
from .crf import TrainConfig
from .ecn import EcnTrainConfig, RelevantSubsetSpec
from .features import FEATURE_NAMES
from .io import load_dataset, load_tagset
from .metrics import CSV_HEADER, ResultRow
from .patch import PatchConfig
from .synth import GridGenConfig, SeqGenConfig, gen_synthetic_grids, gen_synthetic_sequences

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class StageError(RuntimeError):
    def __init__(self, stage: str, context: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed ({context}): {cause}")
        self.stage = stage


# ---------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    name: str
    kind: str = "sequence"
    generate: dict | None = field(default_factory=dict)
    paths: dict | None = None
    corruption: dict = field(default_factory=lambda: {"kind": "imprecise", "params": {"mode": "fixed"}})
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    rs: dict = field(default_factory=dict)
    crf: dict = field(default_factory=dict)
    patch: dict = field(default_factory=dict)
    ecn: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    record_runtime: bool = False

    def __post_init__(self):
        if self.kind not in ("sequence", "grid"):
            raise ConfigError(f"kind must be 'sequence' or 'grid', not {self.kind!r}")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for s in self.seeds:
            if not isinstance(s, int) or not 0 <= s < 2 ** 64:
                raise ConfigError(f"seed {s!r} is not an unsigned 64-bit integer")
        if self.paths is None and self.generate is None:
            raise ConfigError("either 'generate' or 'paths' must be given")
        if self.corruption.get("kind") not in KINDS:
            raise ConfigError(f"unknown corruption kind {self.corruption.get('kind')!r}")
        try:
            CorruptionSpec(self.corruption["kind"], dict(self.corruption.get("params", {})), 0)
            self.strategy_configs(0)
            self.gen_config(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # -- derived objects
    def gen_config(self, seed: int):
        if self.paths is not None:
            return None
        cls = SeqGenConfig if self.kind == "sequence" else GridGenConfig
        return cls(**{**self.generate, "seed": seed})

    def corruption_spec(self, seed: int) -> CorruptionSpec:
        return CorruptionSpec(self.corruption["kind"], dict(self.corruption.get("params", {})), seed)

    def strategy_configs(self, seed: int) -> StrategyConfigs:
        base = BaseConfigs(TrainConfig(**{**self.crf, "seed": seed}), PatchConfig(**{**self.patch, "seed": seed}))
        return StrategyConfigs(base, EcnTrainConfig(**{**self.ecn, "seed": seed}),
                               RelevantSubsetSpec(**{**self.rs, "seed": seed}))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(obj) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "name" not in obj:
            raise ConfigError("config needs a 'name'")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(obj)


@dataclass
class SweepConfig:
    base: ExperimentConfig
    axis: str = "neighbor_radius_k"
    values: list = field(default_factory=lambda: [0, 1, 2, 3, 5, 8])
    focus_class: str | None = None

    def __post_init__(self):
        if self.axis not in ("neighbor_radius_k", "n_token_features"):
            raise ConfigError("sweep axis must be 'neighbor_radius_k' or 'n_token_features'")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if list(self.values) != sorted(self.values) or len(set(self.values)) != len(self.values):
            raise ConfigError("sweep values must be strictly ascending")
        if any(v < 0 for v in self.values):
            raise ConfigError("sweep values must be >= 0")
        if self.axis == "n_token_features" and max(self.values) > len(FEATURE_NAMES):
            raise ConfigError(f"at most {len(FEATURE_NAMES)} token features exist")
        if self.base.kind != "sequence":
            raise ConfigError("sweeps are defined for sequence tasks")

    @property
    def variant(self) -> str:
        return "y_only" if self.axis == "neighbor_radius_k" else "x_only"

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "axis": self.axis, "values": list(self.values),
                "focus_class": self.focus_class}

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepConfig":
        base = obj.get("base")
        if isinstance(base, str):
            base = preset(base).to_dict()
        if not isinstance(base, dict):
            raise ConfigError("sweep config needs a 'base' experiment (object or preset name)")
        return cls(ExperimentConfig.from_dict(base), obj.get("axis", "neighbor_radius_k"),
                   list(obj.get("values", [0, 1, 2, 3, 5, 8])), obj.get("focus_class"))


# ---------------------------------------------------------------- presets

_GRID_MIS = {"kind": "grid_misclassify", "params": {"fraction": 0.75, "from_label": "vehicle", "to_label": "road"}}

PRESETS: dict[str, dict] = {
    "gmb-im-fixed-desk": {"corruption": {"kind": "imprecise", "params": {"mode": "fixed"}}},
    "gmb-im-r-desk": {"corruption": {"kind": "imprecise", "params": {"mode": "random_half"}}},
    "gmb-im-v-desk": {"corruption": {"kind": "imprecise", "params": {"mode": "variable"}}},
    "gmb-im-rv-desk": {"corruption": {"kind": "imprecise", "params": {"mode": "random_variable"}}},
    "gmb-mi-rand-desk": {"corruption": {"kind": "missing_random", "params": {"drop_rate": 0.3}}},
    "gmb-mi-syst-desk": {"corruption": {"kind": "missing_systematic", "params": {}}},
    "grid-mis-50-desk": {"kind": "grid", "corruption": {**_GRID_MIS, "params": {**_GRID_MIS["params"], "fraction": 0.5}}},
    "grid-mis-75-desk": {"kind": "grid", "corruption": _GRID_MIS},
    "grid-coarsen-desk": {"kind": "grid", "corruption": {"kind": "grid_coarsen", "params": {"erode_px": 2}}},
}
# the grid names stand for the synthetic scenes; real Cityscapes data is not supported
ALIASES = {
    "cityscapes-mis-50": "grid-mis-50-desk", "cityscapes-mis-75": "grid-mis-75-desk",
    "cityscapes-coarsen": "grid-coarsen-desk",
}
# full-size sequence presets read a user-supplied corpus from ECN_LAB_GMB_DIR
REAL_DATA = {name[:-len("-desk")]: name for name in PRESETS if name.startswith("gmb-")}
REAL_FILES = {"train": "train.conll", "gold": "gold.conll", "test": "test.conll", "tagset": "tagset.txt"}
DEFAULT_SEEDS = [0, 1, 2]


def preset_names() -> list[str]:
    return sorted(PRESETS) + sorted(ALIASES) + sorted(REAL_DATA)


def preset(name: str, seeds: list | None = None) -> ExperimentConfig:
    if name in REAL_DATA:
        root = gmb_data_dir()
        if root is None:
            raise ConfigError(f"preset {name!r} needs the real corpus: set ECN_LAB_GMB_DIR "
                              f"(or use {REAL_DATA[name]!r})")
        body = copy.deepcopy(PRESETS[REAL_DATA[name]])
        body["generate"] = None
        body["paths"] = {k: str(root / f) for k, f in REAL_FILES.items()}
        body["seeds"] = list(seeds or DEFAULT_SEEDS)
        return ExperimentConfig(name=name, **body)
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    body = copy.deepcopy(PRESETS[key])
    body.setdefault("seeds", list(seeds or DEFAULT_SEEDS))
    if seeds is not None:
        body["seeds"] = list(seeds)
    return ExperimentConfig(name=key, **body)


# ---------------------------------------------------------------- results

@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    record_runtime: bool = False

    def add(self, rows) -> None:
        self.rows.extend(rows)

    def datasets(self) -> list[str]:
        return list(dict.fromkeys(r.dataset for r in self.rows))

    def strategies(self) -> list[str]:
        present = {r.strategy for r in self.rows}
        return [s for s in STRATEGIES if s in present]

    def metrics(self) -> list[str]:
        return list(dict.fromkeys(r.metric for r in self.rows))

    def scores(self, strategy: str, metric: str, dataset: str | None = None) -> list[float]:
        return [r.score for r in self.rows if r.strategy == strategy and r.metric == metric
                and (dataset is None or r.dataset == dataset)]

    def mean(self, strategy: str, metric: str, dataset: str | None = None) -> float:
        vals = self.scores(strategy, metric, dataset)
        if not vals:
            raise KeyError(f"no scores for {strategy}/{metric}")
        return float(np.mean(vals))

    def headline_metric(self) -> str:
        ms = self.metrics()
        return next((m for m in ms if m.startswith("weighted")), ms[0] if ms else "weighted_f1")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.as_csv(self.record_runtime))
        return buf.getvalue()

    def runtimes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("dataset", "strategy", "seed", "runtime_s"))
        seen = set()
        for r in self.rows:
            key = (r.dataset, r.strategy, r.seed)
            if key not in seen and r.runtime_s is not None:
                seen.add(key)
                w.writerow((r.dataset, r.strategy, r.seed, f"{r.runtime_s:.3f}"))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"results CSV header must be {','.join(CSV_HEADER)}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            ds, strat, metric, score, seed, rt = rec
            rows.append(ResultRow(ds, strat, metric, float(score), int(seed), float(rt) if rt else None))
        return cls(rows, any(r.runtime_s is not None for r in rows))

    def to_markdown(self, metric: str | None = None) -> str:
        """Datasets as rows, strategies as columns, mean (± std over seeds)."""
        metric = metric or self.headline_metric()
        strategies = self.strategies()
        lines = [f"Metric: {metric} (mean over seeds, ± std when more than one seed)", "",
                 "| dataset | " + " | ".join(strategies) + " |",
                 "|---|" + "---|" * len(strategies)]
        for ds in self.datasets():
            cells = []
            for s in strategies:
                vals = self.scores(s, metric, ds)
                if not vals:
                    cells.append("")
                elif len(vals) == 1:
                    cells.append(f"{vals[0]:.3f}")
                else:
                    cells.append(f"{np.mean(vals):.3f} ± {np.std(vals):.3f}")
            lines.append(f"| {ds} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- data

def gmb_data_dir() -> Path | None:
    value = os.environ.get("ECN_LAB_GMB_DIR")
    return Path(value) if value else None


def load_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """(clean train, gold, test) for one seed."""
    if cfg.paths is not None:
        p = cfg.paths
        missing = [k for k in ("train", "gold", "test", "tagset") if k not in p]
        if missing:
            raise ConfigError(f"paths config is missing {missing}")
        for k in ("train", "gold", "test", "tagset"):
            if not Path(p[k]).exists():
                raise ConfigError(f"{k} path does not exist: {p[k]}")
        tagset = load_tagset(p["tagset"])
        return (load_dataset(p["train"], tagset, "clean"), load_dataset(p["gold"], tagset, "gold"),
                load_dataset(p["test"], tagset, "test"))
    gen = cfg.gen_config(seed)
    if cfg.kind == "sequence":
        train, gold, test, _ = gen_synthetic_sequences(gen)
    else:
        train, gold, test, _ = gen_synthetic_grids(gen)
    return train, gold, test


def corrupt(cfg: ExperimentConfig, train: Dataset, seed: int):
    spec = cfg.corruption_spec(seed)
    tagger = RuleTagger() if spec.kind == "missing_systematic" else None
    return apply_corruption(train, spec, tagger)


# ---------------------------------------------------------------- runs

def _stage(name: str, context: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - rewrapped with stage context
        raise StageError(name, context, exc) from exc


def _run_seed(cfg: ExperimentConfig, seed: int, strategies) -> list[ResultRow]:
    ctx = f"{cfg.name}, seed {seed}"
    train, gold, test = _stage("data", ctx, load_data, cfg, seed)
    record = _stage("corrupt", ctx, corrupt, cfg, train, seed)
    scfg = cfg.strategy_configs(seed)
    cache = ModelCache()
    rows = []
    for strategy in strategies:
        log.info("%s seed=%d strategy=%s", cfg.name, seed, strategy)
        rows.extend(_stage(strategy, ctx, run_baseline, strategy, record.corrupted, gold, test, train,
                           scfg, dataset_name=cfg.name, seed=seed, cache=cache))
    return rows


def max_workers() -> int:
    value = os.environ.get("ECN_LAB_THREADS", "")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        raise ConfigError(f"ECN_LAB_THREADS must be an integer, got {value!r}") from None


def compute_results(cfg: ExperimentConfig) -> ResultTable:
    """All strategies for all seeds; seeds run in parallel up to ECN_LAB_THREADS processes."""
    workers = min(max_workers(), len(cfg.seeds))
    table = ResultTable(record_runtime=cfg.record_runtime)
    if workers <= 1:
        for seed in cfg.seeds:
            table.add(_run_seed(cfg, seed, cfg.strategies))
        return table
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_seed, cfg, seed, cfg.strategies) for seed in cfg.seeds]
        for fut in futures:  # collected in seed order, so output is independent of scheduling
            table.add(fut.result())
    return table


def new_run_dir(out: Path, name: str) -> Path:
    """Fresh timestamped directory under ``out``; never reuses an existing one."""
    out.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    n = 0
    while True:
        candidate = out / (f"{name}-{stamp}" + (f"-{n}" if n else ""))
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            n += 1


@dataclass
class RunOutput:
    table: ResultTable
    run_dir: Path | None
    files: dict = field(default_factory=dict)


def write_outputs(table: ResultTable, run_dir: Path, config: dict | None = None, figures: bool = True) -> dict:
    files = {"results": run_dir / "results.csv", "table": run_dir / "results.md"}
    files["results"].write_text(table.to_csv(), encoding="utf-8")
    files["table"].write_text(table.to_markdown(), encoding="utf-8")
    if any(r.runtime_s is not None for r in table.rows):
        files["runtimes"] = run_dir / "runtimes.csv"
        files["runtimes"].write_text(table.runtimes_csv(), encoding="utf-8")
    if config is not None:
        files["config"] = run_dir / "config.json"
        files["config"].write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if figures and table.rows:
        from .plotting import strategy_bar_chart
        files["figure"] = run_dir / "scores.svg"
        strategy_bar_chart(table, files["figure"])
    return files


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None, figures: bool = True) -> RunOutput:
    start = time.perf_counter()
    table = compute_results(cfg)
    log.info("%s finished in %.1fs", cfg.name, time.perf_counter() - start)
    if out is None:
        return RunOutput(table, None)
    run_dir = new_run_dir(Path(out), cfg.name)
    return RunOutput(table, run_dir, write_outputs(table, run_dir, cfg.to_dict(), figures))


# ---------------------------------------------------------------- sweeps

SWEEP_HEADER = ("axis", "value", "strategy", "metric", "score", "seed")


@dataclass
class SweepResult:
    axis: str
    points: list = field(default_factory=list)  # (value, strategy, metric, score, seed)

    def series(self, strategy: str, metric: str) -> tuple[list, list]:
        """Axis values and seed-mean scores for one strategy."""
        by_value: dict = {}
        for value, strat, m, score, _ in self.points:
            if strat == strategy and m == metric:
                by_value.setdefault(value, []).append(score)
        xs = sorted(v for v in by_value if v is not None)
        return xs, [float(np.mean(by_value[v])) for v in xs]

    def baseline(self, strategy: str, metric: str) -> float:
        vals = [s for v, st, m, s, _ in self.points if st == strategy and m == metric]
        return float(np.mean(vals))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for value, strat, metric, score, seed in self.points:
            w.writerow((self.axis, "" if value is None else value, strat, metric, f"{score:.6f}", seed))
        return buf.getvalue()


def run_sweep(cfg: SweepConfig, out: str | os.PathLike | None = None, figures: bool = True):
    """ECN (y_only for k, x_only for feature count) at each axis value, plus
    corrupted-only and gold-only baselines once per seed."""
    from .basemodel import predict_labels, train_base
    from .ecn import ecn_pipeline
    from .metrics import class_f1, score_pair

    base = cfg.base
    result = SweepResult(cfg.axis)
    for seed in base.seeds:
        ctx = f"sweep {base.name}, seed {seed}"
        train, gold, test = _stage("data", ctx, load_data, base, seed)
        corrupted = _stage("corrupt", ctx, corrupt, base, train, seed).corrupted
        scfg = base.strategy_configs(seed)
        focus = test.tagset.index(cfg.focus_class) if cfg.focus_class else None

        def scores_of(model):
            pred = test.with_labels(predict_labels(model, test))
            out_scores = score_pair(pred, test)
            if focus is not None:
                out_scores[f"f1_{cfg.focus_class}"] = class_f1(pred, test, focus)
            return out_scores

        f = _stage("corrupted_only", ctx, train_base, corrupted, scfg.base)
        for metric, score in scores_of(f).items():
            result.points.append((None, "corrupted_only", metric, float(score), seed))
        f_gold = _stage("gold_only", ctx, train_base, gold, scfg.base)
        for metric, score in scores_of(f_gold).items():
            result.points.append((None, "gold_only", metric, float(score), seed))
        for value in cfg.values:
            if cfg.axis == "neighbor_radius_k":
                spec = replace(scfg.rs, variant="y_only", k=int(value))
            else:
                spec = replace(scfg.rs, variant="x_only", n_features=int(value))
            res = _stage(f"ecn@{value}", ctx, ecn_pipeline, corrupted, gold, test, spec, scfg.base, scfg.ecn,
                         base_model=f, dataset_name=base.name, seed=seed)
            for metric, score in scores_of(res.final).items():
                result.points.append((int(value), f"ecn_{cfg.variant}", metric, float(score), seed))
    files = {}
    if out is not None:
        run_dir = new_run_dir(Path(out), f"sweep-{base.name}")
        files["sweep"] = run_dir / "sweep.csv"
        files["sweep"].write_text(result.to_csv(), encoding="utf-8")
        files["config"] = run_dir / "config.json"
        files["config"].write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if figures:
            from .plotting import sweep_plot
            files["figure"] = run_dir / "sweep.svg"
            metric = f"f1_{cfg.focus_class}" if cfg.focus_class else (
                "weighted_f1" if base.kind == "sequence" else "weighted_iou")
            sweep_plot(result, metric, files["figure"])
        return result, run_dir, files
    return result, None, files
