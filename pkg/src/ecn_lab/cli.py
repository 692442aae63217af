"""``ecn-lab`` command line: gen, corrupt, train, correct, evaluate, run, sweep, report.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("ecn_lab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return obj


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key] = _parse_value(value)
    return out


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ext(kind: str) -> str:
    return ".ecngrid" if kind == "grid" else ".conll"


def _existing(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load(path, tagset_path, role: str):
    from .io import load_dataset, load_tagset
    tagset = load_tagset(_existing(tagset_path, "--tagset"))
    return load_dataset(_existing(path, "dataset"), tagset, role)


# ---------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    from .io import save_dataset, save_tagset
    from .synth import GridGenConfig, SeqGenConfig, gen_synthetic_grids, gen_synthetic_sequences

    params = {**_read_json(args.config), **_params(args.param)}
    params["seed"] = args.seed if args.seed is not None else params.get("seed", 0)
    try:
        cfg = (GridGenConfig if args.kind == "grid" else SeqGenConfig)(**params)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad generator config: {exc}") from None
    gen = gen_synthetic_grids if args.kind == "grid" else gen_synthetic_sequences
    train, gold, test, tagset = gen(cfg)
    out = _out_dir(args, "data")
    save_tagset(tagset, out / "tagset.txt")
    for name, ds in (("train", train), ("gold", gold), ("test", test)):
        save_dataset(ds, out / f"{name}{_ext(args.kind)}")
    (out / "gen.json").write_text(json.dumps({"kind": args.kind, **cfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(train)}/{len(gold)}/{len(test)} {args.kind} samples to {out}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    from .corruption import CorruptionError, CorruptionSpec, RuleTagger, apply_corruption
    from .io import save_dataset

    obj = _read_json(args.config)
    kind = args.kind or obj.get("kind")
    if kind is None:
        raise UsageError("corruption kind is required (--kind or a config with 'kind')")
    params = {**obj.get("params", {}), **_params(args.param)}
    seed = args.seed if args.seed is not None else int(obj.get("seed", 0))
    try:
        spec = CorruptionSpec(kind, params, seed)
    except CorruptionError as exc:
        raise UsageError(str(exc)) from None
    ds = _load(args.data, args.tagset, "clean")
    record = apply_corruption(ds, spec, RuleTagger() if kind == "missing_systematic" else None)
    out = _out_dir(args, "corrupted")
    target = out / f"corrupted{_ext(ds.kind)}"
    save_dataset(record.corrupted, target)
    applied = CorruptionSpec.from_json(record.spec)
    meta = {"spec": record.spec, "canonical": applied.canonical_json(),
            "digest": record.spec_digest, "input_sha256": _file_sha256(args.data),
            "corrupted_fraction": record.corrupted_fraction()}
    (out / "corruption.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"{target}: {record.corrupted_fraction():.4f} of elements changed, spec {meta['digest'][:16]}")
    return EXIT_OK


def _base_configs(cfg: dict, seed):
    from .basemodel import BaseConfigs
    from .crf import TrainConfig
    from .patch import PatchConfig
    crf, patch = dict(cfg.get("crf", {})), dict(cfg.get("patch", {}))
    if seed is not None:
        crf["seed"] = patch["seed"] = seed
    return BaseConfigs(TrainConfig(**crf), PatchConfig(**patch))


def cmd_train(args) -> int:
    from .basemodel import train_base
    from .ecn import EcnTrainConfig, RelevantSubsetSpec, ecn_train
    from .io import load_model, save_model

    cfg = _read_json(args.config)
    try:
        if args.stage == "base":
            ds = _load(args.data, args.tagset, "corrupted")
            base_cfgs = _base_configs(cfg, args.seed)
            model = train_base(ds, base_cfgs)
        else:
            base = load_model(_existing(args.base, "--base"))
            gold = _load(args.data, args.tagset, "gold")
            rs = {**cfg.get("rs", {}), **_params(args.param)}
            ecn = dict(cfg.get("ecn", {}))
            if args.seed is not None:
                rs["seed"] = ecn["seed"] = args.seed
            spec, ecn_cfg = RelevantSubsetSpec(**rs), EcnTrainConfig(**ecn)
            model = ecn_train(base, gold, spec, ecn_cfg)
    except TypeError as exc:
        raise UsageError(f"bad training config: {exc}") from None
    target = Path(args.model or (_out_dir(args, "models") / f"{args.stage}.json"))
    target.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, target)
    print(f"wrote {args.stage} model to {target}")
    return EXIT_OK


def cmd_correct(args) -> int:
    from .ecn import EcnModel, ecn_correct, model_digest
    from .io import load_model, save_dataset

    base = load_model(_existing(args.base, "--base"))
    g = load_model(_existing(args.ecn, "--ecn"))
    if not isinstance(g, EcnModel):
        raise UsageError(f"{args.ecn} is not an error-correcting model")
    ds = _load(args.data, args.tagset, "corrupted")
    corrected = ecn_correct(base, g, ds)
    out = _out_dir(args, "corrected")
    target = out / f"corrected{_ext(ds.kind)}"
    save_dataset(corrected, target)
    provenance = {
        "input": str(args.data), "input_sha256": _file_sha256(args.data),
        "base_model_sha256": model_digest(base), "ecn_model_sha256": model_digest(g),
        "relevant_subset": g.spec.to_dict(), "output_sha256": _file_sha256(target),
        "version": __version__,
    }
    sidecar = target.with_name(target.name + ".provenance.json")
    sidecar.write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    print(f"wrote {target} and {sidecar.name}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .basemodel import is_base_model, predict_labels
    from .io import load_model
    from .metrics import score_pair

    model = load_model(_existing(args.model, "--model"))
    if not is_base_model(model):
        raise UsageError("evaluate expects a base model (CRF or patch classifier)")
    test = _load(args.data, args.tagset, "test")
    scores = score_pair(test.with_labels(predict_labels(model, test)), test)
    print(json.dumps({k: round(v, 6) for k, v in scores.items()}, sort_keys=True))
    return EXIT_OK


def _experiment_config(args):
    from .experiment import ExperimentConfig, preset
    if args.preset and args.config:
        raise UsageError("give either --preset or --config, not both")
    if args.preset:
        cfg = preset(args.preset)
    elif args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        raise UsageError("run needs --preset or --config")
    if args.seeds:
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    elif args.seed is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "record_runtime", False):
        cfg.record_runtime = True
    cfg.__post_init__()
    return cfg


def cmd_run(args) -> int:
    from .experiment import run_experiment
    cfg = _experiment_config(args)
    result = run_experiment(cfg, args.out or "runs", figures=not args.no_figures)
    print(result.table.to_markdown(), end="")
    print(f"results in {result.run_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiment import SweepConfig, preset, run_sweep
    if args.config:
        cfg = SweepConfig.from_dict(_read_json(args.config))
    else:
        base = preset(args.preset or "gmb-im-fixed-desk")
        values = [int(v) for v in args.values.split(",")] if args.values else [0, 1, 2, 3, 5, 8]
        cfg = SweepConfig(base, args.axis, values, args.focus_class)
    if args.seeds:
        cfg.base.seeds = [int(s) for s in args.seeds.split(",")]
    elif args.seed is not None:
        cfg.base.seeds = [args.seed]
    result, run_dir, _ = run_sweep(cfg, args.out or "runs", figures=not args.no_figures)
    strategy = f"ecn_{cfg.variant}"
    metric = f"f1_{cfg.focus_class}" if cfg.focus_class else "weighted_f1"
    xs, ys = result.series(strategy, metric)
    for x, y in zip(xs, ys):
        print(f"{cfg.axis}={x}\t{metric}={y:.4f}")
    print(f"results in {run_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .experiment import ResultTable
    from .plotting import strategy_bar_chart
    run_dir = _existing(args.run_dir, "run directory")
    csv_path = _existing(run_dir / "results.csv", "results.csv")
    try:
        table = ResultTable.from_csv(csv_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise UsageError(f"{csv_path}: {exc}") from None
    md = table.to_markdown(args.metric)
    (run_dir / "results.md").write_text(md, encoding="utf-8")
    if not args.no_figures and table.rows:
        strategy_bar_chart(table, run_dir / "scores.svg", args.metric)
    print(md, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--preset", default=argparse.SUPPRESS, help="named experiment preset")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="ecn-lab", parents=[common],
                                     description="Error-correcting networks for structured label noise")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--kind", choices=("sequence", "grid"), default="sequence")
    p.add_argument("--param", action="append", help="generator setting key=value (JSON value)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("corrupt", parents=[common], help="apply a corruption process")
    p.add_argument("--data", required=True)
    p.add_argument("--tagset", required=True)
    p.add_argument("--kind", help="corruption kind")
    p.add_argument("--param", action="append", help="corruption parameter key=value (JSON value)")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", parents=[common], help="train a base model or an error-correcting model")
    p.add_argument("stage", choices=("base", "ecn"))
    p.add_argument("--data", required=True, help="training data (gold data for the ecn stage)")
    p.add_argument("--tagset", required=True)
    p.add_argument("--base", help="base model (ecn stage)")
    p.add_argument("--param", action="append", help="relevant-subset setting key=value (ecn stage)")
    p.add_argument("--model", help="output model path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("correct", parents=[common], help="relabel a dataset with a trained corrector")
    p.add_argument("--data", required=True)
    p.add_argument("--tagset", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--ecn", required=True)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("evaluate", parents=[common], help="score a base model on a labelled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tagset", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", parents=[common], help="run an experiment (preset or config)")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--record-runtime", action="store_true", help="fill runtime_s in results.csv")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="sweep neighbour radius or feature count")
    p.add_argument("--axis", choices=("neighbor_radius_k", "n_token_features"), default="neighbor_radius_k")
    p.add_argument("--values", help="comma-separated ascending values")
    p.add_argument("--focus-class", help="also report F1 of this label")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="re-render tables and figures of a run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--metric")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    from .core import DatasetError
    from .experiment import ConfigError, max_workers
    from .io import FormatError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit 2; map them to the config code
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    for name in ("config", "seed", "out", "preset", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        max_workers()
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"ecn-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DatasetError) as exc:
        print(f"ecn-lab: input error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except json.JSONDecodeError as exc:
        print(f"ecn-lab: input error: not valid JSON: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"ecn-lab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
