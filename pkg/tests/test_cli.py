import json
import subprocess
import sys

import pytest

from ecn_lab.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(root / "d"), "--seed", "3", "--param", "n_train=80",
                 "--param", "n_gold=25", "--param", "n_test=30"]) == EXIT_OK
    return root


def test_gen_writes_splits(workdir):
    names = sorted(p.name for p in (workdir / "d").iterdir())
    assert names == ["gen.json", "gold.conll", "tagset.txt", "test.conll", "train.conll"]
    assert json.loads((workdir / "d" / "gen.json").read_text())["seed"] == 3


def test_full_workflow(workdir):
    d, tags = workdir / "d", str(workdir / "d" / "tagset.txt")
    assert main(["corrupt", "--data", str(d / "train.conll"), "--tagset", tags, "--kind", "imprecise",
                 "--param", "mode=fixed", "--seed", "2", "--out", str(workdir / "c")]) == EXIT_OK
    meta = json.loads((workdir / "c" / "corruption.json").read_text())
    assert meta["spec"] == {"kind": "imprecise", "params": {"mode": "fixed"}, "seed": 2}
    assert len(meta["digest"]) == 64 and 0 < meta["corrupted_fraction"] < 1
    (workdir / "cfg.json").write_text(json.dumps({"crf": {"steps": 15}, "ecn": {"steps": 20}, "rs": {"k": 2}}))
    assert main(["train", "base", "--data", str(workdir / "c" / "corrupted.conll"), "--tagset", tags,
                 "--config", str(workdir / "cfg.json"), "--model", str(workdir / "f.json")]) == EXIT_OK
    assert main(["train", "ecn", "--data", str(d / "gold.conll"), "--tagset", tags, "--base",
                 str(workdir / "f.json"), "--config", str(workdir / "cfg.json"), "--model",
                 str(workdir / "g.json")]) == EXIT_OK
    assert json.loads((workdir / "g.json").read_text())["spec"]["k"] == 2
    assert main(["correct", "--data", str(workdir / "c" / "corrupted.conll"), "--tagset", tags,
                 "--base", str(workdir / "f.json"), "--ecn", str(workdir / "g.json"),
                 "--out", str(workdir / "k")]) == EXIT_OK
    prov = json.loads((workdir / "k" / "corrected.conll.provenance.json").read_text())
    assert {"input_sha256", "base_model_sha256", "ecn_model_sha256", "relevant_subset", "output_sha256"} <= set(prov)
    assert main(["evaluate", "--model", str(workdir / "f.json"), "--data", str(d / "test.conll"),
                 "--tagset", tags]) == EXIT_OK


def test_run_and_report(workdir, capsys):
    cfg = {"name": "cli", "generate": {"n_train": 50, "n_gold": 20, "n_test": 20}, "crf": {"steps": 10},
           "ecn": {"steps": 10}, "strategies": ["gold_only", "ecn_full"], "seeds": [0]}
    (workdir / "run.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(workdir / "run.json"), "--out", str(workdir / "runs"),
                 "--seeds", "1,2", "--no-figures"]) == EXIT_OK
    run_dir = next((workdir / "runs").iterdir())
    assert {r.split(",")[4] for r in (run_dir / "results.csv").read_text().splitlines()[1:]} == {"1", "2"}
    capsys.readouterr()
    assert main(["report", str(run_dir), "--metric", "macro_f1"]) == EXIT_OK
    assert "Metric: macro_f1" in capsys.readouterr().out
    assert (run_dir / "scores.svg").exists()


def test_sweep_subcommand(workdir, capsys):
    cfg = {"base": {"name": "sw", "generate": {"n_train": 50, "n_gold": 20, "n_test": 20}, "crf": {"steps": 10},
                    "ecn": {"steps": 10}, "seeds": [0]}, "axis": "neighbor_radius_k", "values": [0, 1]}
    (workdir / "sweep.json").write_text(json.dumps(cfg))
    assert main(["sweep", "--config", str(workdir / "sweep.json"), "--out", str(workdir / "sw"),
                 "--no-figures"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "neighbor_radius_k=0" in out and "neighbor_radius_k=1" in out


@pytest.mark.parametrize("argv", [
    ["frobnicate"], ["run"], ["run", "--preset", "nope"], ["run", "--preset", "gmb-im-fixed-desk", "--config", "x"],
    ["corrupt", "--data", "x", "--tagset", "y"], ["gen", "--param", "colour=red"],
    ["sweep", "--axis", "width"], ["run", "--config", "/nonexistent/cfg.json"],
])
def test_config_errors_exit_1(argv):
    assert main(argv) == EXIT_CONFIG


def test_bad_thread_env_exits_1(monkeypatch):
    monkeypatch.setenv("ECN_LAB_THREADS", "lots")
    assert main(["run", "--preset", "gmb-im-fixed-desk"]) == EXIT_CONFIG


def test_runtime_errors_exit_2(workdir):
    bad = workdir / "bad.conll"
    bad.write_text("token-without-label\n")
    tags = str(workdir / "d" / "tagset.txt")
    assert main(["train", "base", "--data", str(bad), "--tagset", tags]) == EXIT_RUNTIME
    assert main(["evaluate", "--model", tags, "--data", str(workdir / "d" / "test.conll"),
                 "--tagset", tags]) == EXIT_RUNTIME


def test_help_and_version_exit_0():
    assert main(["--version"]) == EXIT_OK
    assert main(["run", "--help"]) == EXIT_OK


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ecn_lab.cli", "run", "--preset", "missing"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "unknown preset" in proc.stderr
