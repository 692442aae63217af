import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecn_lab.basemodel import BaseConfigs, predict_labels, train_base
from ecn_lab.core import Dataset, DatasetError
from ecn_lab.corruption import corrupt_grid_misclassify, corrupt_imprecise
from ecn_lab.crf import TrainConfig
from ecn_lab.ecn import (INVALID, INVALID_FLOAT, EcnError, EcnModel, EcnTrainConfig, RelevantSubsetSpec,
                         SoftmaxCorrector, _slot_keys, build_rs_sample, ecn_correct, ecn_pipeline, ecn_train,
                         grid_rs_planes, model_digest, rs_dimension, sequence_rs)
from ecn_lab.features import FEATURE_NAMES
from ecn_lab.metrics import f1_score, iou_score
from ecn_lab.patch import PatchConfig

from conftest import GRID_TAGS, SEQ_TAGS, grid_sample, seq_sample
from oracles import central_difference

SENT = seq_sample("Anna met Bo in Rome", "PER O PER O GEO")
YHAT = ["PER", "PER", "PER", "O", "GEO"]
FAST = BaseConfigs(TrainConfig(steps=40), PatchConfig(window=3, steps=300, batch_size=64))


def test_full_rs_by_hand():
    rs = sequence_rs(SENT, YHAT, 1, RelevantSubsetSpec(k=2))
    assert rs["yhat"] == "PER"
    assert rs["x:lower"] == "met" and rs["x:prev_lower"] == "anna" and rs["x:next_is_title"] is True
    assert (rs["y[-2]"], rs["y[-1]"], rs["y[+1]"], rs["y[+2]"]) == (INVALID, "PER", "PER", "O")
    assert list(rs) == ["yhat"] + [f"x:{n}" for n in FEATURE_NAMES] + ["y[-2]", "y[-1]", "y[+1]", "y[+2]"]


def test_ablations_keep_layout_and_fill_invalid():
    x_only = sequence_rs(SENT, YHAT, 1, RelevantSubsetSpec(variant="x_only", k=2))
    y_only = sequence_rs(SENT, YHAT, 1, RelevantSubsetSpec(variant="y_only", k=2))
    full = sequence_rs(SENT, YHAT, 1, RelevantSubsetSpec(k=2))
    assert list(x_only) == list(y_only) == list(full)
    assert all(x_only[f"y[{o:+d}]"] == INVALID for o in (-2, -1, 1, 2))
    assert all(y_only[f"x:{n}"] == INVALID for n in FEATURE_NAMES)
    assert x_only["x:lower"] == "met" and y_only["y[-1]"] == "PER"
    assert x_only["yhat"] == y_only["yhat"] == "PER"


def test_random_float_fill_is_seeded():
    spec = RelevantSubsetSpec(variant="x_only", k=2, ablation_fill="random_floats")
    a = sequence_rs(SENT, YHAT, 1, spec, fill_seed=5)
    b = sequence_rs(SENT, YHAT, 1, spec, fill_seed=5)
    c = sequence_rs(SENT, YHAT, 1, spec, fill_seed=6)
    fills = [a[f"y[{o:+d}]"] for o in (-2, -1, 1, 2)]
    assert a == b and a != c
    assert all(isinstance(v, float) and 0.0 <= v < 1.0 for v in fills)


def test_soft_centre_uses_distribution():
    dist = np.full((5, 4), 0.25)
    dist[2] = [0.1, 0.2, 0.3, 0.4]
    rs = sequence_rs(SENT, dist, 2, RelevantSubsetSpec(k=1))
    assert [rs[f"yhat[{c}]"] for c in range(4)] == [0.1, 0.2, 0.3, 0.4]
    assert "yhat" not in rs and rs["y[-1]"] == 0 and rs["y[+1]"] == 0


def test_rs_errors():
    with pytest.raises(EcnError):
        sequence_rs(SENT, YHAT, 5, RelevantSubsetSpec())
    with pytest.raises(EcnError):
        sequence_rs(SENT, YHAT[:3], 0, RelevantSubsetSpec())
    for bad in ({"variant": "both"}, {"k": -1}, {"window": 4}, {"n_features": 20},
                {"ablation_fill": "zeros"}, {"neighbor_source": "gold"}):
        with pytest.raises(EcnError):
            RelevantSubsetSpec(**bad)
    with pytest.raises(EcnError):
        EcnTrainConfig(steps=0)


def test_rs_dimension():
    assert rs_dimension(RelevantSubsetSpec(k=3), "sequence", 4) == 1 + 19 + 6
    assert rs_dimension(RelevantSubsetSpec(k=0, soft=True, n_features=5), "sequence", 4) == 4 + 5
    assert rs_dimension(RelevantSubsetSpec(window=9), "grid", 3) == 81 * 6


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["x_only", "y_only", "full"]), st.integers(0, 6), st.integers(0, 19), st.integers(0, 4),
       st.sampled_from(["invalid_symbol", "random_floats"]))
def test_rs_layout_is_variant_independent(variant, k, n_features, j, fill):
    spec = RelevantSubsetSpec(variant=variant, k=k, n_features=n_features, ablation_fill=fill)
    rs = sequence_rs(SENT, YHAT, j, spec, fill_seed=3)
    assert len(rs) == rs_dimension(spec, "sequence", 4)
    assert list(rs) == list(sequence_rs(SENT, YHAT, j, RelevantSubsetSpec(k=k, n_features=n_features)))


def test_grid_planes():
    s = grid_sample([[0, 1], [2, 2]])
    yhat = np.array([[0, 1], [1, 2]])
    full = grid_rs_planes(s, yhat, RelevantSubsetSpec(), 3)
    np.testing.assert_array_equal(full[..., :3], np.eye(3)[yhat])
    np.testing.assert_array_equal(full[..., 3:], s.pixels)
    x_only = grid_rs_planes(s, yhat, RelevantSubsetSpec(variant="x_only"), 3)
    assert (x_only[..., :3] == INVALID_FLOAT).all()
    y_only = grid_rs_planes(s, yhat, RelevantSubsetSpec(variant="y_only"), 3)
    assert (y_only[..., 3:] == INVALID_FLOAT).all()
    rnd = grid_rs_planes(s, yhat, RelevantSubsetSpec(variant="x_only", ablation_fill="random_floats"), 3, 1)
    assert ((rnd[..., :3] >= 0) & (rnd[..., :3] < 1)).all() and len(np.unique(rnd[..., :3])) == 12
    vec = build_rs_sample(s, yhat, 3, RelevantSubsetSpec(window=1), GRID_TAGS)
    np.testing.assert_array_equal(vec, full[1, 1])
    assert build_rs_sample(grid_sample(np.zeros((5, 5), int)), np.zeros((5, 5), int), 0,
                           RelevantSubsetSpec(window=3), GRID_TAGS).size == rs_dimension(
        RelevantSubsetSpec(window=3), "grid", 3)


def test_cross_features():
    pairs = _slot_keys({"yhat": "PER", "x:lower": "met", "y[-1]": INVALID}, cross=True)
    assert pairs == [("yhat=PER", 1.0), ("x:lower=met", 1.0), (f"y[-1]={INVALID}", 1.0),
                     ("PER&x:lower=met", 1.0), (f"PER&y[-1]={INVALID}", 1.0)]
    assert len(_slot_keys({"yhat": "O", "x:a": 1}, cross=False)) == 2


def test_softmax_corrector_gradient():
    rng = np.random.default_rng(0)
    g = SoftmaxCorrector([f"k{i}" for i in range(6)], rng.normal(0, 1, (6, 3)), rng.normal(0, 1, 3))
    idx = rng.integers(0, 6, (5, 4))
    val = rng.random((5, 4))
    y = rng.integers(0, 3, 5)
    _, gw, gb = g.loss_grad(idx, val, y, 0.1)

    def f(w):
        h = SoftmaxCorrector(g.keys, w[:18].reshape(6, 3), w[18:])
        return h.loss_grad(idx, val, y, 0.1)[0]

    num = central_difference(f, np.concatenate([g.weights.ravel(), g.bias]))
    np.testing.assert_allclose(np.concatenate([gw.ravel(), gb]), num, rtol=1e-4, atol=1e-8)


@pytest.fixture(scope="module")
def seq_setup(small_seq):
    train, gold, test = small_seq
    corrupted = corrupt_imprecise(train, "fixed", 0).corrupted
    f = train_base(corrupted, FAST)
    return train, corrupted, gold, test, f


def test_sequence_ecn_freezes_f_and_uses_whole_samples(seq_setup):
    train, corrupted, gold, test, f = seq_setup
    before = f.flat().copy()
    g = ecn_train(f, gold, RelevantSubsetSpec(), EcnTrainConfig(steps=30, batch_size=4))
    np.testing.assert_array_equal(f.flat(), before)
    lengths = sorted(len(s) for s in gold)
    for n, _ in g.history:
        assert sum(lengths[:4]) <= n <= sum(lengths[-4:])
    assert len(g.history) == 30


def test_sequence_ecn_repairs_extension_noise(seq_setup):
    train, corrupted, gold, test, f = seq_setup
    g = ecn_train(f, gold, RelevantSubsetSpec(), EcnTrainConfig())
    corrected = ecn_correct(f, g, corrupted)
    assert corrected.role == "corrupted" and [len(s) for s in corrected] == [len(s) for s in train]
    assert f1_score(corrected, train) > f1_score(corrupted, train) + 0.1


def test_observed_neighbors_use_dataset_labels(seq_setup):
    _, corrupted, gold, _, f = seq_setup
    spec = RelevantSubsetSpec(variant="y_only", neighbor_source="observed")
    g = ecn_train(f, gold, spec, EcnTrainConfig(steps=50))
    assert len(ecn_correct(f, g, corrupted.subset(range(10)))) == 10


def test_ecn_model_roundtrip_and_schema(seq_setup):
    _, corrupted, gold, _, f = seq_setup
    g = ecn_train(f, gold, RelevantSubsetSpec(k=2), EcnTrainConfig(steps=20))
    obj = json.loads(json.dumps(g.to_dict()))
    back = EcnModel.from_dict(obj)
    sub = corrupted.subset(range(15))
    assert ecn_correct(f, back, sub) == ecn_correct(f, g, sub)
    assert model_digest(back) == model_digest(g)
    obj["spec"]["k"] = 3
    with pytest.raises(EcnError):
        EcnModel.from_dict(obj)


def test_ecn_input_errors(seq_setup):
    _, corrupted, gold, _, f = seq_setup
    with pytest.raises(DatasetError):
        ecn_train(f, Dataset(SEQ_TAGS, [], "gold"), RelevantSubsetSpec(), EcnTrainConfig())
    other = Dataset(GRID_TAGS, [grid_sample([[0]])], "gold")
    with pytest.raises(EcnError):
        ecn_train(f, other, RelevantSubsetSpec(), EcnTrainConfig())


def test_pipeline_is_deterministic(seq_setup):
    _, corrupted, gold, test, f = seq_setup
    spec, cfg = RelevantSubsetSpec(), EcnTrainConfig(steps=50)
    a = ecn_pipeline(corrupted, gold, test, spec, FAST, cfg, base_model=f)
    b = ecn_pipeline(corrupted, gold, test, spec, FAST, cfg, base_model=f)
    assert a.scores == b.scores and a.corrected == b.corrected
    assert [r.strategy for r in a.rows] == ["ecn_full", "ecn_full"]


def test_grid_ecn_border_and_repair(small_grid):
    train, gold, test = small_grid
    corrupted = corrupt_grid_misclassify(train, 1.0, "vehicle", "road", 0).corrupted
    f = train_base(corrupted, FAST)
    spec = RelevantSubsetSpec(window=3)
    cfg = EcnTrainConfig(steps=150, batch_size=2, hidden=(16,))
    g = ecn_train(f, gold, spec, cfg)
    assert g.border == 2
    corrected = ecn_correct(f, g, corrupted)
    base = predict_labels(f, corrupted)
    for s, b in zip(corrected, base):
        np.testing.assert_array_equal(s.labels[:2], b[:2])
        np.testing.assert_array_equal(s.labels[:, -2:], b[:, -2:])
    assert iou_score(corrected, train) > iou_score(corrupted, train)
    back = EcnModel.from_dict(json.loads(json.dumps(g.to_dict())))
    assert ecn_correct(f, back, corrupted) == corrected
