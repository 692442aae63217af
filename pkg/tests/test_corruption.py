import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecn_lab.core import Dataset, SequenceSample
from ecn_lab.corruption import (IMPRECISE_MODES, CorruptionError, CorruptionSpec, RuleTagger, apply_corruption,
                                corrupt_grid_coarsen, corrupt_grid_misclassify, corrupt_imprecise,
                                corrupt_missing_random, corrupt_missing_systematic, erode_labels,
                                find_entity_spans, plan_imprecise, sample_spans)

from conftest import GRID_TAGS, SEQ_TAGS, grid_sample, seq_dataset


def test_spec_canonical_json_and_digest():
    spec = CorruptionSpec("missing_random", {"drop_rate": 0.3}, 7)
    expected = '{"kind":"missing_random","params":{"drop_rate":0.3},"rng":"splitmix64","seed":7}'
    assert spec.canonical_json() == expected
    assert spec.digest() == hashlib.sha256(expected.encode()).hexdigest()
    assert CorruptionSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


def test_spec_digest_ignores_param_order():
    a = CorruptionSpec("grid_misclassify", {"fraction": 0.5, "from_label": "vehicle", "to_label": "road"})
    b = CorruptionSpec("grid_misclassify", {"to_label": "road", "from_label": "vehicle", "fraction": 0.5})
    assert a.digest() == b.digest()


@pytest.mark.parametrize("kind,params", [
    ("bogus", {}), ("imprecise", {"mode": "wide"}), ("missing_random", {"drop_rate": 1.5}),
    ("missing_random", {}), ("grid_misclassify", {"fraction": 0.5, "from_label": 1, "to_label": 1}),
    ("grid_coarsen", {"erode_px": 0}), ("grid_coarsen", {"erode_px": True}),
])
def test_spec_rejects_bad_params(kind, params):
    with pytest.raises(CorruptionError):
        CorruptionSpec(kind, params)


def test_sample_spans():
    spans = sample_spans([0, 3, 3, 1, 0, 2], 0)
    assert [(s.start, s.end, s.label) for s in spans] == [(1, 3, 3), (3, 4, 1), (5, 6, 2)]


def test_imprecise_fixed_hand_example():
    ds = seq_dataset(("Anna met Bo in Rome today .", "PER O PER O GEO O O"))
    rec = corrupt_imprecise(ds, "fixed", seed=1)
    # Anna extends over "met" then stops at Bo; Bo takes "in" then stops at Rome; Rome runs to the end
    assert rec.corrupted[0].labels == tuple(SEQ_TAGS.index(n) for n in "PER PER PER PER GEO GEO GEO".split())
    assert rec.true_labels[0] == ds[0].labels
    assert rec.corrupted.role == "corrupted"


def test_missing_random_extremes():
    ds = seq_dataset(("Anna met Bo", "PER O PER"))
    assert corrupt_missing_random(ds, 0.0).corrupted[0].labels == ds[0].labels
    assert corrupt_missing_random(ds, 1.0).corrupted[0].labels == (0, 0, 0)


def test_missing_systematic_rule_tagger():
    # sentence-initial and lowercase entity tokens are missed; digits and gazetteer words are marked
    ds = seq_dataset(("Anna met Bo on 3 may", "PER O PER O GEO ORG"))
    rec = corrupt_missing_systematic(ds, RuleTagger())
    assert rec.corrupted[0].labels == (0, 0, 3, 0, 1, 2)
    assert rec.spec["params"] == {"tagger": "rule-tagger-v1"}


def test_missing_systematic_rejects_bad_tagger():
    ds = seq_dataset(("a b", "O PER"))
    with pytest.raises(CorruptionError):
        corrupt_missing_systematic(ds, lambda s: [True])


def test_erode_labels_hand_example():
    lab = np.zeros((7, 7), dtype=np.int64)
    lab[1:6, 1:6] = 2
    out = erode_labels(lab, 1, 0)
    expected = np.zeros((7, 7), dtype=np.int64)
    expected[2:5, 2:5] = 2
    np.testing.assert_array_equal(out, expected)
    # regions touching the frame do not erode from the frame side
    band = np.zeros((5, 5), dtype=np.int64)
    band[2:] = 1
    np.testing.assert_array_equal(erode_labels(band, 1, 0)[3:], 1)
    np.testing.assert_array_equal(erode_labels(band, 1, 0)[:3], 0)


def test_grid_misclassify_extremes():
    ds = Dataset(GRID_TAGS, [grid_sample([[0, 2], [1, 2]])] * 3)
    none = corrupt_grid_misclassify(ds, 0.0, "vehicle", "road")
    assert none.corrupted_fraction() == 0.0
    every = corrupt_grid_misclassify(ds, 1.0, "vehicle", "road")
    for s in every.corrupted:
        np.testing.assert_array_equal(s.labels, [[0, 1], [1, 1]])
    with pytest.raises(CorruptionError):
        corrupt_grid_misclassify(ds, 0.5, "vehicle", "car")


def test_grid_coarsen_degenerate():
    ds = Dataset(GRID_TAGS, [grid_sample(np.ones((4, 4), dtype=int))])
    with pytest.raises(CorruptionError):
        corrupt_grid_coarsen(ds, 2)


def test_kind_mismatch():
    ds = seq_dataset(("a", "O"))
    with pytest.raises(TypeError):
        apply_corruption(ds, CorruptionSpec("grid_coarsen", {"erode_px": 1}))


def test_corruption_is_seed_deterministic(small_seq):
    train = small_seq[0]
    spec = CorruptionSpec("imprecise", {"mode": "random_variable"}, 11)
    a, b = apply_corruption(train, spec), apply_corruption(train, spec)
    assert a.corrupted == b.corrupted and a.spec_digest == b.spec_digest == spec.digest()
    other = apply_corruption(train, CorruptionSpec("imprecise", {"mode": "random_variable"}, 12))
    assert other.corrupted != a.corrupted


def test_corruption_is_per_sample(small_seq):
    # each sample's draws depend only on (seed, index): a prefix corrupts identically
    train = small_seq[0]
    full = corrupt_missing_random(train, 0.5, 3).corrupted
    prefix = corrupt_missing_random(train.subset(range(20)), 0.5, 3).corrupted
    assert prefix.samples == full.samples[:20]


# ---------------------------------------------------------------- properties

tags = st.lists(st.sampled_from([0, 0, 0, 1, 2, 3]), min_size=1, max_size=15)


def _ds(label_lists):
    return Dataset(SEQ_TAGS, [SequenceSample(tuple(f"w{j}" for j in range(len(l))), tuple(l))
                              for l in label_lists])


@settings(max_examples=60, deadline=None)
@given(st.lists(tags, min_size=1, max_size=6), st.sampled_from(sorted(IMPRECISE_MODES)), st.integers(0, 2 ** 64 - 1))
def test_imprecise_only_grows_spans_rightward(label_lists, mode, seed):
    ds = _ds(label_lists)
    rec = corrupt_imprecise(ds, mode, seed)
    lo, hi = IMPRECISE_MODES[mode][1:]
    for s_clean, s_bad in zip(ds, rec.corrupted):
        for j, (a, b) in enumerate(zip(s_clean.labels, s_bad.labels)):
            if a != b:
                assert a == 0
                # the new label belongs to the nearest entity on the left, within the max extension
                left = [i for i in range(j - 1, -1, -1) if s_clean.labels[i] != 0]
                assert left and s_clean.labels[left[0]] == b and j - left[0] <= hi
    # entity spans never disappear
    assert len(find_entity_spans(rec.corrupted)) <= len(find_entity_spans(ds))


@settings(max_examples=60, deadline=None)
@given(st.lists(tags, min_size=1, max_size=6), st.floats(0, 1), st.integers(0, 2 ** 64 - 1))
def test_missing_random_drops_whole_spans(label_lists, rate, seed):
    ds = _ds(label_lists)
    rec = corrupt_missing_random(ds, rate, seed)
    for i, (s_clean, s_bad) in enumerate(zip(ds, rec.corrupted)):
        for span in sample_spans(s_clean.labels, 0, i):
            kept = s_bad.labels[span.start:span.end]
            assert kept == s_clean.labels[span.start:span.end] or set(kept) == {0}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 2), min_size=16, max_size=16), min_size=3, max_size=3),
       st.floats(0, 1), st.integers(0, 1000))
def test_grid_misclassify_flips_whole_images(rows, fraction, seed):
    lab = np.array(rows).reshape(3, 4, 4)
    ds = Dataset(GRID_TAGS, [grid_sample(x) for x in lab])
    rec = corrupt_grid_misclassify(ds, fraction, 2, 1, seed)
    for s_clean, s_bad in zip(ds, rec.corrupted):
        changed = s_clean.labels != s_bad.labels
        assert not changed.any() or np.array_equal(changed, s_clean.labels == 2)
        assert (s_bad.labels[changed] == 1).all()


def test_plan_draws_do_not_depend_on_mode():
    ds = seq_dataset(("Anna met Bo in Rome", "PER O PER O GEO"))
    a = plan_imprecise(ds, "fixed", 5)
    b = plan_imprecise(ds, "random_half", 5)
    assert [s for s, _, _ in a] == [s for s, _, _ in b]
