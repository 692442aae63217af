import numpy as np
import pytest

from ecn_lab.core import Dataset
from ecn_lab.patch import (PatchClassifier, PatchConfig, all_windows, gather_windows, pad_planes,
                           patch_predict, patch_predict_dataset, patch_train)

from conftest import GRID_TAGS, grid_sample
from oracles import central_difference


def test_windows_layout_agrees():
    planes = np.random.default_rng(0).random((5, 6, 2))
    win = all_windows(planes, 3)
    padded = pad_planes(planes, 3)
    rows, cols = np.array([0, 4, 2]), np.array([0, 5, 3])
    got = gather_windows(padded[None], np.zeros(3, dtype=int), rows, cols, 3)
    np.testing.assert_array_equal(got, win[rows * 6 + cols])
    # centre of each window is the pixel itself
    centre = win.reshape(30, 3, 3, 2)[:, 1, 1]
    np.testing.assert_array_equal(centre, planes.reshape(30, 2))


def test_reflection_padding():
    planes = np.arange(4.0).reshape(1, 4, 1).repeat(3, axis=0)
    padded = pad_planes(planes, 3)
    assert padded[1, :, 0].tolist() == [1, 0, 1, 2, 3, 2]
    with pytest.raises(ValueError):
        pad_planes(planes, 7)


@pytest.mark.parametrize("hidden", [(), (6,), (5, 4)])
def test_loss_gradient_matches_finite_differences(hidden):
    rng = np.random.default_rng(1)
    model = PatchClassifier.init(3, 2, GRID_TAGS, hidden, seed=2)
    x, y = rng.random((7, 18)), rng.integers(0, 3, 7)
    _, grads = model.loss_grad(x, y, l2=0.01)
    analytic = np.concatenate([g.ravel() for g in grads])

    def f(w):
        m = PatchClassifier(model.window, model.channels, model.tagset,
                            [a.copy() for a in model.weights], [b.copy() for b in model.biases])
        m.set_flat(w)
        return m.loss_grad(x, y, l2=0.01)[0]

    np.testing.assert_allclose(analytic, central_difference(f, model.flat()), rtol=1e-4, atol=1e-7)


def test_probabilities_are_distributions():
    model = PatchClassifier.init(3, 3, GRID_TAGS, (4,), seed=0)
    p = model.predict_proba(np.random.default_rng(0).random((10, 27)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert (p >= 0).all()


def test_training_learns_colours(small_grid):
    train, _, test = small_grid
    model = patch_train(train, PatchConfig(window=3, steps=300, batch_size=64))
    pred = [p.argmax(axis=2) for p in patch_predict_dataset(model, test)]
    acc = np.mean([(p == s.labels).mean() for p, s in zip(pred, test)])
    assert acc > 0.9
    again = patch_train(train, PatchConfig(window=3, steps=300, batch_size=64))
    np.testing.assert_array_equal(again.flat(), model.flat())


def test_prediction_input_checks():
    model = PatchClassifier.init(3, 3, GRID_TAGS, (4,), seed=0)
    with pytest.raises(ValueError):
        patch_predict(model, np.zeros((4, 4, 2)))
    with pytest.raises(Exception):
        patch_train(Dataset(GRID_TAGS, []), PatchConfig())
    assert patch_predict(model, grid_sample(np.zeros((4, 4), dtype=int))).shape == (4, 4, 3)


def test_config_validation():
    with pytest.raises(ValueError):
        PatchConfig(window=4)
