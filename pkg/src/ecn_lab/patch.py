"""Windowed per-pixel classifier for grids.

A small multilayer perceptron reads the w x w neighbourhood of a pixel
(all input channels, reflection-padded at the image edge) and outputs a
softmax distribution over labels.  The same class serves as the grid base
model (3 colour channels) and as the grid error-correcting network
(label-distribution channels stacked with colour channels).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Dataset, DatasetError, TagSet


@dataclass
class PatchConfig:
    window: int = 9
    hidden: tuple = (32,)
    steps: int = 1500
    batch_size: int = 256
    learning_rate: float = 0.1
    momentum: float = 0.9
    l2: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")


def pad_planes(planes: np.ndarray, window: int) -> np.ndarray:
    r = window // 2
    if r == 0:
        return np.asarray(planes, dtype=np.float64)
    h, w = planes.shape[:2]
    if r >= h or r >= w:
        raise ValueError(f"window {window} does not fit a {h}x{w} grid with reflection padding")
    return np.pad(planes, ((r, r), (r, r), (0, 0)), mode="reflect")


def gather_windows(padded: np.ndarray, img: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                   window: int) -> np.ndarray:
    """Flattened windows centred on (rows, cols) of images ``img`` in a padded (N, H', W', C) stack."""
    off = np.arange(window)
    win = padded[img[:, None, None], rows[:, None, None] + off[None, :, None],
                 cols[:, None, None] + off[None, None, :]]
    return win.reshape(len(img), -1)


def all_windows(planes: np.ndarray, window: int) -> np.ndarray:
    """(H*W, w*w*C) windows for every pixel, same layout as :func:`gather_windows`."""
    padded = pad_planes(planes, window)
    h, w = planes.shape[:2]
    view = sliding_window_view(padded, (window, window), axis=(0, 1))  # H, W, C, w, w
    return view.transpose(0, 1, 3, 4, 2).reshape(h * w, -1)


@dataclass
class PatchClassifier:
    window: int
    channels: int
    tagset: TagSet
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    trained: bool = False
    history: list = field(default_factory=list, repr=False)

    @classmethod
    def init(cls, window: int, channels: int, tagset: TagSet, hidden=(32,), seed: int = 0):
        rng = np.random.default_rng(seed)
        sizes = [window * window * channels, *hidden, len(tagset)]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(window, channels, tagset, weights, biases)

    @property
    def n_inputs(self) -> int:
        return self.window * self.window * self.channels

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = vec[pos:pos + b.size].reshape(b.shape).copy()
            pos += b.size

    def forward(self, x: np.ndarray):
        """Class probabilities for rows of ``x`` plus the hidden activations."""
        acts = [x - 0.5]
        h = acts[0]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p, acts

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def loss_grad(self, x: np.ndarray, y: np.ndarray, l2: float = 0.0):
        """Mean cross-entropy (+ l2/2 |W|^2) and gradients in :meth:`params` order."""
        p, acts = self.forward(x)
        n = len(y)
        loss = -np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean()
        loss += 0.5 * l2 * sum(float((w * w).sum()) for w in self.weights)
        delta = p.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = []
        for layer in range(len(self.weights) - 1, -1, -1):
            gw = acts[layer].T @ delta + l2 * self.weights[layer]
            gb = delta.sum(axis=0)
            grads.append((gw, gb))
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0)
        out = []
        for gw, gb in reversed(grads):
            out.extend([gw, gb])
        return float(loss), out

    def to_dict(self) -> dict:
        return {
            "format": "ecn-lab/patch", "version": 1, "window": self.window, "channels": self.channels,
            "tagset": {"labels": list(self.tagset.labels), "background_index": self.tagset.background_index},
            "schema": f"patch-w{self.window}-c{self.channels}",
            "weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases],
            "trained": self.trained,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PatchClassifier":
        tagset = TagSet(tuple(obj["tagset"]["labels"]), obj["tagset"]["background_index"])
        return cls(int(obj["window"]), int(obj["channels"]), tagset,
                   [np.array(w, dtype=np.float64) for w in obj["weights"]],
                   [np.array(b, dtype=np.float64) for b in obj["biases"]], bool(obj.get("trained")))


def train_on_planes(planes: list[np.ndarray], labels: list[np.ndarray], tagset: TagSet,
                    cfg: PatchConfig, init_seed: int | None = None) -> PatchClassifier:
    """SGD on cross-entropy over pixels sampled uniformly from all images."""
    if not planes:
        raise DatasetError("cannot train a patch classifier on an empty dataset")
    channels = planes[0].shape[2]
    model = PatchClassifier.init(cfg.window, channels, tagset, cfg.hidden,
                                 cfg.seed if init_seed is None else init_seed)
    padded = np.stack([pad_planes(p, cfg.window) for p in planes])
    lab = np.stack(labels)
    n, h, w = lab.shape
    rng = np.random.default_rng([cfg.seed, 1])
    velocity = [np.zeros_like(p) for p in model.params()]
    for _ in range(cfg.steps):
        img = rng.integers(0, n, cfg.batch_size)
        rows = rng.integers(0, h, cfg.batch_size)
        cols = rng.integers(0, w, cfg.batch_size)
        x = gather_windows(padded, img, rows, cols, cfg.window)
        loss, grads = model.loss_grad(x, lab[img, rows, cols], cfg.l2)
        model.history.append(loss)
        params = model.params()
        for v, p, g in zip(velocity, params, grads):
            v *= cfg.momentum
            v -= cfg.learning_rate * g
            p += v
    model.trained = True
    return model


def predict_planes(model: PatchClassifier, planes: np.ndarray) -> np.ndarray:
    h, w = planes.shape[:2]
    return model.predict_proba(all_windows(planes, model.window)).reshape(h, w, -1)


def patch_train(train: Dataset, cfg: PatchConfig) -> PatchClassifier:
    if len(train) == 0:
        raise DatasetError("cannot train a patch classifier on an empty dataset")
    if train.kind != "grid":
        raise TypeError("patch_train needs a grid dataset")
    return train_on_planes([s.pixels for s in train.samples], [s.labels for s in train.samples],
                           train.tagset, cfg)


def patch_predict(model: PatchClassifier, grid) -> np.ndarray:
    """H x W x K label distributions for one grid sample (or raw H x W x 3 pixels)."""
    pixels = grid.pixels if hasattr(grid, "pixels") else np.asarray(grid)
    if pixels.shape[2] != model.channels:
        raise ValueError(f"model expects {model.channels} channels, got {pixels.shape[2]}")
    return predict_planes(model, pixels)


def patch_predict_dataset(model: PatchClassifier, ds: Dataset) -> list[np.ndarray]:
    if ds.tagset != model.tagset:
        raise ValueError("dataset tag set does not match the model")
    return [patch_predict(model, s) for s in ds.samples]
