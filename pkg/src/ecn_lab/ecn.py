"""Error-correcting networks.

A single corrector ``g`` is shared by every element.  Its input for element
``j`` is the base model's prediction at ``j`` joined with a relevant subset
(RS) of the sample: token features and/or neighbouring predicted labels for
sequences, a window of predicted label distributions and/or pixel values for
grids.  ``g`` is trained on gold data with the base model frozen, then used
to relabel the corrupted corpus, and a fresh base model is trained on the
corrected labels only.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as splitmix
from .basemodel import BaseConfigs, predict_distributions, predict_labels, train_base
from .core import Dataset, DatasetError, GridSample, SequenceSample, TagSet
from .features import FEATURE_NAMES, encode_value, token_features
from .metrics import ResultRow, score_pair
from .patch import PatchClassifier, PatchConfig, gather_windows, pad_planes, predict_planes, train_on_planes

VARIANTS = ("x_only", "y_only", "full")
FILLS = ("invalid_symbol", "random_floats")
INVALID = "<invalid>"
INVALID_FLOAT = 0.5  # zero after the patch classifier centres its inputs


class EcnError(ValueError):
    pass


@dataclass
class RelevantSubsetSpec:
    """Which evidence the corrector sees for each element.

    ``x_only`` keeps the input-feature half and suppresses neighbour labels,
    ``y_only`` the reverse, ``full`` keeps both.  Suppressed slots stay in
    the input (constant invalid symbol or seeded random floats) so the input
    layout never depends on the variant.
    """
    variant: str = "full"
    k: int = 3
    window: int = 9
    ablation_fill: str = "invalid_symbol"
    n_features: int = len(FEATURE_NAMES)
    soft: bool | None = None
    neighbor_source: str = "predicted"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise EcnError(f"variant must be one of {VARIANTS}")
        if self.ablation_fill not in FILLS:
            raise EcnError(f"ablation_fill must be one of {FILLS}")
        if self.k < 0:
            raise EcnError("neighbor radius k must be >= 0")
        if self.window < 1 or self.window % 2 == 0:
            raise EcnError("window must be a positive odd integer")
        if not 0 <= self.n_features <= len(FEATURE_NAMES):
            raise EcnError(f"n_features must be in [0, {len(FEATURE_NAMES)}]")
        if self.neighbor_source not in ("predicted", "observed"):
            raise EcnError("neighbor_source must be 'predicted' or 'observed'")

    @property
    def uses_x(self) -> bool:
        return self.variant in ("x_only", "full")

    @property
    def uses_y(self) -> bool:
        return self.variant in ("y_only", "full")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return FEATURE_NAMES[:self.n_features]

    def is_soft(self, kind: str) -> bool:
        return (kind == "grid") if self.soft is None else bool(self.soft)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EcnTrainConfig:
    steps: int = 400
    batch_size: int = 4
    learning_rate: float | None = None
    l2: float = 1e-4
    cross_prediction: bool = True
    border: int | None = None
    hidden: tuple = (32,)
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.steps < 1 or self.batch_size < 1:
            raise EcnError("steps and batch_size must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise EcnError("learning_rate must be > 0")
        if self.border is not None and self.border < 0:
            raise EcnError("border must be >= 0")

    def rate_for(self, kind: str) -> float:
        # logistic corrector on sparse slots vs momentum MLP on dense windows
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.05 if kind == "grid" else 0.5

    def border_for(self, spec: RelevantSubsetSpec) -> int:
        return -(-spec.window // 2) if self.border is None else self.border


# ---------------------------------------------------------------- relevant subsets

def _fill_floats(seed: int, n: int) -> list[float]:
    stream = splitmix.SplitMix64(seed)
    return [stream.random() for _ in range(n)]


def sequence_rs(sample: SequenceSample, yhat, j: int, spec: RelevantSubsetSpec,
                fill_seed: int = 0, neighbors=None) -> dict:
    """Slot -> value map for token ``j``.

    ``yhat`` is a list of label names/indices (hard) or a (d, K) array of
    distributions (soft, only the centre slot uses the distribution).
    ``neighbors`` optionally replaces ``yhat`` as the source of neighbour labels.
    """
    d = len(sample)
    if not 0 <= j < d:
        raise EcnError(f"element index {j} out of range for length {d}")
    soft = np.ndim(yhat) == 2
    hard = np.asarray(yhat).argmax(axis=1) if soft else list(yhat)
    if len(hard) != d:
        raise EcnError("predictions do not match the sample length")
    nb = hard if neighbors is None else list(neighbors)
    out: dict = {}
    if soft:
        for c, p in enumerate(np.asarray(yhat)[j]):
            out[f"yhat[{c}]"] = float(p)
    else:
        out["yhat"] = hard[j]
    names = spec.feature_names
    offsets = [o for o in range(-spec.k, spec.k + 1) if o != 0]
    n_fill = (0 if spec.uses_x else len(names)) + (0 if spec.uses_y else len(offsets))
    fill = (_fill_floats(splitmix.derive_seed(fill_seed, j), n_fill)
            if spec.ablation_fill == "random_floats" else [INVALID] * n_fill)
    fill_iter = iter(fill)
    feats = token_features(sample.tokens, j) if spec.uses_x else None
    for name in names:
        out[f"x:{name}"] = feats[name] if spec.uses_x else next(fill_iter)
    for o in offsets:
        if spec.uses_y:
            out[f"y[{o:+d}]"] = nb[j + o] if 0 <= j + o < d else INVALID
        else:
            out[f"y[{o:+d}]"] = next(fill_iter)
    return out


def _fill_planes(shape, spec: RelevantSubsetSpec, fill_seed: int) -> np.ndarray:
    if spec.ablation_fill == "random_floats":
        return np.random.default_rng([spec.seed, fill_seed]).random(shape)
    return np.full(shape, INVALID_FLOAT)


def grid_rs_planes(sample: GridSample, yhat: np.ndarray, spec: RelevantSubsetSpec, k: int,
                   fill_seed: int = 0) -> np.ndarray:
    """H x W x (K + 3) stack: predicted-label channels then pixel channels."""
    yhat = np.asarray(yhat)
    if yhat.ndim == 2:
        yhat = np.eye(k)[yhat]
    if yhat.shape[:2] != sample.labels.shape or yhat.shape[2] != k:
        raise EcnError("predictions do not match the grid shape")
    yp = yhat if spec.uses_y else _fill_planes(yhat.shape, spec, fill_seed)
    xp = sample.pixels if spec.uses_x else _fill_planes(sample.pixels.shape, spec, fill_seed + (1 << 31))
    return np.concatenate([yp, xp], axis=2)


def build_rs_sample(x, yhat, j: int, spec: RelevantSubsetSpec, tagset: TagSet | None = None,
                    fill_seed: int = 0):
    """Corrector input for element ``j``: a slot map (sequences) or a flat vector (grids)."""
    if isinstance(x, SequenceSample):
        return sequence_rs(x, yhat, j, spec, fill_seed)
    h, w = x.labels.shape
    if not 0 <= j < h * w:
        raise EcnError(f"element index {j} out of range for a {h}x{w} grid")
    k = len(tagset) if tagset is not None else np.shape(yhat)[2]
    planes = pad_planes(grid_rs_planes(x, yhat, spec, k, fill_seed), spec.window)
    r, c = divmod(j, w)
    return gather_windows(planes[None], np.array([0]), np.array([r]), np.array([c]), spec.window)[0]


def rs_dimension(spec: RelevantSubsetSpec, kind: str, k: int) -> int:
    if kind == "grid":
        return spec.window * spec.window * (k + 3)
    centre = k if spec.is_soft(kind) else 1
    return centre + len(spec.feature_names) + 2 * spec.k


# ---------------------------------------------------------------- sequence corrector

def _slot_keys(slots: dict, cross: bool) -> list[tuple[str, float]]:
    pairs = [encode_value(name, value) for name, value in slots.items()]
    if cross and "yhat" in slots:
        tag = f"{slots['yhat']}&"
        pairs += [(tag + key, v) for key, v in pairs[1:]]
    return pairs


@dataclass
class SoftmaxCorrector:
    """Multinomial logistic regression over sparse slot features."""
    keys: list
    weights: np.ndarray
    bias: np.ndarray
    cross: bool = True

    def __post_init__(self):
        self.index = {key: i for i, key in enumerate(self.keys)}

    def encode(self, rows: list[list[tuple[str, float]]]):
        f = max((len(r) for r in rows), default=1)
        idx = np.zeros((len(rows), max(f, 1)), dtype=np.int64)
        val = np.zeros((len(rows), max(f, 1)))
        for i, row in enumerate(rows):
            for m, (key, v) in enumerate(row):
                pos = self.index.get(key)
                if pos is not None:
                    idx[i, m] = pos
                    val[i, m] = v
        return idx, val

    def proba(self, idx, val) -> np.ndarray:
        z = np.einsum("nf,nfk->nk", val, self.weights[idx]) + self.bias
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def loss_grad(self, idx, val, y, l2: float):
        p = self.proba(idx, val)
        n, k = p.shape
        loss = float(-np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean()
                     + 0.5 * l2 * (self.weights ** 2).sum())
        delta = p
        delta[np.arange(n), y] -= 1.0
        delta /= n
        gw = np.zeros_like(self.weights)
        np.add.at(gw, idx.ravel(), (val[..., None] * delta[:, None, :]).reshape(-1, k))
        gw += l2 * self.weights
        return loss, gw, delta.sum(axis=0)

    def to_dict(self) -> dict:
        return {"keys": self.keys, "weights": self.weights.tolist(), "bias": self.bias.tolist(),
                "cross": self.cross}

    @classmethod
    def from_dict(cls, obj: dict) -> "SoftmaxCorrector":
        k = len(obj["bias"])
        return cls(list(obj["keys"]), np.array(obj["weights"], dtype=np.float64).reshape(-1, k),
                   np.array(obj["bias"], dtype=np.float64), bool(obj["cross"]))


@dataclass
class EcnModel:
    kind: str
    tagset: TagSet
    spec: RelevantSubsetSpec
    corrector: object
    border: int = 0
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        body = (self.corrector.to_dict() if isinstance(self.corrector, SoftmaxCorrector)
                else self.corrector.to_dict())
        return {"format": "ecn-lab/ecn", "version": 1, "kind": self.kind,
                "tagset": {"labels": list(self.tagset.labels), "background_index": self.tagset.background_index},
                "schema": rs_schema(self.spec, self.kind, len(self.tagset)),
                "spec": self.spec.to_dict(), "border": self.border, "corrector": body}

    @classmethod
    def from_dict(cls, obj: dict) -> "EcnModel":
        tagset = TagSet(tuple(obj["tagset"]["labels"]), obj["tagset"]["background_index"])
        spec = RelevantSubsetSpec(**obj["spec"])
        if obj["kind"] == "grid":
            corrector = PatchClassifier.from_dict(obj["corrector"])
        else:
            corrector = SoftmaxCorrector.from_dict(obj["corrector"])
        model = cls(obj["kind"], tagset, spec, corrector, int(obj.get("border", 0)))
        if rs_schema(spec, model.kind, len(tagset)) != obj["schema"]:
            raise EcnError("relevant-subset schema digest mismatch")
        return model


def rs_schema(spec: RelevantSubsetSpec, kind: str, k: int) -> str:
    payload = json.dumps({"spec": spec.to_dict(), "kind": kind, "k": k,
                          "features": list(spec.feature_names)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def model_digest(model) -> str:
    return hashlib.sha256(json.dumps(model.to_dict(), sort_keys=True).encode()).hexdigest()


def _centre_inputs(base_model, ds: Dataset, soft: bool) -> list:
    if soft:
        return predict_distributions(base_model, ds)
    return predict_labels(base_model, ds)


def _sequence_rows(ds: Dataset, yhat: list, spec: RelevantSubsetSpec, cross: bool,
                   neighbors: list | None = None) -> tuple[list, np.ndarray]:
    rows, offsets = [], [0]
    names = ds.tagset.labels
    for i, s in enumerate(ds.samples):
        pred = yhat[i]
        if np.ndim(pred) == 1:
            pred = [names[v] for v in pred]
        nb = None if neighbors is None else [names[v] for v in neighbors[i]]
        fill_seed = splitmix.derive_seed(spec.seed, i)
        for j in range(len(s)):
            rows.append(_slot_keys(sequence_rs(s, pred, j, spec, fill_seed, nb), cross))
        offsets.append(len(rows))
    return rows, np.asarray(offsets)


def _batches(n: int, size: int, steps: int, seed: int):
    rng = np.random.default_rng([seed, 2])
    size = min(size, n)
    order, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + size > n:
            order, pos = rng.permutation(n), 0
        yield np.sort(order[pos:pos + size])
        pos += size


def _train_sequence(base_model, gold: Dataset, spec: RelevantSubsetSpec, cfg: EcnTrainConfig) -> EcnModel:
    soft = spec.is_soft("sequence")
    yhat = _centre_inputs(base_model, gold, soft)
    rows, offsets = _sequence_rows(gold, yhat, spec, cfg.cross_prediction)
    y = np.concatenate([np.asarray(s.labels, dtype=np.int64) for s in gold.samples])
    keys: dict = {}
    for row in rows:
        for key, _ in row:
            keys.setdefault(key, None)
    k = len(gold.tagset)
    g = SoftmaxCorrector(list(keys), np.zeros((len(keys), k)), np.zeros(k), cfg.cross_prediction)
    idx, val = g.encode(rows)
    model = EcnModel("sequence", gold.tagset, spec, g, 0)
    lr = cfg.rate_for("sequence")
    for batch in _batches(len(gold), cfg.batch_size, cfg.steps, cfg.seed):
        sel = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in batch])
        loss, gw, gb = g.loss_grad(idx[sel], val[sel], y[sel], cfg.l2)
        g.weights -= lr * gw
        g.bias -= lr * gb
        model.history.append((len(sel), loss))
    return model


def _train_grid(base_model, gold: Dataset, spec: RelevantSubsetSpec, cfg: EcnTrainConfig) -> EcnModel:
    k = len(gold.tagset)
    yhat = _centre_inputs(base_model, gold, spec.is_soft("grid"))
    planes = [pad_planes(grid_rs_planes(s, yh, spec, k, i), spec.window)
              for i, (s, yh) in enumerate(zip(gold.samples, yhat))]
    g = PatchClassifier.init(spec.window, k + 3, gold.tagset, cfg.hidden, cfg.seed)
    model = EcnModel("grid", gold.tagset, spec, g, cfg.border_for(spec))
    padded = np.stack(planes)
    labels = np.stack([s.labels for s in gold.samples])
    _, h, w = labels.shape
    rr, cc = np.divmod(np.arange(h * w), w)
    velocity = [np.zeros_like(p) for p in g.params()]
    lr = cfg.rate_for("grid")
    for batch in _batches(len(gold), cfg.batch_size, cfg.steps, cfg.seed):
        img = np.repeat(batch, h * w)
        rows, cols = np.tile(rr, len(batch)), np.tile(cc, len(batch))
        x = gather_windows(padded, img, rows, cols, spec.window)
        loss, grads = g.loss_grad(x, labels[img, rows, cols], cfg.l2)
        for v, p, gr in zip(velocity, g.params(), grads):
            v *= cfg.momentum
            v -= lr * gr
            p += v
        model.history.append((len(img), loss))
    g.trained = True
    return model


def ecn_train(base_model, gold: Dataset, spec: RelevantSubsetSpec, cfg: EcnTrainConfig) -> EcnModel:
    """Fit the shared corrector on (RS input -> true label) pairs from the gold set.

    The base model is only used for inference; its weights are never touched.
    Each update uses every element of ``cfg.batch_size`` gold samples.
    """
    if len(gold) == 0:
        raise DatasetError("cannot train an error-correcting network on an empty gold set")
    if gold.tagset != base_model.tagset:
        raise EcnError("gold tag set does not match the base model")
    if gold.kind == "grid":
        return _train_grid(base_model, gold, spec, cfg)
    return _train_sequence(base_model, gold, spec, cfg)


def ecn_correct(base_model, g: EcnModel, ds: Dataset) -> Dataset:
    """Relabel ``ds`` with argmax g(RS) for every element (grid border strip keeps the base prediction)."""
    if ds.tagset != g.tagset or ds.tagset != base_model.tagset:
        raise EcnError("tag set mismatch between dataset and models")
    spec = g.spec
    k = len(ds.tagset)
    if len(ds) == 0:
        return ds.with_role("corrupted")
    if g.kind == "grid":
        yhat = _centre_inputs(base_model, ds, spec.is_soft("grid"))
        new = []
        for i, (s, yh) in enumerate(zip(ds.samples, yhat)):
            base = yh.argmax(axis=2) if yh.ndim == 3 else yh
            out = predict_planes(g.corrector, grid_rs_planes(s, yh, spec, k, i)).argmax(axis=2)
            b = g.border
            if b > 0:
                keep = np.ones_like(base, dtype=bool)
                keep[b:base.shape[0] - b, b:base.shape[1] - b] = False
                out = np.where(keep, base, out)
            new.append(out)
        return ds.with_labels(new, role="corrupted")
    yhat = _centre_inputs(base_model, ds, spec.is_soft("sequence"))
    neighbors = ([s.labels for s in ds.samples] if spec.neighbor_source == "observed" else None)
    rows, offsets = _sequence_rows(ds, yhat, spec, g.corrector.cross, neighbors)
    idx, val = g.corrector.encode(rows)
    pred = g.corrector.proba(idx, val).argmax(axis=1)
    return ds.with_labels([pred[offsets[i]:offsets[i + 1]] for i in range(len(ds))], role="corrupted")


# ---------------------------------------------------------------- full pipeline

@dataclass
class PipelineResult:
    base: object
    ecn: EcnModel
    final: object
    corrected: Dataset
    scores: dict
    rows: list = field(default_factory=list)
    runtime: float = 0.0


def ecn_pipeline(corrupted: Dataset, gold: Dataset, test: Dataset, spec: RelevantSubsetSpec,
                 base_cfgs: BaseConfigs, ecn_cfg: EcnTrainConfig, base_model=None,
                 dataset_name: str = "custom", strategy: str | None = None, seed: int = 0) -> PipelineResult:
    """Train f on corrupted data, g on gold, relabel the corpus, retrain f' on it, score f' on test."""
    if not (corrupted.tagset == gold.tagset == test.tagset):
        raise EcnError("corrupted, gold and test datasets must share a tag set")
    start = time.perf_counter()
    f = base_model if base_model is not None else train_base(corrupted, base_cfgs)
    g = ecn_train(f, gold, spec, ecn_cfg)
    corrected = ecn_correct(f, g, corrupted)
    final = train_base(corrected, base_cfgs)
    scores = score_pair(test.with_labels(predict_labels(final, test)), test)
    runtime = time.perf_counter() - start
    name = strategy or f"ecn_{spec.variant}"
    rows = [ResultRow(dataset_name, name, metric, value, seed, runtime) for metric, value in scores.items()]
    return PipelineResult(f, g, final, corrected, scores, rows, runtime)
