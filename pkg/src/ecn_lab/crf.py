"""Linear-chain CRF: forward-backward, Viterbi, log-likelihood gradient, training.

The model has sparse unary weights over ``feature=value`` keys and a dense
K x K transition matrix.  There are no start/stop weights, so a length-one
chain is scored by its unary potentials alone.

All inference runs on padded batches of shape (B, T, K) with a per-row
length; the single-sentence functions are thin wrappers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .core import Dataset, DatasetError, SequenceSample, TagSet
from .features import FEATURE_NAMES, encode_value, schema_digest, token_features


class CrfError(ValueError):
    pass


@dataclass
class TrainConfig:
    """``optimizer='lbfgs'`` runs full-batch L-BFGS for at most ``steps`` iterations
    (batch size and learning rate unused); ``'sgd'`` runs ``steps`` minibatch steps."""
    steps: int = 100
    batch_size: int = 32
    learning_rate: float = 0.2
    c1: float = 0.1
    c2: float = 0.1
    seed: int = 0
    optimizer: str = "lbfgs"

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.optimizer not in ("lbfgs", "sgd"):
            raise ValueError("optimizer must be 'lbfgs' or 'sgd'")
        if self.c1 < 0 or self.c2 < 0 or self.learning_rate <= 0:
            raise ValueError("regularization must be >= 0 and learning_rate > 0")


@dataclass
class CrfModel:
    tagset: TagSet
    keys: list[str]
    unary: np.ndarray
    transitions: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    trained: bool = False
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        k = len(self.tagset)
        if self.unary.shape != (len(self.keys), k) or self.transitions.shape != (k, k):
            raise CrfError("weight shapes do not match the vocabulary and tag set")
        self.index = {key: i for i, key in enumerate(self.keys)}

    @classmethod
    def zeros(cls, tagset: TagSet, keys: Sequence[str], feature_names=FEATURE_NAMES) -> "CrfModel":
        k = len(tagset)
        return cls(tagset, list(keys), np.zeros((len(keys), k)), np.zeros((k, k)), tuple(feature_names))

    @property
    def schema(self) -> str:
        return schema_digest(self.feature_names)

    @property
    def n_weights(self) -> int:
        return self.unary.size + self.transitions.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.unary.ravel(), self.transitions.ravel()])

    def set_flat(self, w: np.ndarray) -> None:
        n = self.unary.size
        self.unary = np.asarray(w[:n], dtype=np.float64).reshape(self.unary.shape).copy()
        self.transitions = np.asarray(w[n:], dtype=np.float64).reshape(self.transitions.shape).copy()

    def copy(self) -> "CrfModel":
        return CrfModel(self.tagset, list(self.keys), self.unary.copy(), self.transitions.copy(),
                        self.feature_names, self.trained, list(self.history))

    def to_dict(self) -> dict:
        return {
            "format": "ecn-lab/crf", "version": 1,
            "tagset": {"labels": list(self.tagset.labels), "background_index": self.tagset.background_index},
            "schema": self.schema, "feature_names": list(self.feature_names),
            "keys": self.keys, "unary": self.unary.tolist(), "transitions": self.transitions.tolist(),
            "trained": self.trained,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CrfModel":
        if obj.get("format") != "ecn-lab/crf":
            raise CrfError(f"not a CRF model container: {obj.get('format')!r}")
        tagset = TagSet(tuple(obj["tagset"]["labels"]), obj["tagset"]["background_index"])
        k = len(tagset)
        unary = np.array(obj["unary"], dtype=np.float64).reshape(len(obj["keys"]), k)
        model = cls(tagset, list(obj["keys"]), unary, np.array(obj["transitions"], dtype=np.float64),
                    tuple(obj["feature_names"]), bool(obj.get("trained", False)))
        if model.schema != obj["schema"]:
            raise CrfError("feature schema digest does not match the stored feature names")
        return model


# ---------------------------------------------------------------- encoding

@lru_cache(maxsize=200_000)
def _token_keys(tokens: tuple, names: tuple) -> tuple:
    out = []
    for j in range(len(tokens)):
        feats = token_features(tokens, j)
        out.append(tuple(encode_value(n, feats[n]) for n in names))
    return tuple(out)


def sample_keys(sample: SequenceSample, names=FEATURE_NAMES) -> list[list[tuple[str, float]]]:
    """(key, value) pairs per token: the named base features plus any file-supplied extras."""
    base = _token_keys(sample.tokens, tuple(names))
    out = []
    for j, pairs in enumerate(base):
        extra = sample.features[j]
        if extra:
            pairs = pairs + tuple(encode_value("x:" + k, v) for k, v in sorted(extra.items()))
        out.append(list(pairs))
    return out


def feature_maps_keys(feature_maps: Sequence[dict]) -> list[list[tuple[str, float]]]:
    return [[encode_value(k, v) for k, v in fm.items()] for fm in feature_maps]


def build_vocab(per_sample_keys: Sequence[Sequence[Sequence[tuple[str, float]]]]) -> list[str]:
    seen: dict[str, None] = {}
    for sent in per_sample_keys:
        for tok in sent:
            for key, _ in tok:
                seen.setdefault(key, None)
    return list(seen)


@dataclass
class Encoded:
    """Padded feature indices/values: idx, val of shape (N, T, F); lengths (N,)."""
    idx: np.ndarray
    val: np.ndarray
    lengths: np.ndarray

    def batch(self, rows) -> "Encoded":
        lengths = self.lengths[rows]
        t = int(lengths.max())
        return Encoded(self.idx[rows, :t], self.val[rows, :t], lengths)

    def __len__(self) -> int:
        return len(self.lengths)


def encode(index: dict, per_sample_keys) -> Encoded:
    n = len(per_sample_keys)
    t = max((len(s) for s in per_sample_keys), default=1)
    f = max((len(tok) for s in per_sample_keys for tok in s), default=1)
    idx = np.zeros((n, t, max(f, 1)), dtype=np.int64)
    val = np.zeros((n, t, max(f, 1)))
    lengths = np.zeros(n, dtype=np.int64)
    for i, sent in enumerate(per_sample_keys):
        lengths[i] = len(sent)
        for j, tok in enumerate(sent):
            for m, (key, v) in enumerate(tok):
                pos = index.get(key)
                if pos is not None:
                    idx[i, j, m] = pos
                    val[i, j, m] = v
    return Encoded(idx, val, lengths)


def encode_dataset(model: CrfModel, ds: Dataset) -> Encoded:
    return encode(model.index, [sample_keys(s, model.feature_names) for s in ds.samples])


def pad_labels(labels: Sequence[Sequence[int]], t: int) -> np.ndarray:
    out = np.zeros((len(labels), t), dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i, :len(lab)] = lab
    return out


# ---------------------------------------------------------------- inference

def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis) + np.log(np.exp(a - m).sum(axis=axis))


def emissions(unary: np.ndarray, enc: Encoded) -> np.ndarray:
    return np.einsum("btf,btfk->btk", enc.val, unary[enc.idx])


def _check_finite(e: np.ndarray, trans: np.ndarray) -> None:
    if not (np.isfinite(e).all() and np.isfinite(trans).all()):
        raise CrfError("non-finite potentials")


def forward_backward(e: np.ndarray, lengths: np.ndarray, trans: np.ndarray):
    """Batched forward-backward.

    Returns (log_z (B,), marginals (B, T, K), pairwise (B, T-1, K, K)); rows
    past each sequence's length are zero.  Uses per-step rescaled
    probabilities and falls back to log space if a scale underflows.
    """
    _check_finite(e, trans)
    b, t, k = e.shape
    valid = np.arange(t)[None, :] < lengths[:, None]
    e_max = e.max(axis=2, keepdims=True)
    p = np.exp(e - e_max)
    t_max = trans.max()
    m = np.exp(trans - t_max)
    alpha = np.empty_like(e)
    scale = np.ones((b, t))
    scale[:, 0] = p[:, 0].sum(axis=1)
    alpha[:, 0] = p[:, 0] / scale[:, 0, None]
    for s in range(1, t):
        a = (alpha[:, s - 1] @ m) * p[:, s]
        live = s < lengths
        c = np.where(live, a.sum(axis=1), 1.0)
        scale[:, s] = c
        with np.errstate(invalid="ignore", divide="ignore"):
            alpha[:, s] = np.where(live[:, None], a / c[:, None], alpha[:, s - 1])
    if not (scale > 1e-280).all():
        return _forward_backward_log(e, lengths, trans)
    log_z = ((np.log(scale) + e_max[:, :, 0]) * valid).sum(axis=1) + t_max * (lengths - 1)
    beta = np.ones_like(e)
    for s in range(t - 2, -1, -1):
        nb = ((p[:, s + 1] * beta[:, s + 1]) @ m.T) / scale[:, s + 1, None]
        beta[:, s] = np.where((s + 1 < lengths)[:, None], nb, 1.0)
    marg = alpha * beta * valid[:, :, None]
    if t > 1:
        pair = (alpha[:, :-1, :, None] * m[None, None]
                * ((p[:, 1:] * beta[:, 1:]) / scale[:, 1:, None])[:, :, None, :])
        pair *= valid[:, 1:, None, None]
    else:
        pair = np.zeros((b, 0, k, k))
    return log_z, marg, pair


def _forward_backward_log(e: np.ndarray, lengths: np.ndarray, trans: np.ndarray):
    b, t, k = e.shape
    alpha = np.empty_like(e)
    beta = np.zeros_like(e)
    alpha[:, 0] = e[:, 0]
    for s in range(1, t):
        new = _lse(alpha[:, s - 1, :, None] + trans[None], axis=1) + e[:, s]
        alpha[:, s] = np.where((s < lengths)[:, None], new, alpha[:, s - 1])
    log_z = _lse(alpha[:, -1], axis=1)
    for s in range(t - 2, -1, -1):
        new = _lse(trans[None] + (e[:, s + 1] + beta[:, s + 1])[:, None, :], axis=2)
        beta[:, s] = np.where((s + 1 < lengths)[:, None], new, 0.0)
    valid = np.arange(t)[None, :] < lengths[:, None]
    marg = np.exp(alpha + beta - log_z[:, None, None]) * valid[:, :, None]
    if t > 1:
        pair = np.exp(alpha[:, :-1, :, None] + trans[None, None]
                      + (e[:, 1:] + beta[:, 1:])[:, :, None, :] - log_z[:, None, None, None])
        pair *= valid[:, 1:, None, None]
    else:
        pair = np.zeros((b, 0, k, k))
    return log_z, marg, pair


TIE_TOL = 1e-9


def viterbi(e: np.ndarray, lengths: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Batched max-score decoding.

    A backward pass computes the best suffix score for every (position,
    label); decoding then walks forward taking the lowest label index whose
    continuation reaches the optimum (within ``TIE_TOL`` relative).  Among
    tied optimal labelings this returns the lexicographically smallest one.
    """
    _check_finite(e, trans)
    b, t, k = e.shape
    best = e.copy()
    for s in range(t - 2, -1, -1):
        cont = (trans[None] + best[:, s + 1][:, None, :]).max(axis=2)
        best[:, s] = np.where((s + 1 < lengths)[:, None], e[:, s] + cont, e[:, s])
    rows = np.arange(b)
    path = np.zeros((b, t), dtype=np.int64)
    cand = best[:, 0]
    for s in range(t):
        top = cand.max(axis=1, keepdims=True)
        ok = cand >= top - TIE_TOL * np.maximum(1.0, np.abs(top))
        cur = ok.argmax(axis=1)
        path[:, s] = np.where(s < lengths, cur, 0)
        if s + 1 < t:
            cand = trans[cur] + best[:, s + 1]
    return path


def sequence_score(e: np.ndarray, lengths: np.ndarray, trans: np.ndarray, y: np.ndarray) -> np.ndarray:
    b, t, _ = e.shape
    valid = np.arange(t)[None, :] < lengths[:, None]
    unary = np.take_along_axis(e, y[:, :, None], axis=2)[:, :, 0]
    score = (unary * valid).sum(axis=1)
    if t > 1:
        score += (trans[y[:, :-1], y[:, 1:]] * valid[:, 1:]).sum(axis=1)
    return score


@dataclass
class ForwardResult:
    log_z: float
    marginals: np.ndarray
    pairwise: np.ndarray


def _single(model: CrfModel, features) -> tuple[np.ndarray, np.ndarray]:
    """Emissions (1, d, K) for one sentence given a sample, token list or feature maps."""
    if isinstance(features, SequenceSample):
        keys = sample_keys(features, model.feature_names)
    elif features and isinstance(features[0], dict):
        keys = feature_maps_keys(features)
    else:
        keys = sample_keys(SequenceSample(tuple(features), (0,) * len(features)), model.feature_names)
    if not keys:
        raise CrfError("empty sequence")
    enc = encode(model.index, [keys])
    return emissions(model.unary, enc), enc.lengths


def crf_forward(model: CrfModel, features) -> ForwardResult:
    e, lengths = _single(model, features)
    log_z, marg, pair = forward_backward(e, lengths, model.transitions)
    return ForwardResult(float(log_z[0]), marg[0], pair[0])


def crf_decode(model: CrfModel, features) -> list[int]:
    e, lengths = _single(model, features)
    return viterbi(e, lengths, model.transitions)[0].tolist()


def crf_marginal_decode(model: CrfModel, features) -> tuple[list[int], np.ndarray]:
    res = crf_forward(model, features)
    return res.marginals.argmax(axis=1).tolist(), res.marginals


# ---------------------------------------------------------------- learning

def penalty(model: CrfModel, c1: float, c2: float) -> float:
    w = model.flat()
    return float(c1 * np.abs(w).sum() + 0.5 * c2 * (w @ w))


def batch_loglik_grad(model: CrfModel, enc: Encoded, y: np.ndarray):
    """Summed log-likelihood of a padded batch and its gradient (no regularization)."""
    e = emissions(model.unary, enc)
    log_z, marg, pair = forward_backward(e, enc.lengths, model.transitions)
    ll = float((sequence_score(e, enc.lengths, model.transitions, y) - log_z).sum())
    b, t, k = e.shape
    valid = (np.arange(t)[None, :] < enc.lengths[:, None]).astype(np.float64)
    diff = (np.eye(k)[y] - marg) * valid[:, :, None]
    contrib = enc.val[..., None] * diff[:, :, None, :]
    g_unary = np.zeros_like(model.unary)
    np.add.at(g_unary, enc.idx.ravel(), contrib.reshape(-1, k))
    g_trans = -pair.sum(axis=(0, 1))
    if t > 1:
        np.add.at(g_trans, (y[:, :-1], y[:, 1:]), valid[:, 1:])
    return ll, g_unary, g_trans


def reg_grad(w: np.ndarray, c1: float, c2: float) -> np.ndarray:
    """Gradient of the penalty; the L1 subgradient at zero is zero."""
    return c1 * np.sign(w) + c2 * w


def crf_loglik_grad(model: CrfModel, sample: SequenceSample, c1: float = 0.0, c2: float = 0.0):
    """Regularized log-likelihood of one labeled sample and its flat gradient.

    The objective is ``log p(y|x) - c1*|w|_1 - c2/2*|w|^2``; the gradient is
    empirical minus expected feature counts minus the penalty gradient.
    """
    if len(sample) == 0:
        raise CrfError("empty sequence")
    enc = encode(model.index, [sample_keys(sample, model.feature_names)])
    y = pad_labels([sample.labels], enc.idx.shape[1])
    ll, gu, gt = batch_loglik_grad(model, enc, y)
    w = model.flat()
    grad = np.concatenate([gu.ravel(), gt.ravel()]) - reg_grad(w, c1, c2)
    return ll - penalty(model, c1, c2), grad


def dataset_objective(model: CrfModel, enc: Encoded, y: np.ndarray, c1: float, c2: float) -> float:
    """Negative regularized log-likelihood of a whole encoded corpus."""
    e = emissions(model.unary, enc)
    log_z, _, _ = forward_backward(e, enc.lengths, model.transitions)
    ll = (sequence_score(e, enc.lengths, model.transitions, y) - log_z).sum()
    return float(-ll + penalty(model, c1, c2))


def crf_train(train: Dataset, cfg: TrainConfig, feature_names=FEATURE_NAMES,
              track_objective: bool = False) -> CrfModel:
    """Fit a CRF by maximizing ``sum log p(y|x) - c1*|w|_1 - c2/2*|w|^2``.

    SGD step: ``w += lr * (mean batch gradient - penalty gradient / N)``,
    an unbiased step on the corpus objective divided by N.
    """
    if len(train) == 0:
        raise DatasetError("cannot train a CRF on an empty dataset")
    if train.kind != "sequence":
        raise TypeError("crf_train needs a sequence dataset")
    per_sample = [sample_keys(s, feature_names) for s in train.samples]
    model = CrfModel.zeros(train.tagset, build_vocab(per_sample), feature_names)
    enc = encode(model.index, per_sample)
    y_all = pad_labels([s.labels for s in train.samples], enc.idx.shape[1])
    if cfg.optimizer == "lbfgs":
        _fit_lbfgs(model, enc, y_all, cfg, track_objective)
    else:
        _fit_sgd(model, enc, y_all, cfg, track_objective)
    model.trained = True
    return model


def _fit_sgd(model: CrfModel, enc: Encoded, y_all: np.ndarray, cfg: TrainConfig, track: bool) -> None:
    n = len(enc)
    bsz = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    pos = 0
    for _ in range(cfg.steps):
        if pos + bsz > n:
            order, pos = rng.permutation(n), 0
        rows = np.sort(order[pos:pos + bsz])
        pos += bsz
        batch = enc.batch(rows)
        _, gu, gt = batch_loglik_grad(model, batch, y_all[rows, :batch.idx.shape[1]])
        model.unary += cfg.learning_rate * (gu / bsz - reg_grad(model.unary, cfg.c1, cfg.c2) / n)
        model.transitions += cfg.learning_rate * (gt / bsz - reg_grad(model.transitions, cfg.c1, cfg.c2) / n)
        if track:
            model.history.append(dataset_objective(model, enc, y_all, cfg.c1, cfg.c2))


def _fit_lbfgs(model: CrfModel, enc: Encoded, y: np.ndarray, cfg: TrainConfig, track: bool) -> None:
    # L1 is made smooth by splitting w = w_pos - w_neg with w_pos, w_neg >= 0
    n, t, f = enc.idx.shape
    v, k = model.unary.shape
    design = sp.csr_matrix((enc.val.ravel(), (np.repeat(np.arange(n * t), f), enc.idx.ravel())),
                           shape=(n * t, v))
    valid = (np.arange(t)[None, :] < enc.lengths[:, None]).astype(np.float64)
    target = np.eye(k)[y] * valid[..., None]
    emp_trans = np.zeros((k, k))
    if t > 1:
        np.add.at(emp_trans, (y[:, :-1], y[:, 1:]), valid[:, 1:])
    emp = np.concatenate([(design.T @ target.reshape(-1, k)).ravel(), emp_trans.ravel()])
    n_u = v * k
    dim = n_u + k * k

    def objective(z):
        w = z[:dim] - z[dim:]
        unary, trans = w[:n_u].reshape(v, k), w[n_u:].reshape(k, k)
        e = (design @ unary).reshape(n, t, k)
        log_z, marg, pair = forward_backward(e, enc.lengths, trans)
        ll = float((sequence_score(e, enc.lengths, trans, y) - log_z).sum())
        expected = np.concatenate([(design.T @ (marg * valid[..., None]).reshape(-1, k)).ravel(),
                                   pair.sum(axis=(0, 1)).ravel()])
        g = expected - emp + cfg.c2 * w
        value = -ll + cfg.c1 * z.sum() + 0.5 * cfg.c2 * float(w @ w)
        return value, np.concatenate([g + cfg.c1, cfg.c1 - g])

    callback = None
    if track:
        def callback(z):
            model.history.append(float(objective(z)[0]))
    z0 = np.zeros(2 * dim)
    res = minimize(objective, z0, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * (2 * dim),
                   callback=callback, options={"maxiter": cfg.steps})
    w = res.x[:dim] - res.x[dim:]
    model.unary = w[:n_u].reshape(v, k).copy()
    model.transitions = w[n_u:].reshape(k, k).copy()


def crf_predict(model: CrfModel, ds: Dataset, chunk: int = 256) -> list[list[int]]:
    """Viterbi labels for every sample of ``ds``."""
    enc = encode_dataset(model, ds)
    out = []
    for start in range(0, len(enc), chunk):
        rows = np.arange(start, min(start + chunk, len(enc)))
        batch = enc.batch(rows)
        paths = viterbi(emissions(model.unary, batch), batch.lengths, model.transitions)
        out.extend(p[:n].tolist() for p, n in zip(paths, batch.lengths))
    return out


def crf_predict_marginals(model: CrfModel, ds: Dataset, chunk: int = 256) -> list[np.ndarray]:
    enc = encode_dataset(model, ds)
    out = []
    for start in range(0, len(enc), chunk):
        rows = np.arange(start, min(start + chunk, len(enc)))
        batch = enc.batch(rows)
        _, marg, _ = forward_backward(emissions(model.unary, batch), batch.lengths, model.transitions)
        out.extend(m[:n].copy() for m, n in zip(marg, batch.lengths))
    return out
