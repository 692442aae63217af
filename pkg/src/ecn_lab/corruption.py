"""Structured label-error injectors.

Each injector is a pure, seeded transformation returning a
:class:`~ecn_lab.core.CorruptionRecord` that keeps the original labels as
ground truth.  Randomness is drawn per entity span (sequences) or per image
(grids) from a SplitMix64 stream keyed on ``(seed, sample_index)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import rng
from .core import CorruptionRecord, Dataset, GridSample, SequenceSample, require_valid

KINDS = ("imprecise", "missing_random", "missing_systematic", "grid_misclassify", "grid_coarsen")
IMPRECISE_MODES = {
    # mode: (selection probability, min extension, max extension)
    "fixed": (1.0, 3, 3),
    "random_half": (0.5, 3, 3),
    "variable": (1.0, 1, 3),
    "random_variable": (0.75, 1, 3),
}

WeakTagger = Callable[[SequenceSample], Sequence[bool]]


class CorruptionError(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CorruptionError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise CorruptionError("seed must be an unsigned 64-bit integer")
        _check_params(self.kind, self.params)

    def canonical(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": int(self.seed), "rng": rng.ALGORITHM}

    def canonical_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": int(self.seed)}

    @classmethod
    def from_json(cls, obj: dict) -> "CorruptionSpec":
        return cls(obj["kind"], dict(obj.get("params", {})), int(obj.get("seed", 0)))


def _prob(params: dict, key: str) -> None:
    if key not in params:
        raise CorruptionError(f"missing parameter {key!r}")
    p = params[key]
    if not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0:
        raise CorruptionError(f"{key} must be a probability in [0, 1], got {p!r}")


def _check_params(kind: str, params: dict) -> None:
    if kind == "imprecise":
        if params.get("mode") not in IMPRECISE_MODES:
            raise CorruptionError(f"imprecise mode must be one of {tuple(IMPRECISE_MODES)}")
    elif kind == "missing_random":
        _prob(params, "drop_rate")
    elif kind == "grid_misclassify":
        _prob(params, "fraction")
        for key in ("from_label", "to_label"):
            if key not in params:
                raise CorruptionError(f"missing parameter {key!r}")
        if params["from_label"] == params["to_label"]:
            raise CorruptionError("from_label and to_label must differ")
    elif kind == "grid_coarsen":
        px = params.get("erode_px")
        if not isinstance(px, int) or isinstance(px, bool) or px < 1:
            raise CorruptionError("erode_px must be an integer >= 1")


@dataclass(frozen=True)
class EntitySpan:
    sample_index: int
    start: int
    end: int
    label: int

    def __len__(self) -> int:
        return self.end - self.start


def _require_kind(ds: Dataset, kind: str) -> None:
    if ds.kind not in (kind, None):
        raise TypeError(f"expected a {kind} dataset, got {ds.kind}")


def sample_spans(labels: Sequence[int], background: int, sample_index: int = 0) -> list[EntitySpan]:
    spans = []
    start = None
    for j, lab in enumerate(labels):
        if start is not None and lab != labels[start]:
            spans.append(EntitySpan(sample_index, start, j, labels[start]))
            start = None
        if start is None and lab != background:
            start = j
    if start is not None:
        spans.append(EntitySpan(sample_index, start, len(labels), labels[start]))
    return spans


def find_entity_spans(ds: Dataset) -> list[EntitySpan]:
    """Maximal runs of one non-background label, sorted by (sample, start)."""
    _require_kind(ds, "sequence")
    bg = ds.tagset.background_index
    out = []
    for i, s in enumerate(ds.samples):
        out.extend(sample_spans(s.labels, bg, i))
    return out


def _record(ds: Dataset, new_labels: list, spec: CorruptionSpec) -> CorruptionRecord:
    corrupted = ds.with_labels(new_labels, role="corrupted")
    truth = [s.labels if isinstance(s, SequenceSample) else s.labels.copy() for s in ds.samples]
    return CorruptionRecord(corrupted, truth, spec.digest(), spec.to_json())


def plan_imprecise(ds: Dataset, mode: str, seed: int) -> list[tuple[EntitySpan, bool, int]]:
    """Per-span (selected, extension length) decisions used by :func:`corrupt_imprecise`."""
    if mode not in IMPRECISE_MODES:
        raise CorruptionError(f"unknown imprecise mode {mode!r}")
    p, lo, hi = IMPRECISE_MODES[mode]
    bg = ds.tagset.background_index
    plan = []
    for i, s in enumerate(ds.samples):
        stream = rng.stream(seed, i)
        for span in sample_spans(s.labels, bg, i):
            # both draws always happen so the stream layout is mode-independent
            u = stream.random()
            length = stream.randint(lo, hi)
            plan.append((span, u < p, length))
    return plan


def corrupt_imprecise(ds: Dataset, mode: str, seed: int = 0) -> CorruptionRecord:
    """Extend selected entity spans rightward over following background tokens.

    Extension is clamped at the sentence end and stops before any token that
    already carries a non-background label.
    """
    spec = CorruptionSpec("imprecise", {"mode": mode}, seed)
    _require_kind(ds, "sequence")
    require_valid(ds)
    bg = ds.tagset.background_index
    new = [list(s.labels) for s in ds.samples]
    for span, selected, length in plan_imprecise(ds, mode, seed):
        if not selected:
            continue
        original = ds.samples[span.sample_index].labels
        labels = new[span.sample_index]
        for j in range(span.end, min(span.end + length, len(labels))):
            if original[j] != bg:
                break
            labels[j] = span.label
    return _record(ds, new, spec)


def plan_missing_random(ds: Dataset, drop_rate: float, seed: int) -> list[tuple[EntitySpan, bool]]:
    bg = ds.tagset.background_index
    plan = []
    for i, s in enumerate(ds.samples):
        stream = rng.stream(seed, i)
        for span in sample_spans(s.labels, bg, i):
            plan.append((span, stream.random() < drop_rate))
    return plan


def corrupt_missing_random(ds: Dataset, drop_rate: float, seed: int = 0) -> CorruptionRecord:
    """Drop whole entity spans (all tokens to background) with probability ``drop_rate``."""
    spec = CorruptionSpec("missing_random", {"drop_rate": drop_rate}, seed)
    _require_kind(ds, "sequence")
    require_valid(ds)
    bg = ds.tagset.background_index
    new = [list(s.labels) for s in ds.samples]
    for span, dropped in plan_missing_random(ds, drop_rate, seed):
        if dropped:
            new[span.sample_index][span.start:span.end] = [bg] * len(span)
    return _record(ds, new, spec)


DEFAULT_GAZETTEER = frozenset({
    "january", "february", "march", "april", "may", "june", "july", "august",
    "september", "october", "november", "december",
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
})


class RuleTagger:
    """Capitalization/digit/gazetteer entity detector used as a stand-in weak NER.

    Marks capitalized tokens that are not sentence-initial, all-digit tokens
    and gazetteer words.  It misses sentence-initial and lowercase entity
    tokens, which makes its errors systematic rather than random.
    """

    name = "rule-tagger-v1"

    def __init__(self, gazetteer=DEFAULT_GAZETTEER):
        self.gazetteer = frozenset(w.lower() for w in gazetteer)

    def __call__(self, sample: SequenceSample) -> list[bool]:
        marks = []
        for j, tok in enumerate(sample.tokens):
            mark = (tok[:1].isupper() and j > 0) or tok.isdigit() or tok.lower() in self.gazetteer
            marks.append(bool(mark))
        return marks


def corrupt_missing_systematic(ds: Dataset, weak_tagger: WeakTagger | None = None,
                               seed: int = 0) -> CorruptionRecord:
    """Keep an entity label only where the weak tagger also detects an entity."""
    tagger = weak_tagger or RuleTagger()
    name = getattr(tagger, "name", getattr(tagger, "__name__", type(tagger).__name__))
    spec = CorruptionSpec("missing_systematic", {"tagger": name}, seed)
    _require_kind(ds, "sequence")
    require_valid(ds)
    bg = ds.tagset.background_index
    new = []
    for i, s in enumerate(ds.samples):
        marks = list(tagger(s))
        if len(marks) != len(s):
            raise CorruptionError(
                f"weak tagger returned {len(marks)} marks for sample {i} of length {len(s)}")
        new.append([lab if (lab != bg and mark) else bg for lab, mark in zip(s.labels, marks)])
    return _record(ds, new, spec)


def _label_index(ds: Dataset, label) -> int:
    if isinstance(label, str):
        try:
            return ds.tagset.index(label)
        except KeyError as exc:
            raise CorruptionError(str(exc)) from None
    idx = int(label)
    if not 0 <= idx < len(ds.tagset):
        raise CorruptionError(f"label index {idx} out of range")
    return idx


def plan_grid_misclassify(n_samples: int, fraction: float, seed: int) -> list[bool]:
    return [rng.stream(seed, i).random() < fraction for i in range(n_samples)]


def corrupt_grid_misclassify(ds: Dataset, fraction: float, from_label, to_label,
                             seed: int = 0) -> CorruptionRecord:
    """In a random subset of whole images, relabel every ``from_label`` pixel as ``to_label``."""
    spec = CorruptionSpec("grid_misclassify",
                          {"fraction": fraction, "from_label": from_label, "to_label": to_label}, seed)
    _require_kind(ds, "grid")
    require_valid(ds)
    src, dst = _label_index(ds, from_label), _label_index(ds, to_label)
    if src == dst:
        raise CorruptionError("from_label and to_label must differ")
    new = []
    for s, flip in zip(ds.samples, plan_grid_misclassify(len(ds), fraction, seed)):
        lab = s.labels.copy()
        if flip:
            lab[lab == src] = dst
        new.append(lab)
    return _record(ds, new, spec)


def erode_labels(labels: np.ndarray, erode_px: int, background: int) -> np.ndarray:
    """Erode every non-background class region by ``erode_px`` pixels (square element).

    Each class is eroded against everything that is not that class; removed
    pixels become background.  The image frame does not erode regions.
    """
    out = np.full_like(labels, background)
    structure = np.ones((3, 3), dtype=bool)
    for cls in np.unique(labels):
        if cls == background:
            continue
        mask = ndimage.binary_erosion(labels == cls, structure=structure,
                                      iterations=erode_px, border_value=1)
        out[mask] = cls
    return out


def corrupt_grid_coarsen(ds: Dataset, erode_px: int, seed: int = 0) -> CorruptionRecord:
    """Shrink annotated regions away from their true boundaries (coarse-annotation surrogate)."""
    spec = CorruptionSpec("grid_coarsen", {"erode_px": erode_px}, seed)
    _require_kind(ds, "grid")
    require_valid(ds)
    bg = ds.tagset.background_index
    new = []
    for s in ds.samples:
        if erode_px >= min(s.labels.shape) / 2:
            raise CorruptionError(
                f"erode_px={erode_px} is degenerate for a {s.labels.shape[0]}x{s.labels.shape[1]} grid")
        new.append(erode_labels(s.labels, erode_px, bg))
    return _record(ds, new, spec)


def apply_corruption(ds: Dataset, spec: CorruptionSpec,
                     weak_tagger: WeakTagger | None = None) -> CorruptionRecord:
    p = spec.params
    if spec.kind == "imprecise":
        return corrupt_imprecise(ds, p["mode"], spec.seed)
    if spec.kind == "missing_random":
        return corrupt_missing_random(ds, p["drop_rate"], spec.seed)
    if spec.kind == "missing_systematic":
        return corrupt_missing_systematic(ds, weak_tagger, spec.seed)
    if spec.kind == "grid_misclassify":
        return corrupt_grid_misclassify(ds, p["fraction"], p["from_label"], p["to_label"], spec.seed)
    return corrupt_grid_coarsen(ds, p["erode_px"], spec.seed)
