"""Fine-grained labeled data: tag sets, samples, datasets and validation.

Labels are always stored as integer indices into a :class:`TagSet`; one-hot
encodings are derived on demand.  Every type here is treated as immutable
once built (grid arrays are flagged read-only).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence, Union

import numpy as np

ROLES = ("corrupted", "gold", "test", "clean")


class DatasetError(ValueError):
    """Raised when a dataset fails validation where validity is required."""

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


@dataclass(frozen=True)
class TagSet:
    labels: tuple[str, ...]
    background_index: int = 0

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError("tag set must contain at least one label")
        if any(not isinstance(name, str) or not name for name in labels):
            raise ValueError("label names must be non-empty strings")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate label names in {labels}")
        if not 0 <= self.background_index < len(labels):
            raise ValueError(
                f"background_index {self.background_index} out of range for {len(labels)} labels")

    @classmethod
    def from_names(cls, names: Iterable[str], background: str | None = None) -> "TagSet":
        names = tuple(names)
        if background is None:
            for candidate in ("O", "background"):
                if candidate in names:
                    background = candidate
                    break
            else:
                raise ValueError("no background label given and none named 'O' or 'background'")
        return cls(names, names.index(background))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def background(self) -> str:
        return self.labels[self.background_index]

    def index(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}") from None

    def name(self, index: int) -> str:
        return self.labels[index]

    def one_hot(self, labels) -> np.ndarray:
        idx = np.asarray(labels, dtype=np.int64)
        return np.eye(len(self.labels))[idx]


@dataclass(frozen=True)
class SequenceSample:
    tokens: tuple[str, ...]
    labels: tuple[int, ...]
    features: tuple[dict, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        feats = tuple(self.features) if self.features else tuple({} for _ in self.tokens)
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.tokens)

    def with_labels(self, labels) -> "SequenceSample":
        return SequenceSample(self.tokens, tuple(int(v) for v in labels), self.features)


@dataclass(frozen=True, eq=False)
class GridSample:
    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        pixels.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1] if self.labels.ndim > 1 else 0

    def __len__(self) -> int:
        return int(self.labels.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridSample):
            return NotImplemented
        return (self.pixels.shape == other.pixels.shape
                and self.labels.shape == other.labels.shape
                and np.array_equal(self.pixels, other.pixels)
                and np.array_equal(self.labels, other.labels))

    def with_labels(self, labels) -> "GridSample":
        return GridSample(self.pixels, labels)


Sample = Union[SequenceSample, GridSample]


@dataclass(frozen=True)
class Dataset:
    tagset: TagSet
    samples: tuple = ()
    role: str = "clean"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        kinds = {type(s) for s in self.samples}
        if len(kinds) > 1:
            raise ValueError("dataset mixes sequence and grid samples")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def kind(self) -> str | None:
        if not self.samples:
            return None
        return "sequence" if isinstance(self.samples[0], SequenceSample) else "grid"

    def with_role(self, role: str) -> "Dataset":
        return Dataset(self.tagset, self.samples, role)

    def with_labels(self, labels: Sequence, role: str | None = None) -> "Dataset":
        """Same inputs, new per-element labels (one entry per sample)."""
        if len(labels) != len(self.samples):
            raise ValueError("need one label vector per sample")
        samples = [s.with_labels(lab) for s, lab in zip(self.samples, labels)]
        return Dataset(self.tagset, samples, role or self.role)

    def label_arrays(self) -> list[np.ndarray]:
        return [np.asarray(s.labels, dtype=np.int64) for s in self.samples]

    def concat(self, other: "Dataset", role: str | None = None) -> "Dataset":
        if other.tagset != self.tagset:
            raise ValueError("cannot concatenate datasets with different tag sets")
        return Dataset(self.tagset, self.samples + other.samples, role or self.role)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.tagset, [self.samples[i] for i in indices], self.role)


@dataclass(frozen=True)
class CorruptionRecord:
    corrupted: Dataset
    true_labels: tuple
    spec_digest: str
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "true_labels", tuple(self.true_labels))
        if not self.spec_digest:
            raise ValueError("spec_digest must be non-empty")
        if len(self.true_labels) != len(self.corrupted):
            raise ValueError("true_labels must have one entry per corrupted sample")
        for i, (s, truth) in enumerate(zip(self.corrupted, self.true_labels)):
            if np.shape(truth) != np.shape(s.labels):
                raise ValueError(f"true labels of sample {i} do not match its shape")

    def changed_mask(self) -> list[np.ndarray]:
        return [np.asarray(s.labels) != np.asarray(t)
                for s, t in zip(self.corrupted, self.true_labels)]

    def corrupted_fraction(self) -> float:
        masks = self.changed_mask()
        total = sum(m.size for m in masks)
        return float(sum(int(m.sum()) for m in masks) / total) if total else 0.0

    def truth_dataset(self, role: str = "clean") -> Dataset:
        return self.corrupted.with_labels(self.true_labels, role=role)


@dataclass(frozen=True)
class Violation:
    sample: int
    element: int | None
    message: str

    def __str__(self) -> str:
        where = f"sample {self.sample}"
        if self.element is not None:
            where += f", element {self.element}"
        return f"{where}: {self.message}"


def _check_sequence(i: int, s: SequenceSample, k: int) -> list[Violation]:
    out = []
    d = len(s.tokens)
    if d < 1:
        out.append(Violation(i, None, "empty sequence"))
    if len(s.labels) != d:
        out.append(Violation(i, None, f"length mismatch: {d} tokens, {len(s.labels)} labels"))
    if len(s.features) != d:
        out.append(Violation(i, None, f"length mismatch: {d} tokens, {len(s.features)} feature maps"))
    for j, lab in enumerate(s.labels):
        if not 0 <= lab < k:
            out.append(Violation(i, j, f"label index {lab} out of range [0, {k})"))
    return out


def _check_grid(i: int, s: GridSample, k: int) -> list[Violation]:
    out = []
    if s.labels.ndim != 2 or s.labels.size == 0:
        return [Violation(i, None, f"labels must be a non-empty H x W array, got shape {s.labels.shape}")]
    h, w = s.labels.shape
    if s.pixels.shape != (h, w, 3):
        out.append(Violation(i, None, f"pixel shape {s.pixels.shape} does not match labels {(h, w)}"))
    else:
        bad = np.argwhere(~((s.pixels >= 0.0) & (s.pixels <= 1.0)).all(axis=2))
        for r, c in bad:
            out.append(Violation(i, int(r * w + c), "pixel channel outside [0, 1]"))
    bad = np.argwhere((s.labels < 0) | (s.labels >= k))
    for r, c in bad:
        out.append(Violation(i, int(r * w + c), f"label index {int(s.labels[r, c])} out of range [0, {k})"))
    return out


def validate_dataset(ds: Dataset) -> list[Violation]:
    """Every invariant violation in ``ds``; empty iff the dataset is valid."""
    k = len(ds.tagset)
    out: list[Violation] = []
    for i, s in enumerate(ds.samples):
        if isinstance(s, SequenceSample):
            out.extend(_check_sequence(i, s, k))
        elif isinstance(s, GridSample):
            out.extend(_check_grid(i, s, k))
        else:
            out.append(Violation(i, None, f"unsupported sample type {type(s).__name__}"))
    return out


def require_valid(ds: Dataset) -> None:
    violations = validate_dataset(ds)
    if violations:
        shown = "; ".join(str(v) for v in violations[:5])
        raise DatasetError(f"invalid dataset ({len(violations)} violations): {shown}", violations)


@dataclass(frozen=True)
class DatasetStats:
    counts: dict[str, int]
    n_samples: int
    n_elements: int


def dataset_stats(ds: Dataset) -> DatasetStats:
    require_valid(ds)
    counts = label_counts((s.labels for s in ds.samples), len(ds.tagset))
    total = sum(len(s) for s in ds.samples)
    return DatasetStats(dict(zip(ds.tagset.labels, counts.tolist())), len(ds.samples), total)


def label_counts(labels: Iterable[Any], k: int) -> np.ndarray:
    out = np.zeros(k, dtype=np.int64)
    for lab in labels:
        out += np.bincount(np.asarray(lab, dtype=np.int64).ravel(), minlength=k)
    return out
