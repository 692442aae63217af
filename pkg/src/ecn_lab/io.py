"""Readers and writers for tag sets, CoNLL-style sequences, ECNGRID grids and models.

CoNLL: one ``token<TAB>label`` line per token, optional ``feature=value``
columns, blank line between sentences.  Feature values are written raw when
that is unambiguous and JSON-encoded otherwise, so typed values round-trip.

ECNGRID: each grid is a header ``ECNGRID v1 H W C K`` followed by H*W lines
``r g b label`` in row-major order; a file holds any number of grids.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Dataset, GridSample, SequenceSample, TagSet


class FormatError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


# ---------------------------------------------------------------- tag sets

def save_tagset(tagset: TagSet, path) -> None:
    lines = [f"#background={tagset.background_index}"] + list(tagset.labels)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_tagset(path) -> TagSet:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    background = None
    if lines and lines[0].startswith("#background="):
        try:
            background = int(lines[0].split("=", 1)[1])
        except ValueError:
            raise FormatError(path, 1, f"bad background line {lines[0]!r}") from None
        lines = lines[1:]
    names = [ln for ln in lines if ln]
    try:
        if background is None:
            return TagSet.from_names(names)
        return TagSet(tuple(names), background)
    except ValueError as exc:
        raise FormatError(path, None, str(exc)) from None


# ---------------------------------------------------------------- CoNLL

def _encode_feature(value) -> str:
    if isinstance(value, str):
        try:
            parsed = json.loads(value)
        except ValueError:
            parsed = value
        if parsed is value and value and not any(c.isspace() for c in value) and not value.startswith('"'):
            return value
        return json.dumps(value)
    return json.dumps(value)


def _decode_feature(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def save_conll(ds: Dataset, path) -> None:
    if ds.kind not in ("sequence", None):
        raise TypeError("save_conll needs a sequence dataset")
    out = []
    for s in ds.samples:
        for tok, lab, feats in zip(s.tokens, s.labels, s.features):
            if not tok or any(c in tok for c in "\t\n\r"):
                raise ValueError(f"token {tok!r} cannot be written to CoNLL")
            cols = [tok, ds.tagset.name(lab)]
            for key, value in feats.items():
                if not key or "=" in key or any(c.isspace() for c in key):
                    raise ValueError(f"feature name {key!r} cannot be written to CoNLL")
                cols.append(f"{key}={_encode_feature(value)}")
            out.append("\t".join(cols))
        out.append("")
    Path(path).write_text("\n".join(out) + ("\n" if out else ""), encoding="utf-8")


def load_conll(path, tagset: TagSet | None = None, role: str = "clean") -> Dataset:
    """Read a CoNLL file; without ``tagset`` the labels are collected in order of appearance."""
    samples, rows = [], []
    inferred: list[str] = []

    def flush():
        if rows:
            tokens, labels, feats = zip(*rows)
            samples.append((tokens, labels, feats))
            rows.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            cols = line.split("\t")
            if len(cols) < 2 or not cols[0] or not cols[1]:
                raise FormatError(path, lineno, f"expected 'token<TAB>label', got {line!r}")
            label = cols[1]
            if tagset is not None and label not in tagset.labels:
                raise FormatError(path, lineno, f"unknown label {label!r}")
            if tagset is None and label not in inferred:
                inferred.append(label)
            feats = {}
            for col in cols[2:]:
                if "=" not in col:
                    raise FormatError(path, lineno, f"feature column {col!r} is not 'name=value'")
                key, value = col.split("=", 1)
                feats[key] = _decode_feature(value)
            rows.append((cols[0], label, feats))
    flush()
    if tagset is None:
        try:
            tagset = TagSet.from_names(inferred)
        except ValueError as exc:
            raise FormatError(path, None, str(exc)) from None
    out = [SequenceSample(tokens, [tagset.index(l) for l in labels], feats)
           for tokens, labels, feats in samples]
    return Dataset(tagset, out, role)


# ---------------------------------------------------------------- grids

def save_grid(ds: Dataset, path) -> None:
    if ds.kind not in ("grid", None):
        raise TypeError("save_grid needs a grid dataset")
    k = len(ds.tagset)
    with open(path, "w", encoding="utf-8") as fh:
        for s in ds.samples:
            h, w = s.labels.shape
            fh.write(f"ECNGRID v1 {h} {w} 3 {k}\n")
            px = s.pixels.reshape(-1, 3)
            for (r, g, b), lab in zip(px.tolist(), s.labels.ravel().tolist()):
                fh.write(f"{r!r} {g!r} {b!r} {lab}\n")


def load_grid(path, tagset: TagSet, role: str = "clean") -> Dataset:
    k = len(tagset)
    samples = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 6 or head[0] != "ECNGRID" or head[1] != "v1":
            raise FormatError(path, i + 1, f"expected 'ECNGRID v1 H W C K' header, got {lines[i]!r}")
        try:
            h, w, c, kk = (int(v) for v in head[2:])
        except ValueError:
            raise FormatError(path, i + 1, "non-integer header field") from None
        if c != 3 or h < 1 or w < 1:
            raise FormatError(path, i + 1, f"unsupported grid shape H={h} W={w} C={c}")
        if kk != k:
            raise FormatError(path, i + 1, f"header declares {kk} labels, tag set has {k}")
        body = lines[i + 1:i + 1 + h * w]
        if len(body) != h * w:
            raise FormatError(path, i + 1 + len(body), f"grid truncated: expected {h * w} pixel lines")
        pixels = np.empty((h * w, 3))
        labels = np.empty(h * w, dtype=np.int64)
        for n, line in enumerate(body):
            parts = line.split()
            lineno = i + 2 + n
            if len(parts) != 4:
                raise FormatError(path, lineno, f"expected 'r g b label', got {line!r}")
            try:
                pixels[n] = [float(v) for v in parts[:3]]
                lab = int(parts[3])
            except ValueError:
                raise FormatError(path, lineno, f"malformed pixel line {line!r}") from None
            if not 0 <= lab < k:
                raise FormatError(path, lineno, f"unknown label index {lab}")
            labels[n] = lab
        samples.append(GridSample(pixels.reshape(h, w, 3), labels.reshape(h, w)))
        i += 1 + h * w
    return Dataset(tagset, samples, role)


# ---------------------------------------------------------------- dispatch

def save_dataset(ds: Dataset, path) -> None:
    (save_grid if ds.kind == "grid" else save_conll)(ds, path)


def sniff_kind(path) -> str:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return "grid" if line.startswith("ECNGRID") else "sequence"
    return "sequence"


def load_dataset(path, tagset: TagSet, role: str = "clean") -> Dataset:
    if sniff_kind(path) == "grid":
        return load_grid(path, tagset, role)
    return load_conll(path, tagset, role)


def save_labels(labels, path) -> None:
    """Per-sample label vectors (grids flattened row-major) as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps(np.asarray(lab).ravel().tolist()) + "\n")


# ---------------------------------------------------------------- models

def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_model(path, expected_schema: str | None = None):
    from .crf import CrfModel
    from .ecn import EcnModel
    from .patch import PatchClassifier

    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    fmt = obj.get("format")
    if expected_schema is not None and obj.get("schema") != expected_schema:
        raise FormatError(path, None,
                          f"model schema {obj.get('schema')!r} does not match expected {expected_schema!r}")
    if fmt == "ecn-lab/crf":
        return CrfModel.from_dict(obj)
    if fmt == "ecn-lab/patch":
        return PatchClassifier.from_dict(obj)
    if fmt == "ecn-lab/ecn":
        return EcnModel.from_dict(obj)
    raise FormatError(path, None, f"unknown model format {fmt!r}")
