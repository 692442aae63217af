"""Token features for the sequence models.

Nineteen features per token, in a fixed documented order.  The order also
drives the token-feature sensitivity sweep (features are added one at a
time from the front of :data:`FEATURE_NAMES`).

=================  ==========================================================
lower              lowercased token
prefix1..3         first 1, 2, 3 characters
suffix1..3         last 1, 2, 3 characters
is_title           ``str.istitle``
is_upper           all cased characters upper
is_lower           all cased characters lower
is_digit           all characters digits
length             character count, capped at 12
shape              character classes with runs collapsed (``Poland`` -> ``Xx``)
is_first           sentence-initial token
is_last            sentence-final token
prev_lower         lowercased previous token, ``<BOS>`` at the start
prev_is_title      previous token is title-cased
next_lower         lowercased next token, ``<EOS>`` at the end
next_is_title      next token is title-cased
=================  ==========================================================
"""
from __future__ import annotations

import hashlib
import re
from typing import Sequence

from .core import SequenceSample

FEATURE_NAMES = (
    "lower", "prefix1", "prefix2", "prefix3", "suffix1", "suffix2", "suffix3",
    "is_title", "is_upper", "is_lower", "is_digit", "length", "shape",
    "is_first", "is_last", "prev_lower", "prev_is_title", "next_lower", "next_is_title",
)
BOS, EOS = "<BOS>", "<EOS>"

_SHAPE_SUBS = ((re.compile(r"[A-Z]"), "X"), (re.compile(r"[a-z]"), "x"), (re.compile(r"[0-9]"), "d"))


def word_shape(token: str) -> str:
    shape = token
    for pattern, repl in _SHAPE_SUBS:
        shape = pattern.sub(repl, shape)
    return re.sub(r"(.)\1+", r"\1", shape)


def token_features(tokens: Sequence[str], j: int) -> dict:
    tok = tokens[j]
    prev = tokens[j - 1] if j > 0 else None
    nxt = tokens[j + 1] if j + 1 < len(tokens) else None
    return {
        "lower": tok.lower(),
        "prefix1": tok[:1],
        "prefix2": tok[:2],
        "prefix3": tok[:3],
        "suffix1": tok[-1:],
        "suffix2": tok[-2:],
        "suffix3": tok[-3:],
        "is_title": tok.istitle(),
        "is_upper": tok.isupper(),
        "is_lower": tok.islower(),
        "is_digit": tok.isdigit(),
        "length": min(len(tok), 12),
        "shape": word_shape(tok),
        "is_first": j == 0,
        "is_last": j == len(tokens) - 1,
        "prev_lower": prev.lower() if prev is not None else BOS,
        "prev_is_title": prev.istitle() if prev is not None else False,
        "next_lower": nxt.lower() if nxt is not None else EOS,
        "next_is_title": nxt.istitle() if nxt is not None else False,
    }


def extract_features(sample: SequenceSample | Sequence[str],
                     names: Sequence[str] = FEATURE_NAMES) -> list[dict]:
    """Per-token feature maps restricted to ``names`` (all 19 by default)."""
    tokens = sample.tokens if isinstance(sample, SequenceSample) else tuple(sample)
    out = []
    for j in range(len(tokens)):
        feats = token_features(tokens, j)
        out.append({name: feats[name] for name in names})
    return out


def schema_digest(names: Sequence[str] = FEATURE_NAMES, extra: str = "") -> str:
    payload = "features-v1|" + ",".join(names) + "|" + extra
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def encode_value(name: str, value) -> tuple[str, float]:
    """Map one feature to a (key, value) pair for a linear model.

    Strings, booleans and integers become indicator keys ``name=value``;
    floats are real-valued under the bare name.
    """
    if isinstance(value, float):
        return name, value
    return f"{name}={value}", 1.0
