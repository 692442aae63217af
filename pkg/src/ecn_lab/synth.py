"""Desk-scale synthetic corpora: tagged sentences and labeled scene grids.

Every split draws from its own seeded numpy streams keyed on
``(seed, split, sample_index)``, so resizing one split never changes the
content of another.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .core import Dataset, GridSample, SequenceSample, TagSet

SPLITS = {"train": 1, "gold": 2, "test": 3}
SEQ_LABELS = ("O", "GEO", "ORG", "PER", "TIM")
GRID_LABELS = ("other", "road", "vehicle")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gr", "kr", "st", "tr", "sh", "ch")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou", "ea")

# class-specific endings act as a weak morphological cue
_CLASS_ENDINGS = {
    "GEO": ("land", "ia", "stan", "burg", "grad", "port"),
    "ORG": ("corp", "tech", "com", "ex", "net", "co"),
    "PER": ("son", "ez", "ov", "ini", "sen", "ak"),
}
_ORG_HEADS = ("Bank", "Group", "Council", "Party", "Agency", "Union")
_TIM_WORDS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday",
              "January", "February", "March", "April", "June", "July", "August",
              "September", "October", "November", "December")
_TITLES = ("President", "Minister", "Mr.", "General", "Senator")
_FUNCTION_WORDS = ("the", "a", "of", "in", "on", "to", "and", "has", "have", "was", "were",
                   "said", "says", "will", "from", "with", "by", "for", "at", "after",
                   "that", "its", "their", "new", "last", "more", "than", "about", "over")


@dataclass
class SeqGenConfig:
    """Sentence generator settings.

    ``length_range`` is the inclusive range of non-entity words per sentence;
    each sentence additionally ends with a period and carries on average
    ``density`` entities.
    """
    n_train: int = 2000
    n_gold: int = 60
    n_test: int = 400
    vocab_sizes: dict = field(default_factory=lambda: {"GEO": 300, "ORG": 200, "PER": 400, "filler": 300})
    length_range: tuple = (6, 16)
    density: float = 1.5
    cue_prob: float = 0.6
    title_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.length_range = tuple(self.length_range)
        if min(self.n_train, self.n_gold, self.n_test) < 0:
            raise ValueError("sample counts must be >= 0")
        lo, hi = self.length_range
        if lo < 0 or hi < lo:
            raise ValueError(f"empty length range {self.length_range}")
        if self.density < 0:
            raise ValueError("density must be >= 0")
        if any(int(v) < 1 for v in self.vocab_sizes.values()):
            raise ValueError("vocabulary sizes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# expected entity length per class (see _entity_tokens)
_ENTITY_LEN = {"GEO": 1.2, "ORG": 1.75, "PER": 1.6, "TIM": 0.3 + 0.7 * (1 + 0.3 * 11 / 18)}


def expected_entity_fraction(cfg: SeqGenConfig) -> float:
    mean_ent = float(np.mean(list(_ENTITY_LEN.values())))
    lo, hi = cfg.length_range
    titles = cfg.density * cfg.title_prob / len(_ENTITY_LEN)
    mean_len = (lo + hi) / 2 + 1 + cfg.density * mean_ent + titles
    return cfg.density * mean_ent / mean_len


def _pseudo_word(rng: np.random.Generator, n_syll: int) -> str:
    return "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                   for _ in range(n_syll))


def _unique_words(rng, n, make, taken):
    out = []
    while len(out) < n:
        w = make()
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class _Lexicon:
    geo: list
    org: list
    per: list
    filler: list


def _lexicon(cfg: SeqGenConfig) -> _Lexicon:
    rng = np.random.default_rng([cfg.seed, 0])
    taken = set(_FUNCTION_WORDS) | {w.lower() for w in _TIM_WORDS}
    sizes = cfg.vocab_sizes

    def stem():
        return _pseudo_word(rng, int(rng.integers(1, 3)))

    def named(cls):
        def make():
            s = stem()
            if rng.random() < cfg.cue_prob:
                s += _CLASS_ENDINGS[cls][rng.integers(len(_CLASS_ENDINGS[cls]))]
            else:
                s += _pseudo_word(rng, 1)
            return s.capitalize()
        return make

    geo = _unique_words(rng, int(sizes.get("GEO", 300)), named("GEO"), taken)
    org = _unique_words(rng, int(sizes.get("ORG", 200)), named("ORG"), taken)
    per = _unique_words(rng, int(sizes.get("PER", 400)), named("PER"), taken)
    filler = list(_FUNCTION_WORDS) + _unique_words(
        rng, int(sizes.get("filler", 300)), lambda: _pseudo_word(rng, int(rng.integers(1, 4))), taken)
    return _Lexicon(geo, org, per, filler)


def _entity_tokens(rng: np.random.Generator, cls: str, lex: _Lexicon) -> list[str]:
    if cls == "GEO":
        toks = [lex.geo[rng.integers(len(lex.geo))]]
        if rng.random() < 0.2:
            toks.insert(0, "New")
        return toks
    if cls == "ORG":
        name = lex.org[rng.integers(len(lex.org))]
        r = rng.random()
        if r < 0.5:
            return [name]
        head = _ORG_HEADS[rng.integers(len(_ORG_HEADS))]
        if r < 0.75:
            return [name, head]
        return [head, "of", name]
    if cls == "PER":
        first = lex.per[rng.integers(len(lex.per))]
        if rng.random() < 0.6:
            return [first, lex.per[rng.integers(len(lex.per))]]
        return [first]
    # TIM
    if rng.random() < 0.3:
        return [str(int(rng.integers(1950, 2021)))]
    word = _TIM_WORDS[rng.integers(len(_TIM_WORDS))]
    if rng.random() < 0.3 and word not in _TIM_WORDS[:7]:
        return [word, str(int(rng.integers(1950, 2021)))]
    return [word]


def _sentence(rng: np.random.Generator, cfg: SeqGenConfig, lex: _Lexicon, tagset: TagSet):
    lo, hi = cfg.length_range
    n_fill = int(rng.integers(lo, hi + 1))
    n_ent = int(rng.poisson(cfg.density))
    classes = SEQ_LABELS[1:]
    fillers = [lex.filler[rng.integers(len(lex.filler))] for _ in range(n_fill)]
    gaps = sorted(int(g) for g in rng.integers(0, n_fill + 1, size=n_ent))
    tokens, labels = [], []
    pos = 0
    for k in range(n_fill + 1):
        while pos < len(gaps) and gaps[pos] == k:
            cls = classes[rng.integers(len(classes))]
            ent = _entity_tokens(rng, cls, lex)
            if cls == "PER" and rng.random() < cfg.title_prob:
                tokens.append(_TITLES[rng.integers(len(_TITLES))])
                labels.append(tagset.background_index)
            tokens.extend(ent)
            labels.extend([tagset.index(cls)] * len(ent))
            pos += 1
        if k < n_fill:
            tokens.append(fillers[k])
            labels.append(tagset.background_index)
    if tokens and labels[0] == tagset.background_index:
        tokens[0] = tokens[0][:1].upper() + tokens[0][1:]
    tokens.append(".")
    labels.append(tagset.background_index)
    return SequenceSample(tuple(tokens), tuple(labels))


def seq_tagset() -> TagSet:
    return TagSet(SEQ_LABELS, 0)


def gen_synthetic_sequences(cfg: SeqGenConfig) -> tuple[Dataset, Dataset, Dataset, TagSet]:
    """(train, gold, test, tagset) drawn from one sentence distribution."""
    tagset = seq_tagset()
    lex = _lexicon(cfg)
    out = []
    for split, n, role in (("train", cfg.n_train, "clean"), ("gold", cfg.n_gold, "gold"),
                           ("test", cfg.n_test, "test")):
        samples = [_sentence(np.random.default_rng([cfg.seed, SPLITS[split], i]), cfg, lex, tagset)
                   for i in range(n)]
        out.append(Dataset(tagset, samples, role))
    return out[0], out[1], out[2], tagset


@dataclass
class GridGenConfig:
    n_train: int = 400
    n_gold: int = 60
    n_test: int = 400
    height: int = 32
    width: int = 32
    road_top_range: tuple = (14, 20)
    road_height_range: tuple = (9, 12)
    vehicle_count_range: tuple = (2, 4)
    vehicle_height_range: tuple = (4, 7)
    vehicle_width_range: tuple = (5, 10)
    colors: dict = field(default_factory=lambda: {
        # mean RGB, per-image jitter, per-pixel noise
        "other": ([0.35, 0.60, 0.35], 0.10, 0.05),
        "road": ([0.45, 0.45, 0.50], 0.03, 0.04),
        "vehicle": ([0.80, 0.20, 0.20], 0.15, 0.04),
    })
    seed: int = 0

    def __post_init__(self):
        for name in ("road_top_range", "road_height_range", "vehicle_count_range",
                     "vehicle_height_range", "vehicle_width_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
            setattr(self, name, (int(lo), int(hi)))
        if min(self.n_train, self.n_gold, self.n_test) < 0 or self.height < 1 or self.width < 1:
            raise ValueError("counts must be >= 0 and grid dimensions >= 1")
        if self.road_top_range[1] + self.road_height_range[1] > self.height:
            raise ValueError("road band does not fit the grid")
        if self.vehicle_height_range[1] > self.road_height_range[0]:
            raise ValueError("vehicle taller than the narrowest road band")
        if self.vehicle_width_range[1] > self.width:
            raise ValueError("vehicle wider than the grid")
        if set(self.colors) != set(GRID_LABELS):
            raise ValueError(f"colors must be given for exactly {GRID_LABELS}")

    def to_dict(self) -> dict:
        return asdict(self)


def grid_tagset() -> TagSet:
    return TagSet(GRID_LABELS, 0)


def _scene(rng: np.random.Generator, cfg: GridGenConfig):
    h, w = cfg.height, cfg.width
    labels = np.zeros((h, w), dtype=np.int64)
    top = int(rng.integers(cfg.road_top_range[0], cfg.road_top_range[1] + 1))
    band = int(rng.integers(cfg.road_height_range[0], cfg.road_height_range[1] + 1))
    labels[top:top + band] = 1
    boxes = []
    for _ in range(int(rng.integers(cfg.vehicle_count_range[0], cfg.vehicle_count_range[1] + 1))):
        vh = int(rng.integers(cfg.vehicle_height_range[0], cfg.vehicle_height_range[1] + 1))
        vw = int(rng.integers(cfg.vehicle_width_range[0], cfg.vehicle_width_range[1] + 1))
        r = int(rng.integers(top, top + band - vh + 1))
        c = int(rng.integers(0, w - vw + 1))
        boxes.append((r, c, vh, vw))
        labels[r:r + vh, c:c + vw] = 2
    pixels = np.empty((h, w, 3))
    for cls, name in enumerate(GRID_LABELS):
        mean, jitter, noise = cfg.colors[name]
        if name == "vehicle":
            # each vehicle gets its own paint
            for r, c, vh, vw in boxes:
                paint = np.clip(np.asarray(mean) + rng.normal(0.0, jitter, 3), 0.0, 1.0)
                pixels[r:r + vh, c:c + vw] = paint
            region = labels == cls
            pixels[region] += rng.normal(0.0, noise, (int(region.sum()), 3))
        else:
            base = np.clip(np.asarray(mean) + rng.normal(0.0, jitter, 3), 0.0, 1.0)
            region = labels == cls
            pixels[region] = base + rng.normal(0.0, noise, (int(region.sum()), 3))
    return GridSample(np.clip(pixels, 0.0, 1.0), labels), (top, band, boxes)


def gen_synthetic_grids(cfg: GridGenConfig) -> tuple[Dataset, Dataset, Dataset, TagSet]:
    tagset = grid_tagset()
    out = []
    for split, n, role in (("train", cfg.n_train, "clean"), ("gold", cfg.n_gold, "gold"),
                           ("test", cfg.n_test, "test")):
        samples = [_scene(np.random.default_rng([cfg.seed, SPLITS[split], i]), cfg)[0] for i in range(n)]
        out.append(Dataset(tagset, samples, role))
    return out[0], out[1], out[2], tagset


def grid_geometry(cfg: GridGenConfig, split: str, i: int):
    """(road top, band height, vehicle boxes) of one generated grid, for audits."""
    return _scene(np.random.default_rng([cfg.seed, SPLITS[split], i]), cfg)[1]
