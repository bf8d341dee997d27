"""Encounter data model, curation, splitting, and synthetic data generation.

An encounter is one patient visit: a short free-text reason-for-visit (at
most 50 characters), an age group index (11 bins), a biological sex, and a
set of discrete chief-complaint labels.  Curation removes administrative
label types (exclusion-token matching), enforces the text length limit, and
thresholds the label vocabulary by training-set frequency.  Splitting
guarantees that no normalized text string leaks from train to test.

Everything randomized takes an explicit seed or ``random.Random`` and is a
pure function of (input, seed).
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from random import Random
from typing import Iterable, Mapping, NamedTuple, Sequence

MAX_TEXT_CHARS = 50
N_AGE_GROUPS = 11
SEXES = ("F", "M")
SEX_INDEX = {"F": 0, "M": 1}

# Age bin boundaries, inclusive; the last bin is open-ended.
AGE_BINS = (
    (0, 1),
    (2, 15),
    (16, 20),
    (21, 29),
    (30, 39),
    (40, 49),
    (50, 59),
    (60, 69),
    (70, 79),
    (80, 89),
    (90, None),
)


def _data_lines(name: str) -> list[str]:
    text = resources.files("cctriage").joinpath("data", name).read_text("utf-8")
    return [line for line in text.splitlines() if line.strip()]


STOPWORDS = frozenset(_data_lines("stopwords_en.txt"))
EXCLUSION_TOKENS = tuple(_data_lines("exclusion_tokens.txt"))


def age_to_group(age: int) -> int:
    """Map an integer age in years to its bin index (0..10)."""
    if age < 0:
        raise ValueError(f"negative age: {age}")
    for idx, (lo, hi) in enumerate(AGE_BINS):
        if age >= lo and (hi is None or age <= hi):
            return idx
    raise AssertionError("age bins are exhaustive")


@dataclass(frozen=True)
class Encounter:
    """One patient visit: text, demographics, and chief-complaint labels."""

    text: str
    age_group: int
    sex: str
    labels: frozenset[str]

    def __post_init__(self):
        if not 0 <= self.age_group < N_AGE_GROUPS:
            raise ValueError(f"age_group out of range: {self.age_group}")
        if self.sex not in SEXES:
            raise ValueError(f"sex must be one of {SEXES}: {self.sex!r}")
        if not isinstance(self.labels, frozenset):
            object.__setattr__(self, "labels", frozenset(self.labels))

    def with_text(self, text: str) -> "Encounter":
        return Encounter(text, self.age_group, self.sex, self.labels)


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered label space for the classifier.

    Labels are sorted lexicographically so that output index ``i`` always
    denotes the same label across runs.  ``counts`` records training-set
    occurrences; every retained label has count >= ``min_count``.
    """

    labels: tuple[str, ...]
    counts: Mapping[str, int]
    min_count: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {l: i for i, l in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def index(self, label: str) -> int:
        return self._index[label]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# min_count={self.min_count}\n")
            for label in self.labels:
                fh.write(f"{label}\t{self.counts[label]}\n")

    @classmethod
    def load(cls, path) -> "LabelVocabulary":
        labels, counts, min_count = [], {}, 1
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("# min_count="):
                    min_count = int(line.split("=", 1)[1])
                    continue
                label, count = line.rsplit("\t", 1)
                labels.append(label)
                counts[label] = int(count)
        return cls(tuple(labels), counts, min_count)


@dataclass(frozen=True)
class DatasetSplit:
    """Train/test partition plus a misspelling evaluation set.

    Each misspelling entry is a perturbed copy of a distinct test encounter:
    same labels and demographics, text at a fixed edit distance.
    """

    train: tuple[Encounter, ...]
    test: tuple[Encounter, ...]
    misspelling: tuple[Encounter, ...] = ()


DEFAULT_MISSPELL_OPS = {
    "adjacent_swap": 1.0,
    "drop_char": 1.0,
    "duplicate_char": 1.0,
    "keyboard_substitute": 1.0,
}


@dataclass(frozen=True)
class MisspellConfig:
    rng_seed: int = 0
    ops: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MISSPELL_OPS))
    per_text_edits: int = 1

    def __post_init__(self):
        if self.per_text_edits < 1:
            raise ValueError("per_text_edits must be positive")
        unknown = set(self.ops) - set(DEFAULT_MISSPELL_OPS)
        if unknown:
            raise ValueError(f"unknown misspelling ops: {sorted(unknown)}")
        if any(w < 0 for w in self.ops.values()) or not any(self.ops.values()):
            raise ValueError("op weights must be non-negative and not all zero")


@dataclass(frozen=True)
class SynthConfig:
    rng_seed: int = 0
    n_labels: int = 20
    n_encounters: int = 1000
    templates_per_label: int = 6
    misspelling_rate: float = 0.0
    co_label_rate: float = 0.25
    demographic_skew: Mapping[str, Sequence[float]] | None = None

    def __post_init__(self):
        if self.n_labels < 2:
            raise ValueError("n_labels must be >= 2")
        if self.n_encounters < self.n_labels:
            raise ValueError("n_encounters must be >= n_labels")
        if not 0.0 <= self.misspelling_rate <= 1.0:
            raise ValueError("misspelling_rate must be in [0, 1]")
        if not 0.0 <= self.co_label_rate <= 1.0:
            raise ValueError("co_label_rate must be in [0, 1]")
        if self.demographic_skew:
            for label, weights in self.demographic_skew.items():
                if len(weights) != N_AGE_GROUPS or any(w < 0 for w in weights):
                    raise ValueError(f"bad age weight vector for {label!r}")


# ---------------------------------------------------------------------------
# curation


def crop_text(raw: str) -> str:
    """Crop to at most 50 characters, never splitting a combining sequence.

    If the cut would land inside a combining-character sequence the crop
    backs off to the previous base character.
    """
    if len(raw) <= MAX_TEXT_CHARS:
        return raw
    cut = MAX_TEXT_CHARS
    while cut > 0 and unicodedata.combining(raw[cut]):
        cut -= 1
    return raw[:cut]


def excluded_labels(labels: Iterable[str], tokens: Sequence[str] = EXCLUSION_TOKENS) -> set[str]:
    """Label types whose uppercased text contains any exclusion token."""
    out = set()
    for label in labels:
        upper = label.upper()
        if any(tok in upper for tok in tokens):
            out.add(label)
    return out


def apply_exclusions(
    encounters: Sequence[Encounter],
    exclusion_tokens: Sequence[str] = EXCLUSION_TOKENS,
) -> list[Encounter]:
    """Remove excluded label types globally; drop encounters left label-less."""
    all_labels = {l for e in encounters for l in e.labels}
    banned = excluded_labels(all_labels, exclusion_tokens)
    out = []
    for enc in encounters:
        kept = enc.labels - banned
        if kept:
            out.append(Encounter(enc.text, enc.age_group, enc.sex, frozenset(kept)))
    return out


def build_label_vocab(train: Sequence[Encounter], min_count: int = 50) -> LabelVocabulary:
    """Labels with at least ``min_count`` training occurrences, sorted."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(l for e in train for l in e.labels)
    kept = sorted(l for l, c in counts.items() if c >= min_count)
    if not kept:
        raise ValueError("no labels meet threshold")
    return LabelVocabulary(tuple(kept), {l: counts[l] for l in kept}, min_count)


# ---------------------------------------------------------------------------
# splitting


def normalize_text(text: str) -> str:
    """Lowercase, collapse internal whitespace, trim. Used for leakage checks."""
    return " ".join(text.lower().split())


def split_no_overlap(
    encounters: Sequence[Encounter], test_fraction: float, rng_seed: int
) -> DatasetSplit:
    """Group encounters by normalized text and assign whole groups.

    Whole-group assignment guarantees that no normalized text appears on
    both sides.  The realized test fraction lands within about 2 percentage
    points of the target whenever group sizes permit.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    groups: dict[str, list[Encounter]] = {}
    for enc in encounters:
        groups.setdefault(normalize_text(enc.text), []).append(enc)
    if len(groups) < 2:
        raise ValueError("need at least 2 distinct texts to split")
    keys = sorted(groups)
    Random(rng_seed).shuffle(keys)
    target = round(test_fraction * len(encounters))
    train: list[Encounter] = []
    test: list[Encounter] = []
    for key in keys:
        bucket = test if len(test) < target else train
        bucket.extend(groups[key])
    return DatasetSplit(tuple(train), tuple(test))


def kfold(
    train: Sequence[Encounter], k: int = 5, rng_seed: int = 0
) -> list[tuple[list[Encounter], list[Encounter]]]:
    """Shuffled k-fold partition; validation parts are disjoint and exhaustive."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(train) < k:
        raise ValueError(f"need at least k={k} training encounters, got {len(train)}")
    idx = list(range(len(train)))
    Random(rng_seed).shuffle(idx)
    folds = []
    base, extra = divmod(len(idx), k)
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        val_idx = set(idx[start : start + size])
        start += size
        val = [train[j] for j in sorted(val_idx)]
        tr = [train[j] for j in range(len(train)) if j not in val_idx]
        folds.append((tr, val))
    return folds


# ---------------------------------------------------------------------------
# misspelling perturbation

# QWERTY neighbourhoods used by keyboard_substitute.
_KEYBOARD_NEIGHBORS = {
    "a": "qwsz", "b": "vghn", "c": "xdfv", "d": "serfcx", "e": "wsdr",
    "f": "drtgvc", "g": "ftyhbv", "h": "gyujnb", "i": "ujko", "j": "huikmn",
    "k": "jiolm", "l": "kop", "m": "njk", "n": "bhjm", "o": "iklp",
    "p": "ol", "q": "wa", "r": "edft", "s": "awedxz", "t": "rfgy",
    "u": "yhji", "v": "cfgb", "w": "qase", "x": "zsdc", "y": "tghu",
    "z": "asx",
}

_WORD_RE = re.compile(r"[A-Za-z]{3,}")


class MisspellResult(NamedTuple):
    text: str
    changed: bool


def damerau_levenshtein(a: str, b: str) -> int:
    """Edit distance with insertions, deletions, substitutions, and adjacent
    transpositions (optimal string alignment variant)."""
    la, lb = len(a), len(b)
    prev2: list[int] = []
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
                cur[j] = min(cur[j], prev2[j - 2] + 1)
        prev2, prev = prev, cur
    return prev[lb]


def adjacent_swap(text: str, pos: int) -> str:
    """Transpose the characters at ``pos`` and ``pos + 1``."""
    return text[:pos] + text[pos + 1] + text[pos] + text[pos + 2 :]


def _substitute_char(ch: str, rng: Random) -> str:
    lower = ch.lower()
    pool = _KEYBOARD_NEIGHBORS.get(lower)
    if pool is None:
        pool = "".join(c for c in "abcdefghijklmnopqrstuvwxyz" if c != lower)
    repl = rng.choice(pool)
    return repl.upper() if ch.isupper() else repl


def _apply_op(text: str, op: str, pos: int, rng: Random) -> str | None:
    """Apply one edit at ``pos``; None means the op is a no-op there."""
    if op == "adjacent_swap":
        if pos + 1 >= len(text) or text[pos] == text[pos + 1]:
            return None
        return adjacent_swap(text, pos)
    if op == "drop_char":
        return text[:pos] + text[pos + 1 :]
    if op == "duplicate_char":
        return text[: pos + 1] + text[pos] + text[pos + 1 :]
    if op == "keyboard_substitute":
        repl = _substitute_char(text[pos], rng)
        if repl == text[pos]:
            return None
        return text[:pos] + repl + text[pos + 1 :]
    raise ValueError(f"unknown op {op!r}")


def misspell(text: str, config: MisspellConfig, rng: Random) -> MisspellResult:
    """Apply exactly ``per_text_edits`` single-character edits.

    Each edit targets an alphabetic word of length >= 3, never reuses a
    position, and the result stays within the 50 character limit (an edit
    that would grow past it falls back to drop_char).  The returned text is
    at Damerau-Levenshtein distance ``per_text_edits`` from the input; if no
    eligible word exists the input comes back unchanged with changed=False.
    """
    ops = [op for op, w in config.ops.items() if w > 0]
    weights = [config.ops[op] for op in ops]
    current = text
    protected: set[int] = set()
    applied = 0
    for edit in range(config.per_text_edits):
        placed = False
        for _ in range(64):
            words = [
                m for m in _WORD_RE.finditer(current)
                if any(p not in protected for p in range(m.start(), m.end()))
            ]
            if not words:
                break
            word = rng.choices(words, k=1)[0]
            positions = [p for p in range(word.start(), word.end()) if p not in protected]
            if not positions:
                continue
            pos = rng.choice(positions)
            op = rng.choices(ops, weights=weights, k=1)[0]
            if op == "duplicate_char" and len(current) >= MAX_TEXT_CHARS:
                op = "drop_char"
            candidate = _apply_op(current, op, pos, rng)
            if candidate is None:
                continue
            if damerau_levenshtein(text, candidate) != applied + 1:
                continue
            shift = len(candidate) - len(current)
            protected = {p if p <= pos else p + shift for p in protected}
            protected.update({pos - 1, pos, pos + 1})
            current = candidate
            applied += 1
            placed = True
            break
        if not placed:
            break
    return MisspellResult(current, applied > 0)


def perturb_encounters(
    encounters: Sequence[Encounter], config: MisspellConfig
) -> list[Encounter]:
    """Perturbed copies of the encounters whose text could be misspelled."""
    rng = Random(config.rng_seed)
    out = []
    for enc in encounters:
        result = misspell(enc.text, config, rng)
        if result.changed:
            out.append(enc.with_text(result.text))
    return out


# ---------------------------------------------------------------------------
# synthetic data

_SYLLABLES = (
    "ra", "ne", "ko", "li", "ta", "mu", "ve", "so",
    "chi", "da", "pe", "lu", "gro", "fi", "ba", "ze",
)
_LABEL_SUFFIXES = (" PAIN", " PROBLEM", "", " ACHE")

_TEMPLATES = (
    "{w}",
    "{w} for {n} days",
    "bad {w}",
    "my {w} is worse",
    "{w} since last week",
    "need help with {w}",
    "severe {w}",
    "{w} on and off",
    "recurring {w}",
    "mild {w} today",
    "{w} getting worse",
    "worried about {w}",
)


def _core_word(i: int) -> str:
    n = len(_SYLLABLES)
    word = _SYLLABLES[(i // n) % n] + _SYLLABLES[i % n]
    if i >= n * n:
        word += _SYLLABLES[(i // (n * n)) % n]
    return word


def synth_label_names(n_labels: int) -> list[str]:
    """Deterministic pseudo-complaint names, one distinctive core word each."""
    return [
        _core_word(i).upper() + _LABEL_SUFFIXES[i % len(_LABEL_SUFFIXES)]
        for i in range(n_labels)
    ]


def _label_variants(i: int, templates_per_label: int) -> list[str]:
    word = _core_word(i)
    variants = []
    for t in range(templates_per_label):
        pattern = _TEMPLATES[t % len(_TEMPLATES)]
        text = pattern.format(w=word, n=1 + (i + t) % 9)
        if t >= len(_TEMPLATES):
            text = f"{text} {1 + t // len(_TEMPLATES)}"
        variants.append(crop_text(text))
    return variants


def synthetic_variants(config: SynthConfig) -> set[str]:
    """Every text the generator can emit when misspelling_rate is 0."""
    singles = {
        v
        for i in range(config.n_labels)
        for v in _label_variants(i, config.templates_per_label)
    }
    combined = set()
    if config.co_label_rate > 0:
        for i in range(config.n_labels):
            for v in _label_variants(i, config.templates_per_label):
                for j in range(config.n_labels):
                    if j != i:
                        combined.add(crop_text(f"{v} and {_core_word(j)}"))
    return singles | combined


def generate_synthetic(config: SynthConfig) -> list[Encounter]:
    """Deterministic synthetic encounters with per-label template texts."""
    rng = Random(config.rng_seed)
    names = synth_label_names(config.n_labels)
    variants = [_label_variants(i, config.templates_per_label) for i in range(config.n_labels)]
    skew = config.demographic_skew or {}
    misspell_cfg = MisspellConfig(rng_seed=config.rng_seed)
    encounters = []
    for k in range(config.n_encounters):
        # Cycle through labels first so every label gets coverage.
        i = k % config.n_labels if k < config.n_labels else rng.randrange(config.n_labels)
        text = rng.choice(variants[i])
        labels = {names[i]}
        if config.co_label_rate > 0 and rng.random() < config.co_label_rate:
            j = rng.randrange(config.n_labels - 1)
            if j >= i:
                j += 1
            labels.add(names[j])
            text = crop_text(f"{text} and {_core_word(j)}")
        if config.misspelling_rate > 0 and rng.random() < config.misspelling_rate:
            text = misspell(text, misspell_cfg, rng).text
        skew_label = next((l for l in sorted(labels) if l in skew), None)
        if skew_label is not None:
            age = rng.choices(range(N_AGE_GROUPS), weights=skew[skew_label], k=1)[0]
        else:
            age = rng.randrange(N_AGE_GROUPS)
        sex = rng.choice(SEXES)
        encounters.append(Encounter(text, age, sex, frozenset(labels)))
    return encounters


# ---------------------------------------------------------------------------
# dataset files: one JSON record per line

class MalformedLine(NamedTuple):
    line_no: int
    message: str


def _record_to_encounter(record) -> Encounter:
    if not isinstance(record, dict):
        raise ValueError("record is not an object")
    text = record.get("text")
    if not isinstance(text, str):
        raise ValueError("missing or non-string 'text'")
    age_group = record.get("age_group")
    if not isinstance(age_group, int) or isinstance(age_group, bool):
        raise ValueError("missing or non-integer 'age_group'")
    sex = record.get("sex")
    labels = record.get("labels")
    if not isinstance(labels, list) or not labels or not all(isinstance(l, str) for l in labels):
        raise ValueError("'labels' must be a non-empty array of strings")
    return Encounter(text, age_group, sex, frozenset(labels))


def read_encounters_lenient(path) -> tuple[list[Encounter], list[MalformedLine]]:
    """Parse a dataset file, collecting malformed lines instead of raising."""
    encounters, bad = [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                encounters.append(_record_to_encounter(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                bad.append(MalformedLine(line_no, str(exc)))
    return encounters, bad


def read_encounters(path) -> list[Encounter]:
    encounters, bad = read_encounters_lenient(path)
    if bad:
        first = bad[0]
        raise ValueError(f"{path}: line {first.line_no}: {first.message} "
                         f"({len(bad)} malformed lines total)")
    return encounters


def write_encounters(path, encounters: Iterable[Encounter]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for enc in encounters:
            record = {
                "text": enc.text,
                "age_group": enc.age_group,
                "sex": enc.sex,
                "labels": sorted(enc.labels),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
