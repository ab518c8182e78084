"""Corpus loading, score remapping and train/validation splitting.

Corpora are UTF-8 delimiter-separated files with a header row. The primary
tweet corpus and the test file are scored on the 1-5 intimacy scale; the
auxiliary question corpus is scored on [-1, 1] and is remapped to 1-5 when
loaded so that everything downstream sees a single scale.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

SEEN_LANGUAGES = ("english", "spanish", "portuguese", "italian", "french", "chinese")
UNSEEN_LANGUAGES = ("hindi", "dutch", "korean", "arabic")
# Table-2 row order.
KNOWN_LANGUAGES = SEEN_LANGUAGES + UNSEEN_LANGUAGES

SCORE_RANGE = (1.0, 5.0)
AUXILIARY_RANGE = (-1.0, 1.0)
UNANNOTATED_SENTINEL = 0.0


class Source(str, Enum):
    PRIMARY = "primary"
    AUXILIARY = "auxiliary"
    TEST = "test"


class CorpusError(ValueError):
    """A corpus file could not be parsed or violates the score contract."""


@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    language: str
    score: float | None
    source: Source

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"{self.id}: empty text")
        if not self.language:
            raise ValueError(f"{self.id}: empty language code")
        if self.score is not None and not (SCORE_RANGE[0] <= self.score <= SCORE_RANGE[1]):
            raise ValueError(f"{self.id}: score {self.score} outside {SCORE_RANGE}")

    @property
    def annotated(self) -> bool:
        return self.score is not None


@dataclass
class DatasetSplit:
    train: list[LabeledExample]
    validation: list[LabeledExample]
    test: list[LabeledExample]
    seed: int
    stratified: bool = False
    provenance: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        def counts(rows):
            return {
                "total": len(rows),
                "by_source": dict(sorted(Counter(r.source.value for r in rows).items())),
                "by_language": dict(sorted(Counter(r.language for r in rows).items())),
                "annotated": sum(r.annotated for r in rows),
            }

        return {
            "seed": self.seed,
            "stratified": self.stratified,
            "train": counts(self.train),
            "validation": counts(self.validation),
            "test": counts(self.test),
            "provenance": self.provenance,
        }


def remap_score(s: float) -> float:
    """Map an auxiliary-corpus score from [-1, 1] onto the 1-5 scale."""
    if not (AUXILIARY_RANGE[0] <= s <= AUXILIARY_RANGE[1]):
        raise ValueError(f"score {s} outside {AUXILIARY_RANGE}")
    return 2.0 * s + 3.0


def unmap_score(s: float) -> float:
    return (s - 3.0) / 2.0


def _parse_label(raw: str, source: Source, expected_range: tuple[float, float], where: str):
    raw = raw.strip()
    if raw == "":
        if source is Source.TEST:
            return None
        raise CorpusError(f"{where}: missing label")
    try:
        value = float(raw)
    except ValueError:
        raise CorpusError(f"{where}: label {raw!r} is not a number") from None
    if not math.isfinite(value):
        raise CorpusError(f"{where}: label {raw!r} is not finite")
    if source is Source.TEST and value == UNANNOTATED_SENTINEL:
        return None
    lo, hi = expected_range
    if not (lo <= value <= hi):
        raise CorpusError(f"{where}: label {value} outside expected range [{lo}, {hi}]")
    if source is Source.AUXILIARY:
        return remap_score(value)
    return value


def load_corpus(
    path: str | Path,
    source: Source | str,
    expected_range: tuple[float, float] | None = None,
    *,
    text_column: str = "text",
    language_column: str = "language",
    label_column: str = "label",
    id_column: str = "id",
    delimiter: str | None = None,
) -> list[LabeledExample]:
    """Read one corpus file into a list of examples.

    ``expected_range`` defaults to [-1, 1] for the auxiliary source and to
    [1, 5] otherwise. In test files a label of exactly 0 (or an empty cell)
    marks an unannotated row, which is kept with ``score=None``. The delimiter
    is inferred from the extension (``.tsv`` -> tab) unless given.
    """
    path = Path(path)
    source = Source(source)
    if expected_range is None:
        expected_range = AUXILIARY_RANGE if source is Source.AUXILIARY else SCORE_RANGE
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() == ".tsv" else ","

    examples = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        missing = [c for c in (text_column, language_column, label_column) if c not in header]
        if missing:
            raise CorpusError(f"{path}: header lacks column(s) {', '.join(missing)}")
        has_id = id_column in header
        # Row numbers count the header as line 1.
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            if None in row or any(row.get(c) is None for c in (text_column, language_column, label_column)):
                raise CorpusError(f"{where}: malformed row (wrong number of fields)")
            text = row[text_column]
            language = row[language_column].strip().lower()
            if not text.strip():
                raise CorpusError(f"{where}: empty text")
            if not language:
                raise CorpusError(f"{where}: empty language")
            if language not in KNOWN_LANGUAGES:
                logger.warning("%s: unknown language %r, row kept", where, language)
            score = _parse_label(row[label_column], source, expected_range, where)
            ex_id = row[id_column].strip() if has_id and row[id_column].strip() else f"{source.value}-{lineno - 1}"
            examples.append(LabeledExample(ex_id, text, language, score, source))

    ids = Counter(e.id for e in examples)
    dupes = [i for i, c in ids.items() if c > 1]
    if dupes:
        raise CorpusError(f"{path}: duplicate example ids {dupes[:5]}")
    logger.info("loaded %d %s examples from %s", len(examples), source.value, path)
    return examples


def write_corpus(examples: Iterable[LabeledExample], path: str | Path, *, raw_scale: bool = False) -> None:
    """Write examples in the corpus format (id, text, language, label, source).

    Unannotated rows get an empty label. With ``raw_scale`` auxiliary scores
    are written back on their original [-1, 1] scale, so that reloading with
    ``load_corpus(..., "auxiliary")`` reproduces the same examples.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "text", "language", "label", "source"])
        for ex in examples:
            if ex.score is None:
                label = ""
            elif raw_scale and ex.source is Source.AUXILIARY:
                label = repr(unmap_score(ex.score))
            else:
                label = repr(ex.score)
            writer.writerow([ex.id, ex.text, ex.language, label, ex.source.value])


def read_split_file(path: str | Path) -> list[LabeledExample]:
    """Read a file produced by :func:`write_corpus` (scores already on 1-5)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"split file not found: {path}")
    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                label = row["label"].strip()
                out.append(
                    LabeledExample(
                        id=row["id"],
                        text=row["text"],
                        language=row["language"],
                        score=float(label) if label else None,
                        source=Source(row["source"]),
                    )
                )
            except (KeyError, ValueError, AttributeError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return out


def filter_scored(examples: Iterable[LabeledExample]) -> list[LabeledExample]:
    return [e for e in examples if e.score is not None]


def _stratified_sample(primary: Sequence[LabeledExample], k: int, rng: random.Random) -> list[int]:
    by_lang = defaultdict(list)
    for i, ex in enumerate(primary):
        by_lang[ex.language].append(i)
    langs = sorted(by_lang)
    n = len(primary)
    # Largest-remainder allocation of k across languages.
    quotas = {lang: k * len(by_lang[lang]) / n for lang in langs}
    alloc = {lang: int(math.floor(q)) for lang, q in quotas.items()}
    leftover = k - sum(alloc.values())
    for lang in sorted(langs, key=lambda l: (-(quotas[l] - alloc[l]), l))[:leftover]:
        alloc[lang] += 1
    chosen = []
    for lang in langs:
        chosen.extend(rng.sample(by_lang[lang], alloc[lang]))
    return chosen


def make_splits(
    primary: Sequence[LabeledExample],
    auxiliary: Sequence[LabeledExample],
    validation_count: int,
    seed: int = 13,
    *,
    test: Sequence[LabeledExample] = (),
    stratify: bool = False,
) -> DatasetSplit:
    """Carve a validation set out of the primary corpus.

    Validation is ``validation_count`` primary examples drawn without
    replacement; train is the remaining primary examples followed by the
    whole auxiliary corpus. Both keep the input order.
    """
    if validation_count < 0:
        raise ValueError("validation_count must be non-negative")
    if validation_count >= len(primary) and not (validation_count == 0 == len(primary)):
        raise ValueError(f"validation_count={validation_count} must be < |primary|={len(primary)}")
    unscored = [e.id for e in list(primary) + list(auxiliary) if e.score is None]
    if unscored:
        raise ValueError(f"training corpora contain unannotated rows: {unscored[:5]}")

    rng = random.Random(seed)
    if stratify:
        picked = set(_stratified_sample(primary, validation_count, rng))
    else:
        picked = set(rng.sample(range(len(primary)), validation_count))

    validation = [ex for i, ex in enumerate(primary) if i in picked]
    train = [ex for i, ex in enumerate(primary) if i not in picked] + list(auxiliary)
    provenance = {
        "primary": len(primary),
        "auxiliary": len(auxiliary),
        "test": len(test),
        "test_annotated": sum(e.annotated for e in test),
    }
    return DatasetSplit(train, validation, list(test), seed, stratify, provenance)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_split(split: DatasetSplit, out_dir: str | Path) -> Path:
    """Write train/validation/test csv files plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in ("train", "validation", "test"):
        p = out_dir / f"{name}.csv"
        write_corpus(getattr(split, name), p)
        files[name] = {"file": p.name, "sha256": _sha256(p)}
    manifest = split.manifest()
    manifest["files"] = files
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return manifest_path


def load_split(split_dir: str | Path) -> DatasetSplit:
    split_dir = Path(split_dir)
    manifest_path = split_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest in {split_dir}; run prepare first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    parts = {name: read_split_file(split_dir / f"{name}.csv") for name in ("train", "validation", "test")}
    return DatasetSplit(
        parts["train"],
        parts["validation"],
        parts["test"],
        seed=manifest["seed"],
        stratified=manifest.get("stratified", False),
        provenance=manifest.get("provenance", {}),
    )


def relabel(example: LabeledExample, **changes) -> LabeledExample:
    return replace(example, **changes)
