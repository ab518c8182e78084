"""Weighted-average ensembling of member predictions."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import SEEN_LANGUAGES, LabeledExample
from .registry import Mode, ModelSpec, Registry, resolve
from .training import PredictorBackend, RegressorHandle, predict_batch

# Aligned to the default registry's multilingual members: mBERT, XLM-R, XLM-T.
DEFAULT_MULTILINGUAL_WEIGHTS = (0.2, 0.3, 0.5)
DEFAULT_SPECIALIST_WEIGHT = 0.3
DEFAULT_MULTILINGUAL_SCALE = 0.7


class MissingMemberError(KeyError):
    pass


@dataclass
class EnsembleConfig:
    mode: Mode = Mode.MULTILINGUAL
    multilingual_weights: tuple[float, ...] = DEFAULT_MULTILINGUAL_WEIGHTS
    specialist_weight: float = DEFAULT_SPECIALIST_WEIGHT
    # Applied to the multilingual weights whenever a specialist joins.
    multilingual_scale: float = DEFAULT_MULTILINGUAL_SCALE
    # Path taken by seen-language rows in augmented mode.
    augmented_seen_mode: Mode = Mode.MULTILINGUAL
    seen_languages: tuple[str, ...] = SEEN_LANGUAGES

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.augmented_seen_mode = Mode(self.augmented_seen_mode)
        self.multilingual_weights = tuple(float(w) for w in self.multilingual_weights)
        self.seen_languages = tuple(self.seen_languages)
        if self.augmented_seen_mode is Mode.AUGMENTED:
            raise ValueError("augmented_seen_mode must be multilingual or routed")
        if not self.multilingual_weights:
            raise ValueError("multilingual_weights must not be empty")
        for w in self.multilingual_weights + (self.specialist_weight, self.multilingual_scale):
            if not (w > 0 and math.isfinite(w)):
                raise ValueError(f"ensemble weights must be positive, got {w}")

    def weights_for(self, members: Sequence[ModelSpec]) -> list[float]:
        """Raw weights for a resolved member list (multilingual first, specialist last)."""
        multi = [m for m in members if not m.is_specialist]
        if len(multi) > len(self.multilingual_weights):
            raise ValueError(
                f"{len(multi)} multilingual members but only {len(self.multilingual_weights)} weights configured"
            )
        weights = list(self.multilingual_weights[: len(multi)])
        if len(multi) < len(members):
            weights = [w * self.multilingual_scale for w in weights] + [self.specialist_weight]
        return weights


@dataclass
class PredictionRecord:
    example_ref: str
    language: str
    member_predictions: list[tuple[str, float]]
    weights_used: list[float]
    combined: float
    mode: Mode
    translated: bool = False


def normalize(weights: Sequence[float]) -> list[float]:
    total = math.fsum(weights)
    return [w / total for w in weights]


def combine(predictions: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted average; weights are normalized to sum to one first."""
    if len(predictions) != len(weights):
        raise ValueError(f"{len(predictions)} predictions vs {len(weights)} weights")
    if not predictions:
        raise ValueError("nothing to combine")
    if any(not (w > 0) for w in weights):
        raise ValueError(f"weights must be positive: {list(weights)}")
    total = math.fsum(weights)
    combined = math.fsum(w * p for w, p in zip(weights, predictions)) / total
    # Guard the convex hull against last-ulp rounding.
    return min(max(combined, min(predictions)), max(predictions))


def _member_scores(members, texts, handles, backend, max_workers) -> list[list[float]]:
    for spec in members:
        if spec.id not in handles:
            raise MissingMemberError(f"no trained handle for member {spec.id!r}")
    if max_workers > 1 and len(members) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(lambda s: predict_batch(handles[s.id], texts, backend), members))
    return [predict_batch(handles[s.id], texts, backend) for s in members]


def score_group(
    examples: Sequence[LabeledExample],
    members: Sequence[ModelSpec],
    config: EnsembleConfig,
    handles: Mapping[str, RegressorHandle],
    backend: PredictorBackend,
    *,
    mode: Mode,
    translated: bool = False,
    languages: Sequence[str] | None = None,
    max_workers: int = 1,
) -> list[PredictionRecord]:
    """Score examples that share one member list, batching per member.

    ``languages`` overrides the language recorded on each record (used to
    keep the original language of translated rows).
    """
    if not examples:
        return []
    texts = [e.text for e in examples]
    scores = _member_scores(members, texts, handles, backend, max_workers)
    raw = config.weights_for(members)
    used = normalize(raw)
    ids = [m.id for m in members]
    records = []
    for i, ex in enumerate(examples):
        preds = [col[i] for col in scores]
        records.append(
            PredictionRecord(
                example_ref=ex.id,
                language=languages[i] if languages is not None else ex.language,
                member_predictions=list(zip(ids, preds)),
                weights_used=used,
                combined=combine(preds, raw),
                mode=mode,
                translated=translated,
            )
        )
    return records


def predict_example(
    example: LabeledExample,
    config: EnsembleConfig,
    registry: Registry,
    handles: Mapping[str, RegressorHandle],
    backend: PredictorBackend,
) -> PredictionRecord:
    """Score a single example. Text is used as given; translation is the augmentation module's job."""
    members = resolve(
        example.language,
        config.mode,
        registry,
        seen_languages=config.seen_languages,
        augmented_seen_mode=config.augmented_seen_mode,
    )
    return score_group([example], members, config, handles, backend, mode=config.mode)[0]


def predict_examples(
    examples: Sequence[LabeledExample],
    config: EnsembleConfig,
    registry: Registry,
    handles: Mapping[str, RegressorHandle],
    backend: PredictorBackend,
    *,
    max_workers: int = 1,
) -> list[PredictionRecord]:
    """Batched equivalent of calling :func:`predict_example` on each row; output keeps input order."""
    groups: dict[tuple[str, ...], list[int]] = {}
    resolved = {}
    for i, ex in enumerate(examples):
        if ex.language not in resolved:
            resolved[ex.language] = resolve(
                ex.language, config.mode, registry,
                seen_languages=config.seen_languages, augmented_seen_mode=config.augmented_seen_mode,
            )
        key = tuple(m.id for m in resolved[ex.language])
        groups.setdefault(key, []).append(i)
    out: list[PredictionRecord | None] = [None] * len(examples)
    for idx in groups.values():
        members = resolved[examples[idx[0]].language]
        recs = score_group([examples[i] for i in idx], members, config, handles, backend,
                           mode=config.mode, max_workers=max_workers)
        for i, rec in zip(idx, recs):
            out[i] = rec
    return out


PREDICTION_COLUMNS = ["id", "language", "mode", "translated", "members", "member_scores", "weights", "combined"]


def write_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    """Columnar csv, one row per record in input order; floats written with repr so they reload exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for r in records:
            writer.writerow([
                r.example_ref,
                r.language,
                Mode(r.mode).value,
                int(r.translated),
                "|".join(sid for sid, _ in r.member_predictions),
                "|".join(repr(p) for _, p in r.member_predictions),
                "|".join(repr(w) for w in r.weights_used),
                repr(r.combined),
            ])


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"prediction file not found: {path}")
    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            ids = row["members"].split("|")
            scores = [float(s) for s in row["member_scores"].split("|")]
            out.append(
                PredictionRecord(
                    example_ref=row["id"],
                    language=row["language"],
                    member_predictions=list(zip(ids, scores)),
                    weights_used=[float(w) for w in row["weights"].split("|")],
                    combined=float(row["combined"]),
                    mode=Mode(row["mode"]),
                    translated=row["translated"] == "1",
                )
            )
    return out
