"""Pearson scoring per language and pooled over seen/unseen/all rows, plus KDE curves."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import KNOWN_LANGUAGES, SEEN_LANGUAGES, LabeledExample, filter_scored

POOLED_NOTE = (
    "Seen/Unseen/Overall are pooled Pearson r over the concatenated rows of each group, "
    "not the mean of per-language r."
)


class UndefinedCorrelation(ValueError):
    """Pearson's r is undefined (fewer than two points or a constant vector)."""


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("pearson_r expects 1-d inputs")
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise UndefinedCorrelation(f"need at least 2 points, got {x.size}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelation("zero variance")
    dx = x - x.mean()
    dy = y - y.mean()
    sx, sy = np.abs(dx).max(), np.abs(dy).max()
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("zero variance")
    # r is scale-free; normalizing first keeps the product of variances from under/overflowing.
    dx /= sx
    dy /= sy
    r = float(np.dot(dx, dy) / math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy))))
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class GroupScore:
    r: float | None
    n: int


@dataclass
class EvaluationReport:
    per_language: dict[str, GroupScore]
    seen: GroupScore
    unseen: GroupScore
    overall: GroupScore
    mode: str = ""
    fingerprint: str = ""
    note: str = POOLED_NOTE

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "fingerprint": self.fingerprint,
            "note": self.note,
            "per_language": {k: asdict(v) for k, v in self.per_language.items()},
            "seen": asdict(self.seen),
            "unseen": asdict(self.unseen),
            "overall": asdict(self.overall),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        return cls(
            per_language={k: GroupScore(**v) for k, v in data["per_language"].items()},
            seen=GroupScore(**data["seen"]),
            unseen=GroupScore(**data["unseen"]),
            overall=GroupScore(**data["overall"]),
            mode=data.get("mode", ""),
            fingerprint=data.get("fingerprint", ""),
            note=data.get("note", POOLED_NOTE),
        )

    def rows(self) -> list[tuple[str, GroupScore]]:
        """Table-2 layout: languages, then Overall, Seen, Unseen."""
        return [(lang, s) for lang, s in self.per_language.items()] + [
            ("overall", self.overall),
            ("seen", self.seen),
            ("unseen", self.unseen),
        ]


def _group(gold: list[float], pred: list[float]) -> GroupScore:
    try:
        r = pearson_r(pred, gold)
    except UndefinedCorrelation:
        r = None
    return GroupScore(r, len(gold))


def language_order(languages: Iterable[str]) -> list[str]:
    langs = set(languages)
    known = [l for l in KNOWN_LANGUAGES if l in langs]
    return known + sorted(langs - set(KNOWN_LANGUAGES))


def evaluate(
    predictions: Sequence,
    gold: Sequence[LabeledExample],
    seen_languages: Iterable[str] = SEEN_LANGUAGES,
    *,
    mode: str = "",
    fingerprint: str = "",
) -> EvaluationReport:
    """Score prediction records against gold examples.

    Records are matched to gold rows by example id; every record must have
    a gold row and every annotated gold row must have a record. Unannotated
    gold rows are dropped before scoring.
    """
    gold_ids = {g.id for g in gold}
    by_id = {}
    for rec in predictions:
        if rec.example_ref not in gold_ids:
            raise ValueError(f"prediction for unknown example {rec.example_ref!r}")
        if rec.example_ref in by_id:
            raise ValueError(f"duplicate prediction for {rec.example_ref!r}")
        by_id[rec.example_ref] = rec.combined
    scored = filter_scored(gold)
    missing = [g.id for g in scored if g.id not in by_id]
    if missing:
        raise ValueError(f"no prediction for {len(missing)} annotated examples, e.g. {missing[:3]}")

    seen = set(seen_languages)
    groups: dict[str, tuple[list[float], list[float]]] = {}
    for g in scored:
        gs, ps = groups.setdefault(g.language, ([], []))
        gs.append(g.score)
        ps.append(by_id[g.id])

    def pooled(langs):
        gs, ps = [], []
        for lang in langs:
            gs += groups[lang][0]
            ps += groups[lang][1]
        return _group(gs, ps)

    order = language_order(groups)
    return EvaluationReport(
        per_language={lang: _group(*groups[lang]) for lang in order},
        seen=pooled([l for l in order if l in seen]),
        unseen=pooled([l for l in order if l not in seen]),
        overall=pooled(order),
        mode=mode,
        fingerprint=fingerprint,
    )


def _fmt(r: float | None, digits: int | None = None) -> str:
    if r is None:
        return "UNDEFINED"
    return f"{r:.{digits}f}" if digits is not None else repr(r)


def render_report(report: EvaluationReport, format: str = "table") -> str:
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["language", "r", "n"])
        for name, s in report.rows():
            writer.writerow([name, _fmt(s.r), s.n])
        return buf.getvalue()
    if format == "table":
        return render_comparison({report.mode or "r": report})
    raise ValueError(f"unknown report format {format!r}")


def render_comparison(reports: dict[str, EvaluationReport]) -> str:
    """Side-by-side fixed-width table, one column per report."""
    languages = language_order(l for rep in reports.values() for l in rep.per_language)
    cols = list(reports)
    width = max([10] + [len(c) for c in cols])
    lines = []
    for rep in reports.values():
        if rep.fingerprint:
            lines.append(f"# {rep.mode or 'report'} config {rep.fingerprint}")
    lines.append(f"# {POOLED_NOTE}")
    header = f"{'Language':<12}" + "".join(f" {c:>{width}}" for c in cols) + f" {'n':>6}"
    rule = "-" * len(header)
    lines += [header, rule]

    def row(label, getter):
        scores = [getter(rep) for rep in reports.values()]
        n = next((s.n for s in scores if s is not None), 0)
        cells = "".join(f" {(_fmt(s.r, 4) if s else '-'):>{width}}" for s in scores)
        return f"{label:<12}{cells} {n:>6}"

    for lang in languages:
        lines.append(row(lang.capitalize(), lambda rep: rep.per_language.get(lang)))
    lines.append(rule)
    lines.append(row("Overall", lambda rep: rep.overall))
    lines.append(row("Seen", lambda rep: rep.seen))
    lines.append(row("Unseen", lambda rep: rep.unseen))
    return "\n".join(lines) + "\n"


def scott_bandwidth(scores: Sequence[float]) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    return float(scores.size ** (-1.0 / 5.0) * scores.std(ddof=1))


def kde_curve(
    scores: Sequence[float],
    bandwidth: float | str = "auto",
    grid: tuple[float, float, int] = (0.0, 6.0, 241),
) -> list[tuple[float, float]]:
    """Gaussian kernel density estimate sampled on a uniform grid.

    ``bandwidth="auto"`` uses Scott's rule. The grid must cover [1, 5].
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise ValueError("kde_curve needs at least 2 scores")
    lo, hi, points = grid
    if lo > 1.0 or hi < 5.0 or points < 2:
        raise ValueError(f"grid {grid} must span [1, 5] with at least 2 points")
    if isinstance(bandwidth, str):
        if bandwidth.lower() != "auto":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        bandwidth = scott_bandwidth(scores)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    xs = np.linspace(lo, hi, int(points))
    z = (xs[:, None] - scores[None, :]) / bandwidth
    density = np.exp(-0.5 * z * z).sum(axis=1) / (scores.size * bandwidth * math.sqrt(2.0 * math.pi))
    return [(float(x), float(d)) for x, d in zip(xs, density)]


def write_kde_csv(curves: dict[str, list[tuple[float, float]]], path) -> None:
    """One two-column csv (x, density) per curve; with several curves, one density column each."""
    names = list(curves)
    xs = [x for x, _ in curves[names[0]]]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x"] + (["density"] if len(names) == 1 else names))
        for i, x in enumerate(xs):
            writer.writerow([repr(x)] + [repr(curves[n][i][1]) for n in names])


def plot_kde(curves: dict[str, list[tuple[float, float]]], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, curve in curves.items():
        ax.plot([x for x, _ in curve], [d for _, d in curve], label=name)
    ax.set_xlabel("predicted intimacy")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
