"""Translate unseen-language test rows to English before scoring them."""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .dataset import LabeledExample
from .ensemble import EnsembleConfig, PredictionRecord, predict_examples, score_group
from .registry import Mode, Registry, resolve
from .training import PredictorBackend, RegressorHandle

logger = logging.getLogger(__name__)

TARGET_LANGUAGE = "english"

ISO_CODES = {
    "english": "en", "spanish": "es", "portuguese": "pt", "italian": "it", "french": "fr",
    "chinese": "zh", "hindi": "hi", "dutch": "nl", "korean": "ko", "arabic": "ar",
}


class TranslationError(RuntimeError):
    pass


class Translator(Protocol):
    name: str

    def translate(self, text: str, source_language: str, target_language: str) -> str: ...


class IdentityTranslator:
    """Returns the text unchanged; only the language tag moves."""

    name = "identity"

    def translate(self, text, source_language, target_language):
        return text


class DictionaryTranslator:
    """Whitespace-token lookup table, per source language. Unknown tokens pass through."""

    name = "dictionary"

    def __init__(self, table: Mapping[str, Mapping[str, str]]):
        self.table = {lang.lower(): dict(words) for lang, words in table.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "DictionaryTranslator":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def translate(self, text, source_language, target_language):
        words = self.table.get(source_language.lower(), {})
        out = " ".join(words.get(tok, tok) for tok in text.split())
        return out or text


class HttpTranslator:
    """Client for a LibreTranslate-compatible ``POST /translate`` endpoint.

    Retries transient failures with exponential backoff. Wrap it in a
    :class:`CachedTranslator` to avoid re-translating rows across runs.
    """

    name = "http"

    def __init__(self, url: str, api_key: str | None = None, *, retries: int = 3,
                 backoff: float = 1.0, timeout: float = 30.0, client=None):
        self.url = url
        self.api_key = api_key
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        if client is None:
            import httpx

            client = httpx.Client(timeout=timeout)
        self.client = client

    def translate(self, text, source_language, target_language):
        payload = {
            "q": text,
            "source": ISO_CODES.get(source_language, source_language),
            "target": ISO_CODES.get(target_language, target_language),
            "format": "text",
        }
        if self.api_key:
            payload["api_key"] = self.api_key
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.client.post(self.url, json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise TranslationError(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                translated = resp.json()["translatedText"]
                if not translated.strip():
                    raise TranslationError("empty translation")
                return translated
            except Exception as exc:  # network errors, bad payloads
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * 2**attempt)
        raise TranslationError(f"translation failed after {self.retries + 1} attempts: {last}")


class CachedTranslator:
    """Thread-safe memo keyed by (text, source, target), optionally persisted as JSON."""

    def __init__(self, inner: Translator, path: str | Path | None = None):
        self.inner = inner
        self.name = f"cached-{inner.name}"
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._cache: dict[tuple[str, str, str], str] = {}
        if self.path and self.path.is_file():
            for entry in json.loads(self.path.read_text(encoding="utf-8")):
                self._cache[(entry["text"], entry["source"], entry["target"])] = entry["translation"]

    def translate(self, text, source_language, target_language):
        key = (text, source_language, target_language)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        out = self.inner.translate(text, source_language, target_language)
        with self._lock:
            self._cache[key] = out
        return out

    def __len__(self):
        return len(self._cache)

    def save(self) -> None:
        if self.path is None:
            return
        with self._lock:
            entries = [
                {"text": t, "source": s, "target": g, "translation": v}
                for (t, s, g), v in sorted(self._cache.items())
            ]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(entries, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def make_translator(name: str, *, url: str | None = None, dictionary: str | None = None,
                    cache: str | Path | None = None) -> Translator:
    if name == "identity":
        inner: Translator = IdentityTranslator()
    elif name == "dictionary":
        if not dictionary:
            raise ValueError("dictionary translator needs a dictionary file")
        inner = DictionaryTranslator.from_file(dictionary)
    elif name == "http":
        if not url:
            raise ValueError("http translator needs a service url")
        inner = HttpTranslator(url)
    else:
        raise ValueError(f"unknown translator {name!r}")
    return CachedTranslator(inner, cache) if cache else inner


def augment_examples(
    examples: Sequence[LabeledExample],
    seen_languages: Iterable[str],
    translator: Translator,
    *,
    on_error: str = "abort",
    max_workers: int = 1,
) -> list[tuple[LabeledExample, bool]]:
    """Replace unseen-language rows by English translations.

    Returns ``(example, translated)`` pairs in input order. Gold scores and
    ids are kept. With ``on_error="passthrough"`` a row whose translation
    fails is returned untouched with ``translated=False``.
    """
    seen = {l.lower() for l in seen_languages}
    if TARGET_LANGUAGE not in seen:
        raise ValueError("seen_languages must include english")
    if on_error not in ("abort", "passthrough"):
        raise ValueError(f"unknown on_error policy {on_error!r}")

    def one(ex: LabeledExample) -> tuple[LabeledExample, bool]:
        if ex.language in seen:
            return ex, False
        try:
            text = translator.translate(ex.text, ex.language, TARGET_LANGUAGE)
            if not text or not text.strip():
                raise TranslationError("empty translation")
        except Exception as exc:
            if on_error == "abort":
                raise TranslationError(f"{ex.id}: {exc}") from exc
            logger.warning("%s: translation failed (%s), keeping original text", ex.id, exc)
            return ex, False
        return replace(ex, text=text, language=TARGET_LANGUAGE), True

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, examples))
    return [one(ex) for ex in examples]


def predict_augmented(
    examples: Sequence[LabeledExample],
    registry: Registry,
    handles: Mapping[str, RegressorHandle],
    config: EnsembleConfig,
    translator: Translator,
    backend: PredictorBackend,
    *,
    on_error: str = "abort",
    max_workers: int = 1,
) -> list[PredictionRecord]:
    """Translate unseen rows, score them English-routed, and score seen rows on the seen-language path."""
    if TARGET_LANGUAGE not in registry.specialists:
        raise ValueError("augmented prediction needs an English language-specific member")
    if not examples:
        return []
    pairs = augment_examples(examples, config.seen_languages, translator,
                             on_error=on_error, max_workers=max_workers)

    out: list[PredictionRecord | None] = [None] * len(examples)
    translated_idx = [i for i, (_, t) in enumerate(pairs) if t]
    plain_idx = [i for i, (_, t) in enumerate(pairs) if not t]

    if translated_idx:
        members = resolve(TARGET_LANGUAGE, Mode.ROUTED, registry)
        recs = score_group(
            [pairs[i][0] for i in translated_idx], members, config, handles, backend,
            mode=Mode.AUGMENTED, translated=True,
            languages=[examples[i].language for i in translated_idx], max_workers=max_workers,
        )
        for i, rec in zip(translated_idx, recs):
            out[i] = rec

    if plain_idx:
        seen_config = replace(config, mode=config.augmented_seen_mode)
        recs = predict_examples([examples[i] for i in plain_idx], seen_config, registry, handles, backend,
                                max_workers=max_workers)
        for i, rec in zip(plain_idx, recs):
            rec.mode = Mode.AUGMENTED
            out[i] = rec
    return out
