import json
import threading
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from intimacy.augmentation import (
    CachedTranslator,
    DictionaryTranslator,
    HttpTranslator,
    IdentityTranslator,
    TranslationError,
    augment_examples,
    predict_augmented,
)
from intimacy.dataset import KNOWN_LANGUAGES, SEEN_LANGUAGES, LabeledExample, Source
from intimacy.ensemble import EnsembleConfig, predict_examples
from intimacy.registry import Mode, Registry


def ex(i, lang, text="hallo wereld", score=3.5):
    return LabeledExample(f"t{i}", text, lang, score, Source.TEST)


class Failing:
    name = "failing"

    def translate(self, text, source_language, target_language):
        raise TranslationError("service down")


class TestAugmentExamples:
    def test_unseen_translated(self):
        table = {"hindi": {"नमस्ते": "hello", "दोस्त": "friend"}}
        (out, flag), = augment_examples([ex(0, "hindi", "नमस्ते दोस्त")], SEEN_LANGUAGES, DictionaryTranslator(table))
        assert flag is True
        assert out.text == "hello friend" and out.language == "english"
        assert out.score == 3.5 and out.id == "t0"

    def test_seen_passthrough(self):
        row = ex(0, "spanish", "hola")
        assert augment_examples([row], SEEN_LANGUAGES, Failing()) == [(row, False)]

    def test_identity_on_dutch(self):
        (out, flag), = augment_examples([ex(0, "dutch")], SEEN_LANGUAGES, IdentityTranslator())
        assert (out.text, out.language, flag) == ("hallo wereld", "english", True)

    def test_requires_english(self):
        with pytest.raises(ValueError):
            augment_examples([], {"french"}, IdentityTranslator())

    def test_error_policies(self):
        rows = [ex(0, "korean"), ex(1, "english")]
        with pytest.raises(TranslationError, match="t0"):
            augment_examples(rows, SEEN_LANGUAGES, Failing())
        out = augment_examples(rows, SEEN_LANGUAGES, Failing(), on_error="passthrough")
        assert out == [(rows[0], False), (rows[1], False)]

    @given(st.lists(st.sampled_from(KNOWN_LANGUAGES), max_size=30), st.sampled_from([1, 4]))
    def test_invariants(self, langs, workers):
        rows = [ex(i, lang, score=1 + i % 5) for i, lang in enumerate(langs)]
        out = augment_examples(rows, SEEN_LANGUAGES, IdentityTranslator(), max_workers=workers)
        assert len(out) == len(rows)
        for original, (new, flag) in zip(rows, out):
            assert new.score == original.score
            assert flag == (original.language not in SEEN_LANGUAGES)


class TestPredictAugmented:
    def test_korean_routed_as_english(self, registry, stub, stub_handles):
        (rec,) = predict_augmented([ex(0, "korean")], registry, stub_handles, EnsembleConfig(mode="augmented"),
                                   IdentityTranslator(), stub)
        assert rec.translated and rec.language == "korean" and rec.mode is Mode.AUGMENTED
        assert [m for m, _ in rec.member_predictions][-1] == "twitter-roberta-sentiment"
        assert len(rec.member_predictions) == 4

    def test_translation_changes_scored_text(self, registry, stub, stub_handles):
        table = DictionaryTranslator({"dutch": {"hallo": "hello", "wereld": "world"}})
        (rec,) = predict_augmented([ex(0, "dutch")], registry, stub_handles, EnsembleConfig(mode="augmented"), table, stub)
        expected = stub.predict(stub_handles["xlm-t"], ["hello world"])[0]
        assert dict(rec.member_predictions)["xlm-t"] == expected

    @pytest.mark.parametrize("seen_mode", ["multilingual", "routed"])
    def test_seen_rows_match_seen_path(self, registry, stub, stub_handles, seen_mode):
        rows = [ex(i, lang, f"text {i}") for i, lang in enumerate(["italian", "hindi", "english", "french", "arabic"])]
        cfg = EnsembleConfig(mode="augmented", augmented_seen_mode=seen_mode)
        aug = predict_augmented(rows, registry, stub_handles, cfg, IdentityTranslator(), stub)
        plain = predict_examples(rows, replace(cfg, mode=seen_mode), registry, stub_handles, stub)
        for r, a, p in zip(rows, aug, plain):
            if r.language in SEEN_LANGUAGES:
                assert replace(a, mode=p.mode) == p
                assert not a.translated
            else:
                assert a.translated

    def test_empty(self, registry, stub, stub_handles):
        assert predict_augmented([], registry, stub_handles, EnsembleConfig(), IdentityTranslator(), stub) == []

    def test_needs_english_specialist(self, registry, stub, stub_handles):
        no_en = Registry(tuple(m for m in registry.members if m.language != "english"))
        with pytest.raises(ValueError, match="English"):
            predict_augmented([ex(0, "hindi")], no_en, stub_handles, EnsembleConfig(), IdentityTranslator(), stub)


class Counting:
    name = "counting"

    def __init__(self):
        self.calls = 0
        self.lock = threading.Lock()

    def translate(self, text, source_language, target_language):
        with self.lock:
            self.calls += 1
        return text.upper()


def test_cache_persists_and_dedupes(tmp_path):
    inner = Counting()
    cache = CachedTranslator(inner, tmp_path / "cache.json")
    rows = [ex(i, "arabic", "مرحبا") for i in range(20)]
    augment_examples(rows, SEEN_LANGUAGES, cache)
    assert inner.calls == 1
    cache.save()
    entries = json.loads((tmp_path / "cache.json").read_text(encoding="utf-8"))
    assert entries == [{"text": "مرحبا", "source": "arabic", "target": "english", "translation": "مرحبا".upper()}]
    again = CachedTranslator(Failing(), tmp_path / "cache.json")
    assert again.translate("مرحبا", "arabic", "english") == "مرحبا".upper()


class FakeResponse:
    def __init__(self, status, payload=None):
        self.status_code = status
        self.payload = payload

    def raise_for_status(self):
        if self.status_code >= 400:
            raise RuntimeError(f"HTTP {self.status_code}")

    def json(self):
        return self.payload


class FakeClient:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json):
        self.requests.append((url, json))
        return self.responses.pop(0)


def test_http_translator_retries():
    client = FakeClient([FakeResponse(503), FakeResponse(200, {"translatedText": "I miss you"})])
    tr = HttpTranslator("http://mt/translate", client=client, backoff=0)
    assert tr.translate("너무 보고 싶어", "korean", "english") == "I miss you"
    assert client.requests[0][1] == {"q": "너무 보고 싶어", "source": "ko", "target": "en", "format": "text"}
    assert len(client.requests) == 2


def test_http_translator_gives_up():
    client = FakeClient([FakeResponse(500)] * 3)
    tr = HttpTranslator("http://mt/translate", client=client, retries=2, backoff=0)
    with pytest.raises(TranslationError, match="3 attempts"):
        tr.translate("x", "hindi", "english")
