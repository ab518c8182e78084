import csv
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from intimacy.dataset import (
    CorpusError,
    LabeledExample,
    Source,
    filter_scored,
    load_corpus,
    load_split,
    make_splits,
    remap_score,
    save_split,
    unmap_score,
    write_corpus,
)


def write_rows(path, rows, header=("text", "language", "label")):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def ex(i, lang="english", score=3.0, source=Source.PRIMARY):
    return LabeledExample(f"{source.value}-{i}", f"text {i}", lang, score, source)


class TestLoadCorpus:
    def test_direct_field_mapping(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", [("@user great!", "English", "2.2")])
        (row,) = load_corpus(p, "primary")
        assert row.text == "@user great!"
        assert row.language == "english"
        assert row.score == 2.2
        assert row.source is Source.PRIMARY
        assert row.id == "primary-1"

    def test_zero_label_in_test_file_is_unannotated(self, tmp_path):
        p = write_rows(tmp_path / "t.csv", [("hola", "spanish", "0"), ("hi", "english", "4.5"), ("x", "dutch", "")])
        rows = load_corpus(p, "test")
        assert [r.score for r in rows] == [None, 4.5, None]

    def test_out_of_range_label_rejected_with_row_number(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", [("fine", "english", "3"), ("bad", "english", "7.3")])
        with pytest.raises(CorpusError, match=r"a\.csv:3.*outside"):
            load_corpus(p, "primary")

    def test_zero_is_not_a_sentinel_in_training_files(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", [("text", "english", "0")])
        with pytest.raises(CorpusError):
            load_corpus(p, "primary")

    def test_auxiliary_is_remapped_at_load(self, tmp_path):
        p = write_rows(tmp_path / "q.csv", [("why?", "english", "-1"), ("how?", "english", "0.5"), ("so?", "english", "0")])
        assert [r.score for r in load_corpus(p, "auxiliary")] == [1.0, 4.0, 3.0]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "nope.csv", "primary")

    def test_malformed_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("text,language,label\nonly two,english\n", encoding="utf-8")
        with pytest.raises(CorpusError, match=":2"):
            load_corpus(p, "primary")

    def test_missing_header_column(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", [("a", "english")], header=("text", "language"))
        with pytest.raises(CorpusError, match="label"):
            load_corpus(p, "primary")

    def test_unknown_language_warns_and_keeps_row(self, tmp_path, caplog):
        p = write_rows(tmp_path / "a.csv", [("bonjour", "klingon", "2")])
        rows = load_corpus(p, "primary")
        assert rows[0].language == "klingon"
        assert "unknown language" in caplog.text

    def test_configurable_columns_and_tsv(self, tmp_path):
        p = tmp_path / "a.tsv"
        p.write_text("tweet\tlang\tscore\n#love it 😍\tItalian\t4.1\n", encoding="utf-8")
        (row,) = load_corpus(p, "primary", text_column="tweet", language_column="lang", label_column="score")
        assert row.text == "#love it 😍"
        assert row.score == 4.1

    def test_text_is_not_normalized(self, tmp_path):
        raw = "  @user LOVE u 😘 #bff  "
        p = write_rows(tmp_path / "a.csv", [(raw, "english", "4")])
        assert load_corpus(p, "primary")[0].text == raw

    def test_round_trip(self, tmp_path, fixture_files):
        for source in ("primary", "auxiliary", "test"):
            key = {"primary": "primary", "auxiliary": "auxiliary", "test": "test"}[source]
            rows = load_corpus(fixture_files[key], source)
            out = tmp_path / f"{source}.csv"
            write_corpus(rows, out, raw_scale=True)
            assert load_corpus(out, source) == rows


class TestRemap:
    @pytest.mark.parametrize("s, expected", [(-1.0, 1.0), (0.0, 3.0), (1.0, 5.0), (0.5, 4.0)])
    def test_values(self, s, expected):
        # Oracle: linear interpolation between the range endpoints.
        assert np.interp(s, [-1.0, 1.0], [1.0, 5.0]) == pytest.approx(expected, abs=1e-12)
        assert remap_score(s) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("s", [-1.0001, 1.5, float("nan")])
    def test_out_of_range(self, s):
        with pytest.raises(ValueError):
            remap_score(s)

    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_strictly_increasing(self, a, b):
        if a < b:
            assert remap_score(a) <= remap_score(b)
        if b - a > 1e-12:
            assert remap_score(a) < remap_score(b)

    @given(st.floats(-1, 1))
    def test_inverse(self, s):
        assert abs(unmap_score(remap_score(s)) - s) <= 1e-12
        assert 1.0 <= remap_score(s) <= 5.0


class TestMakeSplits:
    def test_paper_split_arithmetic(self):
        primary = [ex(i) for i in range(9491)]
        aux = [ex(i, source=Source.AUXILIARY) for i in range(2247)]
        split = make_splits(primary, aux, 1709, seed=1)
        assert len(split.train) == 10029
        assert len(split.validation) == 1709

    def test_degenerate(self):
        primary = [ex(i) for i in range(10)]
        split = make_splits(primary, [], 0)
        assert split.train == primary
        assert split.validation == []

    def test_deterministic(self):
        primary = [ex(i) for i in range(100)]
        a = make_splits(primary, [], 20, seed=7)
        b = make_splits(primary, [], 20, seed=7)
        assert [e.id for e in a.validation] == [e.id for e in b.validation]
        c = make_splits(primary, [], 20, seed=8)
        assert {e.id for e in a.validation} != {e.id for e in c.validation}

    def test_validation_count_too_large(self):
        with pytest.raises(ValueError):
            make_splits([ex(i) for i in range(5)], [], 5)

    def test_rejects_unannotated_training_rows(self):
        with pytest.raises(ValueError):
            make_splits([ex(0), ex(1, score=None)], [], 1)

    @given(st.integers(1, 60), st.integers(0, 20), st.integers(0, 2**31))
    def test_partition(self, n, n_aux, seed):
        primary = [ex(i, lang=random.Random(i).choice(["english", "french"])) for i in range(n)]
        aux = [ex(i, source=Source.AUXILIARY) for i in range(n_aux)]
        k = seed % n
        split = make_splits(primary, aux, k, seed=seed)
        train_ids = {e.id for e in split.train}
        val_ids = {e.id for e in split.validation}
        assert not train_ids & val_ids
        assert all(e.source is Source.PRIMARY for e in split.validation)
        assert len(split.train) == n - k + n_aux
        assert {e.id for e in primary} == (train_ids | val_ids) - {e.id for e in aux}

    def test_stratified(self):
        primary = [ex(i, lang="english") for i in range(80)] + [ex(100 + i, lang="french") for i in range(20)]
        split = make_splits(primary, [], 10, seed=3, stratify=True)
        langs = [e.language for e in split.validation]
        assert langs.count("english") == 8 and langs.count("french") == 2

    def test_save_and_load(self, tmp_path):
        primary = [ex(i) for i in range(20)]
        test = [ex(i, score=None, source=Source.TEST) for i in range(3)]
        split = make_splits(primary, [ex(0, source=Source.AUXILIARY)], 4, seed=5, test=test)
        save_split(split, tmp_path)
        again = load_split(tmp_path)
        assert again.train == split.train
        assert again.validation == split.validation
        assert again.test == split.test
        assert again.seed == 5


class TestFilterScored:
    def test_mixed(self):
        rows = [ex(0, score=2.0), ex(1, score=None), ex(2, score=5.0), ex(3, score=None), ex(4, score=1.0)]
        assert [e.id for e in filter_scored(rows)] == ["primary-0", "primary-2", "primary-4"]

    def test_all_unannotated(self):
        assert filter_scored([ex(i, score=None) for i in range(3)]) == []

    def test_paper_counts(self):
        rows = [ex(i, score=None) for i in range(13697 - 3881)] + [ex(20000 + i, score=2.5) for i in range(3881)]
        random.Random(0).shuffle(rows)
        assert len(filter_scored(rows)) == 3881

    @given(st.lists(st.one_of(st.none(), st.floats(1, 5))))
    def test_idempotent(self, scores):
        rows = [ex(i, score=s) for i, s in enumerate(scores)]
        once = filter_scored(rows)
        assert filter_scored(once) == once


def test_example_invariants():
    with pytest.raises(ValueError):
        LabeledExample("a", "   ", "english", 3.0, Source.PRIMARY)
    with pytest.raises(ValueError):
        LabeledExample("a", "x", "english", 5.5, Source.PRIMARY)
    with pytest.raises(ValueError):
        LabeledExample("a", "x", "", 3.0, Source.PRIMARY)
