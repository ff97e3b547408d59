import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from okwugbe.metrics import (
    ErrorRateReport,
    UndefinedRateError,
    cer,
    corpus_rates,
    levenshtein,
    wer,
    write_report,
)
from oracles import edit_distance

short = st.text(alphabet="abcd", max_size=8)


class TestLevenshtein:
    def test_identical(self):
        assert levenshtein("same", "same") == 0

    def test_pure_insertions(self):
        assert levenshtein("", "abc") == 3

    def test_kitten_sitting(self):
        assert levenshtein("kitten", "sitting") == 3 == edit_distance("kitten", "sitting")

    def test_word_lists(self):
        assert levenshtein(["a", "b"], ["a", "c", "b"]) == 1

    @given(short, short)
    def test_matches_full_table(self, a, b):
        assert levenshtein(a, b) == edit_distance(a, b)

    @given(short, short, short)
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) == levenshtein(b, a)
        assert (levenshtein(a, b) == 0) == (a == b)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)

    @given(short, short)
    def test_bounds(self, a, b):
        d = levenshtein(a, b)
        assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


class TestRates:
    def test_identity(self):
        assert wer("a b c", "a b c").rate == 0.0
        assert cer("a b c", "a b c").rate == 0.0

    def test_table_six_pair(self):
        r = wer("eo mi sa akpan nu mi", "eo mi sa aakpan nu mi")
        assert (r.distance, r.reference_length) == (1, 6)
        assert r.rate == pytest.approx(100 / 6)

    def test_cer_disjoint(self):
        assert cer("abcd", "x").rate == 100.0

    def test_rate_may_exceed_100(self):
        assert wer("a", "b c d").rate == 300.0

    def test_cer_counts_graphemes(self):
        # wrong tone mark on one letter is one error, not two code points
        r = cer("kpɔ́", "kpɔ̀")
        assert (r.distance, r.reference_length) == (1, 3)

    def test_empty_reference(self):
        assert wer("", "").rate == 0.0
        with pytest.raises(UndefinedRateError):
            wer("", "x").rate

    def test_corpus_aggregates_before_dividing(self):
        w, _ = corpus_rates([("a", "b"), ("a b c d", "a b c d")])
        assert w.rate == pytest.approx(20.0)
        assert ErrorRateReport(1, 1) + ErrorRateReport(0, 4) == ErrorRateReport(1, 5)

    def test_random_pairs_against_oracle(self):
        rng = np.random.default_rng(0)
        vocab = ["a", "bo", "ɖe", "kpɔ́", "mi"]
        for _ in range(100):
            ref = " ".join(rng.choice(vocab, size=rng.integers(1, 6)))
            hyp = " ".join(rng.choice(vocab, size=rng.integers(0, 6)))
            assert wer(ref, hyp).distance == edit_distance(ref.split(), hyp.split())


class TestReport:
    def test_rows_and_summary(self):
        buf = io.StringIO()
        summary = write_report(
            buf,
            [
                {"id": "u1", "ref": "a b", "hyp": "a c"},
                {"id": "u2", "ref": "c", "error": "missing audio"},
            ],
        )
        lines = [json.loads(x) for x in buf.getvalue().splitlines()]
        assert lines[0] == {"id": "u1", "ref": "a b", "hyp": "a c", "wer": 50.0, "cer": pytest.approx(100 / 3, abs=1e-4)}
        assert lines[1]["error"] == "missing audio" and lines[1]["wer"] is None
        assert lines[2]["summary"] and lines[2]["errors"] == 1 and lines[2]["utterances"] == 1
        assert {"cer", "wer"} <= set(lines[2])
        assert summary["wer"] == 50.0
