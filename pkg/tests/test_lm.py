import math

import numpy as np
import pytest

from keyecho.errors import DataError
from keyecho.lm import CharNgramLM, lm_score, train_char_lm


class TestTrainCharLm:
    def test_degenerate_corpus_alpha_limit(self):
        lm = train_char_lm("aaaa", order=2, alpha=1e-9)
        assert math.exp(lm_score(lm, ("a",), "a")) == pytest.approx(1.0, abs=1e-6)

    def test_large_alpha_tends_uniform(self):
        lm = train_char_lm("abab", order=2, alpha=1e9)
        p = math.exp(lm_score(lm, ("a",), "b"))
        assert p == pytest.approx(0.5, abs=1e-6)

    def test_abab_counts(self):
        # bigrams: ab x2, ba x1; P(b|a) = (2 + 1) / (2 + 2) = 0.75
        lm = train_char_lm("abab", order=2, alpha=1.0)
        assert len(lm.vocabulary) == 2
        assert math.exp(lm_score(lm, ("a",), "b")) == pytest.approx(0.75)

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            train_char_lm("", order=2)

    def test_invalid_order_and_alpha(self):
        with pytest.raises(ValueError):
            train_char_lm("abc", order=0)
        with pytest.raises(ValueError):
            train_char_lm("abc", order=2, alpha=0.0)

    def test_sequence_corpus_with_special_keys(self):
        lm = train_char_lm([["a", "Backspace", "b"], ["a", "b"]], order=2)
        assert "Backspace" in lm.vocabulary
        assert math.isfinite(lm_score(lm, ("a",), "Backspace"))


class TestLmScore:
    def test_chain_rule_identity(self):
        lm = train_char_lm("the quick brown fox jumps over the lazy dog",
                           order=3, alpha=0.1)
        rng = np.random.default_rng(0)
        for _ in range(20):
            seq = tuple(rng.choice(lm.vocabulary, size=6))
            total = lm.sequence_logprob(seq)
            incremental = sum(lm_score(lm, seq[:i], seq[i])
                              for i in range(len(seq)))
            assert total == pytest.approx(incremental, abs=1e-12)

    def test_conditionals_nonpositive(self):
        lm = train_char_lm("abcabc", order=2, alpha=0.5)
        for a in lm.vocabulary:
            for b in lm.vocabulary:
                assert lm_score(lm, (a,), b) <= 0.0

    def test_abab_two_symbol_score(self):
        lm = train_char_lm("abab", order=2, alpha=1.0)
        score = lm.sequence_logprob(("a", "b"))
        expected = lm_score(lm, (), "a") + lm_score(lm, ("a",), "b")
        assert score == pytest.approx(expected, abs=1e-12)

    def test_conditionals_sum_to_one(self):
        lm = train_char_lm("mississippi river", order=3, alpha=0.2)
        for prefix in ((), ("m",), ("s", "s"), ("q", "z")):
            total = sum(math.exp(lm_score(lm, prefix, c))
                        for c in lm.vocabulary)
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_oov_label_gets_smoothed_mass(self):
        lm = train_char_lm("abab", order=2, alpha=1.0)
        oov = lm_score(lm, ("a",), "z")
        assert math.isfinite(oov)
        # same mass as an in-vocabulary symbol with zero count
        assert oov == pytest.approx(math.log(1.0 / (2 + 2)))

    def test_next_logprobs_matches_scores(self):
        lm = train_char_lm("hello world", order=4, alpha=0.3)
        prefix = ("h", "e")
        scores = lm.next_logprobs(prefix, list(lm.vocabulary))
        for label, value in scores.items():
            assert value == pytest.approx(lm_score(lm, prefix, label))
