import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_lens.core import ErrorSpan, Explanation, InputConfig, Method, Severity, tokenize
from metric_lens.errors import ShapeError, SpanError
from metric_lens.evaluation import (
    EvalReport,
    SentenceResult,
    aggregate,
    auc,
    label_words,
    recall_at_k,
    subwords_to_words,
)
from metric_lens.rng import Xoshiro256StarStar


def brute_force_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_force_recall_at_k(scores, labels):
    k = sum(labels)
    if k == 0:
        return None
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sum(labels[i] for i in ranked[:k]) / k


def _mk_expl(scores):
    scores = np.asarray(scores, dtype=float)
    return Explanation(
        method=Method.GRAD_L2,
        input_config=InputConfig.REF,
        subword_scores=scores,
        word_scores=scores,
    )


class TestSubwordsToWords:
    def test_identity_when_one_subword_per_word(self):
        s = tokenize("a big cat")
        got = subwords_to_words(_mk_expl([0.1, 0.2, 0.3]), s)
        assert np.allclose(got, [0.1, 0.2, 0.3])

    def test_max_within_word(self):
        s = tokenize("relativity")  # two subwords, one word
        got = subwords_to_words(_mk_expl([0.2, 0.9]), s)
        assert np.allclose(got, [0.9])

    def test_per_word_max(self):
        s = tokenize("cat relativity")  # word A 1 subword, word B 2 subwords
        got = subwords_to_words(_mk_expl([0.1, 0.3, 0.2]), s)
        assert np.allclose(got, [0.1, 0.3])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            subwords_to_words(_mk_expl([0.1]), tokenize("two words"))


class TestLabelWords:
    def test_empty_spans_all_zero(self):
        s = tokenize("a b c")
        assert np.all(label_words(s, []) == 0)

    def test_exact_word_one_hot(self):
        s = tokenize("aa bb cc")
        span = ErrorSpan(6, 8, Severity.MAJOR, "x")  # "cc"
        assert label_words(s, [span]).tolist() == [0, 0, 1]

    def test_straddling_span_labels_both(self):
        s = tokenize("aa bb cc")
        span = ErrorSpan(4, 7, Severity.MAJOR, "x")  # "b c" straddle
        assert label_words(s, [span]).tolist() == [0, 1, 1]

    def test_out_of_bounds_raises(self):
        s = tokenize("aa bb")
        with pytest.raises(SpanError):
            label_words(s, [ErrorSpan(0, 99, Severity.MAJOR, "x")])

    def test_multibyte_offsets(self):
        s = tokenize("Grüße aus Wien")
        span = ErrorSpan(8, 11, Severity.MAJOR, "x")  # "aus" in bytes
        assert label_words(s, [span]).tolist() == [0, 1, 0]


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.1, 0.5], [1, 0, 0]) == 1.0

    def test_all_ties_half(self):
        assert auc([0.3, 0.3, 0.3], [1, 0, 1]) == 0.5

    def test_single_class_undefined(self):
        assert auc([0.9, 0.1], [0, 0]) is None
        assert auc([0.9, 0.1], [1, 1]) is None

    def test_inverted_perfect_is_zero(self):
        assert auc([0.1, 0.9], [1, 0]) == 0.0

    def test_matches_brute_force_fuzz(self):
        rng = Xoshiro256StarStar(71)
        for _ in range(1000):
            n = 2 + rng.randint(49)
            # coarse grid of values makes ties frequent
            scores = [rng.randint(5) / 4 for _ in range(n)]
            labels = [rng.randint(2) for _ in range(n)]
            want = brute_force_auc(scores, labels)
            got = auc(np.array(scores), np.array(labels))
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)

    @given(
        st.lists(st.tuples(st.integers(-100, 100), st.integers(0, 1)), min_size=2, max_size=30),
        st.integers(1, 7),
        st.integers(-50, 50),
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone_transform_invariance(self, pairs, a, b):
        # integer scores keep the transform exactly order-preserving
        scores = np.array([p[0] for p in pairs], dtype=float)
        labels = np.array([p[1] for p in pairs])
        for transformed in (a * scores + b, np.exp(scores / 50.0)):
            before = auc(scores, labels)
            after = auc(transformed, labels)
            before_rk = recall_at_k(scores, labels)
            after_rk = recall_at_k(transformed, labels)
            if before is None:
                assert after is None
            else:
                assert after == pytest.approx(before, abs=1e-12)
            if before_rk is None:
                assert after_rk is None
            else:
                assert after_rk == pytest.approx(before_rk, abs=1e-12)


class TestRecallAtK:
    def test_hand_example_full_recall(self):
        assert recall_at_k([0.9, 0.2, 0.8, 0.1], [1, 0, 1, 0]) == 1.0

    def test_hand_example_miss(self):
        assert recall_at_k([0.9, 0.1], [0, 1]) == 0.0

    def test_all_positive_is_one(self):
        assert recall_at_k([0.1, 0.9, 0.4], [1, 1, 1]) == 1.0

    def test_no_positives_undefined(self):
        assert recall_at_k([0.5, 0.5], [0, 0]) is None

    def test_tie_breaks_to_earlier_position(self):
        # positions 0 and 1 tie at 0.5; K=1 must pick position 0
        assert recall_at_k([0.5, 0.5], [1, 0]) == 1.0
        assert recall_at_k([0.5, 0.5], [0, 1]) == 0.0

    def test_matches_brute_force_fuzz(self):
        rng = Xoshiro256StarStar(73)
        for _ in range(1000):
            n = 1 + rng.randint(50)
            scores = [rng.randint(5) / 4 for _ in range(n)]
            labels = [rng.randint(2) for _ in range(n)]
            want = brute_force_recall_at_k(scores, labels)
            got = recall_at_k(np.array(scores), np.array(labels))
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)

    def test_perfect_explanation_scores_equal_labels(self):
        rng = Xoshiro256StarStar(79)
        for _ in range(100):
            n = 2 + rng.randint(20)
            labels = np.array([rng.randint(2) for _ in range(n)])
            scores = labels.astype(float)
            if labels.sum() not in (0, n):
                assert auc(scores, labels) == 1.0
            if labels.sum() > 0:
                assert recall_at_k(scores, labels) == 1.0


def _res(lp, method, config, cat, a, rk):
    return SentenceResult(
        instance_id="x",
        lang_pair=lp,
        method=method,
        input_config=config,
        error_category=cat,
        auc=a,
        recall_at_k=rk,
    )


class TestAggregate:
    def test_single_sentence_is_identity(self):
        reports = aggregate([_res("zh-en", "grad_l2", "ref", "none", 0.8, 0.5)])
        [r] = [r for r in reports if r.lang_pair == "zh-en"]
        assert r.auc == 0.8 and r.recall_at_k == 0.5
        assert r.n_sentences_auc == 1

    def test_macro_mean(self):
        rs = [
            _res("zh-en", "m", "ref", "none", 1.0, 0.4),
            _res("zh-en", "m", "ref", "none", 0.5, 0.6),
        ]
        [r] = [r for r in aggregate(rs) if r.lang_pair == "zh-en"]
        assert r.auc == pytest.approx(0.75)
        assert r.recall_at_k == pytest.approx(0.5)

    def test_undefined_sentences_skipped(self):
        rs = [
            _res("zh-en", "m", "ref", "none", 1.0, None),
            _res("zh-en", "m", "ref", "none", None, 0.5),
        ]
        [r] = [r for r in aggregate(rs) if r.lang_pair == "zh-en"]
        assert r.auc == 1.0 and r.recall_at_k == 0.5
        assert r.n_sentences_auc == 1 and r.n_sentences_rk == 1

    def test_avg_is_unweighted_language_pair_mean(self):
        rs = [
            _res("en-de", "m", "ref", "none", 0.6, 0.2),
            _res("zh-en", "m", "ref", "none", 0.8, 0.4),
            _res("zh-en", "m", "ref", "none", 0.8, 0.4),
        ]
        [avg] = [r for r in aggregate(rs) if r.lang_pair == "Avg."]
        assert avg.auc == pytest.approx(0.7)  # (0.6 + 0.8) / 2, not sentence-weighted
        assert avg.recall_at_k == pytest.approx(0.3)

    def test_empty_group_omitted(self):
        rs = [_res("zh-en", "m", "ref", "none", None, None)]
        assert aggregate(rs) == []

    def test_unknown_grouping_field_rejected(self):
        with pytest.raises(ValueError):
            aggregate([], grouping=("nope",))
