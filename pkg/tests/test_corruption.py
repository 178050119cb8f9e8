import numpy as np
import pytest

from metric_lens.core import ErrorSpan, EvaluationInstance, Severity, tokenize
from metric_lens.corruption import (
    CorruptionSpec,
    build_corruption_set,
    corrupt_hallucination,
    corrupt_named_entity,
    corrupt_negation,
    corrupt_number,
    eligible,
)
from metric_lens.errors import InsufficientDonor, NoCorruptionSite


def make_instance(mt, ref="a different reference text", spans=()):
    return EvaluationInstance(
        id="c1",
        lang_pair="zh-en",
        source=tokenize("展销区将展至七月"),
        translation=tokenize(mt),
        reference=tokenize(ref),
        gold_spans=tuple(spans),
    )


LEXICON = {"country": ("Vietnam", "Russia", "China"), "city": ("Hanoi",)}
DONORS = ("we have a lot of friends around during the holidays", "too short")


def spec(category, seed=1):
    return CorruptionSpec(
        category=category, seed=seed, donor_corpus=DONORS, entity_lexicon=LEXICON
    )


def span_text(instance, span):
    return instance.translation.text.encode("utf-8")[span.char_start : span.char_end].decode("utf-8")


class TestEligibility:
    def test_error_free_noncopy_is_eligible(self):
        assert eligible(make_instance("the hall is open"))

    def test_exact_copy_excluded(self):
        assert not eligible(make_instance("same text", ref="same text"))

    def test_existing_error_span_excluded(self):
        span = ErrorSpan(0, 3, Severity.MAJOR, "x")
        assert not eligible(make_instance("the hall is open", spans=[span]))


class TestNumber:
    def test_number_replaced_with_span(self):
        inst = make_instance("open until July 29.")
        corrupted, span = corrupt_number(inst, spec("NUM"))
        assert corrupted.translation.text != inst.translation.text
        assert span.category == "NUM" and span.severity is Severity.CRITICAL
        replaced = span_text(corrupted, span)
        assert replaced.isdigit() and replaced != "29"

    def test_no_digits_raises(self):
        with pytest.raises(NoCorruptionSite):
            corrupt_number(make_instance("no digits here"), spec("NUM"))

    def test_deterministic(self):
        inst = make_instance("rooms 12 and 85 are open until 1998")
        a, sa = corrupt_number(inst, spec("NUM", seed=9))
        b, sb = corrupt_number(inst, spec("NUM", seed=9))
        assert a.translation.text == b.translation.text and sa == sb

    def test_source_reference_untouched(self):
        inst = make_instance("open until July 29.")
        corrupted, _ = corrupt_number(inst, spec("NUM"))
        assert corrupted.source.text == inst.source.text
        assert corrupted.reference.text == inst.reference.text


class TestNegation:
    def test_insert_not_after_auxiliary(self):
        corrupted, span = corrupt_negation(make_instance("The area is open"), spec("NEG"))
        assert corrupted.translation.text == "The area is not open"
        assert span_text(corrupted, span) == "not"

    def test_delete_not_with_window_span(self):
        corrupted, span = corrupt_negation(make_instance("It is not silent"), spec("NEG"))
        assert corrupted.translation.text == "It is silent"
        assert span_text(corrupted, span) == "is silent"

    def test_no_rule_site_raises(self):
        with pytest.raises(NoCorruptionSite):
            corrupt_negation(make_instance("Birds fly."), spec("NEG"))

    def test_contraction_expanded(self):
        corrupted, span = corrupt_negation(make_instance("It doesn't work"), spec("NEG"))
        assert corrupted.translation.text == "It does work"
        assert span_text(corrupted, span) == "does"

    def test_negate_then_denegate_round_trip(self):
        for text in ("The area is open", "Results were good", "She can sing loudly"):
            negated, _ = corrupt_negation(make_instance(text), spec("NEG"))
            restored, _ = corrupt_negation(
                make_instance(negated.translation.text), spec("NEG")
            )
            assert restored.translation.text == text


class TestNamedEntity:
    def test_table_style_country_swap(self):
        inst = make_instance("the peace initiative proposed by Vietnam.")
        corrupted, span = corrupt_named_entity(inst, spec("NE", seed=4))
        replaced = span_text(corrupted, span)
        assert replaced in ("Russia", "China")
        assert corrupted.translation.text.endswith(f"proposed by {replaced}.")

    def test_single_entry_type_raises(self):
        inst = make_instance("trains from Hanoi leave daily")
        with pytest.raises(NoCorruptionSite):
            corrupt_named_entity(inst, spec("NE"))

    def test_no_match_raises(self):
        with pytest.raises(NoCorruptionSite):
            corrupt_named_entity(make_instance("nothing matches here"), spec("NE"))

    def test_deterministic(self):
        inst = make_instance("delegates from Vietnam arrived")
        a, sa = corrupt_named_entity(inst, spec("NE", seed=2))
        b, sb = corrupt_named_entity(inst, spec("NE", seed=2))
        assert a.translation.text == b.translation.text and sa == sb


class TestHallucination:
    def test_insertion_span_covers_inserted_words(self):
        inst = make_instance("people spend more time on the Internet")
        corrupted, span = corrupt_hallucination(inst, spec("HALL", seed=3))
        inserted = span_text(corrupted, span).split()
        assert 3 <= len(inserted) <= 8
        donor_words = DONORS[0].split()
        joined = " ".join(inserted)
        assert joined in " ".join(donor_words)
        n_orig = len(inst.translation.words)
        assert len(corrupted.translation.words) == n_orig + len(inserted)

    def test_never_inserts_before_first_word(self):
        inst = make_instance("alpha beta gamma")
        for seed in range(30):
            corrupted, span = corrupt_hallucination(inst, spec("HALL", seed=seed))
            assert span.char_start > 0
            assert corrupted.translation.words[0].text == "alpha"

    def test_short_donors_raise(self):
        inst = make_instance("people spend time online")
        bad = CorruptionSpec(category="HALL", seed=1, donor_corpus=("two words",))
        with pytest.raises(InsufficientDonor):
            corrupt_hallucination(inst, bad)


class TestBuildSet:
    def make_corpus(self, n=10):
        corpus = []
        for i in range(n):
            corpus.append(
                EvaluationInstance(
                    id=f"s{i}",
                    lang_pair="zh-en",
                    source=tokenize("源 文本"),
                    translation=tokenize(f"The hall in Vietnam is open until July {20 + i}."),
                    reference=tokenize(f"The Vietnam hall stays accessible until July {20 + i}."),
                )
            )
        return corpus

    def test_manifest_counts_match_output(self):
        corpus = self.make_corpus()
        specs = {"NE": spec("NE"), "NUM": spec("NUM")}
        out, manifest = build_corruption_set(corpus, specs, {"NE": 2, "NUM": 1})
        assert manifest["counts"] == {"NE": 2, "NUM": 1}
        assert len(out) == 3
        by_cat = {}
        for inst in out:
            by_cat[inst.metadata["corruption"]] = by_cat.get(inst.metadata["corruption"], 0) + 1
        assert by_cat == {"NE": 2, "NUM": 1}

    def test_no_eligible_instances_explained(self):
        copies = [
            EvaluationInstance(
                id="cp",
                lang_pair="zh-en",
                source=tokenize("s"),
                translation=tokenize("same"),
                reference=tokenize("same"),
            )
        ]
        out, manifest = build_corruption_set(copies, {"NUM": spec("NUM")}, {"NUM": 5})
        assert out == []
        assert manifest["skips"]["NUM"]["ineligible"] == 1
        assert manifest["skips"]["NUM"]["shortfall"] == 5

    def test_every_output_valid(self):
        corpus = self.make_corpus(8)
        specs = {c: spec(c) for c in ("NEG", "HALL", "NE", "NUM")}
        out, _ = build_corruption_set(corpus, specs, {c: 5 for c in specs})
        originals = {i.id: i for i in corpus}
        for inst in out:
            (span,) = inst.gold_spans
            nbytes = len(inst.translation.text.encode("utf-8"))
            assert 0 <= span.char_start < span.char_end <= nbytes
            orig = originals[inst.id.split("#")[0]]
            assert inst.translation.text != orig.translation.text
            assert inst.source.text == orig.source.text
            assert inst.reference.text == orig.reference.text

    def test_bitwise_deterministic(self):
        corpus = self.make_corpus(6)
        specs = {c: spec(c, seed=11) for c in ("NEG", "NE", "NUM")}
        a, ma = build_corruption_set(corpus, specs, {c: 4 for c in specs})
        b, mb = build_corruption_set(corpus, specs, {c: 4 for c in specs})
        assert ma == mb
        assert [i.translation.text for i in a] == [i.translation.text for i in b]
        assert [i.gold_spans for i in a] == [i.gold_spans for i in b]
