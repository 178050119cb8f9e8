"""Rule-based synthetic critical-error generators.

Four categories of corruption are applied to fully correct translations
that are not exact copies of the reference: negation flips (NEG),
hallucinated insertions (HALL), named-entity substitutions (NE) and
numeric errors (NUM). Every generator is pure given (instance, spec):
identical seeds give byte-identical corruptions.

Corrupted translations are rebuilt from the word list joined with single
spaces, so the emitted gold span offsets always refer to the corrupted
text. Source and reference are passed through untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .core import (
    ErrorSpan,
    EvaluationInstance,
    Sentence,
    Severity,
    tokenize,
)
from .errors import InsufficientDonor, NoCorruptionSite
from .rng import Xoshiro256StarStar, fnv1a_64

CATEGORIES = ("NEG", "HALL", "NE", "NUM")

AUXILIARIES = (
    "is", "are", "was", "were", "will", "can", "could", "should",
    "does", "did", "has", "have",
)

_DIGIT_RUN = re.compile(r"\d+")
_STRIP_EDGES = re.compile(r"^\W+|\W+$", re.UNICODE)


@dataclass(frozen=True)
class CorruptionSpec:
    category: str
    seed: int
    donor_corpus: tuple[str, ...] = ()
    entity_lexicon: dict[str, tuple[str, ...]] = field(default_factory=dict)


def eligible(instance: EvaluationInstance) -> bool:
    """Only error-free translations that are not an exact copy of the
    reference may be corrupted."""
    if instance.gold_spans:
        return False
    if instance.reference is None:
        return False
    return instance.translation.text != instance.reference.text


def _word_texts(sentence: Sentence) -> list[str]:
    return [w.text for w in sentence.words]


def _rebuild(instance, words, span_word_range, category, suffix):
    """Join words, compute the byte span covering the given word range,
    and return the corrupted instance plus its single gold span."""
    text = " ".join(words)
    starts = []
    pos = 0
    for w in words:
        starts.append(pos)
        pos += len(w.encode("utf-8")) + 1  # single-space joiner
    lo, hi = span_word_range
    span = ErrorSpan(
        char_start=starts[lo],
        char_end=starts[hi] + len(words[hi].encode("utf-8")),
        severity=Severity.CRITICAL,
        category=category,
    )
    corrupted = EvaluationInstance(
        id=f"{instance.id}#{suffix}",
        lang_pair=instance.lang_pair,
        source=instance.source,
        translation=tokenize(text),
        reference=instance.reference,
        gold_spans=(span,),
        metadata={**instance.metadata, "corruption": category},
    )
    return corrupted, span


def _core(word: str) -> str:
    return _STRIP_EDGES.sub("", word)


def corrupt_number(instance: EvaluationInstance, spec: CorruptionSpec):
    """Replace one numeric word by a different number (same-digit-count
    random draw, x10, or a year form), chosen by the seeded PRNG."""
    rng = Xoshiro256StarStar(spec.seed)
    words = _word_texts(instance.translation)
    sites = [(i, _DIGIT_RUN.search(w)) for i, w in enumerate(words)]
    sites = [(i, m) for i, m in sites if m]
    if not sites:
        raise NoCorruptionSite("translation contains no numeric word")

    i, m = rng.choice(sites)
    digits = m.group()
    strategy = rng.choice(("same_digits", "times10", "year"))
    if strategy == "times10":
        new_digits = digits + "0"
    elif strategy == "year":
        new_digits = str(1900 + rng.randint(131))
        while new_digits == digits:
            new_digits = str(1900 + rng.randint(131))
    else:
        while True:
            n = len(digits)
            first = str(1 + rng.randint(9)) if n > 1 else str(rng.randint(10))
            new_digits = first + "".join(str(rng.randint(10)) for _ in range(n - 1))
            if new_digits != digits:
                break

    words = list(words)
    words[i] = words[i][: m.start()] + new_digits + words[i][m.end() :]
    corrupted, span = _rebuild(instance, words, (i, i), "NUM", f"num{spec.seed}")
    # tighten the span to the replaced digit run inside the word
    prefix = len(words[i][: m.start()].encode("utf-8"))
    span = ErrorSpan(
        char_start=span.char_start + prefix,
        char_end=span.char_start + prefix + len(new_digits),
        severity=Severity.CRITICAL,
        category="NUM",
    )
    corrupted = replace(corrupted, gold_spans=(span,))
    return corrupted, span


def _denegation_site(words: list[str]) -> tuple[int, str] | None:
    """First word that carries explicit negation: 'not' or an *n't form."""
    for i, w in enumerate(words):
        t = w.lower()
        if t == "not":
            return i, "not"
        if t.endswith("n't"):
            return i, "n't"
    return None


_CONTRACTION_BASE = {"ca": "can", "wo": "will", "sha": "shall"}


def corrupt_negation(instance: EvaluationInstance, spec: CorruptionSpec):
    """Flip polarity: delete an existing 'not'/*n't, else insert 'not'
    after the first auxiliary or copula."""
    words = _word_texts(instance.translation)
    site = _denegation_site(words)
    if site is not None:
        i, kind = site
        if kind == "not":
            del words[i]
            lo = max(i - 1, 0)
            hi = min(i, len(words) - 1)
        else:
            base = words[i][:-3]
            words[i] = _CONTRACTION_BASE.get(base.lower(), base)
            lo = hi = i
        return _rebuild(instance, words, (lo, hi), "NEG", f"neg{spec.seed}")

    for i, w in enumerate(words):
        if _core(w).lower() in AUXILIARIES:
            words = words[: i + 1] + ["not"] + words[i + 1 :]
            return _rebuild(instance, words, (i + 1, i + 1), "NEG", f"neg{spec.seed}")
    raise NoCorruptionSite("no negation or auxiliary to edit")


def corrupt_named_entity(instance: EvaluationInstance, spec: CorruptionSpec):
    """Swap the first lexicon-matched entity for a different same-type one."""
    rng = Xoshiro256StarStar(spec.seed)
    words = _word_texts(instance.translation)
    surface_to_type = {
        surf: etype
        for etype, surfaces in spec.entity_lexicon.items()
        for surf in surfaces
    }
    for i, w in enumerate(words):
        core = _core(w)
        etype = surface_to_type.get(core)
        if etype is None:
            continue
        alternatives = [s for s in spec.entity_lexicon[etype] if s != core]
        if not alternatives:
            raise NoCorruptionSite(f"lexicon has no distinct replacement for {core!r}")
        new = rng.choice(alternatives)
        prefix = w[: w.index(core)]
        suffix = w[w.index(core) + len(core) :]
        words = list(words)
        words[i] = prefix + new + suffix
        corrupted, span = _rebuild(instance, words, (i, i), "NE", f"ne{spec.seed}")
        p = len(prefix.encode("utf-8"))
        span = ErrorSpan(
            char_start=span.char_start + p,
            char_end=span.char_start + p + len(new.encode("utf-8")),
            severity=Severity.CRITICAL,
            category="NE",
        )
        corrupted = replace(corrupted, gold_spans=(span,))
        return corrupted, span
    raise NoCorruptionSite("no translation word matches the entity lexicon")


def corrupt_hallucination(instance: EvaluationInstance, spec: CorruptionSpec):
    """Insert a seeded 3-8 word donor n-gram at a word boundary (never
    before the first word)."""
    rng = Xoshiro256StarStar(spec.seed)
    donors = [d.split() for d in spec.donor_corpus]
    donors = [d for d in donors if len(d) >= 3]
    if not donors:
        raise InsufficientDonor("no donor sentence has at least 3 words")

    donor = rng.choice(donors)
    n = 3 + rng.randint(min(8, len(donor)) - 2)
    start = rng.randint(len(donor) - n + 1)
    ngram = donor[start : start + n]

    words = _word_texts(instance.translation)
    p = 1 + rng.randint(len(words))  # boundary in [1, len(words)]
    new_words = words[:p] + ngram + words[p:]
    return _rebuild(instance, new_words, (p, p + n - 1), "HALL", f"hall{spec.seed}")


GENERATORS = {
    "NUM": corrupt_number,
    "NEG": corrupt_negation,
    "NE": corrupt_named_entity,
    "HALL": corrupt_hallucination,
}


def build_corruption_set(
    corpus: list[EvaluationInstance],
    specs: dict[str, CorruptionSpec],
    per_category_target: dict[str, int],
):
    """Apply each generator to eligible instances until the per-category
    target or corpus exhaustion. Returns (instances, manifest)."""
    out: list[EvaluationInstance] = []
    manifest = {
        "targets": dict(per_category_target),
        "counts": {},
        "skips": {},
    }
    for category, spec in specs.items():
        target = per_category_target.get(category, 0)
        generator = GENERATORS[category]
        count = 0
        skips: dict[str, int] = {}
        for instance in corpus:
            if count >= target:
                break
            if not eligible(instance):
                skips["ineligible"] = skips.get("ineligible", 0) + 1
                continue
            child = replace(
                spec, seed=spec.seed ^ fnv1a_64(f"{category}/{instance.id}")
            )
            try:
                corrupted, _ = generator(instance, child)
            except (NoCorruptionSite, InsufficientDonor) as exc:
                reason = type(exc).__name__
                skips[reason] = skips.get(reason, 0) + 1
                continue
            out.append(corrupted)
            count += 1
        manifest["counts"][category] = count
        manifest["skips"][category] = skips
        if count < target:
            manifest["skips"][category]["shortfall"] = target - count
    return out, manifest
