"""Word-level alignment of explanations to gold spans, AUC and Recall@K.

Both metrics are rank statistics: AUC in Mann-Whitney form with half
credit for ties, Recall@K with K equal to the number of gold error words.
Sentences where a metric is undefined (single-class labels, no positives)
return ``None`` and are skipped by the aggregator, which macro-averages
per sentence and adds an unweighted "Avg." row over language pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .core import ErrorSpan, Explanation, Sentence
from .errors import ShapeError, SpanError


def subwords_to_words(explanation: Explanation, sentence: Sentence) -> np.ndarray:
    """Word score = max over the word's subword scores."""
    if len(explanation.subword_scores) != len(sentence.subwords):
        raise ShapeError(
            f"{len(explanation.subword_scores)} subword scores for "
            f"{len(sentence.subwords)} subwords"
        )
    words = np.full(len(sentence.words), -np.inf)
    for sub, score in zip(sentence.subwords, explanation.subword_scores):
        words[sub.word_index] = max(words[sub.word_index], score)
    return words


def label_words(sentence: Sentence, spans: list[ErrorSpan]) -> np.ndarray:
    """Binary labels: 1 iff the word's byte range intersects any span."""
    n_bytes = len(sentence.text.encode("utf-8"))
    for span in spans:
        if span.char_end > n_bytes:
            raise SpanError(
                f"span ({span.char_start}, {span.char_end}) exceeds "
                f"sentence byte length {n_bytes}"
            )
    labels = np.zeros(len(sentence.words), dtype=int)
    for i, word in enumerate(sentence.words):
        if any(s.overlaps(word.char_start, word.char_end) for s in spans):
            labels[i] = 1
    return labels


def auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Mann-Whitney AUC: (concordant + 0.5 * tied) / (P * N).

    ``None`` when labels are single-class (skipped by the aggregator).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels differ in length")
    pos = int(labels.sum())
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks give exactly 0.5 per tied pair
    return float((ranks[labels == 1].sum() - pos * (pos + 1) / 2) / (pos * neg))


def recall_at_k(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """K = number of gold error words; fraction of them among the K
    highest-scored words. Score ties break toward the earlier position.

    ``None`` when there is no positive label.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels differ in length")
    k = int(labels.sum())
    if k == 0:
        return None
    order = np.argsort(-scores, kind="stable")  # stable: earlier index wins ties
    return float(labels[order[:k]].sum() / k)


@dataclass(frozen=True)
class SentenceResult:
    """Metrics of one sentence under one (method, config) combination."""

    instance_id: str
    lang_pair: str
    method: str
    input_config: str
    error_category: str
    auc: float | None
    recall_at_k: float | None


@dataclass(frozen=True)
class EvalReport:
    lang_pair: str
    method: str
    input_config: str
    error_category: str
    auc: float | None
    recall_at_k: float | None
    n_sentences_auc: int
    n_sentences_rk: int


GROUP_FIELDS = ("lang_pair", "method", "input_config", "error_category")


def aggregate(
    results: list[SentenceResult],
    grouping: tuple[str, ...] = GROUP_FIELDS,
) -> list[EvalReport]:
    """Macro-average per grouping key, skipping undefined sentences.

    When ``lang_pair`` is part of the grouping, extra rows with
    ``lang_pair="Avg."`` hold the unweighted mean over language pairs.
    """
    unknown = set(grouping) - set(GROUP_FIELDS)
    if unknown:
        raise ValueError(f"unknown grouping fields: {sorted(unknown)}")

    def key_of(r: SentenceResult) -> tuple:
        return tuple(getattr(r, f) if f in grouping else "*" for f in GROUP_FIELDS)

    groups: dict[tuple, list[SentenceResult]] = {}
    for r in results:
        groups.setdefault(key_of(r), []).append(r)

    reports = []
    for key in sorted(groups):
        rs = groups[key]
        aucs = [r.auc for r in rs if r.auc is not None]
        rks = [r.recall_at_k for r in rs if r.recall_at_k is not None]
        if not aucs and not rks:
            continue
        reports.append(
            EvalReport(
                lang_pair=key[0],
                method=key[1],
                input_config=key[2],
                error_category=key[3],
                auc=float(np.mean(aucs)) if aucs else None,
                recall_at_k=float(np.mean(rks)) if rks else None,
                n_sentences_auc=len(aucs),
                n_sentences_rk=len(rks),
            )
        )

    if "lang_pair" in grouping:
        by_rest: dict[tuple, list[EvalReport]] = {}
        for rep in reports:
            by_rest.setdefault(
                (rep.method, rep.input_config, rep.error_category), []
            ).append(rep)
        for rest in sorted(by_rest):
            rows = by_rest[rest]
            if len({r.lang_pair for r in rows}) < 2:
                continue
            aucs = [r.auc for r in rows if r.auc is not None]
            rks = [r.recall_at_k for r in rows if r.recall_at_k is not None]
            reports.append(
                EvalReport(
                    lang_pair="Avg.",
                    method=rest[0],
                    input_config=rest[1],
                    error_category=rest[2],
                    auc=float(np.mean(aucs)) if aucs else None,
                    recall_at_k=float(np.mean(rks)) if rks else None,
                    n_sentences_auc=sum(r.n_sentences_auc for r in rows),
                    n_sentences_rk=sum(r.n_sentences_rk for r in rows),
                )
            )
    return reports
