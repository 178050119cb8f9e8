"""The four explanation extractors, head selection and head ensembling.

Every extractor turns a :class:`ModelTrace` into per-MT-subword scores and
their per-word maxima. Attention-style methods yield one explanation per
(layer, head); :func:`select_top_heads` ranks heads by development AUC and
:func:`ensemble_heads` combines the selected ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Explanation, InputConfig, Method, ModelTrace, SegmentTag
from .errors import InsufficientDevData, MissingSegment, ShapeError


def _mt_word_count(trace: ModelTrace) -> int:
    return max(p.word_index for p in trace.layout if p.tag is SegmentTag.MT) + 1


def _word_max(trace: ModelTrace, subword_scores: np.ndarray) -> np.ndarray:
    """Per-MT-word max of subword scores, using the trace layout mapping."""
    mt = trace.positions(SegmentTag.MT)
    words = np.full(_mt_word_count(trace), -np.inf)
    for k, pos in enumerate(mt):
        w = trace.layout[pos].word_index
        words[w] = max(words[w], subword_scores[k])
    return words


def _make(trace, method, config, subword_scores, head=None) -> Explanation:
    return Explanation(
        method=method,
        input_config=config,
        subword_scores=subword_scores,
        word_scores=_word_max(trace, subword_scores),
        head=head,
    )


def explain_embed_align(trace: ModelTrace, config: InputConfig) -> Explanation:
    """Max cosine similarity between each MT token embedding and the
    context (source and/or reference) token embeddings.

    Zero-norm embeddings contribute cosine 0 by definition.
    """
    mt = trace.positions(SegmentTag.MT)
    ctx: list[int] = []
    if config.needs_src:
        ctx.extend(trace.positions(SegmentTag.SRC).tolist())
    if config.needs_ref:
        ctx.extend(trace.positions(SegmentTag.REF).tolist())
    if not ctx:
        raise MissingSegment(f"trace has no context tokens for config {config.value!r}")

    E = trace.embeddings
    mt_emb = E[mt]
    ctx_emb = E[np.array(ctx)]
    mt_norm = np.linalg.norm(mt_emb, axis=1)
    ctx_norm = np.linalg.norm(ctx_emb, axis=1)
    dots = mt_emb @ ctx_emb.T
    denom = np.outer(mt_norm, ctx_norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    scores = cos.max(axis=1)
    return _make(trace, Method.EMBED_ALIGN, config, scores)


def explain_grad_l2(trace: ModelTrace, config: InputConfig | None = None) -> Explanation:
    """L2 norm of the input-embedding gradient of each MT subword."""
    mt = trace.positions(SegmentTag.MT)
    scores = np.linalg.norm(trace.input_embedding_grads[mt], axis=1)
    return _make(trace, Method.GRAD_L2, config, scores)


def attention_token_scores(
    trace: ModelTrace, reduction: str = "columns"
) -> np.ndarray:
    """Full-sequence per-token attention scores, [layers, heads, seq].

    ``columns`` (default) averages attention received over all query
    positions of the full matrix; ``rows`` averages attention emitted
    (exposed for ablation only).
    """
    if reduction == "columns":
        return trace.attention.mean(axis=2)
    if reduction == "rows":
        return trace.attention.mean(axis=3)
    raise ValueError(f"unknown reduction {reduction!r}")


def explain_attention(
    trace: ModelTrace,
    config: InputConfig | None = None,
    reduction: str = "columns",
) -> list[Explanation]:
    """One explanation per (layer, head): mean attention each MT subword
    receives over all query positions of the full matrix."""
    full = attention_token_scores(trace, reduction)
    mt = trace.positions(SegmentTag.MT)
    out = []
    for l in range(full.shape[0]):
        for h in range(full.shape[1]):
            out.append(_make(trace, Method.ATTENTION, config, full[l, h, mt], head=(l, h)))
    return out


def explain_attn_grad(
    trace: ModelTrace,
    config: InputConfig | None = None,
    reduction: str = "columns",
) -> list[Explanation]:
    """Attention scores scaled by the L2 norm of each token's value-vector
    gradient, per (layer, head)."""
    full = attention_token_scores(trace, reduction)
    vg_norm = np.linalg.norm(trace.value_grads, axis=3)  # [layers, heads, seq]
    scaled = full * vg_norm
    mt = trace.positions(SegmentTag.MT)
    out = []
    for l in range(full.shape[0]):
        for h in range(full.shape[1]):
            out.append(
                _make(trace, Method.ATTN_X_GRAD, config, scaled[l, h, mt], head=(l, h))
            )
    return out


@dataclass(frozen=True)
class HeadRanking:
    auc_by_head: dict[tuple[int, int], float]
    selected: tuple[tuple[int, int], ...]


def select_top_heads(
    dev_explanations: list[list[Explanation]],
    gold_labels: list[np.ndarray],
    k: int = 5,
) -> HeadRanking:
    """Rank heads by macro-AUC of their word scores over a dev set.

    ``dev_explanations[i]`` holds one per-head explanation list for dev
    sentence i; ``gold_labels[i]`` the matching binary word labels. Ties
    break by (layer, head) lexicographic order.
    """
    from .evaluation import auc

    if not dev_explanations:
        raise InsufficientDevData("empty development set")

    sums: dict[tuple[int, int], float] = {}
    counts: dict[tuple[int, int], int] = {}
    for per_head, labels in zip(dev_explanations, gold_labels):
        for expl in per_head:
            value = auc(expl.word_scores, labels)
            if value is None:
                continue
            sums[expl.head] = sums.get(expl.head, 0.0) + value
            counts[expl.head] = counts.get(expl.head, 0) + 1
    if not counts:
        raise InsufficientDevData("no development sentence yields a defined AUC")

    auc_by_head = {head: sums[head] / counts[head] for head in counts}
    order = sorted(auc_by_head, key=lambda head: (-auc_by_head[head], head))
    return HeadRanking(auc_by_head=auc_by_head, selected=tuple(order[:k]))


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; constant vectors map to all zeros."""
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def ensemble_heads(
    per_head: list[Explanation],
    ranking: HeadRanking,
    trace: ModelTrace | None = None,
) -> Explanation:
    """Average the min-max-normalized scores of the selected heads.

    With ``trace`` given, word scores are the per-word max of the ensembled
    subword scores; otherwise each head's word scores are normalized and
    averaged directly.
    """
    if not ranking.selected:
        raise ValueError("ranking selects no heads")
    by_head = {e.head: e for e in per_head}
    chosen = [by_head[h] for h in ranking.selected if h in by_head]
    if not chosen:
        raise ValueError("no selected head present in the explanation list")
    n = len(chosen[0].subword_scores)
    if any(len(e.subword_scores) != n for e in chosen):
        raise ShapeError("per-head explanations have differing lengths")

    sub = np.mean([minmax_normalize(e.subword_scores) for e in chosen], axis=0)
    if trace is not None:
        word = _word_max(trace, sub)
    else:
        word = np.mean([minmax_normalize(e.word_scores) for e in chosen], axis=0)
    template = chosen[0]
    return Explanation(
        method=template.method,
        input_config=template.input_config,
        subword_scores=sub,
        word_scores=word,
        head=None,
    )
