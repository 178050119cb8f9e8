"""Glue between traces, attribution methods and the evaluation protocol.

A :class:`TraceProvider` yields one trace per (instance, input config),
either by running the seeded toy model or by loading exported trace
directories. ``run_methods`` fans a trace out to the requested methods,
ensembling per-head explanations with a head ranking; ``evaluate_instances``
produces per-sentence AUC / Recall@K results ready for aggregation.

Ranking orientation: embed-align measures alignment, where errors score
LOW, so its scores are negated before the rank-based metrics; both metrics
are invariant under monotone transforms, so this is purely an orientation
choice.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import attribution, evaluation
from .attribution import HeadRanking
from .core import EvaluationInstance, InputConfig, Method, ModelTrace
from .encoder import MetricModel, forward_with_trace
from .errors import TraceFormatError
from .io import read_trace

THREADS_ENV = "METRIC_LENS_THREADS"

PER_HEAD_METHODS = (Method.ATTENTION, Method.ATTN_X_GRAD)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-stable map, threaded when METRIC_LENS_THREADS > 1."""
    n = thread_count()
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


class TraceProvider:
    """Uniform trace access for the toy model and exported directories."""

    def __init__(self, model: MetricModel | None = None, traces_dir: str | None = None):
        if (model is None) == (traces_dir is None):
            raise ValueError("exactly one of model / traces_dir must be given")
        self._model = model
        self._index: dict[tuple[str, str], str] = {}
        if traces_dir is not None:
            index_path = os.path.join(traces_dir, "index.json")
            if not os.path.exists(index_path):
                raise TraceFormatError(f"{traces_dir}: index.json missing")
            with open(index_path, encoding="utf-8") as fh:
                index = json.load(fh)
            for entry in index["instances"]:
                key = (entry["id"], entry["input_config"])
                self._index[key] = os.path.join(traces_dir, entry["dir"])

    def trace(self, instance: EvaluationInstance, config: InputConfig) -> ModelTrace:
        if self._model is not None:
            return forward_with_trace(self._model, instance, config)[1]
        key = (instance.id, config.value)
        if key not in self._index:
            raise TraceFormatError(
                f"no exported trace for instance {instance.id!r} "
                f"with config {config.value!r}"
            )
        return read_trace(self._index[key])


def explanation_for(
    trace: ModelTrace,
    config: InputConfig,
    method: Method,
    rankings: dict[tuple[Method, InputConfig], HeadRanking] | None = None,
):
    """One final (possibly ensembled) explanation for a single method."""
    if method is Method.EMBED_ALIGN:
        return attribution.explain_embed_align(trace, config)
    if method is Method.GRAD_L2:
        return attribution.explain_grad_l2(trace, config)
    if method is Method.ATTENTION:
        per_head = attribution.explain_attention(trace, config)
    else:
        per_head = attribution.explain_attn_grad(trace, config)
    ranking = (rankings or {}).get((method, config))
    if ranking is None:
        # no ranking provided: ensemble every head
        ranking = HeadRanking(auc_by_head={}, selected=tuple(e.head for e in per_head))
    return attribution.ensemble_heads(per_head, ranking, trace=trace)


def ranking_scores(explanation) -> np.ndarray:
    """Word scores oriented so that higher = more likely an error."""
    scores = np.asarray(explanation.word_scores, dtype=float)
    if explanation.method is Method.EMBED_ALIGN:
        return -scores
    return scores


def select_heads(
    instances: list[EvaluationInstance],
    provider: TraceProvider,
    config: InputConfig,
    method: Method,
    k: int = 5,
) -> HeadRanking:
    """Rank heads by development AUC over the given instances.

    Per-head word scores are compared against gold word labels directly;
    no ensembling is involved at this stage.
    """
    dev_explanations = []
    gold_labels = []
    for instance in instances:
        trace = provider.trace(instance, config)
        if method is Method.ATTENTION:
            per_head = attribution.explain_attention(trace, config)
        else:
            per_head = attribution.explain_attn_grad(trace, config)
        dev_explanations.append(per_head)
        gold_labels.append(
            evaluation.label_words(instance.translation, list(instance.gold_spans))
        )
    return attribution.select_top_heads(dev_explanations, gold_labels, k=k)


def instance_category(instance: EvaluationInstance) -> str:
    if "corruption" in instance.metadata:
        return instance.metadata["corruption"]
    categories = {s.category for s in instance.gold_spans}
    if not categories:
        return "none"
    return categories.pop() if len(categories) == 1 else "mixed"


def evaluate_instances(
    instances: list[EvaluationInstance],
    provider: TraceProvider | None,
    methods: list[str],
    configs: list[InputConfig],
    rankings: dict[tuple[Method, InputConfig], HeadRanking] | None = None,
) -> list[evaluation.SentenceResult]:
    """Per-sentence metrics for every (instance, config, method) triple.

    ``methods`` may include the pseudo-method ``"oracle"`` whose word
    scores equal the gold labels (the perfect-explanation control).
    """

    def work(instance: EvaluationInstance) -> list[evaluation.SentenceResult]:
        labels = evaluation.label_words(instance.translation, list(instance.gold_spans))
        category = instance_category(instance)
        results = []
        for config in configs:
            traces = {}
            for name in methods:
                if name == "oracle":
                    scores = labels.astype(float)
                else:
                    method = Method(name)
                    if config not in traces:
                        traces[config] = provider.trace(instance, config)
                    expl = explanation_for(traces[config], config, method, rankings)
                    scores = ranking_scores(expl)
                results.append(
                    evaluation.SentenceResult(
                        instance_id=instance.id,
                        lang_pair=instance.lang_pair,
                        method=name,
                        input_config=config.value,
                        error_category=category,
                        auc=evaluation.auc(scores, labels),
                        recall_at_k=evaluation.recall_at_k(scores, labels),
                    )
                )
        return results

    nested = parallel_map(work, instances)
    return [r for rs in nested for r in rs]


def rankings_to_json(rankings: dict[tuple[Method, InputConfig], HeadRanking]) -> dict:
    return {
        "rankings": [
            {
                "method": method.value,
                "input_config": config.value,
                "selected": [list(h) for h in ranking.selected],
                "auc_by_head": [
                    {"layer": l, "head": h, "auc": ranking.auc_by_head[(l, h)]}
                    for (l, h) in sorted(ranking.auc_by_head)
                ],
            }
            for (method, config), ranking in sorted(
                rankings.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
            )
        ]
    }


def rankings_from_json(doc: dict) -> dict[tuple[Method, InputConfig], HeadRanking]:
    out = {}
    for entry in doc["rankings"]:
        ranking = HeadRanking(
            auc_by_head={
                (e["layer"], e["head"]): e["auc"] for e in entry.get("auc_by_head", [])
            },
            selected=tuple((l, h) for l, h in entry["selected"]),
        )
        out[(Method(entry["method"]), InputConfig(entry["input_config"]))] = ranking
    return out
