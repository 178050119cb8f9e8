"""Command-line surface: explain, evaluate, select-heads, corrupt.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 internal invariant violation. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import errors
from .core import InputConfig, Method
from .corruption import CATEGORIES, CorruptionSpec, build_corruption_set
from .encoder import Architecture, EncoderConfig, init_model
from .evaluation import GROUP_FIELDS, aggregate
from .io import (
    load_donor_corpus,
    load_entity_lexicon,
    parse_mqm_tsv,
    render_report,
    render_saliency_html,
    write_corrupted_tsv,
)
from .pipeline import (
    TraceProvider,
    evaluate_instances,
    explanation_for,
    rankings_from_json,
    rankings_to_json,
    select_heads,
)

USAGE_ERRORS = (errors.ConfigError, errors.InsufficientDevData, ValueError)
DATA_ERRORS = (
    errors.ParseError,
    errors.SchemaError,
    errors.TraceFormatError,
    errors.SpanError,
    errors.MissingSegment,
    errors.EmptyInput,
    errors.NoCorruptionSite,
    errors.InsufficientDonor,
    errors.ShapeError,
    FileNotFoundError,
)


def _add_trace_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model-config", help="JSON toy-model config")
    parser.add_argument("--traces", help="directory of exported traces (index.json)")
    parser.add_argument("--seed", type=int, help="overrides the config seed")


def _add_method_flags(parser: argparse.ArgumentParser, with_oracle: bool) -> None:
    methods = [m.value for m in Method] + (["oracle"] if with_oracle else [])
    parser.add_argument(
        "--methods",
        default=",".join(m.value for m in Method),
        help=f"comma-separated subset of {methods}",
    )
    parser.add_argument(
        "--inputs",
        default="ref",
        help="comma-separated subset of {src,ref,src+ref}",
    )
    parser.add_argument("--heads-file", help="head-ranking JSON from select-heads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metric-lens",
        description="Token-level saliency maps for reference-based MT metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="emit saliency scores per instance")
    p.add_argument("data", help="annotated TSV of instances")
    _add_trace_source(p)
    _add_method_flags(p, with_oracle=False)
    p.add_argument("--out", help="output JSON path (default stdout)")
    p.add_argument("--html-dir", help="also write one saliency HTML per instance")

    p = sub.add_parser("evaluate", help="AUC / Recall@K report against gold spans")
    p.add_argument("data", help="annotated TSV of instances")
    _add_trace_source(p)
    _add_method_flags(p, with_oracle=True)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", default="json", choices=["json", "tsv", "markdown"])
    p.add_argument(
        "--group-by",
        default=",".join(GROUP_FIELDS),
        help=f"comma-separated subset of {list(GROUP_FIELDS)}",
    )

    p = sub.add_parser("select-heads", help="rank attention heads on a dev set")
    p.add_argument("data", help="annotated dev TSV")
    _add_trace_source(p)
    p.add_argument(
        "--methods",
        default="attention,attn_x_grad",
        help="attention-style methods to rank heads for",
    )
    p.add_argument("--inputs", default="ref")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", help="ranking JSON path (default stdout)")

    p = sub.add_parser("corrupt", help="generate synthetic critical errors")
    p.add_argument("data", help="TSV of correct translations (with references)")
    p.add_argument("--categories", default=",".join(CATEGORIES))
    p.add_argument("--per-category", type=int, default=50)
    p.add_argument("--lexicon", help="entity lexicon TSV (type<TAB>surface)")
    p.add_argument("--donors", help="donor corpus, one sentence per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="corrupted TSV path")
    p.add_argument("--manifest", help="manifest JSON path (default <out>.manifest.json)")
    return parser


def _provider(args) -> TraceProvider:
    if bool(args.model_config) == bool(args.traces):
        raise errors.ConfigError("exactly one of --model-config / --traces is required")
    if args.traces:
        return TraceProvider(traces_dir=args.traces)
    with open(args.model_config, encoding="utf-8") as fh:
        raw = json.load(fh)
    arch = Architecture(raw.pop("architecture", "separate"))
    if args.seed is not None:
        raw["seed"] = args.seed
    config = EncoderConfig(**raw)
    return TraceProvider(model=init_model(config, arch))


def _parse_configs(raw: str) -> list[InputConfig]:
    return [InputConfig(token.strip()) for token in raw.split(",") if token.strip()]


def _parse_methods(raw: str, with_oracle: bool) -> list[str]:
    names = [token.strip() for token in raw.split(",") if token.strip()]
    for name in names:
        if name == "oracle" and with_oracle:
            continue
        Method(name)  # raises ValueError on unknown method
    return names


def _load_rankings(args):
    if not getattr(args, "heads_file", None):
        return None
    with open(args.heads_file, encoding="utf-8") as fh:
        return rankings_from_json(json.load(fh))


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_explain(args) -> None:
    instances = parse_mqm_tsv(args.data)
    provider = _provider(args)
    methods = _parse_methods(args.methods, with_oracle=False)
    configs = _parse_configs(args.inputs)
    rankings = _load_rankings(args)

    if args.html_dir:
        os.makedirs(args.html_dir, exist_ok=True)
    records = []
    for instance in instances:
        for config in configs:
            trace = provider.trace(instance, config)
            for name in methods:
                expl = explanation_for(trace, config, Method(name), rankings)
                records.append(
                    {
                        "id": instance.id,
                        "input_config": config.value,
                        "method": name,
                        "score": trace.score,
                        "subword_scores": [float(s) for s in expl.subword_scores],
                        "word_scores": [float(s) for s in expl.word_scores],
                    }
                )
                if args.html_dir:
                    safe = instance.id.replace("/", "_").replace(":", "_")
                    path = os.path.join(
                        args.html_dir, f"{safe}.{name}.{config.value}.html"
                    )
                    with open(path, "w", encoding="utf-8") as fh:
                        fh.write(render_saliency_html(instance, expl))
    _emit(json.dumps(records, indent=1) + "\n", args.out)


def cmd_evaluate(args) -> None:
    instances = parse_mqm_tsv(args.data)
    methods = _parse_methods(args.methods, with_oracle=True)
    configs = _parse_configs(args.inputs)
    needs_traces = any(m != "oracle" for m in methods)
    provider = _provider(args) if needs_traces else None
    rankings = _load_rankings(args)

    results = evaluate_instances(instances, provider, methods, configs, rankings)
    if not any(r.auc is not None or r.recall_at_k is not None for r in results):
        raise errors.SpanError(
            "no evaluable sentence: every instance lacks both error and "
            "correct words under the given labels"
        )
    grouping = tuple(g.strip() for g in args.group_by.split(",") if g.strip())
    reports = aggregate(results, grouping)
    _emit(render_report(reports, args.format), args.out)


def cmd_select_heads(args) -> None:
    instances = parse_mqm_tsv(args.data)
    provider = _provider(args)
    methods = [Method(m.strip()) for m in args.methods.split(",") if m.strip()]
    configs = _parse_configs(args.inputs)
    for method in methods:
        if method not in (Method.ATTENTION, Method.ATTN_X_GRAD):
            raise errors.ConfigError(f"{method.value} has no heads to select")

    rankings = {}
    for config in configs:
        for method in methods:
            ranking = select_heads(instances, provider, config, method, k=args.top_k)
            total = len(ranking.auc_by_head)
            if args.top_k > total:
                raise errors.ConfigError(
                    f"--top-k {args.top_k} exceeds the {total} available heads"
                )
            rankings[(method, config)] = ranking
    _emit(json.dumps(rankings_to_json(rankings), indent=1) + "\n", args.out)


def cmd_corrupt(args) -> None:
    instances = parse_mqm_tsv(args.data)
    categories = [c.strip().upper() for c in args.categories.split(",") if c.strip()]
    for category in categories:
        if category not in CATEGORIES:
            raise errors.ConfigError(f"unknown corruption category {category!r}")

    lexicon = load_entity_lexicon(args.lexicon) if args.lexicon else {}
    donors = load_donor_corpus(args.donors) if args.donors else ()
    specs = {
        category: CorruptionSpec(
            category=category,
            seed=args.seed,
            donor_corpus=donors,
            entity_lexicon=lexicon,
        )
        for category in categories
    }
    targets = {category: args.per_category for category in categories}
    corrupted, manifest = build_corruption_set(instances, specs, targets)
    write_corrupted_tsv(corrupted, args.out)
    manifest_path = args.manifest or args.out + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


COMMANDS = {
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "select-heads": cmd_select_heads,
    "corrupt": cmd_corrupt,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except USAGE_ERRORS as exc:
        print(f"metric-lens: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"metric-lens: {exc}", file=sys.stderr)
        return 2
    except errors.MetricLensError as exc:
        print(f"metric-lens: internal error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
