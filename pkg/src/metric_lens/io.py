"""MQM TSV ingestion, trace directory format, report and saliency output.

The trace directory holds a JSON manifest plus one raw little-endian
float32 file per tensor (row-major). Annotated targets use the WMT MQM
``<v>...</v>`` span convention; corrupted corpora are written in the same
format so a single parser serves both paths.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict

import numpy as np

from .core import (
    ErrorSpan,
    EvaluationInstance,
    ModelTrace,
    SegmentTag,
    Sentence,
    Severity,
    TracePosition,
    tokenize,
)
from .errors import ParseError, SchemaError, SpanError, TraceFormatError
from .evaluation import EvalReport

TRACE_FORMAT_VERSION = 1
TENSOR_NAMES = ("embeddings", "input_embedding_grads", "attention", "value_grads")

REQUIRED_COLUMNS = {"system", "seg_id", "rater", "severity", "category", "source", "target"}

_OPEN, _CLOSE = "<v>", "</v>"


def strip_span_markers(target: str, line: int | None = None):
    """Strip ``<v>...</v>`` markers; return (clean text, byte spans).

    Markers must be balanced and non-nested; offsets refer to the UTF-8
    encoding of the stripped text.
    """
    pieces: list[str] = []
    spans: list[tuple[int, int]] = []
    pos = 0
    nbytes = 0
    open_at: int | None = None
    while True:
        io_ = target.find(_OPEN, pos)
        ic = target.find(_CLOSE, pos)
        if io_ == -1 and ic == -1:
            break
        if ic == -1 or (io_ != -1 and io_ < ic):
            if open_at is not None:
                raise ParseError("nested <v> marker", line)
            chunk = target[pos:io_]
            pieces.append(chunk)
            nbytes += len(chunk.encode("utf-8"))
            open_at = nbytes
            pos = io_ + len(_OPEN)
        else:
            if open_at is None:
                raise ParseError("</v> without matching <v>", line)
            chunk = target[pos:ic]
            pieces.append(chunk)
            nbytes += len(chunk.encode("utf-8"))
            spans.append((open_at, nbytes))
            open_at = None
            pos = ic + len(_CLOSE)
    if open_at is not None:
        raise ParseError("unclosed <v> marker", line)
    pieces.append(target[pos:])
    return "".join(pieces), spans


def insert_span_markers(text: str, spans: list[ErrorSpan]) -> str:
    """Inverse of :func:`strip_span_markers` for writing annotated TSVs."""
    data = text.encode("utf-8")
    out = []
    pos = 0
    for span in sorted(spans, key=lambda s: s.char_start):
        if span.char_start < pos or span.char_end > len(data):
            raise SpanError("overlapping or out-of-bounds span")
        out.append(data[pos : span.char_start].decode("utf-8"))
        out.append(_OPEN)
        out.append(data[span.char_start : span.char_end].decode("utf-8"))
        out.append(_CLOSE)
        pos = span.char_end
    out.append(data[pos:].decode("utf-8"))
    return "".join(out)


def _parse_severity(raw: str) -> Severity:
    s = raw.strip().lower()
    if s.startswith("crit"):
        return Severity.CRITICAL
    if s.startswith("maj"):
        return Severity.MAJOR
    return Severity.MINOR


def _merge_spans(spans: list[ErrorSpan]) -> tuple[ErrorSpan, ...]:
    """Union of byte intervals; overlapping spans collapse to one, keeping
    the highest severity and the first contributor's category."""
    if not spans:
        return ()
    order = {Severity.MINOR: 0, Severity.MAJOR: 1, Severity.CRITICAL: 2}
    spans = sorted(spans, key=lambda s: (s.char_start, s.char_end))
    merged = [spans[0]]
    for s in spans[1:]:
        last = merged[-1]
        if s.char_start <= last.char_end:
            merged[-1] = ErrorSpan(
                char_start=last.char_start,
                char_end=max(last.char_end, s.char_end),
                severity=max(last.severity, s.severity, key=order.get),
                category=last.category,
            )
        else:
            merged.append(s)
    return tuple(merged)


def parse_mqm_tsv(
    path: str | os.PathLike,
    merge_raters: bool = True,
    default_lang_pair: str = "unknown",
) -> list[EvaluationInstance]:
    """Read an MQM-style TSV into evaluation instances.

    Spans come from ``<v>...</v>`` markers in the target column; offsets
    are computed on the stripped text. Rows sharing (system, doc, seg_id)
    are merged across raters by span union unless ``merge_raters`` is off.
    Optional columns: doc, reference, lang_pair.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        columns = {name.strip().lower(): i for i, name in enumerate(header)}
        missing = REQUIRED_COLUMNS - set(columns)
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")

        def get(row, name, default=""):
            i = columns.get(name)
            return row[i].strip() if i is not None and i < len(row) else default

        grouped: dict[tuple, dict] = {}
        for row in reader:
            if not any(cell.strip() for cell in row):
                continue
            line = reader.line_num
            clean, raw_spans = strip_span_markers(get(row, "target"), line)
            severity = get(row, "severity")
            category = get(row, "category")
            spans = []
            if severity.lower() not in ("no-error", "no error", ""):
                sev = _parse_severity(severity)
                spans = [
                    ErrorSpan(a, b, sev, category or "unknown")
                    for a, b in raw_spans
                    if b > a
                ]
            key = (get(row, "system"), get(row, "doc"), get(row, "seg_id"))
            if not merge_raters:
                key = key + (get(row, "rater"),)
            entry = grouped.setdefault(
                key,
                {
                    "target": clean,
                    "source": get(row, "source"),
                    "reference": get(row, "reference"),
                    "lang_pair": get(row, "lang_pair") or default_lang_pair,
                    "spans": [],
                    "line": line,
                },
            )
            if entry["target"] != clean:
                raise ParseError(
                    f"segment {key} has inconsistent target text across rows", line
                )
            entry["spans"].extend(spans)

    instances = []
    for key, entry in grouped.items():
        reference = tokenize(entry["reference"]) if entry["reference"] else None
        spans = _merge_spans(entry["spans"]) if merge_raters else tuple(entry["spans"])
        instances.append(
            EvaluationInstance(
                id=":".join(str(k) for k in key),
                lang_pair=entry["lang_pair"],
                source=tokenize(entry["source"]),
                translation=tokenize(entry["target"]),
                reference=reference,
                gold_spans=spans,
            )
        )
    return instances


def write_corrupted_tsv(instances: list[EvaluationInstance], path) -> None:
    """Emit instances with inline span markers, re-ingestable by
    :func:`parse_mqm_tsv`."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, quotechar=None)
        writer.writerow(
            ["system", "doc", "seg_id", "rater", "severity", "category",
             "lang_pair", "source", "target", "reference"]
        )
        for inst in instances:
            spans = list(inst.gold_spans)
            severity = spans[0].severity.value if spans else "No-error"
            category = spans[0].category if spans else ""
            writer.writerow(
                [
                    inst.metadata.get("system", "corrupted"),
                    inst.metadata.get("doc", "synthetic"),
                    inst.id,
                    inst.metadata.get("rater", "generator"),
                    severity,
                    category,
                    inst.lang_pair,
                    inst.source.text,
                    insert_span_markers(inst.translation.text, spans),
                    inst.reference.text if inst.reference else "",
                ]
            )


def load_entity_lexicon(path) -> dict[str, tuple[str, ...]]:
    """UTF-8 TSV of ``type<TAB>surface`` rows."""
    lexicon: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("lexicon row is not type<TAB>surface", line_no)
            lexicon.setdefault(parts[0].strip(), []).append(parts[1].strip())
    return {k: tuple(v) for k, v in lexicon.items()}


def load_donor_corpus(path) -> tuple[str, ...]:
    """One donor sentence per line."""
    with open(path, encoding="utf-8") as fh:
        return tuple(line.strip() for line in fh if line.strip())


def write_trace(trace: ModelTrace, directory, producer: str = "metric-lens",
                embedding_layer_note: str = "final encoder layer") -> None:
    """Store a trace as manifest.json plus raw float32 tensor files."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format_version": TRACE_FORMAT_VERSION,
        "seq": trace.seq_len,
        "layers": int(trace.attention.shape[0]),
        "heads": int(trace.attention.shape[1]),
        "d_model": int(trace.embeddings.shape[1]),
        "d_head": int(trace.value_grads.shape[3]),
        "score": trace.score,
        "producer": producer,
        "embedding_layer_note": embedding_layer_note,
        "layout": [
            {
                "tag": p.tag.value,
                "word_index": p.word_index,
                "subword_position": p.subword_position,
                "text": p.text,
            }
            for p in trace.layout
        ],
        "tensors": [
            {
                "name": name,
                "shape": list(getattr(trace, name).shape),
                "dtype": "float32",
                "path": f"{name}.f32",
            }
            for name in TENSOR_NAMES
        ],
    }
    for name in TENSOR_NAMES:
        getattr(trace, name).astype("<f4").tofile(os.path.join(directory, f"{name}.f32"))
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, ensure_ascii=False)


def read_trace(directory) -> ModelTrace:
    """Load a trace directory; unknown extra tensor descriptors are
    ignored for forward compatibility."""
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise TraceFormatError(f"{directory}: manifest.json missing")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)

    seq = manifest["seq"]
    expected_shapes = {
        "embeddings": (seq, manifest["d_model"]),
        "input_embedding_grads": (seq, manifest["d_model"]),
        "attention": (manifest["layers"], manifest["heads"], seq, seq),
        "value_grads": (manifest["layers"], manifest["heads"], seq, manifest["d_head"]),
    }
    tensors = {}
    descriptors = {d["name"]: d for d in manifest["tensors"]}
    for name in TENSOR_NAMES:
        if name not in descriptors:
            raise TraceFormatError(f"{directory}: tensor {name!r} not declared")
        desc = descriptors[name]
        shape = tuple(desc["shape"])
        if shape != expected_shapes[name]:
            raise TraceFormatError(
                f"{directory}: {name} shape {shape} disagrees with header "
                f"{expected_shapes[name]}"
            )
        path = os.path.join(directory, desc["path"])
        if not os.path.exists(path):
            raise TraceFormatError(f"{directory}: missing tensor file {desc['path']}")
        data = np.fromfile(path, dtype="<f4")
        if data.size != int(np.prod(shape)):
            raise TraceFormatError(
                f"{directory}: {name} holds {data.size} floats, "
                f"expected {int(np.prod(shape))}"
            )
        tensors[name] = data.reshape(shape).astype(np.float64)

    layout = tuple(
        TracePosition(
            tag=SegmentTag(e["tag"]),
            word_index=e["word_index"],
            subword_position=e["subword_position"],
            text=e["text"],
        )
        for e in manifest["layout"]
    )
    if len(layout) != seq:
        raise TraceFormatError(f"{directory}: layout length disagrees with seq")
    return ModelTrace(layout=layout, score=float(manifest["score"]), **tensors)


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


def _report_sort_key(r: EvalReport):
    return (r.lang_pair == "Avg.", r.lang_pair, r.method, r.input_config, r.error_category)


def render_report(reports: list[EvalReport], fmt: str = "json") -> str:
    """Deterministic report document in json, tsv, or markdown."""
    reports = sorted(reports, key=_report_sort_key)
    if fmt == "json":
        return json.dumps([asdict(r) for r in reports], indent=1) + "\n"
    if fmt == "tsv":
        lines = ["\t".join(
            ["lang_pair", "method", "input_config", "error_category",
             "auc", "recall_at_k", "n_sentences_auc", "n_sentences_rk"])]
        for r in reports:
            lines.append("\t".join([
                r.lang_pair, r.method, r.input_config, r.error_category,
                _fmt(r.auc), _fmt(r.recall_at_k),
                str(r.n_sentences_auc), str(r.n_sentences_rk),
            ]))
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        return _render_markdown(reports)
    raise ValueError(f"unknown report format {fmt!r}")


def _render_markdown(reports: list[EvalReport]) -> str:
    """Method x language-pair grid with AUC / R@K cells and an Avg. column."""
    lps = sorted({r.lang_pair for r in reports if r.lang_pair != "Avg."})
    if any(r.lang_pair == "Avg." for r in reports):
        lps.append("Avg.")
    row_keys = sorted({(r.method, r.input_config, r.error_category) for r in reports})
    cells = {(r.lang_pair, r.method, r.input_config, r.error_category): r for r in reports}

    header = ["method", "inputs", "category"] + [f"{lp} AUC / R@K" for lp in lps]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "---|" * len(header)]
    for method, config, category in row_keys:
        row = [method, config, category]
        for lp in lps:
            r = cells.get((lp, method, config, category))
            row.append("-" if r is None else f"{_fmt(r.auc)} / {_fmt(r.recall_at_k)}")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def render_saliency_html(instance: EvaluationInstance, explanation) -> str:
    """Self-contained saliency map: MT words tinted by min-max-normalized
    score, gold spans underlaid in gray."""
    from .attribution import minmax_normalize
    from .evaluation import label_words

    scores = minmax_normalize(np.asarray(explanation.word_scores, dtype=float))
    labels = label_words(instance.translation, list(instance.gold_spans))
    parts = []
    for word, score, is_gold in zip(instance.translation.words, scores, labels):
        tint = f"rgba(220,50,50,{score:.3f})"
        style = f"background-color:{tint};padding:1px 2px;"
        if is_gold:
            style += "box-shadow:0 4px 0 #bbb;"
        parts.append(
            f'<span title="{score:.3f}" style="{style}">{_escape(word.text)}</span>'
        )
    method = explanation.method.value if explanation.method else "scores"
    config = explanation.input_config.value if explanation.input_config else "-"
    return (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        f"<title>saliency {_escape(instance.id)}</title></head>"
        "<body style='font-family:sans-serif;line-height:2'>"
        f"<h3>{_escape(instance.id)} &middot; {method} [{config}]</h3>"
        f"<p><b>src:</b> {_escape(instance.source.text)}</p>"
        + (f"<p><b>ref:</b> {_escape(instance.reference.text)}</p>" if instance.reference else "")
        + "<p><b>mt:</b> " + " ".join(parts) + "</p>"
        "</body></html>\n"
    )


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
