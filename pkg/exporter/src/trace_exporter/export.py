"""Export trace directories from a metric checkpoint.

One directory per instance, holding ``manifest.json`` plus raw
little-endian float32 tensors (row-major): ``embeddings`` and
``input_embedding_grads`` ``[seq, d_model]``, ``attention``
``[layers, heads, seq, seq]``, ``value_grads``
``[layers, heads, seq, d_head]``. Segments are encoded independently,
so cross-segment attention is exactly zero and the layout carries no
SEP positions. An ``index.json`` at the output root lists every
exported instance.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import MetricCheckpoint, load_checkpoint
from .tokenization import Subword, split_subwords, token_id

FORMAT_VERSION = 1
TENSOR_NAMES = ("embeddings", "input_embedding_grads", "attention", "value_grads")
_MARKER = re.compile(r"</?v>")


class ExportUnsupported(Exception):
    """The checkpoint architecture cannot expose the required tensors."""


@dataclass(frozen=True)
class ExportJob:
    checkpoint: str
    data: str
    input_config: str  # "src" | "ref" | "src+ref"
    out_dir: str
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        if self.input_config not in ("src", "ref", "src+ref"):
            raise ValueError(f"unsupported input_config {self.input_config!r}")


@dataclass(frozen=True)
class Instance:
    id: str
    source: str
    translation: str
    reference: str


def read_instances(path: str | os.PathLike) -> list[Instance]:
    """Minimal MQM TSV ingest: one instance per (system, doc, seg_id),
    span markers stripped from the target."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader)
        col = {name.strip().lower(): i for i, name in enumerate(header)}

        def get(row, name):
            i = col.get(name)
            return row[i].strip() if i is not None and i < len(row) else ""

        seen: dict[str, Instance] = {}
        for row in reader:
            if not any(cell.strip() for cell in row):
                continue
            key = ":".join((get(row, "system"), get(row, "doc"), get(row, "seg_id")))
            if key in seen:
                continue
            seen[key] = Instance(
                id=key,
                source=get(row, "source"),
                translation=_MARKER.sub("", get(row, "target")),
                reference=get(row, "reference"),
            )
    return list(seen.values())


@dataclass
class _SegmentCapture:
    tag: str
    subwords: list[Subword]
    embeddings: np.ndarray = field(default=None)
    input_grads: np.ndarray = field(default=None)
    attention: np.ndarray = field(default=None)  # [layers, heads, n, n]
    value_grads: np.ndarray = field(default=None)  # [layers, heads, n, d_head]


def _encode_segment(model: MetricCheckpoint, tag: str, text: str):
    """Run one segment through the encoder, capturing attention and
    wiring gradient hooks. Returns (capture, pooled, finalize) where
    ``finalize`` must be called after ``score.backward()``."""
    cfg = model.encoder_config
    heads = cfg.num_attention_heads
    d_head = cfg.hidden_size // heads

    subs = split_subwords(text)
    ids = torch.tensor([[token_id(s, cfg.vocab_size) for s in subs]])
    emb = model.encoder.embeddings.word_embeddings(ids).detach()
    emb.requires_grad_(True)

    value_tensors: list[torch.Tensor] = []
    handles = []
    for layer in model.encoder.encoder.layer:
        def hook(module, inputs, output, store=value_tensors):
            output.retain_grad()
            store.append(output)
        handles.append(layer.attention.self.value.register_forward_hook(hook))
    try:
        out = model.encoder(inputs_embeds=emb, output_attentions=True)
    finally:
        for h in handles:
            h.remove()
    if not out.attentions or out.attentions[0] is None:
        raise ExportUnsupported(
            "encoder does not expose attention weights; use an eager "
            "attention implementation"
        )

    n = len(subs)
    capture = _SegmentCapture(tag=tag, subwords=subs)
    capture.embeddings = out.last_hidden_state[0].detach().numpy().astype(np.float64)
    capture.attention = (
        torch.stack([a[0] for a in out.attentions]).detach().numpy().astype(np.float64)
    )
    pooled = out.last_hidden_state[0].mean(dim=0)

    def finalize():
        capture.input_grads = (
            np.zeros((n, cfg.hidden_size))
            if emb.grad is None
            else emb.grad[0].numpy().astype(np.float64)
        )
        vg = np.zeros((cfg.num_hidden_layers, heads, n, d_head))
        for l, v in enumerate(value_tensors):
            if v.grad is not None:
                # [1, n, hidden] -> [n, heads, d_head] -> [heads, n, d_head]
                vg[l] = (
                    v.grad[0].reshape(n, heads, d_head).permute(1, 0, 2).numpy()
                )
        capture.value_grads = vg

    return capture, pooled, finalize


def export_instance(model: MetricCheckpoint, instance: Instance, input_config: str):
    """Encode all required segments and return (score, manifest, tensors)."""
    need_src = input_config in ("src", "src+ref")
    need_ref = input_config in ("ref", "src+ref")
    if need_ref and not instance.reference:
        raise ValueError(f"{instance.id}: input_config needs a reference")

    segments = [("MT", instance.translation)]
    if need_src:
        segments.append(("SRC", instance.source))
    if need_ref:
        segments.append(("REF", instance.reference))

    captures: list[_SegmentCapture] = []
    finalizers = []
    pooled = {}
    for tag, text in segments:
        capture, pool, finalize = _encode_segment(model, tag, text)
        captures.append(capture)
        finalizers.append(finalize)
        pooled[tag] = pool

    contexts = [pooled[t] for t in ("SRC", "REF") if t in pooled]
    score = model.score_from_pooled(pooled["MT"], contexts)
    score.backward()
    for finalize in finalizers:
        finalize()

    cfg = model.encoder_config
    heads, layers = cfg.num_attention_heads, cfg.num_hidden_layers
    d_head = cfg.hidden_size // heads
    seq = sum(len(c.subwords) for c in captures)

    embeddings = np.vstack([c.embeddings for c in captures])
    input_grads = np.vstack([c.input_grads for c in captures])
    attention = np.zeros((layers, heads, seq, seq))
    value_grads = np.zeros((layers, heads, seq, d_head))
    layout = []
    offset = 0
    for c in captures:
        n = len(c.subwords)
        attention[:, :, offset : offset + n, offset : offset + n] = c.attention
        value_grads[:, :, offset : offset + n] = c.value_grads
        for sub in c.subwords:
            layout.append(
                {
                    "tag": c.tag,
                    "word_index": sub.word_index,
                    "subword_position": sub.position,
                    "text": sub.text,
                }
            )
        offset += n

    manifest = {
        "format_version": FORMAT_VERSION,
        "seq": seq,
        "layers": layers,
        "heads": heads,
        "d_model": cfg.hidden_size,
        "d_head": d_head,
        "score": float(score.detach()),
        "producer": "trace-exporter",
        "embedding_layer_note": "final encoder layer",
        "layout": layout,
        "tensors": [
            {
                "name": name,
                "shape": None,  # filled below
                "dtype": "float32",
                "path": f"{name}.f32",
            }
            for name in TENSOR_NAMES
        ],
    }
    tensors = {
        "embeddings": embeddings,
        "input_embedding_grads": input_grads,
        "attention": attention,
        "value_grads": value_grads,
    }
    for desc in manifest["tensors"]:
        desc["shape"] = list(tensors[desc["name"]].shape)
    return float(score.detach()), manifest, tensors


def export_traces(job: ExportJob) -> list[dict]:
    """Run the full job; returns the index entries that were written."""
    model = load_checkpoint(job.checkpoint)
    model.eval()
    instances = read_instances(job.data)
    os.makedirs(job.out_dir, exist_ok=True)

    entries = []
    for i, instance in enumerate(instances):
        _, manifest, tensors = export_instance(model, instance, job.input_config)
        rel = os.path.join("traces", str(i))
        directory = os.path.join(job.out_dir, rel)
        os.makedirs(directory, exist_ok=True)
        for name, arr in tensors.items():
            arr.astype("<f4").tofile(os.path.join(directory, f"{name}.f32"))
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, ensure_ascii=False)
        entries.append(
            {"id": instance.id, "input_config": job.input_config, "dir": rel}
        )

    with open(os.path.join(job.out_dir, "index.json"), "w", encoding="utf-8") as fh:
        json.dump({"instances": entries}, fh, indent=1, ensure_ascii=False)
    return entries


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trace-export",
        description="Export metric-lens trace directories from a checkpoint",
    )
    parser.add_argument("data", help="MQM-style TSV of instances")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--inputs", default="ref", choices=["src", "ref", "src+ref"])
    parser.add_argument("--out", required=True)
    parser.add_argument("--batch-size", type=int, default=8)
    args = parser.parse_args(argv)
    try:
        entries = export_traces(
            ExportJob(
                checkpoint=args.checkpoint,
                data=args.data,
                input_config=args.inputs,
                out_dir=args.out,
                batch_size=args.batch_size,
            )
        )
    except (ExportUnsupported, ValueError, FileNotFoundError) as exc:
        print(f"trace-export: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(entries)} trace(s) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
