"""Desk-scale transformer encoder with reverse-mode differentiation.

Two score-head families are supported: SEPARATE encodes each segment
independently and combines average-pooled sentence embeddings through an
element-wise feature vector; JOINT concatenates the segments with SEP
tokens, encodes once and pools the first position. A single scoring pass
returns the scalar score together with a full :class:`ModelTrace`:
final-layer embeddings, all attention matrices, input-embedding gradients
and per-head value-vector gradients.

All math runs in float64. Parameters are drawn uniformly from [-0.1, 0.1]
by xoshiro256** (see :mod:`metric_lens.rng`) in a fixed, documented order:
token embedding table row-major first, then per layer Wq, bq, Wk, bk, Wv,
bv, Wo, bo, W1, b1, W2, b2, ln1_g, ln1_b, ln2_g, ln2_b, finally the
scoring head Hw1, Hb1, Hw2, Hb2.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .core import (
    EvaluationInstance,
    InputConfig,
    ModelTrace,
    SegmentTag,
    Sentence,
    TracePosition,
)
from .errors import ConfigError, MissingSegment
from .rng import Xoshiro256StarStar, fnv1a_64

LN_EPS = 1e-5
SEP_TOKEN_ID = 0
SEP_TEXT = "<sep>"


class Architecture(enum.Enum):
    SEPARATE = "separate"
    JOINT = "joint"


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    seed: int

    def validate(self) -> None:
        for name in ("layers", "heads", "d_model", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2 (id 0 is reserved for SEP)")
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by heads={self.heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


@dataclass(frozen=True)
class MetricModel:
    config: EncoderConfig
    architecture: Architecture
    params: dict[str, np.ndarray]


def _draw(rng: Xoshiro256StarStar, *shape: int) -> np.ndarray:
    n = int(np.prod(shape))
    flat = np.array([rng.uniform_range(-0.1, 0.1) for _ in range(n)])
    return flat.reshape(shape)


def init_model(config: EncoderConfig, architecture: Architecture) -> MetricModel:
    """Build a model with seeded, portable, bit-reproducible parameters."""
    config.validate()
    rng = Xoshiro256StarStar(config.seed)
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    params: dict[str, np.ndarray] = {"tok_emb": _draw(rng, v, d)}
    for l in range(config.layers):
        p = f"l{l}."
        params[p + "Wq"] = _draw(rng, d, d)
        params[p + "bq"] = _draw(rng, d)
        params[p + "Wk"] = _draw(rng, d, d)
        params[p + "bk"] = _draw(rng, d)
        params[p + "Wv"] = _draw(rng, d, d)
        params[p + "bv"] = _draw(rng, d)
        params[p + "Wo"] = _draw(rng, d, d)
        params[p + "bo"] = _draw(rng, d)
        params[p + "W1"] = _draw(rng, d, ff)
        params[p + "b1"] = _draw(rng, ff)
        params[p + "W2"] = _draw(rng, ff, d)
        params[p + "b2"] = _draw(rng, d)
        params[p + "ln1_g"] = _draw(rng, d)
        params[p + "ln1_b"] = _draw(rng, d)
        params[p + "ln2_g"] = _draw(rng, d)
        params[p + "ln2_b"] = _draw(rng, d)
    head_in = d if architecture is Architecture.JOINT else 8 * d
    params["Hw1"] = _draw(rng, head_in, d)
    params["Hb1"] = _draw(rng, d)
    params["Hw2"] = _draw(rng, d, 1)
    params["Hb2"] = _draw(rng, 1)
    return MetricModel(config=config, architecture=architecture, params=params)


def subword_token_id(text: str, is_continuation: bool, vocab_size: int) -> int:
    """Stable hash of a subword into [1, vocab_size); 0 is reserved for SEP."""
    key = ("##" + text) if is_continuation else text
    return 1 + fnv1a_64(key) % (vocab_size - 1)


def _sentence_ids(sentence: Sentence, vocab_size: int) -> np.ndarray:
    return np.array(
        [
            subword_token_id(s.text, s.is_continuation, vocab_size)
            for s in sentence.subwords
        ],
        dtype=int,
    )


def _positional_encoding(seq: int, d: int) -> np.ndarray:
    pe = np.zeros((seq, d))
    pos = np.arange(seq)[:, None].astype(float)
    i = np.arange(0, d, 2).astype(float)
    angle = pos / np.power(10000.0, i / d)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(
        2.0 * math.pi
    )


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    sigma = np.sqrt(var + LN_EPS)
    xhat = (x - mu) / sigma
    return g * xhat + b, (xhat, sigma)


def _layernorm_grad(dy: np.ndarray, g: np.ndarray, cache) -> np.ndarray:
    xhat, sigma = cache
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return (dxhat - m1 - xhat * m2) / sigma


@dataclass
class _Segment:
    tag: SegmentTag
    ids: np.ndarray
    layout: list[TracePosition]
    offset: int  # position of this segment's first token in the full layout


class _EncodeCache:
    __slots__ = ("x0", "layers", "H")

    def __init__(self, x0, layers, H):
        self.x0 = x0
        self.layers = layers
        self.H = H


def _encode(
    model: MetricModel,
    ids: np.ndarray,
    emb_offsets: np.ndarray | None,
    val_offsets: np.ndarray | None,
) -> _EncodeCache:
    """Run the encoder stack; caches everything the backward pass needs.

    ``emb_offsets`` [S, d_model] perturbs the input embeddings,
    ``val_offsets`` [layers, heads, S, d_head] perturbs the per-head value
    vectors (both used by the finite-difference oracle).
    """
    cfg = model.config
    P = model.params
    S, d, H, dh = len(ids), cfg.d_model, cfg.heads, cfg.d_head

    x0 = P["tok_emb"][ids] + _positional_encoding(S, d)
    if emb_offsets is not None:
        x0 = x0 + emb_offsets
    x = x0
    layer_caches = []
    for l in range(cfg.layers):
        p = f"l{l}."
        Q = x @ P[p + "Wq"] + P[p + "bq"]
        K = x @ P[p + "Wk"] + P[p + "bk"]
        V = x @ P[p + "Wv"] + P[p + "bv"]
        Qh = Q.reshape(S, H, dh).transpose(1, 0, 2)
        Kh = K.reshape(S, H, dh).transpose(1, 0, 2)
        Vh = V.reshape(S, H, dh).transpose(1, 0, 2)
        if val_offsets is not None:
            Vh = Vh + val_offsets[l]
        scores = Qh @ Kh.transpose(0, 2, 1) / math.sqrt(dh)
        A = _softmax(scores)
        Oh = A @ Vh
        O = Oh.transpose(1, 0, 2).reshape(S, d)
        attn_out = O @ P[p + "Wo"] + P[p + "bo"]
        x1, ln1_cache = _layernorm(x + attn_out, P[p + "ln1_g"], P[p + "ln1_b"])
        z = x1 @ P[p + "W1"] + P[p + "b1"]
        f = _gelu(z) @ P[p + "W2"] + P[p + "b2"]
        x2, ln2_cache = _layernorm(x1 + f, P[p + "ln2_g"], P[p + "ln2_b"])
        layer_caches.append(
            dict(x=x, Qh=Qh, Kh=Kh, Vh=Vh, A=A, x1=x1, z=z, ln1=ln1_cache, ln2=ln2_cache)
        )
        x = x2
    return _EncodeCache(x0=x0, layers=layer_caches, H=x)


def _encode_backward(model: MetricModel, cache: _EncodeCache, dH: np.ndarray):
    """Backprop dH through the stack; returns (dx0, value grads [L,H,S,dh])."""
    cfg = model.config
    P = model.params
    S, d, H, dh = dH.shape[0], cfg.d_model, cfg.heads, cfg.d_head
    value_grads = np.zeros((cfg.layers, H, S, dh))

    dx = dH
    for l in reversed(range(cfg.layers)):
        p = f"l{l}."
        c = cache.layers[l]
        # ln2(x1 + f)
        dsum2 = _layernorm_grad(dx, P[p + "ln2_g"], c["ln2"])
        dx1 = dsum2.copy()
        df = dsum2
        # f = gelu(z) @ W2 + b2
        dgz = df @ P[p + "W2"].T
        dz = dgz * _gelu_grad(c["z"])
        dx1 += dz @ P[p + "W1"].T
        # ln1(x + attn_out)
        dsum1 = _layernorm_grad(dx1, P[p + "ln1_g"], c["ln1"])
        dx_res = dsum1.copy()
        dattn_out = dsum1
        # attn_out = O @ Wo + bo
        dO = dattn_out @ P[p + "Wo"].T
        dOh = dO.reshape(S, H, dh).transpose(1, 0, 2)
        A, Vh, Qh, Kh = c["A"], c["Vh"], c["Qh"], c["Kh"]
        dVh = A.transpose(0, 2, 1) @ dOh
        value_grads[l] = dVh
        dA = dOh @ Vh.transpose(0, 2, 1)
        dscores = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
        dQh = dscores @ Kh / math.sqrt(dh)
        dKh = dscores.transpose(0, 2, 1) @ Qh / math.sqrt(dh)
        dQ = dQh.transpose(1, 0, 2).reshape(S, d)
        dK = dKh.transpose(1, 0, 2).reshape(S, d)
        dV = dVh.transpose(1, 0, 2).reshape(S, d)
        dx = (
            dx_res
            + dQ @ P[p + "Wq"].T
            + dK @ P[p + "Wk"].T
            + dV @ P[p + "Wv"].T
        )
    return dx, value_grads


def _segments_for(
    model: MetricModel, instance: EvaluationInstance, config: InputConfig
) -> list[_Segment]:
    """Segment layout in trace order: MT, then SRC and/or REF per config.

    JOINT traces get SEP positions between segments; SEPARATE traces are
    plain per-segment blocks (encoded independently, so no SEP).
    """
    if config.needs_ref and instance.reference is None:
        raise MissingSegment(
            f"input config {config.value!r} requires a reference for {instance.id!r}"
        )
    v = model.config.vocab_size
    parts: list[tuple[SegmentTag, Sentence]] = [(SegmentTag.MT, instance.translation)]
    if config.needs_src:
        parts.append((SegmentTag.SRC, instance.source))
    if config.needs_ref:
        parts.append((SegmentTag.REF, instance.reference))

    joint = model.architecture is Architecture.JOINT
    segments: list[_Segment] = []
    if joint:
        ids: list[int] = []
        layout: list[TracePosition] = []
        for k, (tag, sent) in enumerate(parts):
            if k > 0:
                ids.append(SEP_TOKEN_ID)
                layout.append(TracePosition(SegmentTag.SEP, -1, -1, SEP_TEXT))
            ids.extend(_sentence_ids(sent, v).tolist())
            layout.extend(
                TracePosition(tag, s.word_index, s.position, s.text)
                for s in sent.subwords
            )
        segments.append(_Segment(SegmentTag.MT, np.array(ids, dtype=int), layout, 0))
    else:
        offset = 0
        for tag, sent in parts:
            layout = [
                TracePosition(tag, s.word_index, s.position, s.text)
                for s in sent.subwords
            ]
            segments.append(_Segment(tag, _sentence_ids(sent, v), layout, offset))
            offset += len(layout)
    return segments


def _score_pass(
    model: MetricModel,
    segments: list[_Segment],
    config: InputConfig,
    emb_offsets: np.ndarray | None = None,
    val_offsets: np.ndarray | None = None,
):
    """Forward pass over prepared segments. Returns (score, caches, head_cache)."""
    P = model.params
    caches: list[_EncodeCache] = []
    for seg in segments:
        n = len(seg.ids)
        eo = None if emb_offsets is None else emb_offsets[seg.offset : seg.offset + n]
        vo = None if val_offsets is None else val_offsets[:, :, seg.offset : seg.offset + n, :]
        caches.append(_encode(model, seg.ids, eo, vo))

    if model.architecture is Architecture.JOINT:
        u = caches[0].H[0]
        head_cache = {"u": u}
    else:
        pooled = {seg.tag: c.H.mean(axis=0) for seg, c in zip(segments, caches)}
        h_mt = pooled[SegmentTag.MT]
        feats = []
        ctx_tags = []
        for tag in (SegmentTag.SRC, SegmentTag.REF):
            if tag in pooled:
                h_ctx = pooled[tag]
                feats.append(
                    np.concatenate([h_mt, h_ctx, h_mt * h_ctx, np.abs(h_mt - h_ctx)])
                )
                ctx_tags.append(tag)
        u = np.concatenate(feats)
        head_cache = {"u": u, "ctx_tags": ctx_tags, "pooled": pooled}

    Hw1 = P["Hw1"][: len(u)]
    z1 = u @ Hw1 + P["Hb1"]
    y = _gelu(z1)
    score = float(y @ P["Hw2"][:, 0] + P["Hb2"][0])
    head_cache.update({"z1": z1, "Hw1": Hw1})
    return score, caches, head_cache


def _backward_pass(model: MetricModel, segments, caches, head_cache):
    """Reverse pass of the scalar score; returns per-position gradients
    concatenated in layout order."""
    P = model.params
    dy = P["Hw2"][:, 0]
    dz1 = dy * _gelu_grad(head_cache["z1"])
    du = dz1 @ head_cache["Hw1"].T

    seq_total = sum(len(s.ids) for s in segments)
    cfg = model.config
    emb_grads = np.zeros((seq_total, cfg.d_model))
    value_grads = np.zeros((cfg.layers, cfg.heads, seq_total, cfg.d_head))

    if model.architecture is Architecture.JOINT:
        c = caches[0]
        dH = np.zeros_like(c.H)
        dH[0] = du
        dx0, vg = _encode_backward(model, c, dH)
        emb_grads[:] = dx0
        value_grads[:] = vg
        return emb_grads, value_grads

    pooled = head_cache["pooled"]
    h_mt = pooled[SegmentTag.MT]
    d = cfg.d_model
    dh_pooled = {tag: np.zeros(d) for tag in pooled}
    for k, tag in enumerate(head_cache["ctx_tags"]):
        h_ctx = pooled[tag]
        du1, du2, du3, du4 = (du[4 * k * d + j * d : 4 * k * d + (j + 1) * d] for j in range(4))
        sgn = np.sign(h_mt - h_ctx)
        dh_pooled[SegmentTag.MT] += du1 + du3 * h_ctx + du4 * sgn
        dh_pooled[tag] += du2 + du3 * h_mt - du4 * sgn

    for seg, c in zip(segments, caches):
        n = len(seg.ids)
        dH = np.tile(dh_pooled[seg.tag] / n, (n, 1))
        dx0, vg = _encode_backward(model, c, dH)
        emb_grads[seg.offset : seg.offset + n] = dx0
        value_grads[:, :, seg.offset : seg.offset + n, :] = vg
    return emb_grads, value_grads


def _assemble_attention(model: MetricModel, segments, caches, seq_total: int):
    cfg = model.config
    att = np.zeros((cfg.layers, cfg.heads, seq_total, seq_total))
    for seg, c in zip(segments, caches):
        n = len(seg.ids)
        sl = slice(seg.offset, seg.offset + n)
        for l, lc in enumerate(c.layers):
            att[l, :, sl, sl] = lc["A"]
    return att


def forward_with_trace(
    model: MetricModel, instance: EvaluationInstance, config: InputConfig
) -> tuple[float, ModelTrace]:
    """Score an instance and record every tensor attribution needs."""
    segments = _segments_for(model, instance, config)
    score, caches, head_cache = _score_pass(model, segments, config)
    emb_grads, value_grads = _backward_pass(model, segments, caches, head_cache)

    layout: list[TracePosition] = []
    for seg in segments:
        layout.extend(seg.layout)
    seq_total = len(layout)
    embeddings = np.concatenate([c.H for c in caches], axis=0)
    attention = _assemble_attention(model, segments, caches, seq_total)

    trace = ModelTrace(
        layout=tuple(layout),
        embeddings=embeddings,
        input_embedding_grads=emb_grads,
        attention=attention,
        value_grads=value_grads,
        score=score,
    )
    return score, trace


def score_with_offsets(
    model: MetricModel,
    instance: EvaluationInstance,
    config: InputConfig,
    emb_offsets: np.ndarray | None = None,
    val_offsets: np.ndarray | None = None,
) -> float:
    """Score only, with additive perturbations on input embeddings and
    per-head value vectors (the finite-difference probe surface)."""
    segments = _segments_for(model, instance, config)
    score, _, _ = _score_pass(model, segments, config, emb_offsets, val_offsets)
    return score


def separation_kink_margin(
    model: MetricModel, instance: EvaluationInstance, config: InputConfig
) -> float:
    """Distance of the SEPARATE feature vector from the |h_mt - h_ctx|
    kink: min over coordinates of |h_mt - h_ctx|. Central differences are
    invalid within the probe's reach of that kink, so gradient checks
    screen on this margin. JOINT models have no kink (returns inf)."""
    if model.architecture is Architecture.JOINT:
        return float("inf")
    segments = _segments_for(model, instance, config)
    _, _, head_cache = _score_pass(model, segments, config)
    pooled = head_cache["pooled"]
    h_mt = pooled[SegmentTag.MT]
    margin = float("inf")
    for tag in (SegmentTag.SRC, SegmentTag.REF):
        if tag in pooled:
            margin = min(margin, float(np.abs(h_mt - pooled[tag]).min()))
    return margin


def finite_difference_grads(
    model: MetricModel,
    instance: EvaluationInstance,
    config: InputConfig,
    h: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients, the independent oracle for the
    reverse-mode pass. Returns (input-embedding grads [S, d_model],
    value grads [layers, heads, S, d_head])."""
    if h <= 0:
        raise ValueError("step h must be positive")
    segments = _segments_for(model, instance, config)
    seq_total = sum(len(s.ids) for s in segments)
    cfg = model.config

    emb_grads = np.zeros((seq_total, cfg.d_model))
    eo = np.zeros((seq_total, cfg.d_model))
    for i in range(seq_total):
        for j in range(cfg.d_model):
            eo[i, j] = h
            fp = _score_pass(model, segments, config, emb_offsets=eo)[0]
            eo[i, j] = -h
            fm = _score_pass(model, segments, config, emb_offsets=eo)[0]
            eo[i, j] = 0.0
            emb_grads[i, j] = (fp - fm) / (2 * h)

    value_grads = np.zeros((cfg.layers, cfg.heads, seq_total, cfg.d_head))
    vo = np.zeros_like(value_grads)
    for idx in np.ndindex(value_grads.shape):
        vo[idx] = h
        fp = _score_pass(model, segments, config, val_offsets=vo)[0]
        vo[idx] = -h
        fm = _score_pass(model, segments, config, val_offsets=vo)[0]
        vo[idx] = 0.0
        value_grads[idx] = (fp - fm) / (2 * h)
    return emb_grads, value_grads
