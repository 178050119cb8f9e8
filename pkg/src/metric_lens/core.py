"""Domain types shared by every module: sentences, spans, traces, explanations.

All offsets are byte offsets into the UTF-8 encoding of the sentence text,
so spans round-trip bit-exactly with input files.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput

MAX_SUBWORD_CHARS = 6

_WORD_RE = re.compile(r"\S+")


class Severity(enum.Enum):
    MINOR = "minor"
    MAJOR = "major"
    CRITICAL = "critical"


class SegmentTag(enum.Enum):
    MT = "MT"
    SRC = "SRC"
    REF = "REF"
    SEP = "SEP"


class InputConfig(enum.Enum):
    SRC = "src"
    REF = "ref"
    SRC_REF = "src+ref"

    @property
    def needs_src(self) -> bool:
        return self in (InputConfig.SRC, InputConfig.SRC_REF)

    @property
    def needs_ref(self) -> bool:
        return self in (InputConfig.REF, InputConfig.SRC_REF)


class Method(enum.Enum):
    EMBED_ALIGN = "embed_align"
    GRAD_L2 = "grad_l2"
    ATTENTION = "attention"
    ATTN_X_GRAD = "attn_x_grad"


@dataclass(frozen=True)
class Word:
    text: str
    char_start: int  # byte offset, inclusive
    char_end: int  # byte offset, exclusive

    def __post_init__(self):
        if not self.char_start < self.char_end:
            raise ValueError("word byte span must be non-empty")


@dataclass(frozen=True)
class Subword:
    text: str
    word_index: int
    position: int
    is_continuation: bool = False


@dataclass(frozen=True)
class Sentence:
    text: str
    words: tuple[Word, ...]
    subwords: tuple[Subword, ...]


@dataclass(frozen=True)
class ErrorSpan:
    char_start: int
    char_end: int
    severity: Severity
    category: str

    def __post_init__(self):
        if not 0 <= self.char_start < self.char_end:
            raise ValueError("span byte offsets must satisfy 0 <= start < end")

    def overlaps(self, start: int, end: int) -> bool:
        return self.char_start < end and start < self.char_end


@dataclass(frozen=True)
class EvaluationInstance:
    id: str
    lang_pair: str
    source: Sentence
    translation: Sentence
    reference: Sentence | None
    gold_spans: tuple[ErrorSpan, ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class TracePosition:
    """One position of the encoded sequence: which segment, which word,
    which instance-relative subword, and the subword surface form."""

    tag: SegmentTag
    word_index: int  # -1 for SEP
    subword_position: int  # -1 for SEP
    text: str


@dataclass(frozen=True)
class ModelTrace:
    """Everything an attribution method needs from one scoring pass."""

    layout: tuple[TracePosition, ...]
    embeddings: np.ndarray  # [seq, d_model], final-layer representations
    input_embedding_grads: np.ndarray  # [seq, d_model]
    attention: np.ndarray  # [layers, heads, seq, seq]
    value_grads: np.ndarray  # [layers, heads, seq, d_head]
    score: float

    @property
    def seq_len(self) -> int:
        return len(self.layout)

    def positions(self, tag: SegmentTag) -> np.ndarray:
        return np.array(
            [i for i, p in enumerate(self.layout) if p.tag is tag], dtype=int
        )

    def has_sep(self) -> bool:
        return any(p.tag is SegmentTag.SEP for p in self.layout)


@dataclass(frozen=True)
class Explanation:
    method: Method
    input_config: InputConfig | None
    subword_scores: np.ndarray  # one score per MT subword
    word_scores: np.ndarray  # one score per MT word
    head: tuple[int, int] | None = None  # (layer, head) for per-head methods


def tokenize(text: str) -> Sentence:
    """Deterministic whitespace word split plus fixed-width subword chunking.

    Words longer than ``MAX_SUBWORD_CHARS`` characters are cut into chunks of
    at most that many characters; chunks after the first are flagged as
    continuations. Offsets are byte offsets into the UTF-8 text.
    """
    if not text.strip():
        raise EmptyInput("cannot tokenize empty text")

    words = []
    subwords = []
    for match in _WORD_RE.finditer(text):
        wtext = match.group()
        byte_start = len(text[: match.start()].encode("utf-8"))
        byte_end = byte_start + len(wtext.encode("utf-8"))
        word_index = len(words)
        words.append(Word(wtext, byte_start, byte_end))
        for chunk_no, off in enumerate(range(0, len(wtext), MAX_SUBWORD_CHARS)):
            subwords.append(
                Subword(
                    text=wtext[off : off + MAX_SUBWORD_CHARS],
                    word_index=word_index,
                    position=len(subwords),
                    is_continuation=chunk_no > 0,
                )
            )
    return Sentence(text=text, words=tuple(words), subwords=tuple(subwords))


def word_byte_slice(sentence: Sentence, word: Word) -> str:
    """Slice the sentence text by the word's byte offsets."""
    return sentence.text.encode("utf-8")[word.char_start : word.char_end].decode(
        "utf-8"
    )


def validate_trace(
    trace: ModelTrace,
    instance: EvaluationInstance,
    config: InputConfig,
    expect_block_diagonal: bool | None = None,
) -> list[str]:
    """Check every ModelTrace invariant plus layout/instance agreement.

    Returns a list of violation strings; empty means the trace is well
    formed. Never raises. ``expect_block_diagonal=None`` infers separate
    encoding from the absence of SEP positions.
    """
    violations: list[str] = []
    seq = trace.seq_len

    for name in ("embeddings", "input_embedding_grads", "attention", "value_grads"):
        arr = getattr(trace, name)
        if not np.all(np.isfinite(arr)):
            violations.append(f"{name} contains non-finite values")
    if not np.isfinite(trace.score):
        violations.append("score is non-finite")

    if trace.embeddings.shape[0] != seq:
        violations.append("embeddings seq length disagrees with layout")
    if trace.input_embedding_grads.shape != trace.embeddings.shape:
        violations.append("input_embedding_grads shape disagrees with embeddings")
    if trace.attention.ndim != 4 or trace.attention.shape[2:] != (seq, seq):
        violations.append("attention shape disagrees with layout")
    if (
        trace.value_grads.ndim != 4
        or trace.value_grads.shape[:2] != trace.attention.shape[:2]
        or trace.value_grads.shape[2] != seq
    ):
        violations.append("value_grads shape disagrees with attention/layout")

    if trace.attention.ndim == 4 and trace.attention.shape[2:] == (seq, seq):
        row_sums = trace.attention.sum(axis=-1)
        if not np.allclose(row_sums, 1.0, atol=1e-5, rtol=0):
            violations.append("attention not normalized")

        if expect_block_diagonal is None:
            expect_block_diagonal = not trace.has_sep()
        if expect_block_diagonal:
            tags = [p.tag for p in trace.layout]
            cross = np.array(
                [[tags[i] is not tags[j] for j in range(seq)] for i in range(seq)]
            )
            if np.any(trace.attention[:, :, cross] != 0.0):
                violations.append("cross-segment attention is nonzero")

    mt_positions = trace.positions(SegmentTag.MT)
    if len(mt_positions) != len(instance.translation.subwords):
        violations.append("MT segment length disagrees with instance MT subwords")
    else:
        for pos in mt_positions:
            entry = trace.layout[pos]
            sub = instance.translation.subwords[entry.subword_position]
            if sub.word_index != entry.word_index:
                violations.append("MT layout word_index disagrees with instance")
                break

    if config.needs_src and len(trace.positions(SegmentTag.SRC)) == 0:
        violations.append("config requires SRC segment but trace has none")
    if config.needs_ref and len(trace.positions(SegmentTag.REF)) == 0:
        violations.append("config requires REF segment but trace has none")

    return violations
