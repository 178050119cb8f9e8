import numpy as np
import pytest

from metric_lens.core import (
    ErrorSpan,
    EvaluationInstance,
    InputConfig,
    ModelTrace,
    SegmentTag,
    Severity,
    TracePosition,
    tokenize,
)
from metric_lens.encoder import Architecture, EncoderConfig, init_model
from metric_lens.rng import Xoshiro256StarStar

WORDS = (
    "the cat sat on a mat near my 29 red dogs and it was not "
    "very big today ok relativity"
).split()


def random_sentence(rng: Xoshiro256StarStar, lo: int, hi: int):
    n = lo + rng.randint(hi - lo + 1)
    return tokenize(" ".join(rng.choice(WORDS) for _ in range(n)))


def random_instance(rng: Xoshiro256StarStar, lo: int = 2, hi: int = 4):
    return EvaluationInstance(
        id="rnd",
        lang_pair="zh-en",
        source=random_sentence(rng, lo, hi),
        translation=random_sentence(rng, lo, hi),
        reference=random_sentence(rng, lo, hi),
    )


def make_trace(
    rng: Xoshiro256StarStar,
    mt_words: int = 3,
    ctx_words: int = 3,
    layers: int = 1,
    heads: int = 1,
    d_model: int = 4,
    ctx_tag: SegmentTag = SegmentTag.REF,
    with_src: bool = False,
):
    """Synthetic trace with one subword per word, uniform-ish attention."""
    layout = [TracePosition(SegmentTag.MT, i, i, f"mt{i}") for i in range(mt_words)]
    layout += [TracePosition(ctx_tag, i, i, f"c{i}") for i in range(ctx_words)]
    if with_src:
        layout += [TracePosition(SegmentTag.SRC, i, i, f"s{i}") for i in range(ctx_words)]
    seq = len(layout)

    def rand(*shape):
        n = int(np.prod(shape))
        return np.array([rng.uniform_range(-1, 1) for _ in range(n)]).reshape(shape)

    logits = rand(layers, heads, seq, seq)
    att = np.exp(logits)
    att /= att.sum(axis=-1, keepdims=True)
    return ModelTrace(
        layout=tuple(layout),
        embeddings=rand(seq, d_model),
        input_embedding_grads=rand(seq, d_model),
        attention=att,
        value_grads=rand(layers, heads, seq, d_model),
        score=0.5,
    )


@pytest.fixture
def small_instance():
    return EvaluationInstance(
        id="i1",
        lang_pair="zh-en",
        source=tokenize("mao zuo zai dian shang"),
        translation=tokenize("the cat sat on 29 mats"),
        reference=tokenize("a cat sits on 29 mats"),
    )


@pytest.fixture
def separate_model():
    cfg = EncoderConfig(layers=2, heads=2, d_model=8, d_ff=16, vocab_size=64, seed=42)
    return init_model(cfg, Architecture.SEPARATE)


@pytest.fixture
def joint_model():
    cfg = EncoderConfig(layers=2, heads=2, d_model=8, d_ff=16, vocab_size=64, seed=42)
    return init_model(cfg, Architecture.JOINT)


def spanned_instance(text: str, spans, lang_pair="zh-en", iid="s1"):
    return EvaluationInstance(
        id=iid,
        lang_pair=lang_pair,
        source=tokenize("src"),
        translation=tokenize(text),
        reference=tokenize("ref text here"),
        gold_spans=tuple(
            ErrorSpan(a, b, Severity.MAJOR, "cat") for a, b in spans
        ),
    )
