"""Word and subword splitting plus deterministic token-id hashing.

The toolkit contract tokenizes on whitespace and splits each word into
chunks of at most six characters; the trace layout records, per subword,
the owning word index and running subword position. Token ids hash the
subword surface (continuations prefixed with ``##``) into [1, vocab);
id 0 is reserved.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

MAX_SUBWORD_CHARS = 6
_WORD = re.compile(r"\S+")


@dataclass(frozen=True)
class Subword:
    text: str
    word_index: int
    position: int
    is_continuation: bool


def split_words(text: str) -> list[str]:
    return _WORD.findall(text)


def split_subwords(text: str) -> list[Subword]:
    out: list[Subword] = []
    for w_idx, word in enumerate(split_words(text)):
        for k in range(0, len(word), MAX_SUBWORD_CHARS):
            out.append(
                Subword(
                    text=word[k : k + MAX_SUBWORD_CHARS],
                    word_index=w_idx,
                    position=len(out),
                    is_continuation=k > 0,
                )
            )
    if not out:
        raise ValueError("cannot tokenize empty text")
    return out


def token_id(sub: Subword, vocab_size: int) -> int:
    surface = ("##" + sub.text) if sub.is_continuation else sub.text
    digest = hashlib.sha256(surface.encode("utf-8")).digest()
    return 1 + int.from_bytes(digest[:8], "big") % (vocab_size - 1)
