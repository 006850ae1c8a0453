"""Shared tokenization and vocabulary, used by both the caption models and the metrics.

Keeping a single tokenizer means the generator's output tokens and the
metric-side n-grams live in the same space.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)

# words (letters/digits/apostrophes) or single punctuation marks
_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word/punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def word_count(text: str) -> int:
    """Whitespace word count after trimming; punctuation stays glued to its word."""
    return len(text.split())


@dataclass
class Vocabulary:
    """Token inventory with fixed special ids: pad=0, bos=1, eos=2, unk=3."""

    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def encode(self, text: str, add_bos_eos: bool = False) -> list[int]:
        ids = [self.index.get(tok, self.unk_id) for tok in tokenize(text)]
        if add_bos_eos:
            ids = [self.bos_id, *ids, self.eos_id]
        return ids

    def decode(self, ids: list[int]) -> str:
        specials = {self.pad_id, self.bos_id, self.eos_id}
        return " ".join(self.tokens[i] for i in ids if i not in specials)


def build_vocabulary(texts: list[str]) -> Vocabulary:
    """Vocabulary over all tokens seen in ``texts``, sorted for determinism."""
    seen: set[str] = set()
    for text in texts:
        seen.update(tokenize(text))
    return Vocabulary(list(SPECIAL_TOKENS) + sorted(seen))
