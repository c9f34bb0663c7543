from __future__ import annotations

import re
from collections import Counter
from typing import Iterable

PAD_ID = 0
UNK_ID = 1
PAD = "<pad>"
UNK = "<unk>"

# words, or single punctuation characters kept as their own tokens
_TOKEN = re.compile(r"\w+|[^\w\s]")


def split_tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class Vocabulary:
    """Token/id mapping with ``<pad>`` = 0 and ``<unk>`` = 1."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: PAD_ID, UNK: UNK_ID}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts = Counter()
        for text in texts:
            counts.update(split_tokens(text))
        ranked = sorted((tok for tok, n in counts.items() if n >= min_count), key=lambda t: (-counts[t], t))
        return cls(ranked)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Map ``text`` to ids, keeping the first ``max_len`` tokens.

    Never returns an empty list: text without tokens becomes ``[UNK_ID]``.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = [vocab.lookup(tok) for tok in split_tokens(text)[:max_len]]
    return ids or [UNK_ID]
