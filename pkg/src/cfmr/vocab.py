"""Token vocabulary with reserved padding/mask ids and a function-word stoplist."""

from __future__ import annotations

import json
from typing import Iterable, List, Sequence

from .exceptions import InputError
from .types import QueryTokens

PAD = "<pad>"
MASK = "<mask>"
PAD_ID = 0
MASK_ID = 1


class Vocabulary:
    def __init__(self, words: Sequence[str], function_words: Iterable[str] = ()):
        words = [w for w in words if w not in (PAD, MASK)]
        self.tokens: List[str] = [PAD, MASK] + list(words)
        if len(set(self.tokens)) != len(self.tokens):
            raise InputError("duplicate tokens in vocabulary")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.function_words = frozenset(function_words)

    def __len__(self):
        return len(self.tokens)

    def is_content(self, token_id: int) -> bool:
        return token_id > MASK_ID and self.tokens[token_id] not in self.function_words

    def encode(self, words) -> QueryTokens:
        if isinstance(words, str):
            words = words.lower().split()
        unknown = [w for w in words if w not in self.index]
        if unknown:
            raise InputError(f"out-of-vocabulary tokens: {unknown}")
        ids = [self.index[w] for w in words]
        return QueryTokens(ids, [self.is_content(i) for i in ids])

    def decode(self, ids) -> List[str]:
        return [self.tokens[i] for i in ids]

    def to_dict(self):
        return {"tokens": self.tokens[2:], "function_words": sorted(self.function_words)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tokens"], d.get("function_words", ()))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))
