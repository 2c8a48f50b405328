"""Tokenization, dictionaries, and structured-attribute serialization.

Unstructured attributes each get their own dictionary; structured attributes
share one joint dictionary over naturalized names and values, in which every
name token is guaranteed to survive trimming. Serialized structured text uses
the reserved `__sep__` token to mark attribute boundaries.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import Product

PAD_INDEX = 0
UNK_INDEX = 1
SEP_INDEX = 2
PAD_TOKEN = "__pad__"
UNK_TOKEN = "__unk__"
SEP_TOKEN = "__sep__"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, SEP_TOKEN)

# Sequences are padded to at least the widest convolutional filter.
MIN_ENCODED_LEN = 5

_DELIMITERS = re.compile(r"[_\-/]")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on Unicode whitespace runs; never yields empties."""
    return text.lower().split()


def naturalize(name_or_value: str) -> str:
    """Turn a delimited attribute name or value into plain lowercase words.

    Underscores, dashes, and slashes become spaces; whitespace runs collapse.
    """
    return " ".join(_DELIMITERS.sub(" ", name_or_value).lower().split())


def serialize_structured(product: Product, with_separator: bool = True) -> str:
    """Flatten name/value pairs into one string, in the product's stored order.

    With separators the attributes are joined by the reserved `__sep__` token
    so downstream filters can see attribute boundaries; there is never a
    dangling separator.
    """
    pieces = []
    for name, value in product.structured:
        text = naturalize(name)
        value_text = naturalize(value)
        if value_text:
            text = f"{text} {value_text}" if text else value_text
        pieces.append(text)
    joiner = f" {SEP_TOKEN} " if with_separator else " "
    return joiner.join(pieces)


class Dictionary:
    """Immutable token-to-index map with reserved PAD/UNK/SEP entries.

    Indices are dense in [0, size); rows 0..2 are the reserved tokens and are
    never evicted by trimming.
    """

    def __init__(self, tokens: Sequence[str], frequencies: Sequence[int]):
        if tuple(tokens[:3]) != RESERVED_TOKENS:
            raise ValueError("dictionary must start with the reserved tokens")
        if len(tokens) != len(set(tokens)):
            raise ValueError("dictionary tokens must be unique")
        if len(tokens) != len(frequencies):
            raise ValueError("tokens and frequencies must have equal length")
        self.index_to_token: list[str] = list(tokens)
        self.frequencies: list[int] = [int(f) for f in frequencies]
        self.token_to_index: dict[str, int] = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def lookup(self, token: str) -> int:
        """Index of a token, falling back to UNK."""
        return self.token_to_index.get(token, UNK_INDEX)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dictionary)
            and self.index_to_token == other.index_to_token
            and self.frequencies == other.frequencies
        )

    def save(self, path: str | Path) -> None:
        """Write `index<TAB>token<TAB>frequency` lines, indices ascending."""
        with open(path, "w", encoding="utf-8") as fh:
            for i, (token, freq) in enumerate(zip(self.index_to_token, self.frequencies)):
                fh.write(f"{i}\t{token}\t{freq}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        tokens: list[str] = []
        freqs: list[int] = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                index_s, token, freq_s = line.rstrip("\n").split("\t")
                if int(index_s) != lineno:
                    raise ValueError(f"{path}: non-ascending index at line {lineno + 1}")
                tokens.append(token)
                freqs.append(int(freq_s))
        return cls(tokens, freqs)


def _top_tokens(counts: Counter[str], capacity: int) -> list[tuple[str, int]]:
    # Most frequent first; lexicographic tie-break keeps trimming deterministic
    # and keep-sets monotone in capacity.
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:capacity]


def build_dictionary(corpus: Iterable[str], max_size: int) -> Dictionary:
    """Count tokens over a corpus and keep the most frequent under `max_size`.

    Capacity includes the three reserved rows. Reserved literals appearing in
    the corpus are not double-counted as regular entries.
    """
    if max_size < len(RESERVED_TOKENS):
        raise ValueError(f"max_size must be >= {len(RESERVED_TOKENS)}, got {max_size}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    kept = _top_tokens(counts, max_size - len(RESERVED_TOKENS))
    tokens = list(RESERVED_TOKENS) + [t for t, _ in kept]
    freqs = [0, 0, 0] + [c for _, c in kept]
    return Dictionary(tokens, freqs)


def build_attribute_dictionary(products: Iterable[Product], max_size: int) -> Dictionary:
    """Joint dictionary over naturalized structured-attribute names and values.

    Every token that appears in any attribute name is installed first and is
    guaranteed to survive trimming; value tokens fill the remaining capacity
    by frequency.
    """
    if max_size < len(RESERVED_TOKENS):
        raise ValueError(f"max_size must be >= {len(RESERVED_TOKENS)}, got {max_size}")
    name_tokens: set[str] = set()
    counts: Counter[str] = Counter()
    for product in products:
        for name, value in product.structured:
            toks = tokenize(naturalize(name))
            name_tokens.update(toks)
            counts.update(toks)
            counts.update(tokenize(naturalize(value)))
    for reserved in RESERVED_TOKENS:
        name_tokens.discard(reserved)
        counts.pop(reserved, None)
    capacity = max_size - len(RESERVED_TOKENS)
    if len(name_tokens) > capacity:
        raise ValueError(
            f"max_size {max_size} cannot hold all {len(name_tokens)} attribute-name "
            f"tokens; need at least {len(name_tokens) + len(RESERVED_TOKENS)}"
        )
    names_ranked = sorted(name_tokens, key=lambda t: (-counts[t], t))
    rest = Counter({t: c for t, c in counts.items() if t not in name_tokens})
    values_ranked = _top_tokens(rest, capacity - len(names_ranked))
    tokens = list(RESERVED_TOKENS) + names_ranked + [t for t, _ in values_ranked]
    freqs = [0, 0, 0] + [counts[t] for t in names_ranked] + [c for _, c in values_ranked]
    return Dictionary(tokens, freqs)


@dataclass
class TokenSequence:
    """Encoded token indices for one attribute of one product.

    `indices` is padded with PAD up to MIN_ENCODED_LEN; `n_real` counts the
    non-padding prefix.
    """

    indices: np.ndarray
    n_real: int
    source_attribute: str = ""

    def __len__(self) -> int:
        return len(self.indices)


def encode(
    text: str, dictionary: Dictionary, max_len: int, *, source_attribute: str = ""
) -> TokenSequence:
    """Tokenize, map through the dictionary (missing tokens become UNK),
    truncate to `max_len`, and pad with PAD to at least MIN_ENCODED_LEN."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    tokens = tokenize(text)[:max_len]
    indices = [dictionary.lookup(t) for t in tokens]
    n_real = len(indices)
    if len(indices) < MIN_ENCODED_LEN:
        indices.extend([PAD_INDEX] * (MIN_ENCODED_LEN - len(indices)))
    return TokenSequence(
        indices=np.asarray(indices, dtype=np.int64),
        n_real=n_real,
        source_attribute=source_attribute,
    )
