"""Word-level tokenizer producing fixed-length ids, attention mask and segment ids."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
N_SPECIAL = len(SPECIAL_TOKENS)


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:N_SPECIAL]) != SPECIAL_TOKENS:
            raise TokenizerError("vocabulary must start with the special tokens")
        mapping = {t: i for i, t in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise TokenizerError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def corpus_tokens(self) -> tuple[str, ...]:
        return self.id_to_token[N_SPECIAL:]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").split("\n")
        return cls(tuple(t for t in tokens if t))


@dataclass(frozen=True)
class TokenizedInput:
    input_ids: np.ndarray
    attention_mask: np.ndarray
    segment_ids: np.ndarray
    true_length: int

    @property
    def max_len(self) -> int:
        return len(self.input_ids)


def build_vocab(corpus: Iterable[str], max_vocab: int = 30000, min_freq: int = 1) -> Vocab:
    """Most frequent whitespace tokens first, ties broken lexicographically."""
    corpus = list(corpus)
    if not corpus:
        raise TokenizerError("cannot build a vocabulary from an empty corpus")
    if max_vocab < 1 or min_freq < 1:
        raise TokenizerError("max_vocab and min_freq must be positive")
    counts = Counter(tok for text in corpus for tok in text.split())
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    ranked = sorted((kv for kv in counts.items() if kv[1] >= min_freq), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(SPECIAL_TOKENS + tuple(t for t, _ in ranked[:max_vocab]))


def encode_text(text: str, v: Vocab, max_len: int) -> TokenizedInput:
    if max_len < 3:
        raise TokenizerError(f"max_len must be at least 3, got {max_len}")
    body = [v.token_to_id.get(tok, UNK) for tok in text.split()][: max_len - 2]
    ids = [CLS, *body, SEP]
    n = len(ids)
    input_ids = np.full(max_len, PAD, dtype=np.int64)
    input_ids[:n] = ids
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n] = 1
    return TokenizedInput(input_ids, mask, np.zeros(max_len, dtype=np.int64), n)


def encode_batch(texts: Sequence[str], v: Vocab, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``(input_ids, attention_mask)`` for a list of texts."""
    if not texts:
        return np.zeros((0, max_len), dtype=np.int64), np.zeros((0, max_len), dtype=np.int64)
    encoded = [encode_text(t, v, max_len) for t in texts]
    return (np.stack([e.input_ids for e in encoded]),
            np.stack([e.attention_mask for e in encoded]))


def decode_ids(ids: Sequence[int] | np.ndarray, v: Vocab) -> str:
    out = []
    for i in np.asarray(ids, dtype=np.int64).tolist():
        if not 0 <= i < len(v):
            raise TokenizerError(f"token id {i} out of range for vocabulary of size {len(v)}")
        if i >= N_SPECIAL:
            out.append(v.id_to_token[i])
    return " ".join(out)
