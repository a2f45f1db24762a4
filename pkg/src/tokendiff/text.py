"""Corpus ingestion and tokenization.

Char-level vocabulary by default, with a miniature byte-pair-encoding
trainer for experiments on slightly coarser units.  Vocabularies serialize
to JSON ({"tokens": [...], "merges": [[l, r], ...], "unk_id": ...}) and are
immutable once built.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(eq=False)
class TokenSequence:
    """A 1-D run of token ids."""

    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise ValueError(f"TokenSequence ids must be 1-D, got shape {self.ids.shape}")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(eq=False)
class Vocab:
    """Token inventory: id <-> string, plus the ordered BPE merge list.

    `merges` is empty for char-level vocabularies.  Encoding applies merges
    in training order; characters outside the alphabet map to `unk_id` when
    set and raise otherwise.
    """

    id_to_token: list[str]
    merges: list[tuple[str, str]] = field(default_factory=list)
    unk_id: int | None = None

    def __post_init__(self):
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        if self.unk_id is not None and not 0 <= self.unk_id < len(self.id_to_token):
            raise ValueError(f"unk_id {self.unk_id} out of range")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.id_to_token),
            "merges": [list(m) for m in self.merges],
            "unk_id": self.unk_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(id_to_token=list(d["tokens"]),
                   merges=[tuple(m) for m in d.get("merges", [])],
                   unk_id=d.get("unk_id"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=0, sort_keys=True) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_char_vocab(corpus: str, unk_token: str | None = None) -> Vocab:
    """One token per distinct character, sorted by code point."""
    if not corpus:
        raise ValueError("empty corpus")
    tokens = sorted(set(corpus))
    unk_id = None
    if unk_token is not None:
        if unk_token not in tokens:
            tokens.append(unk_token)
        unk_id = tokens.index(unk_token)
    return Vocab(id_to_token=tokens, unk_id=unk_id)


def _merge_once(seq: list[str], left: str, right: str) -> list[str]:
    """Replace adjacent (left, right) pairs with left+right, greedily left-to-right."""
    out: list[str] = []
    i = 0
    n = len(seq)
    merged = left + right
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def bpe_train(corpus: str, num_merges: int, unk_token: str | None = None) -> Vocab:
    """Greedy BPE: per round, merge the most frequent adjacent pair.

    Ties break on the lexicographically smallest merged string.  Zero merges
    degenerates to the char vocabulary.  Stops early if no pair repeats.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    base = build_char_vocab(corpus, unk_token=unk_token)
    seq = list(corpus)
    merges: list[tuple[str, str]] = []
    tokens = list(base.id_to_token)
    for _ in range(num_merges):
        counts: dict[tuple[str, str], int] = {}
        for a, b in zip(seq, seq[1:]):
            counts[(a, b)] = counts.get((a, b), 0) + 1
        if not counts:
            break
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0][0] + kv[0][1]))
        (left, right), freq = best
        if freq < 2:
            break
        merges.append((left, right))
        tokens.append(left + right)
        seq = _merge_once(seq, left, right)
    return Vocab(id_to_token=tokens, merges=merges, unk_id=base.unk_id)


def encode(s: str, v: Vocab) -> TokenSequence:
    """Text -> ids: split to characters, replay merges in training order."""
    seq = list(s)
    for left, right in v.merges:
        seq = _merge_once(seq, left, right)
    ids = np.empty(len(seq), dtype=np.int64)
    for i, tok in enumerate(seq):
        tid = v.token_to_id.get(tok)
        if tid is None:
            if v.unk_id is None:
                raise ValueError(f"token {tok!r} not in vocabulary and no unk_id set")
            tid = v.unk_id
        ids[i] = tid
    return TokenSequence(ids=ids)


def decode(t: TokenSequence | np.ndarray, v: Vocab) -> str:
    ids = t.ids if isinstance(t, TokenSequence) else np.asarray(t)
    size = len(v)
    out = []
    for i in ids.tolist():
        if not 0 <= i < size:
            raise ValueError(f"token id {i} out of range [0, {size})")
        out.append(v.id_to_token[i])
    return "".join(out)


def window_ids(ids: np.ndarray, seq_len: int, stride: int) -> np.ndarray:
    """Overlapping fixed-length windows [num, seq_len]; ragged tail dropped."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = ids.shape[0]
    if n < seq_len:
        raise ValueError(f"corpus of {n} tokens is shorter than one window of {seq_len}")
    starts = range(0, n - seq_len + 1, stride)
    return np.stack([ids[s:s + seq_len] for s in starts]).astype(np.int64)


def ingest_corpus(source: str | Path, seq_len: int, stride: int,
                  vocab: Vocab) -> list[TokenSequence]:
    """Read UTF-8 text, encode it, and cut overlapping windows.

    seq_len must be a power of two (the Fourier layers require it).
    """
    if seq_len < 1 or (seq_len & (seq_len - 1)) != 0:
        raise ValueError(f"seq_len must be a power of two, got {seq_len}")
    path = Path(source)
    try:
        texts = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ValueError(f"cannot read corpus {path}: {e}") from e
    if not texts:
        raise ValueError(f"corpus {path} is empty")
    ids = encode(texts, vocab).ids
    mat = window_ids(ids, seq_len, stride)
    return [TokenSequence(ids=row) for row in mat]
