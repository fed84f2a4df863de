"""Vocabularies, word normalization, and embedding lookup tables."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

UNK = "<UNK>"
PAD = "<PAD>"

_DIGIT = re.compile(r"\d")


class EmbeddingError(Exception):
    pass


def normalize_word(token: str) -> str:
    """Lowercase and replace every decimal digit with N.

    "01-Apr-2016" becomes "NN-apr-NNNN".
    """
    return _DIGIT.sub("N", token.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Dense string-to-id map with reserved PAD (id 0) and UNK (id 1)."""

    id_of: dict

    def __len__(self) -> int:
        return len(self.id_of)

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    def id(self, item: str) -> int:
        return self.id_of.get(item, self.id_of[UNK])

    def items(self) -> list:
        """Entries ordered by id."""
        ordered = [None] * len(self.id_of)
        for word, idx in self.id_of.items():
            ordered[idx] = word
        return ordered

    @classmethod
    def from_items(cls, items: Sequence[str]) -> "Vocabulary":
        id_of = {PAD: 0, UNK: 1}
        for item in sorted(set(items) - {PAD, UNK}):
            id_of[item] = len(id_of)
        return cls(id_of)


def build_vocab(corpus, level: str = "word") -> Vocabulary:
    """Vocabulary over normalized words or raw characters of a corpus.

    Entries are sorted, so ids are reproducible across runs.
    """
    if not corpus:
        raise EmbeddingError("cannot build a vocabulary from an empty corpus")
    if level == "word":
        items = {
            normalize_word(tok.surface) for doc in corpus for tok in doc.tokens()
        }
    elif level == "char":
        items = {ch for doc in corpus for ch in doc.text}
    else:
        raise ValueError(f"unknown vocabulary level {level!r}")
    return Vocabulary.from_items(sorted(items))


@dataclass
class EmbeddingTable:
    """A |vocab| x dim lookup table. Rows are trainable parameters."""

    vocab: Vocabulary
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.vocab, self.vectors.copy())


def init_random(vocab: Vocabulary, dim: int, seed: int) -> EmbeddingTable:
    """Uniform [-1, 1] initialization; the PAD row starts at zero."""
    if dim < 1:
        raise ValueError("embedding dim must be >= 1")
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-1.0, 1.0, size=(len(vocab), dim))
    vectors[vocab.pad_id] = 0.0
    return EmbeddingTable(vocab, vectors)


def load_word2vec_text(
    path: str,
    vocab: Vocabulary,
    expected_dim: Optional[int] = None,
    seed: int = 0,
) -> EmbeddingTable:
    """Build a table from a word2vec text file ("count dim" header, then one
    word and its floats per line).

    Rows for vocabulary words found in the file are copied verbatim; words
    missing from the file keep their random initialization. The UNK row is the
    mean of all loaded vectors and PAD stays zero.
    """
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline()
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingError("line 1: header must be '<count> <dim>'")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise EmbeddingError("line 1: header must be '<count> <dim>'") from None
        if expected_dim is not None and dim != expected_dim:
            raise EmbeddingError(f"file has dim {dim}, expected {expected_dim}")

        table = init_random(vocab, dim, seed)
        loaded = []
        for lineno, line in enumerate(handle, start=2):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split(" ")
            if len(cols) != dim + 1:
                raise EmbeddingError(
                    f"line {lineno}: expected a word and {dim} floats, got {len(cols)} fields"
                )
            try:
                vec = np.array([float(x) for x in cols[1:]])
            except ValueError:
                raise EmbeddingError(f"line {lineno}: malformed float") from None
            loaded.append(vec)
            if cols[0] in vocab.id_of:
                table.vectors[vocab.id_of[cols[0]]] = vec
        if len(loaded) != count:
            raise EmbeddingError(
                f"header announced {count} vectors but file has {len(loaded)}"
            )
    if loaded:
        table.vectors[vocab.unk_id] = np.mean(loaded, axis=0)
    return table


def save_word2vec_text(table: EmbeddingTable, path: str, skip_reserved: bool = True):
    """Write the table in word2vec text format. repr() rendering keeps float64
    values exact across a save/load round trip."""
    rows = []
    for word, idx in table.vocab.id_of.items():
        if skip_reserved and word in (PAD, UNK):
            continue
        rows.append((word, table.vectors[idx]))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{len(rows)} {table.dim}\n")
        for word, vec in rows:
            handle.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def lookup_window(table: EmbeddingTable, ids: Sequence[int], index: int, c: int) -> np.ndarray:
    """Concatenated rows for positions index-c .. index+c, with the PAD row
    substituted beyond the sequence edges. Length is (2c+1) * dim."""
    if not 0 <= index < len(ids):
        raise IndexError(f"index {index} outside sequence of length {len(ids)}")
    pad = table.vocab.pad_id
    window = [
        ids[pos] if 0 <= pos < len(ids) else pad
        for pos in range(index - c, index + c + 1)
    ]
    return table.vectors[window].reshape(-1)


def window_ids(ids: Sequence[int], c: int, pad_id: int) -> np.ndarray:
    """All context windows of a sequence at once: a len(ids) x (2c+1) id
    matrix, padded with pad_id. Row t matches lookup_window at position t."""
    arr = np.full((len(ids), 2 * c + 1), pad_id, dtype=np.int64)
    ids = list(ids)
    for offset in range(-c, c + 1):
        col = offset + c
        for t in range(len(ids)):
            pos = t + offset
            if 0 <= pos < len(ids):
                arr[t, col] = ids[pos]
    return arr


def ppmi_svd_embeddings(
    token_lists: Sequence[Sequence[str]],
    vocab: Vocabulary,
    dim: int,
    window: int = 5,
    seed: int = 0,
) -> EmbeddingTable:
    """Count-based distributional vectors: positive PMI co-occurrence matrix
    factored by truncated SVD.

    A lightweight stand-in for an external embedding trainer; the result can
    be written with save_word2vec_text and consumed like any pretrained file.
    Words sharing contexts land close together, which is what downstream
    taggers benefit from. Rows are rescaled to roughly match the spread of
    uniform [-1, 1] initialization.
    """
    size = len(vocab)
    counts = np.zeros((size, size))
    occur = np.zeros(size)
    for tokens in token_lists:
        row_ids = [vocab.id(normalize_word(t)) for t in tokens]
        for i, wid in enumerate(row_ids):
            occur[wid] += 1
            for j in range(max(0, i - window), min(len(row_ids), i + window + 1)):
                if j != i:
                    counts[wid, row_ids[j]] += 1
    total = counts.sum()
    if total == 0:
        return init_random(vocab, dim, seed)
    row_sum = counts.sum(axis=1, keepdims=True)
    col_sum = counts.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / (row_sum * col_sum))
    pmi[~np.isfinite(pmi)] = 0.0
    pmi[pmi < 0] = 0.0
    u, s, _ = np.linalg.svd(pmi, full_matrices=False)
    k = min(dim, u.shape[1])
    vectors = u[:, :k] * np.sqrt(s[:k])
    if k < dim:
        vectors = np.hstack([vectors, np.zeros((size, dim - k))])
    rms = np.sqrt(np.mean(vectors**2))
    if rms > 0:
        vectors = vectors * (0.5 / rms)
    table = init_random(vocab, dim, seed)
    seen = occur > 0
    table.vectors[seen] = vectors[seen]
    table.vectors[vocab.pad_id] = 0.0
    if seen.any():
        table.vectors[vocab.unk_id] = vectors[seen].mean(axis=0)
    return table
