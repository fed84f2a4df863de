"""Elman recurrent network for sequence tagging.

The network reads a concatenated context window of embeddings at each
position, keeps a recurrent hidden state, and emits a per-position
distribution over tags:

    h(t) = logistic(U x(t) + V h(t-1))
    y(t) = softmax(W h(t))

Training is plain gradient descent with one sentence per batch and exact
(untruncated) backpropagation through the sentence, updating U, V, W, the
initial state h0, and every embedding row that appeared in a context window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import O_TAG, encode_iob2, make_tag, repair_span_classes
from .embeddings import EmbeddingTable, Vocabulary, normalize_word, window_ids


class TrainingDiverged(Exception):
    pass


def logistic(x):
    """1 / (1 + e^-x), evaluated stably for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softmax(v: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax over the last axis."""
    v = np.asarray(v, dtype=float)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Hyperparams:
    hidden: int
    c: int
    lr: float
    epochs: int
    seed: int
    dim: Optional[int] = None
    pad: Optional[int] = None


@dataclass
class RnnModel:
    table: EmbeddingTable
    U: np.ndarray  # hidden x (2c+1)*dim
    V: np.ndarray  # hidden x hidden
    W: np.ndarray  # labels x hidden
    h0: np.ndarray  # hidden
    c: int
    labels: tuple

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    def copy(self) -> "RnnModel":
        return RnnModel(
            self.table.copy(), self.U.copy(), self.V.copy(), self.W.copy(),
            self.h0.copy(), self.c, self.labels,
        )


def init_model(
    table: EmbeddingTable, hidden: int, c: int, labels: Sequence[str], seed: int
) -> RnnModel:
    """Weight matrices start uniform in [-0.1, 0.1] scaled by 1/sqrt(fan-in);
    h0 starts at zero."""
    rng = np.random.default_rng(seed)
    m = (2 * c + 1) * table.dim

    def uniform(rows, cols, fan_in):
        scale = 0.1 / np.sqrt(fan_in)
        return rng.uniform(-scale, scale, size=(rows, cols))

    return RnnModel(
        table=table,
        U=uniform(hidden, m, m),
        V=uniform(hidden, hidden, hidden),
        W=uniform(len(labels), hidden, hidden),
        h0=np.zeros(hidden),
        c=c,
        labels=tuple(labels),
    )


def forward(model: RnnModel, ids: Sequence[int]):
    """Run the network over a sequence of token ids.

    Returns (hidden_states, distributions): T x hidden and T x labels arrays.
    Each distribution row sums to 1.
    """
    if len(ids) == 0:
        raise ValueError("empty sequence")
    wins = window_ids(ids, model.c, model.table.vocab.pad_id)
    X = model.table.vectors[wins.reshape(-1)].reshape(len(ids), -1)
    return _forward_from_inputs(model, X)


def _forward_from_inputs(model: RnnModel, X: np.ndarray):
    UX = X @ model.U.T
    T = X.shape[0]
    H = np.empty((T, model.hidden))
    h_prev = model.h0
    for t in range(T):
        H[t] = logistic(UX[t] + model.V @ h_prev)
        h_prev = H[t]
    Y = softmax(H @ model.W.T)
    return H, Y


def sequence_loss(dist: np.ndarray, gold: Sequence[int]) -> float:
    """Sum over positions of -log p(gold tag)."""
    if len(dist) != len(gold):
        raise ValueError("distribution/gold length mismatch")
    gold = np.asarray(gold)
    if gold.min() < 0 or gold.max() >= dist.shape[1]:
        raise ValueError("gold label index out of range")
    return float(-np.log(dist[np.arange(len(gold)), gold]).sum())


@dataclass
class Gradients:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    h0: np.ndarray
    emb_rows: dict  # embedding row id -> gradient vector
    loss: float


def bptt_gradients(model: RnnModel, ids: Sequence[int], gold: Sequence[int]) -> Gradients:
    """Exact gradients of sequence_loss for one sentence.

    Backpropagation runs through the full sentence with no truncation; the
    returned embedding gradients cover exactly the rows that appeared in some
    context window (including the PAD row at sequence edges).
    """
    wins = window_ids(ids, model.c, model.table.vocab.pad_id)
    T = len(ids)
    n = model.table.dim
    X = model.table.vectors[wins.reshape(-1)].reshape(T, -1)
    H, Y = _forward_from_inputs(model, X)
    loss = sequence_loss(Y, gold)

    dS = Y.copy()
    dS[np.arange(T), np.asarray(gold)] -= 1.0
    dW = dS.T @ H
    dH_direct = dS @ model.W

    dA = np.empty_like(H)
    carried = np.zeros(model.hidden)
    for t in range(T - 1, -1, -1):
        dh = dH_direct[t] + carried
        dA[t] = dh * H[t] * (1.0 - H[t])
        carried = model.V.T @ dA[t]
    dh0 = carried  # V^T dA[0]

    dU = dA.T @ X
    H_prev = np.vstack([model.h0, H[:-1]])
    dV = dA.T @ H_prev
    dX = dA @ model.U

    flat_ids = wins.reshape(-1)
    flat_grads = dX.reshape(-1, n)
    uniq, inverse = np.unique(flat_ids, return_inverse=True)
    acc = np.zeros((len(uniq), n))
    np.add.at(acc, inverse, flat_grads)
    emb_rows = {int(row_id): acc[k] for k, row_id in enumerate(uniq)}

    return Gradients(U=dU, V=dV, W=dW, h0=dh0, emb_rows=emb_rows, loss=loss)


@dataclass
class TrainLog:
    epoch_losses: list = field(default_factory=list)
    eval_scores: list = field(default_factory=list)
    best_epoch: Optional[int] = None


def train(
    model: RnnModel,
    examples: Sequence,
    hp: Hyperparams,
    eval_fn: Optional[Callable[[RnnModel], float]] = None,
    patience: int = 5,
) -> TrainLog:
    """Train in place for hp.epochs epochs of per-sentence gradient steps.

    ``examples`` is a list of (ids, gold_indices) pairs. Sentences are visited
    in a seed-determined shuffled order each epoch. When ``eval_fn`` is given,
    it is called after every epoch and training stops early once the score
    fails to improve for ``patience`` consecutive epochs; the best parameters
    are restored.
    """
    rng = np.random.default_rng(hp.seed)
    log = TrainLog()
    best_score = -np.inf
    best_params = None
    stale = 0
    for epoch in range(hp.epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for idx in order:
            ids, gold = examples[idx]
            g = bptt_gradients(model, ids, gold)
            if not np.isfinite(g.loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            total += g.loss
            step = hp.lr
            model.U -= step * g.U
            model.V -= step * g.V
            model.W -= step * g.W
            model.h0 -= step * g.h0
            for row_id, grad in g.emb_rows.items():
                model.table.vectors[row_id] -= step * grad
        log.epoch_losses.append(total)
        if eval_fn is not None:
            score = eval_fn(model)
            log.eval_scores.append(score)
            if score > best_score:
                best_score = score
                best_params = (
                    model.U.copy(), model.V.copy(), model.W.copy(),
                    model.h0.copy(), model.table.vectors.copy(),
                )
                log.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    break
    if best_params is not None:
        model.U[:], model.V[:], model.W[:] = best_params[0], best_params[1], best_params[2]
        model.h0[:] = best_params[3]
        model.table.vectors[:] = best_params[4]
    return log


def tag(model: RnnModel, ids: Sequence[int], repair: bool = False) -> list:
    """Per-position argmax tags; ties go to the lowest label index.

    ``repair=True`` additionally forces contiguous non-O runs to share one
    class (the tokenizer configuration).
    """
    _, Y = forward(model, ids)
    out = [model.labels[i] for i in Y.argmax(axis=1)]
    if repair:
        out = repair_span_classes(out)
    return out


# ---------------------------------------------------------------------------
# Task plumbing: example builders and presets


def entity_labels(klass: str) -> tuple:
    return (O_TAG, make_tag("B", klass), make_tag("I", klass))


def entity_examples(docs, vocab: Vocabulary, klass: str) -> list:
    """(ids, gold indices) pairs for IOB2 tagging of one entity class."""
    labels = entity_labels(klass)
    index = {lab: i for i, lab in enumerate(labels)}
    out = []
    for doc in docs:
        spans = doc.spans_of(klass)
        for sent in doc.sentences:
            inside = [s for s in spans if s.begin >= sent.begin and s.end <= sent.end]
            tags = encode_iob2(inside, sent.tokens)
            ids = [vocab.id(normalize_word(t.surface)) for t in sent.tokens]
            out.append((ids, [index[t] for t in tags]))
    return out


def pos_label_set(docs) -> tuple:
    tags = sorted({p for doc in docs if doc.pos_tags for row in doc.pos_tags for p in row})
    return tuple(tags)


def pos_examples(docs, vocab: Vocabulary, labels: Sequence[str]) -> list:
    index = {lab: i for i, lab in enumerate(labels)}
    out = []
    for doc in docs:
        if doc.pos_tags is None:
            raise ValueError(f"document {doc.id} has no POS annotations")
        for sent, row in zip(doc.sentences, doc.pos_tags):
            ids = [vocab.id(normalize_word(t.surface)) for t in sent.tokens]
            out.append((ids, [index[p] for p in row]))
    return out


CHAR_LABELS = (O_TAG, "B-E", "B-W", "I-E", "I-W")


def char_examples(docs, vocab: Vocabulary, pad: int) -> list:
    """Per-sentence character sequences with neighboring-text padding."""
    from .corpus import char_sequence

    index = {lab: i for i, lab in enumerate(CHAR_LABELS)}
    out = []
    for doc in docs:
        for si in range(len(doc.sentences)):
            chars, tags = char_sequence(doc, si, pad)
            out.append(([vocab.id(ch) for ch in chars], [index[t] for t in tags]))
    return out


def preset_config(task: str, dim: int = 100) -> Hyperparams:
    """Published tagger configurations.

    tokenizer: 16-d character embeddings, 11-character window (c=5), 5
    characters of sentence padding. pos/timex3/event: c=2, learning rate
    0.01, 80 hidden units for 100-d embeddings and 256 for 300-d.
    """
    if task == "tokenizer":
        return Hyperparams(hidden=80, c=5, lr=0.1, epochs=10, seed=0, dim=16, pad=5)
    if task not in ("pos", "timex3", "event"):
        raise ValueError(f"unknown preset task {task!r}")
    if dim not in (100, 300):
        raise ValueError("word tagger presets define dim 100 or 300")
    hidden = 80 if dim == 100 else 256
    return Hyperparams(hidden=hidden, c=2, lr=0.01, epochs=10, seed=0, dim=dim)


@dataclass(frozen=True)
class SearchSpace:
    """Randomized-search ranges. Integer ranges are inclusive."""

    hidden: tuple = (48, 384)
    c: tuple = (2, 6)
    lr: tuple = (0.001, 0.01, 0.1, 0.25)
    dim: Optional[tuple] = None  # char models: (16, 32)
    pad: Optional[tuple] = None  # char models: (0, 5)
    epochs: int = 5


def char_search_space() -> SearchSpace:
    return SearchSpace(dim=(16, 32), pad=(0, 5))


def random_grid_search(
    space: SearchSpace,
    budget: int,
    eval_fn: Callable[[Hyperparams], float],
    seed: int,
):
    """Sample ``budget`` configurations uniformly, score each with eval_fn
    (which trains and evaluates on its own split), and return the best
    (Hyperparams, score). Ties keep the earlier sample."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    best_hp, best_score = None, -np.inf
    for _ in range(budget):
        hp = Hyperparams(
            hidden=int(rng.integers(space.hidden[0], space.hidden[1] + 1)),
            c=int(rng.integers(space.c[0], space.c[1] + 1)),
            lr=float(space.lr[int(rng.integers(len(space.lr)))]),
            epochs=space.epochs,
            seed=int(rng.integers(0, 2**31 - 1)),
            dim=int(space.dim[int(rng.integers(len(space.dim)))]) if space.dim else None,
            pad=int(rng.integers(space.pad[0], space.pad[1] + 1)) if space.pad else None,
        )
        score = eval_fn(hp)
        if score > best_score:
            best_hp, best_score = hp, score
    return best_hp, best_score


# ---------------------------------------------------------------------------
# Serialization: one self-describing JSON file, float64-exact via repr


def save_model(model: RnnModel, path: str):
    from .corpus import _atomic_write

    obj = {
        "kind": "rnn",
        "labels": list(model.labels),
        "c": model.c,
        "dim": model.table.dim,
        "vocab": model.table.vocab.items(),
        "U": model.U.tolist(),
        "V": model.V.tolist(),
        "W": model.W.tolist(),
        "h0": model.h0.tolist(),
        "embeddings": model.table.vectors.tolist(),
    }
    _atomic_write(path, json.dumps(obj, sort_keys=True) + "\n")


def load_model(path: str) -> RnnModel:
    with open(path, "r", encoding="utf-8") as handle:
        obj = json.load(handle)
    if obj.get("kind") != "rnn":
        raise ValueError(f"{path} is not a tagger model file")
    vocab = Vocabulary({w: i for i, w in enumerate(obj["vocab"])})
    table = EmbeddingTable(vocab, np.array(obj["embeddings"], dtype=float))
    return RnnModel(
        table=table,
        U=np.array(obj["U"], dtype=float),
        V=np.array(obj["V"], dtype=float),
        W=np.array(obj["W"], dtype=float),
        h0=np.array(obj["h0"], dtype=float),
        c=int(obj["c"]),
        labels=tuple(obj["labels"]),
    )
