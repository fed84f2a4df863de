"""Document model, IOB2 span codec, and corpus file I/O.

Offsets are 0-based character positions into the owning document's text;
``begin`` is inclusive and ``end`` exclusive throughout.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Iterator, Optional, Sequence

O_TAG = "O"


class CorpusError(Exception):
    """A document or corpus file violates an invariant."""


class AlignmentError(CorpusError):
    """A span boundary does not line up with token boundaries."""


class ParseError(CorpusError):
    """A corpus file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DocRelTime(Enum):
    """Relation of an entity to its document's creation time.

    Member order is the fixed tie-break order used wherever a majority vote
    over labels can tie.
    """

    BEFORE = "Before"
    OVERLAP = "Overlap"
    BEFORE_OVERLAP = "Before/Overlap"
    AFTER = "After"

    @classmethod
    def from_value(cls, value: str) -> "DocRelTime":
        for member in cls:
            if member.value == value:
                return member
        raise CorpusError(f"unknown DocRelTime label {value!r}")


@dataclass(frozen=True)
class Token:
    surface: str
    begin: int
    end: int

    def __post_init__(self):
        if self.begin >= self.end:
            raise CorpusError(f"token [{self.begin},{self.end}) is empty or reversed")
        if len(self.surface) != self.end - self.begin:
            raise CorpusError(
                f"token surface {self.surface!r} does not cover [{self.begin},{self.end})"
            )


@dataclass(frozen=True)
class Sentence:
    tokens: tuple

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError("empty sentence")
        prev_end = -1
        for tok in self.tokens:
            if tok.begin < prev_end:
                raise CorpusError(f"tokens overlap or are unsorted at offset {tok.begin}")
            prev_end = tok.end

    @property
    def begin(self) -> int:
        return self.tokens[0].begin

    @property
    def end(self) -> int:
        return self.tokens[-1].end


@dataclass(frozen=True)
class Span:
    """A labeled character range. ``docreltime`` holds the gold creation-time
    relation for EVENT spans where known."""

    begin: int
    end: int
    klass: str
    docreltime: Optional[DocRelTime] = None

    def __post_init__(self):
        if self.begin >= self.end:
            raise CorpusError(f"span [{self.begin},{self.end}) is empty or reversed")

    def overlaps(self, other: "Span") -> bool:
        return self.begin < other.end and other.begin < self.end


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    sentences: tuple
    doctime: date
    revisions: tuple = ()
    pos_tags: Optional[tuple] = None
    gold_spans: tuple = ()

    def validate(self) -> "Document":
        prev_end = -1
        for sent in self.sentences:
            if sent.begin < prev_end:
                raise CorpusError(f"{self.id}: sentences out of order at {sent.begin}")
            prev_end = sent.end
            for tok in sent.tokens:
                if tok.end > len(self.text):
                    raise CorpusError(f"{self.id}: token ends past text at {tok.end}")
                if self.text[tok.begin : tok.end] != tok.surface:
                    raise CorpusError(
                        f"{self.id}: token {tok.surface!r} does not match text slice "
                        f"[{tok.begin},{tok.end})"
                    )
        for rev in self.revisions:
            if rev < self.doctime:
                raise CorpusError(f"{self.id}: revision {rev} precedes doctime {self.doctime}")
        if self.pos_tags is not None:
            if len(self.pos_tags) != len(self.sentences):
                raise CorpusError(f"{self.id}: pos_tags misaligned with sentences")
            for tags, sent in zip(self.pos_tags, self.sentences):
                if len(tags) != len(sent.tokens):
                    raise CorpusError(f"{self.id}: pos_tags misaligned with tokens")
        by_klass = {}
        for span in self.gold_spans:
            if span.end > len(self.text):
                raise CorpusError(f"{self.id}: span ends past text at {span.end}")
            for other in by_klass.setdefault(span.klass, []):
                if span.overlaps(other):
                    raise CorpusError(
                        f"{self.id}: overlapping {span.klass} spans at {span.begin}"
                    )
            by_klass[span.klass].append(span)
        return self

    def tokens(self) -> Iterator[Token]:
        for sent in self.sentences:
            yield from sent.tokens

    def spans_of(self, klass: str) -> list:
        return [s for s in self.gold_spans if s.klass == klass]


# ---------------------------------------------------------------------------
# IOB2 codec


def make_tag(prefix: str, klass: Optional[str] = None) -> str:
    if prefix == O_TAG:
        return O_TAG
    return f"{prefix}-{klass}"


def split_tag(tag: str):
    """Return (prefix, klass); klass is None for O."""
    if tag == O_TAG:
        return O_TAG, None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise CorpusError(f"malformed IOB2 tag {tag!r}")


def span_token_range(span: Span, units: Sequence[Token]):
    """Index range [i, j] of the units exactly covered by ``span``.

    Raises AlignmentError when the span boundaries fall inside units or in
    gaps between them.
    """
    first = last = None
    for i, tok in enumerate(units):
        if tok.begin == span.begin:
            first = i
        if tok.end == span.end:
            last = i
    if first is None or last is None or first > last:
        raise AlignmentError(
            f"span [{span.begin},{span.end}) of class {span.klass} does not align "
            f"with token boundaries"
        )
    return first, last


def encode_iob2(spans: Sequence[Span], units: Sequence[Token]) -> list:
    """Encode non-overlapping, token-aligned spans as one IOB2 tag per unit."""
    tags = [O_TAG] * len(units)
    for span in spans:
        first, last = span_token_range(span, units)
        for i in range(first, last + 1):
            if tags[i] != O_TAG:
                raise AlignmentError(
                    f"span [{span.begin},{span.end}) overlaps an earlier span"
                )
            tags[i] = make_tag("I", span.klass)
        tags[first] = make_tag("B", span.klass)
    return tags


def decode_iob2(tags: Sequence[str], units: Sequence[Token]) -> list:
    """Decode IOB2 tags back to spans.

    An I tag with no preceding B/I of the same class starts a new span, so any
    tag sequence decodes to a valid span set.
    """
    if len(tags) != len(units):
        raise CorpusError(f"{len(tags)} tags for {len(units)} units")
    spans = []
    open_klass = None
    open_first = None

    def close(upto):
        if open_klass is not None:
            spans.append(Span(units[open_first].begin, units[upto].end, open_klass))

    for i, tag in enumerate(tags):
        prefix, klass = split_tag(tag)
        if prefix == O_TAG:
            close(i - 1)
            open_klass = None
        elif prefix == "B" or klass != open_klass:
            close(i - 1)
            open_klass, open_first = klass, i
    close(len(tags) - 1)
    return spans


def repair_span_classes(tags: Sequence[str]) -> list:
    """Force every maximal contiguous non-O run to carry one class.

    The class is chosen by majority vote over the run; ties go to the class of
    the run's first tag. The first tag of the run becomes B, the rest I.
    Idempotent, and never changes which positions are O.
    """
    out = list(tags)
    i = 0
    while i < len(out):
        if out[i] == O_TAG:
            i += 1
            continue
        j = i
        while j < len(out) and out[j] != O_TAG:
            j += 1
        klasses = [split_tag(t)[1] for t in out[i:j]]
        counts = {}
        for k in klasses:
            counts[k] = counts.get(k, 0) + 1
        best = max(counts.values())
        winner = klasses[0] if counts[klasses[0]] == best else next(
            k for k in klasses if counts[k] == best
        )
        out[i] = make_tag("B", winner)
        for p in range(i + 1, j):
            out[p] = make_tag("I", winner)
        i = j
    return out


def normalize_orphans(tags: Sequence[str]) -> list:
    """Rewrite orphan I tags as B so the sequence is a valid IOB2 encoding.

    Tag-level counterpart of the repair performed by decode_iob2; identity on
    already-valid sequences.
    """
    out = list(tags)
    prev_klass = None
    for i, tag in enumerate(out):
        prefix, klass = split_tag(tag)
        if prefix == "I" and klass != prev_klass:
            out[i] = make_tag("B", klass)
        prev_klass = klass if prefix != O_TAG else None
    return out


# ---------------------------------------------------------------------------
# Character-level view for the tokenizer task

WORD_KLASS = "W"
END_KLASS = "E"


def char_tags_for_range(doc: Document, begin: int, end: int) -> list:
    """IOB2 tags over characters in [begin, end): tokens become W spans,
    sentence-final tokens E spans, everything else O."""
    tags = [O_TAG] * (end - begin)
    for sent in doc.sentences:
        last = len(sent.tokens) - 1
        for idx, tok in enumerate(sent.tokens):
            if tok.end <= begin or tok.begin >= end:
                continue
            klass = END_KLASS if idx == last else WORD_KLASS
            for pos in range(max(tok.begin, begin), min(tok.end, end)):
                prefix = "B" if pos == tok.begin else "I"
                tags[pos - begin] = make_tag(prefix, klass)
    return tags


def char_sequence(doc: Document, sentence_index: int, pad: int):
    """Characters of one sentence padded with up to ``pad`` characters of
    neighboring document text on each side, plus gold character tags.

    Returns (chars, tags). At document edges fewer padding characters are
    available and only those are used.
    """
    if pad < 0:
        raise ValueError("pad must be >= 0")
    sent = doc.sentences[sentence_index]
    begin = max(0, sent.begin - pad)
    end = min(len(doc.text), sent.end + pad)
    return doc.text[begin:end], char_tags_for_range(doc, begin, end)


def char_document(doc: Document):
    """Whole-document character stream and gold tags, for tagging a document
    as one long sequence."""
    return doc.text, char_tags_for_range(doc, 0, len(doc.text))


# ---------------------------------------------------------------------------
# File formats

CONLL_MISSING_POS = "_"


def _atomic_write(path: str, data: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _doc_to_json(doc: Document) -> dict:
    return {
        "id": doc.id,
        "text": doc.text,
        "doctime": doc.doctime.isoformat(),
        "revisions": [r.isoformat() for r in doc.revisions],
        "sentences": [
            [{"surface": t.surface, "begin": t.begin, "end": t.end} for t in sent.tokens]
            for sent in doc.sentences
        ],
        "pos_tags": [list(tags) for tags in doc.pos_tags] if doc.pos_tags else None,
        "gold_spans": [
            {
                "begin": s.begin,
                "end": s.end,
                "klass": s.klass,
                "docreltime": s.docreltime.value if s.docreltime else None,
            }
            for s in doc.gold_spans
        ],
    }


def _doc_from_json(obj: dict) -> Document:
    sentences = tuple(
        Sentence(tuple(Token(t["surface"], t["begin"], t["end"]) for t in sent))
        for sent in obj["sentences"]
    )
    spans = tuple(
        Span(
            s["begin"],
            s["end"],
            s["klass"],
            DocRelTime.from_value(s["docreltime"]) if s.get("docreltime") else None,
        )
        for s in obj["gold_spans"]
    )
    pos = obj.get("pos_tags")
    return Document(
        id=obj["id"],
        text=obj["text"],
        sentences=sentences,
        doctime=date.fromisoformat(obj["doctime"]),
        revisions=tuple(date.fromisoformat(r) for r in obj["revisions"]),
        pos_tags=tuple(tuple(t) for t in pos) if pos else None,
        gold_spans=spans,
    ).validate()


def _docs_to_conll(docs: Sequence[Document]) -> str:
    lines = []
    for doc in docs:
        header = f"#doc {doc.id} {doc.doctime.isoformat()}"
        if doc.revisions:
            header += " " + " ".join(r.isoformat() for r in doc.revisions)
        lines.append(header)
        for si, sent in enumerate(doc.sentences):
            spans = [
                s
                for s in doc.gold_spans
                if s.begin >= sent.begin and s.end <= sent.end
            ]
            tags = encode_iob2(spans, sent.tokens)
            for ti, tok in enumerate(sent.tokens):
                pos = doc.pos_tags[si][ti] if doc.pos_tags else CONLL_MISSING_POS
                lines.append(f"{tok.surface}\t{tok.begin}\t{tok.end}\t{pos}\t{tags[ti]}")
            lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


def _reconstruct_text(rows) -> str:
    """Best-effort text for token rows: surfaces at their offsets, spaces
    between. Lossy only for characters outside every token."""
    length = max((row[2] for row in rows), default=0)
    chars = [" "] * length
    for row in rows:
        surface, begin, end = row[0], row[1], row[2]
        chars[begin:end] = surface
    return "".join(chars)


def _docs_from_conll(content: str) -> list:
    docs = []
    header = None
    rows = []
    sentence_breaks = []

    def flush():
        if header is None:
            if rows:
                raise ParseError("token rows before any #doc header", rows[0][5])
            return
        doc_id, doctime, revisions = header
        text = _reconstruct_text(rows)
        sentences = []
        pos_rows = []
        for group in _grouped(rows, sentence_breaks):
            sentences.append(Sentence(tuple(Token(r[0], r[1], r[2]) for r in group)))
            pos_rows.append(tuple(r[3] for r in group))
        spans = []
        for sent, group in zip(sentences, _grouped(rows, sentence_breaks)):
            tags = [r[4] for r in group]
            spans.extend(decode_iob2(tags, sent.tokens))
        has_pos = any(p != CONLL_MISSING_POS for row in pos_rows for p in row)
        docs.append(
            Document(
                id=doc_id,
                text=text,
                sentences=tuple(sentences),
                doctime=doctime,
                revisions=revisions,
                pos_tags=tuple(pos_rows) if has_pos else None,
                gold_spans=tuple(spans),
            ).validate()
        )

    for lineno, raw in enumerate(content.splitlines(), start=1):
        line = raw.rstrip("\n")
        if line.startswith("#doc"):
            flush()
            parts = line.split()
            if len(parts) < 3:
                raise ParseError("#doc header needs an id and a doctime", lineno)
            try:
                doctime = date.fromisoformat(parts[2])
                revisions = tuple(date.fromisoformat(p) for p in parts[3:])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            header = (parts[1], doctime, revisions)
            rows = []
            sentence_breaks = []
        elif not line.strip():
            if rows and (not sentence_breaks or sentence_breaks[-1] != len(rows)):
                sentence_breaks.append(len(rows))
        else:
            cols = line.split("\t")
            if len(cols) != 5:
                raise ParseError(f"expected 5 tab-separated columns, got {len(cols)}", lineno)
            try:
                begin, end = int(cols[1]), int(cols[2])
            except ValueError:
                raise ParseError("offsets must be integers", lineno) from None
            try:
                split_tag(cols[4])
                rows.append((cols[0], begin, end, cols[3], cols[4], lineno))
            except CorpusError as exc:
                raise ParseError(str(exc), lineno) from None
    flush()
    return docs


def _grouped(rows, breaks):
    start = 0
    for stop in breaks + [len(rows)]:
        group = rows[start:stop]
        start = stop
        if group:
            yield group


def save_corpus(docs: Sequence[Document], path: str, format: str = "json"):
    if format == "json":
        payload = {"documents": [_doc_to_json(d) for d in docs]}
        _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif format == "conll":
        _atomic_write(path, _docs_to_conll(docs))
    else:
        raise ValueError(f"unknown corpus format {format!r}")


def load_corpus(path: str, format: str = "json") -> list:
    with open(path, "r", encoding="utf-8") as handle:
        content = handle.read()
    if format == "json":
        if not content.strip():
            return []
        try:
            payload = json.loads(content)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from None
        return [_doc_from_json(obj) for obj in payload["documents"]]
    if format == "conll":
        return _docs_from_conll(content)
    raise ValueError(f"unknown corpus format {format!r}")
