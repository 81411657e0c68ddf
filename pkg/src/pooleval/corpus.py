"""Documents, segmentation strategies and chunk dumps.

Three strategies are supported, all built on markdown heading sections:

* ``nmns``: one chunk per heading section, nothing else.
* ``nms``: sections, then long sections are split.
* ``original``: sections, adjacent small same-level sections merged, then split.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .text import SENTENCE_TERMINATORS

STRATEGIES = ("original", "nms", "nmns")
MERGE_SEPARATOR = "\n"
DEFAULT_MIN_MERGE_LEN = 100
DEFAULT_MAX_CHUNK_LEN = 500

_HEADING_RE = re.compile(r"^(#{1,6})[ \t]+(.*?)[ \t#]*$")


@dataclass
class Document:
    id: str
    body: str
    title: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        md = {"engagement_count": 0, "poi_count": 0, "quality_ok": True}
        md.update(self.metadata)
        if "length_chars" in md and md["length_chars"] != len(self.body):
            raise ValueError(
                f"document {self.id}: length_chars={md['length_chars']} but body has {len(self.body)} chars"
            )
        md["length_chars"] = len(self.body)
        if md["engagement_count"] < 0 or md["poi_count"] < 0:
            raise ValueError(f"document {self.id}: negative engagement/poi count")
        self.metadata = md

    @property
    def title_path(self) -> list[tuple[int, str]]:
        return [(level, title) for level, title, _, _ in _heading_lines(self.body)]

    def to_record(self) -> dict:
        return {"id": self.id, "title": self.title, "body": self.body, "metadata": self.metadata}

    @classmethod
    def from_record(cls, rec: dict) -> "Document":
        return cls(id=str(rec["id"]), body=rec["body"], title=rec.get("title", ""),
                   metadata=dict(rec.get("metadata", {})))


@dataclass(frozen=True)
class SegmentationSpec:
    strategy: str = "original"
    min_merge_len: int = DEFAULT_MIN_MERGE_LEN
    max_chunk_len: int = DEFAULT_MAX_CHUNK_LEN

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown segmentation strategy {self.strategy!r}")
        if not 0 < self.min_merge_len < self.max_chunk_len:
            raise ValueError("need 0 < min_merge_len < max_chunk_len")

    @property
    def id(self) -> str:
        return f"{self.strategy}-{self.min_merge_len}-{self.max_chunk_len}"


@dataclass(frozen=True)
class Chunk:
    """A span of a document body.

    ``parts`` lists the body intervals the text was taken from. It has one
    entry except for merged chunks, whose text joins the parts with
    ``MERGE_SEPARATOR``; ``start``/``end`` is then the covering interval.
    """

    id: str
    doc_id: str
    start: int
    end: int
    text: str
    heading_level: int
    strategy_id: str
    parts: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.parts:
            object.__setattr__(self, "parts", ((self.start, self.end),))
        if not self.text:
            raise ValueError(f"chunk {self.id} is empty")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "start": self.start,
            "end": self.end,
            "strategy_id": self.strategy_id,
            "heading_level": self.heading_level,
            "parts": [list(p) for p in self.parts],
        }


def _heading_lines(body: str) -> Iterator[tuple[int, str, int, int]]:
    """Yield (level, title, line_start, line_end_incl_newline) per heading line."""
    pos = 0
    for line in body.splitlines(keepends=True):
        m = _HEADING_RE.match(line.rstrip("\r\n"))
        if m:
            yield len(m.group(1)), m.group(2).strip(), pos, pos + len(line)
        pos += len(line)


def _trim(body: str, start: int, end: int) -> tuple[int, int]:
    while start < end and body[start].isspace():
        start += 1
    while end > start and body[end - 1].isspace():
        end -= 1
    return start, end


def heading_sections(doc: Document, strategy_id: str = "sections") -> list[Chunk]:
    """One chunk per heading section; text before the first heading is level 0."""
    body = doc.body
    bounds: list[tuple[int, int, int]] = []  # (level, content_start, content_end)
    level, start = 0, 0
    for h_level, _, line_start, line_end in _heading_lines(body):
        bounds.append((level, start, line_start))
        level, start = h_level, line_end
    bounds.append((level, start, len(body)))

    chunks = []
    for level, s, e in bounds:
        s, e = _trim(body, s, e)
        if s < e:
            chunks.append(Chunk(
                id=f"{doc.id}/{strategy_id}/{len(chunks):04d}", doc_id=doc.id, start=s, end=e,
                text=body[s:e], heading_level=level, strategy_id=strategy_id,
            ))
    return chunks


def merge_small_chunks(chunks: Sequence[Chunk], min_merge_len: int) -> list[Chunk]:
    """Merge each chunk shorter than ``min_merge_len`` into its same-level successor.

    A single left-to-right pass reaches the fixed point: a merged chunk keeps
    absorbing successors while it stays short, and nothing before it can
    become mergeable.
    """
    out: list[Chunk] = []
    i = 0
    chunks = list(chunks)
    while i < len(chunks):
        cur = chunks[i]
        i += 1
        while (len(cur.text) < min_merge_len and i < len(chunks)
               and chunks[i].heading_level == cur.heading_level):
            nxt = chunks[i]
            cur = Chunk(
                id=cur.id, doc_id=cur.doc_id, start=cur.start, end=nxt.end,
                text=cur.text + MERGE_SEPARATOR + nxt.text, heading_level=cur.heading_level,
                strategy_id=cur.strategy_id, parts=cur.parts + nxt.parts,
            )
            i += 1
        out.append(cur)
    return out


def _find_cut(text: str, start: int, limit: int) -> int:
    """Cut position in (start, limit]: after a terminator, else before whitespace, else hard."""
    for p in range(limit, start, -1):
        if text[p - 1] in SENTENCE_TERMINATORS:
            return p
    for p in range(limit, start, -1):
        if p < len(text) and text[p].isspace():
            return p
    return limit


def split_long_chunk(chunk: Chunk, max_chunk_len: int) -> list[Chunk]:
    """Secondary segmentation; pieces concatenate back to ``chunk.text``.

    For merged chunks a synthetic separator that lands on a piece edge is
    dropped, since it has no body position.
    """
    if max_chunk_len <= 0:
        raise ValueError("max_chunk_len must be positive")
    text = chunk.text
    if len(text) <= max_chunk_len:
        return [chunk]

    offsets: list[int] = []
    for j, (s, e) in enumerate(chunk.parts):
        if j:
            offsets.append(-1)
        offsets.extend(range(s, e))

    cuts, pos = [0], 0
    while len(text) - pos > max_chunk_len:
        pos = _find_cut(text, pos, pos + max_chunk_len)
        cuts.append(pos)
        # a separator opening the next piece is dropped, so it does not count toward its length
        if pos < len(text) and offsets[pos] < 0:
            pos += 1
    cuts.append(len(text))

    pieces = []
    for a, b in zip(cuts, cuts[1:]):
        while a < b and offsets[a] < 0:
            a += 1
        while b > a and offsets[b - 1] < 0:
            b -= 1
        if a == b:
            continue
        parts, run_start = [], offsets[a]
        for i in range(a + 1, b):
            if offsets[i] < 0:
                parts.append((run_start, offsets[i - 1] + 1))
            elif offsets[i - 1] < 0:
                run_start = offsets[i]
        parts.append((run_start, offsets[b - 1] + 1))
        pieces.append(Chunk(
            id=f"{chunk.id}.{len(pieces)}", doc_id=chunk.doc_id, start=parts[0][0],
            end=parts[-1][1], text=text[a:b], heading_level=chunk.heading_level,
            strategy_id=chunk.strategy_id, parts=tuple(parts),
        ))
    return pieces


def segment_document(doc: Document, spec: SegmentationSpec) -> list[Chunk]:
    if not doc.body:
        raise ValueError("empty document")
    sid = spec.id
    chunks = heading_sections(doc, sid)
    if spec.strategy == "original":
        chunks = merge_small_chunks(chunks, spec.min_merge_len)
    if spec.strategy in ("original", "nms"):
        chunks = [piece for c in chunks for piece in split_long_chunk(c, spec.max_chunk_len)]
    return [
        Chunk(id=f"{doc.id}/{sid}/{i:04d}", doc_id=c.doc_id, start=c.start, end=c.end, text=c.text,
              heading_level=c.heading_level, strategy_id=sid, parts=c.parts)
        for i, c in enumerate(chunks)
    ]


def segment_corpus(docs: Iterable[Document], spec: SegmentationSpec) -> list[Chunk]:
    return [c for d in docs for c in segment_document(d, spec)]


class PoiPercentiles:
    """Corpus-wide POI-count quantiles, fixed at ingest time."""

    def __init__(self, poi_counts: Iterable[int]):
        self.counts = np.sort(np.asarray(list(poi_counts), dtype=float))

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> "PoiPercentiles":
        return cls(d.metadata["poi_count"] for d in docs)

    def threshold(self, fraction: float) -> float:
        if not 0 < fraction < 1:
            raise ValueError("percentile fraction must be in (0, 1)")
        if self.counts.size == 0:
            return float("-inf")
        return float(np.quantile(self.counts, fraction))


def load_corpus(path: str | Path) -> list[Document]:
    docs, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            doc = Document.from_record(json.loads(line))
            if doc.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate document id {doc.id!r}")
            seen.add(doc.id)
            docs.append(doc)
    return docs


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def dump_corpus(path: str | Path, docs: Iterable[Document]) -> None:
    write_jsonl(path, (d.to_record() for d in docs))


def dump_chunks(path: str | Path, chunks: Iterable[Chunk]) -> None:
    write_jsonl(path, (c.to_record() for c in chunks))


@dataclass(frozen=True)
class PlantedFact:
    """A known-relevant sentence carrying a unique marker token (synthetic corpora only)."""

    token: str
    sentence: str


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    facts: tuple[PlantedFact, ...] = ()

    def to_record(self) -> dict:
        rec = {"id": self.id, "text": self.text}
        if self.facts:
            rec["facts"] = [{"token": f.token, "sentence": f.sentence} for f in self.facts]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Query":
        facts = tuple(PlantedFact(f["token"], f["sentence"]) for f in rec.get("facts", ()))
        return cls(str(rec["id"]), rec["text"], facts)


def load_queries(path: str | Path) -> list[Query]:
    return [Query.from_record(r) for r in read_jsonl(path)]
