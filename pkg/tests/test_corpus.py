import json
import re

import pytest

from pooleval.corpus import (MERGE_SEPARATOR, Chunk, Document, PoiPercentiles, SegmentationSpec, heading_sections,
                             load_corpus, merge_small_chunks, segment_document, split_long_chunk)
from pooleval.text import normalize, normalize_with_map, tokenize


def chunk(text, level=2, cid="c", start=0):
    return Chunk(cid, "d", start, start + len(text), text, level, "t")


def words(n, seed=0):
    # space separated pseudo words, no sentence terminators
    base = "lorem ipsum dolor sit amet consectetur adipiscing elit sed do".split()
    out = []
    while len(" ".join(out)) < n:
        out.append(base[(len(out) + seed) % len(base)])
    return " ".join(out)[:n]


def test_tokenize_keeps_hyphenated_tokens():
    assert tokenize("See FACT-q3-1, now!") == ["see", "fact-q3-1", "now"]


def test_normalize_rules():
    assert normalize("  Refund   within 7 days. ") == "refund within 7 days"
    assert normalize("Refund within 7 days") == normalize("refund within 7 days.")


def test_normalize_with_map_points_back():
    text = "A  B\n\tC İx"
    norm, idx = normalize_with_map(text)
    assert len(norm) == len(idx)
    for ch, i in zip(norm, idx):
        assert ch == " " or ch in text[i].lower()


def test_document_metadata_defaults_and_length():
    d = Document("d1", "hello")
    assert d.metadata["length_chars"] == 5
    assert d.metadata["quality_ok"] is True
    with pytest.raises(ValueError):
        Document("d2", "hello", metadata={"length_chars": 4})
    with pytest.raises(ValueError):
        Document("d3", "x", metadata={"poi_count": -1})


def test_segmentation_spec_validation():
    with pytest.raises(ValueError):
        SegmentationSpec("original", 500, 100)
    with pytest.raises(ValueError):
        SegmentationSpec("weird")
    assert SegmentationSpec().id == "original-100-500"


def test_two_h1_sections_nmns():
    doc = Document("d", "# One\n\nfirst section body.\n\n# Two\n\nsecond section body.\n")
    chunks = segment_document(doc, SegmentationSpec("nmns"))
    assert [c.text for c in chunks] == ["first section body.", "second section body."]


def test_merge_example_from_document():
    a, b = "a" * 30, "b" * 40
    doc = Document("d", f"## A\n{a}\n## B\n{b}\n")
    chunks = segment_document(doc, SegmentationSpec("original", 100, 500))
    assert len(chunks) == 1
    assert chunks[0].text == a + MERGE_SEPARATOR + b
    assert len(chunks[0].text) == 71
    assert chunks[0].parts == ((doc.body.index(a), doc.body.index(a) + 30), (doc.body.index(b), doc.body.index(b) + 40))


def test_merge_rules():
    merged = merge_small_chunks([chunk("a" * 30), chunk("b" * 40, start=40)], 100)
    assert len(merged) == 1 and len(merged[0].text) == 71
    mixed = [chunk("a" * 30, level=1), chunk("b" * 40, start=40)]
    assert merge_small_chunks(mixed, 100) == mixed
    big = [chunk("a" * 200), chunk("b" * 300, start=210)]
    assert merge_small_chunks(big, 100) == big


def test_merge_reaches_fixed_point():
    parts = [chunk(c * 20, start=30 * i) for i, c in enumerate("abcdefg")]
    merged = merge_small_chunks(parts, 100)
    assert merge_small_chunks(merged, 100) == merged
    assert [len(c.text) for c in merged] == [104, 41]


def test_split_identity_and_sizes():
    c = chunk(words(400))
    assert split_long_chunk(c, 500) == [c]
    long = chunk(words(1200))
    pieces = split_long_chunk(long, 500)
    assert len(pieces) == 3
    assert all(len(p.text) <= 500 for p in pieces)
    assert "".join(p.text for p in pieces) == long.text


def _reference_last_boundary(text, limit):
    # last sentence terminator at or before the limit, scanning the whole prefix
    ends = [m.end() for m in re.finditer(r"[.!?。！？]", text[:limit])]
    return ends[-1] if ends else None


def test_split_prefers_sentence_boundary_501():
    text = "x" * 479 + "." + "y" * 21
    assert len(text) == 501
    assert _reference_last_boundary(text, 500) == 480
    pieces = split_long_chunk(chunk(text), 500)
    assert [len(p.text) for p in pieces] == [480, 21]


def test_split_falls_back_to_whitespace_then_hard_cut():
    text = "a" * 300 + " " + "b" * 300
    pieces = split_long_chunk(chunk(text), 500)
    assert [len(p.text) for p in pieces] == [300, 301]
    hard = split_long_chunk(chunk("z" * 1001), 500)
    assert [len(p.text) for p in hard] == [500, 500, 1]


def test_split_of_merged_chunk_tracks_parts():
    a, b = "a" * 60, "b. " * 200
    body = f"## A\n{a}\n## B\n{b.strip()}\n"
    doc = Document("d", body)
    for c in segment_document(doc, SegmentationSpec("original", 100, 250)):
        assert c.text == MERGE_SEPARATOR.join(body[s:e] for s, e in c.parts)


def test_nms_1200_char_section_three_chunks():
    body = "# H\n" + words(1200) + "\n"
    chunks = segment_document(Document("d", body), SegmentationSpec("nms"))
    assert len(chunks) == 3
    assert "".join(c.text for c in chunks) == body[4:].strip()


def test_empty_document_rejected():
    with pytest.raises(ValueError, match="empty document"):
        segment_document(Document("d", ""), SegmentationSpec())


def test_preamble_is_level_zero():
    chunks = heading_sections(Document("d", "intro text\n# H\nbody"))
    assert [(c.heading_level, c.text) for c in chunks] == [(0, "intro text"), (1, "body")]


def test_chunk_dump_records(small_synth):
    c = segment_document(small_synth.documents[0], SegmentationSpec())[0]
    rec = c.to_record()
    assert set(rec) == {"id", "doc_id", "start", "end", "strategy_id", "heading_level", "parts"}


def test_poi_percentiles_quantile():
    stats = PoiPercentiles([0, 1, 2, 3, 4])
    assert stats.threshold(0.25) == 1.0
    with pytest.raises(ValueError):
        stats.threshold(1.0)


def test_load_corpus_duplicate_ids(tmp_path):
    p = tmp_path / "c.jsonl"
    rec = {"id": "a", "body": "x"}
    p.write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(ValueError):
        load_corpus(p)


def test_sentence_cuts_can_give_original_more_chunks_than_nms():
    # Count order original <= nms holds for fixed-width cuts (see the property tests) but not
    # in general: the early sentence boundary in the merged text forces one extra piece.
    doc = Document("d", "# A\n\nOk. Go\n\n# B\n\nabcdefghij\n")
    orig = segment_document(doc, SegmentationSpec("original", 7, 10))
    nms = segment_document(doc, SegmentationSpec("nms", 7, 10))
    assert [c.text for c in nms] == ["Ok. Go", "abcdefghij"]
    assert [c.text for c in orig] == ["Ok.", " Go", "abcdefghij"]
