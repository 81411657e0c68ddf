import math

import numpy as np
import pytest

from pooleval.embedding import EmbedderRegistry, HashingEmbedder, embed
from pooleval.index import BM25Index, DenseIndex, Entry, RankedList, RankedListError


def test_embed_deterministic_and_unit():
    a, b = embed("hash-256", "hotel refund policy"), embed("hash-256", "hotel refund policy")
    assert np.array_equal(a, b)
    assert abs(float(a @ a) - 1.0) < 1e-9


def test_disjoint_buckets_give_zero_cosine():
    emb = HashingEmbedder(256)
    # pick tokens greedily so the two texts share no hash bucket
    used, left, right = set(), [], []
    for i in range(200):
        tok = f"tok{i}"
        b = emb.bucket(tok)
        if b in used:
            continue
        used.add(b)
        (left if len(left) <= len(right) else right).append(tok)
        if len(right) == 5:
            break
    assert not {emb.bucket(t) for t in left} & {emb.bucket(t) for t in right}
    cos = float(emb.embed(" ".join(left)) @ emb.embed(" ".join(right)))
    assert abs(cos) < 1e-9


def test_registry_builds_hash_ids_and_rejects_unknown():
    reg = EmbedderRegistry()
    assert reg.get("hash-64-x").dim == 64
    with pytest.raises(KeyError):
        reg.get("mystery-model")
    with pytest.raises(ValueError):
        HashingEmbedder(64).embed("   ")


def test_dense_hand_vectors():
    idx = DenseIndex(["chunk1", "chunk2", "chunk3"], np.array([[1, 0], [0.6, 0.8], [0, 1]]))
    res = idx.search(np.array([1.0, 0.0]), 2)
    assert res.chunk_ids == ["chunk1", "chunk2"]
    assert [e.score for e in res] == pytest.approx([1.0, 0.6], abs=1e-12)


def test_dense_identity_and_large_k():
    emb = HashingEmbedder(128)
    texts = {"a": "red apple pie", "b": "green pear tart", "c": "blue plum jam"}
    idx = DenseIndex(list(texts), np.stack([emb.embed(t) for t in texts.values()]))
    assert idx.search(emb.embed("green pear tart"), 1).chunk_ids == ["b"]
    assert len(idx.search(emb.embed("x"), 10)) == 3
    with pytest.raises(ValueError):
        idx.search(emb.embed("x"), 0)


def test_dense_ties_broken_by_id():
    idx = DenseIndex(["z", "a", "m"], np.array([[1.0, 0.0]] * 3))
    res = idx.search(np.array([1.0, 0.0]), 3)
    assert res.chunk_ids == ["a", "m", "z"]
    res.validate()


def test_bm25_hand_formula():
    t1 = " ".join(["alpha", "alpha"] + [f"x{i}" for i in range(8)])
    t2 = " ".join(["alpha"] + [f"y{i}" for i in range(19)])
    bm = BM25Index(["c1", "c2"], [t1, t2])
    k1, b, avgdl = 1.2, 0.75, 15.0
    idf = math.log(1 + (2 - 2 + 0.5) / (2 + 0.5))
    want1 = idf * 2 * (k1 + 1) / (2 + k1 * (1 - b + b * 10 / avgdl))
    want2 = idf * 1 * (k1 + 1) / (1 + k1 * (1 - b + b * 20 / avgdl))
    got = bm.scores("alpha")
    assert abs(got[0] - want1) < 1e-9 and abs(got[1] - want2) < 1e-9
    assert bm.search("alpha", 2).chunk_ids == ["c1", "c2"]


def test_bm25_unique_term_and_empty_query():
    bm = BM25Index(["a", "b"], ["common words here", "common rare"])
    assert bm.search("rare", 5).chunk_ids == ["b"]
    assert len(bm.search("absent terms", 5)) == 0


def test_ranked_list_validation():
    ok = RankedList.from_scores("q", "r", [("b", 1.0), ("a", 1.0), ("c", 2.0)])
    assert ok.chunk_ids == ["c", "a", "b"]
    ok.validate()
    bad = RankedList("q", "r", [Entry("a", 1.0, 1), Entry("a", 0.5, 2)])
    with pytest.raises(RankedListError):
        bad.validate()
    with pytest.raises(RankedListError):
        RankedList("q", "r", [Entry("a", 1.0, 2)]).validate()
    with pytest.raises(RankedListError):
        RankedList("q", "r", [Entry("b", 1.0, 1), Entry("a", 1.0, 2)]).validate()
    with pytest.raises(RankedListError):
        RankedList("q", "r", [Entry("a", float("nan"), 1)]).validate()


def test_ranked_list_record_roundtrip():
    rl = RankedList.from_order("q", "r", ["x", "y"])
    assert RankedList.from_record(rl.to_record()) == rl
