import json
import logging

import httpx
import pytest

from pooleval.adapters import RemoteAdapter, ResponseCache
from pooleval.corpus import Chunk, PlantedFact, Query
from pooleval.judge import (LLMExtractor, LLMJudge, NoisyJudge, OracleExtractor, OracleJudge, Unjudged, locate_fact,
                            parse_verdict, token_pattern)
from pooleval.text import normalize

FACT = PlantedFact("FACT-q3-1", "The refund guideline FACT-q3-1 requires a receipt.")
Q3 = Query("q3", "refund rules", (FACT,))


def mk(text, cid="c1"):
    return Chunk(cid, "d", 0, len(text), text, 1, "s")


def remote(outputs):
    it = iter(outputs)

    def handler(request):
        n = len(json.loads(request.content)["inputs"])
        return httpx.Response(200, json={"outputs": [next(it) for _ in range(n)]})

    return RemoteAdapter("http://x", "judge-model", transport=httpx.MockTransport(handler))


def test_token_pattern_is_exact():
    assert token_pattern("FACT-q3-1").search("see FACT-q3-1.")
    assert not token_pattern("FACT-q3-1").search("see FACT-q3-10.")


def test_oracle_judge_and_cache():
    judge = OracleJudge()
    assert judge.judge_relevance(Q3, mk("Intro. " + FACT.sentence)).relevant
    assert not judge.judge_relevance(Q3, mk("Pure distractor text.", "c2")).relevant
    assert judge.calls == 2
    judge.judge_relevance(Q3, mk("Intro. " + FACT.sentence))
    assert judge.calls == 2


def test_noisy_judge_is_seeded():
    chunks = [mk(f"text {i}", f"c{i}") for i in range(200)]
    a = [NoisyJudge(OracleJudge(), 0.3, seed=1).judge_relevance(Q3, c).relevant for c in chunks]
    b = [NoisyJudge(OracleJudge(), 0.3, seed=1).judge_relevance(Q3, c).relevant for c in chunks]
    assert a == b and 30 < sum(a) < 90


def test_parse_verdict():
    assert parse_verdict("Yes.") is True
    assert parse_verdict("no, it is not") is False
    assert parse_verdict("Not relevant") is False
    assert parse_verdict("maybe") is None


def test_llm_judge_repair_then_unjudged(tmp_path):
    judge = LLMJudge(remote(["hmm", "yes"]), ResponseCache(tmp_path / "j.jsonl"))
    assert judge.judge_relevance(Q3, mk("x")).relevant
    bad = LLMJudge(remote(["hmm", "still unsure"]))
    with pytest.raises(Unjudged):
        bad.judge_relevance(Q3, mk("x"))
    # cached verdict survives a restart without a remote call
    again = LLMJudge(remote([]), ResponseCache(tmp_path / "j.jsonl"))
    assert again.judge_relevance(Q3, mk("x")).relevant and again.calls == 0


def test_extract_redundancy_then_fact():
    redundancy = "Opening hours vary by season and location."
    chunk = mk(redundancy + " " + FACT.sentence)
    ex = OracleExtractor().extract_minimal_facts(Q3, chunk)
    assert [f.text for f in ex.facts] == [FACT.sentence]
    f = ex.facts[0]
    assert chunk.text[f.start:f.end] == f.text


def test_extract_two_planted_facts():
    other = PlantedFact("FACT-q3-2", "Guideline FACT-q3-2 caps fees.")
    q = Query("q3", "refund rules", (FACT, other))
    chunk = mk(f"{FACT.sentence} Filler here. {other.sentence}")
    facts = OracleExtractor().extract_minimal_facts(q, chunk).facts
    assert [f.text for f in facts] == [FACT.sentence, other.sentence]
    for f in facts:
        assert chunk.text[f.start:f.end] == f.text


def test_paraphrase_dropped_with_fallback(caplog):
    chunk = mk("The policy says refunds need a receipt.")
    ex = LLMExtractor(remote([json.dumps(["Customers must always bring paperwork for money back"])]))
    with caplog.at_level(logging.WARNING):
        out = ex.extract_minimal_facts(Q3, chunk)
    assert out.fallback and out.facts[0].text == chunk.text
    assert "dropping" in caplog.text


def test_partial_paraphrase_keeps_valid_fact():
    chunk = mk("Alpha beta gamma. The policy says refunds need a receipt.")
    ex = LLMExtractor(remote([json.dumps(["the policy  says refunds need a receipt", "invented claim"])]))
    out = ex.extract_minimal_facts(Q3, chunk)
    assert not out.fallback
    assert [f.text for f in out.facts] == ["The policy says refunds need a receipt"]


def test_locate_fact_fuzzy_threshold():
    text = "Members may return goods within thirty days of purchase."
    assert locate_fact(text, "members may return goods within thirty dayz") is not None
    assert locate_fact(text, "completely different words here") is None
    s, e = locate_fact(text, "RETURN   goods")
    assert normalize(text[s:e]) == "return goods"
