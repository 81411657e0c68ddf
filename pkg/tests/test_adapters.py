import json

import httpx
import numpy as np
import pytest

from pooleval.adapters import OfflineCacheMiss, RemoteAdapter, ResponseCache, RetriesExhausted
from pooleval.embedding import RemoteEmbedder


def server(handler):
    return httpx.MockTransport(handler)


def echo_upper(request):
    body = json.loads(request.content)
    return httpx.Response(200, json={"outputs": [str(x).upper() for x in body["inputs"]]})


def test_call_and_cache(tmp_path):
    cache = ResponseCache(tmp_path / "c.jsonl")
    ad = RemoteAdapter("http://x/api", "m", cache=cache, transport=server(echo_upper))
    assert ad.call("k", ["a", "b"]) == ["A", "B"]
    assert ad.call("k", ["a", "c"]) == ["A", "C"]
    assert ad.remote_calls == 3
    # reload from disk: nothing goes over the wire
    warm = RemoteAdapter("http://x/api", "m", cache=ResponseCache(tmp_path / "c.jsonl"), offline=True)
    assert warm.call("k", ["b", "c"]) == ["B", "C"]
    assert warm.remote_calls == 0


def test_prompt_version_is_part_of_key():
    cache = ResponseCache()
    a = RemoteAdapter("http://x", "m", prompt_version="v1", cache=cache, transport=server(echo_upper))
    b = RemoteAdapter("http://x", "m", prompt_version="v2", cache=cache, transport=server(echo_upper))
    a.call("k", ["a"])
    b.call("k", ["a"])
    assert a.remote_calls == 1 and b.remote_calls == 1


def test_offline_miss_raises():
    ad = RemoteAdapter("http://x", "m", cache=ResponseCache(), offline=True)
    with pytest.raises(OfflineCacheMiss):
        ad.call("k", ["a"])


def test_retries_then_success():
    state = {"n": 0}

    def flaky(request):
        state["n"] += 1
        if state["n"] < 3:
            return httpx.Response(503)
        return echo_upper(request)

    ad = RemoteAdapter("http://x", "m", retries=2, backoff=0, transport=server(flaky))
    assert ad.call("k", ["z"]) == ["Z"]
    assert ad.requests == 3


def test_retries_exhausted():
    ad = RemoteAdapter("http://x", "m", retries=1, backoff=0, transport=server(lambda r: httpx.Response(500)))
    with pytest.raises(RetriesExhausted):
        ad.call("k", ["z"])
    assert ad.requests == 2


def test_remote_embedder_checks_dim():
    def vec(request):
        n = len(json.loads(request.content)["inputs"])
        return httpx.Response(200, json={"outputs": [[3.0, 4.0]] * n})

    emb = RemoteEmbedder("e", RemoteAdapter("http://x", "m", transport=server(vec)), dim=2)
    assert np.allclose(emb.embed("t"), [0.6, 0.8])
    bad = RemoteEmbedder("e", RemoteAdapter("http://x", "m", transport=server(vec)), dim=3)
    with pytest.raises(ValueError):
        bad.embed("t")
