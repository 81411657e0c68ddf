"""Embedding providers.

``HashingEmbedder`` is the deterministic in-process embedder used for tests
and offline runs: a hashed bag of words, L2-normalised. Real models live
behind ``RemoteEmbedder``.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol

import numpy as np

from .adapters import RemoteAdapter
from .text import tokenize


class Embedder(Protocol):
    id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _check_vector(vec: np.ndarray, embedder_id: str) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{embedder_id}: non-finite embedding")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError(f"{embedder_id}: all-zero embedding")
    return vec / norm


class HashingEmbedder:
    def __init__(self, dim: int = 256, salt: str = "", embedder_id: str | None = None):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.salt = salt
        self.id = embedder_id or (f"hash-{dim}-{salt}" if salt else f"hash-{dim}")

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(f"{self.salt}\x00{token}".encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        tokens = tokenize(text) or [text.strip()]
        vec = np.zeros(self.dim)
        for tok in tokens:
            vec[self.bucket(tok)] += 1.0
        return _check_vector(vec, self.id)


class RemoteEmbedder:
    def __init__(self, embedder_id: str, adapter: RemoteAdapter, dim: int | None = None):
        self.id = embedder_id
        self.adapter = adapter
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        (out,) = self.adapter.call("embed", [text])
        vec = np.asarray(out, dtype=float)
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise ValueError(f"{self.id}: expected dim {self.dim}, got {vec.size}")
        return _check_vector(vec, self.id)


_HASH_ID = re.compile(r"^hash-(\d+)(?:-(.+))?$")


class EmbedderRegistry:
    """Maps embedder ids to providers; ``hash-<dim>[-<salt>]`` ids are built on demand."""

    def __init__(self):
        self._embedders: dict[str, Embedder] = {}

    def register(self, embedder: Embedder) -> None:
        self._embedders[embedder.id] = embedder

    def get(self, embedder_id: str) -> Embedder:
        if embedder_id not in self._embedders:
            m = _HASH_ID.match(embedder_id)
            if not m:
                raise KeyError(f"unknown embedder {embedder_id!r}")
            self._embedders[embedder_id] = HashingEmbedder(int(m.group(1)), m.group(2) or "", embedder_id)
        return self._embedders[embedder_id]

    def embed(self, embedder_id: str, text: str) -> np.ndarray:
        return self.get(embedder_id).embed(text)


default_registry = EmbedderRegistry()


def embed(embedder_id: str, text: str) -> np.ndarray:
    return default_registry.embed(embedder_id, text)
