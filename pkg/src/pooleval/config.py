"""Run configuration: a versioned YAML/JSON schema that rejects unknown fields."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .corpus import SegmentationSpec
from .pipeline import FilterSpec, RerankerSpec, RetrieverSpec

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AdapterConfig(_Strict):
    """``type`` picks the implementation; remote fields apply to ``type: remote`` only."""

    type: Literal["oracle", "remote", "template", "lexical", "hashing"]
    endpoint: Optional[str] = None
    model: Optional[str] = None
    prompt_version: str = "v1"
    timeout: float = 30.0
    retries: int = Field(2, ge=0)
    max_inflight: int = Field(4, ge=1)
    dim: Optional[int] = None
    flip: Optional[float] = Field(None, ge=0, le=1)

    @model_validator(mode="after")
    def _remote_fields(self):
        if self.type == "remote" and not (self.endpoint and self.model):
            raise ValueError("remote adapters need endpoint and model")
        return self


class AdaptersConfig(_Strict):
    judge: AdapterConfig = AdapterConfig(type="oracle")
    extractor: AdapterConfig = AdapterConfig(type="oracle")
    rewriter: AdapterConfig = AdapterConfig(type="template")
    pointwise: AdapterConfig = AdapterConfig(type="lexical")
    listwise: AdapterConfig = AdapterConfig(type="lexical")
    embedders: dict[str, AdapterConfig] = {}


class SegmentationConfig(_Strict):
    strategy: Literal["original", "nms", "nmns"] = "original"
    min_merge_len: int = 100
    max_chunk_len: int = 500


class FilterConfig(_Strict):
    quality: bool = False
    length: bool = False
    length_threshold: int = 50
    engagement: bool = False
    engagement_threshold: int = 25
    poi: bool = False
    poi_bottom_fraction: float = 0.25


class RerankerConfig(_Strict):
    kind: Literal["none", "pointwise", "sliding_window"] = "none"
    window: int = 20
    overlap: int = 10


class RetrieverConfig(_Strict):
    id: str
    segmentation: SegmentationConfig = SegmentationConfig()
    mode: Literal["dense", "hybrid"] = "dense"
    embedder_id: str = "hash-256"
    k: int = Field(20, ge=1)
    rewriter: Literal["off", "on"] = "off"
    filter: FilterConfig = FilterConfig()
    reranker: RerankerConfig = RerankerConfig()
    pool_multiplier: int = Field(4, ge=1)

    def to_spec(self) -> RetrieverSpec:
        return RetrieverSpec(
            id=self.id,
            segmentation=SegmentationSpec(**self.segmentation.model_dump()),
            mode=self.mode,
            embedder_id=self.embedder_id,
            k=self.k,
            rewriter=self.rewriter,
            filter=FilterSpec(**self.filter.model_dump()),
            reranker=RerankerSpec(**self.reranker.model_dump()),
            pool_multiplier=self.pool_multiplier,
        )


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    corpus: str
    queries: str
    retrievers: list[RetrieverConfig]
    adapters: AdaptersConfig = AdaptersConfig()
    k_max: int = Field(20, ge=1)
    output_dir: Optional[str] = None
    cache_dir: Optional[str] = None
    seed: int = 0
    max_inflight: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _check(self):
        ids = [r.id for r in self.retrievers]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate retriever ids: {ids}")
        return self

    def specs(self) -> list[RetrieverSpec]:
        return [r.to_spec() for r in self.retrievers]

    def digest(self) -> str:
        """Hash of everything that can change results.

        Execution-only knobs (parallelism, output and cache locations) are
        excluded so that they cannot change the report digest.
        """
        rec = self.model_dump(exclude={"output_dir", "cache_dir", "max_inflight"})
        for name in ("corpus", "queries"):
            rec[name] = Path(rec[name]).name
        blob = json.dumps(rec, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    """Load a config; relative corpus/queries/cache paths resolve against the file's directory."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a mapping")
    base = path.parent
    for key in ("corpus", "queries", "cache_dir", "output_dir"):
        if raw.get(key) and not Path(raw[key]).is_absolute():
            raw[key] = str(base / raw[key])
    return RunConfig.model_validate(raw)
