#!/usr/bin/env python3
# %% [markdown]
# # Same fact, different chunks
#
# Two chunkings put one relevant sentence at different offsets. Chunk-level
# labels would never match across them; fact-level recall credits both.

# %%
from pooleval import OracleExtractor, OracleJudge, Workspace, build_pseudo_gt, build_subset, run_retriever
from pooleval.metrics import confusion_at_k
from pooleval.oracle import cross_segmentation_fixture
from pooleval.pseudogt import CoverageIndex

docs, query, specs = cross_segmentation_fixture()
ws = Workspace(docs)
lists = [run_retriever(s, query, ws) for s in specs]
for rl in lists:
    print(rl.chunk_ids[0], repr(ws.chunk(rl.chunk_ids[0]).text[:60]))

# %%
gt = build_pseudo_gt(build_subset(query.id, lists), OracleJudge(), OracleExtractor(), query, ws.chunks)
print("canonical facts:", [f.canonical_text for f in gt.facts])
cov = CoverageIndex(ws.chunks)
for spec, rl in zip(specs, lists):
    print(spec.id, "recall@1 =", confusion_at_k(rl, gt, 1, cov).recall)
