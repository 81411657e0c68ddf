#!/usr/bin/env python3
# %% [markdown]
# # Comparing retrievers on the bundled sample corpus
#
# Four retriever configurations are run over the same queries. Their top-K
# lists are pooled, each pooled chunk is judged once, and relevant chunks are
# boiled down to canonical facts. Curves are then computed against that pool.

# %%
import sys
import tempfile
from pathlib import Path

from pooleval.config import load_config
from pooleval.report import write_report
from pooleval.runner import evaluate

data = Path(__file__).resolve().parents[1] / "src" / "pooleval" / "data"
cfg = load_config(data / "sample_config.yaml")
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="pooleval-"))

# %%
run = evaluate(cfg, out / "run")
for rid, auc in run.comparison.ranking:
    print(f"{rid:22s} PR-AUC {auc:.4f}")
print("winners:", ", ".join(run.comparison.winners))

# %% [markdown]
# The judge is only asked about the pooled chunks, never the whole corpus.

# %%
c = run.cost
full = max(c["full_judging_cost"].values())
print(f"judge calls {c['judge_calls']} for {c['queries']} queries; judging every chunk would take {full}")

# %%
for path in write_report(run.run_dir, slice_by="rewriter"):
    print("wrote", path)
