"""Curve tables and precision-recall plots for a finished run directory."""

from __future__ import annotations

import json
from itertools import groupby
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PRCurve, compare  # noqa: E402

# dimensions a report can be sliced by, as paths into a retriever record
SLICE_DIMENSIONS = {
    "segmentation": ("segmentation",),
    "mode": ("mode",),
    "embedder": ("embedder_id",),
    "rewriter": ("rewriter",),
    "filter": ("filter",),
    "reranker": ("reranker",),
    "k": ("k",),
}


class MissingArtifacts(Exception):
    pass


def load_run(run_dir: str | Path) -> tuple[dict, dict[str, PRCurve]]:
    run = Path(run_dir)
    report_path = run / "report.json"
    if not report_path.is_file():
        raise MissingArtifacts(f"{run}: no report.json")
    report = json.loads(report_path.read_text())
    if report.get("status") not in ("complete", "partial") or "retrievers" not in report:
        raise MissingArtifacts(f"{run}: report.json is not a finished run")
    curves = {}
    for rec in report["retrievers"]:
        path = run / "curves" / f"{rec['id']}.csv"
        if not path.is_file():
            raise MissingArtifacts(f"{run}: missing curve table {path.name}")
        curves[rec["id"]] = PRCurve.from_csv(path, rec["id"])
    return report, curves


def _key_without(rec: dict, dim: str) -> str:
    rec = dict(rec)
    rec.pop("id", None)
    rec.pop(SLICE_DIMENSIONS[dim][0], None)
    return json.dumps(rec, sort_keys=True)


def slice_groups(retrievers: list[dict], dim: str | None) -> list[list[str]]:
    """Groups of retriever ids that differ only along ``dim`` (all ids if ``dim`` is None)."""
    if dim is None:
        return [[r["id"] for r in retrievers]]
    if dim not in SLICE_DIMENSIONS:
        raise ValueError(f"unknown slice dimension {dim!r}; choose from {sorted(SLICE_DIMENSIONS)}")
    keyed = sorted(retrievers, key=lambda r: (_key_without(r, dim), r["id"]))
    groups = [[r["id"] for r in grp] for _, grp in groupby(keyed, key=lambda r: _key_without(r, dim))]
    return [g for g in groups if len(g) >= 2]


def plot_curves(curves: list[PRCurve], path: Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for c in curves:
        ax.plot([p.recall for p in c.points], [p.precision for p in c.points], marker=".",
                label=f"{c.retriever_id} (AUC {c.pr_auc:.3f})")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    # fixed metadata keeps the SVG bytes reproducible
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_report(run_dir: str | Path, out_dir: str | Path | None = None, slice_by: str | None = None) -> list[Path]:
    """Write one curve table per retriever and one SVG per comparison group."""
    report, curves = load_run(run_dir)
    out = Path(out_dir) if out_dir else Path(run_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rid, curve in curves.items():
        path = out / f"curve_{rid}.csv"
        curve.to_csv(path)
        written.append(path)

    groups = slice_groups(report["retrievers"], slice_by)
    summary = []
    for i, ids in enumerate(groups):
        group = [curves[r] for r in ids]
        name = f"compare_{slice_by}_{i:02d}" if slice_by else "compare"
        path = out / f"{name}.svg"
        plot_curves(group, path, " vs ".join(ids) if len(ids) <= 3 else f"{len(ids)} retrievers")
        written.append(path)
        cmp = compare(group)
        summary.append({"plot": path.name, "retrievers": ids, "pr_auc": cmp.ranking, "winners": cmp.winners})
    (out / "comparisons.json").write_text(json.dumps(summary, indent=2) + "\n")
    return written
