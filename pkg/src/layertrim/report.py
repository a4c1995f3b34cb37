"""Run-report assembly: merges metrics traces into comparison tables and
renders the matching figures.

Outputs per report: a token-aligned perplexity CSV (one column per run), a
summary CSV with final/best perplexity and compute per run plus the
percentage change against a baseline run, and PNG figures (perplexity
curves, final-perplexity bars) written next to the CSVs.
"""

from __future__ import annotations

import csv
import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .train import TraceRow, read_trace

logger = logging.getLogger(__name__)

FIGURE_DPI = 150


def label_for_trace(path: str) -> str:
    """Default run label: the trace's directory name, else the file stem."""
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    if parent and parent != ".":
        return parent
    return os.path.splitext(os.path.basename(path))[0]


def load_traces(paths: list[str], labels: list[str] | None = None) -> dict[str, list[TraceRow]]:
    if labels is not None and len(labels) != len(paths):
        raise ValueError(f"{len(labels)} labels for {len(paths)} traces")
    out: dict[str, list[TraceRow]] = {}
    for i, path in enumerate(paths):
        label = labels[i] if labels else label_for_trace(path)
        base = label
        n = 2
        while label in out:
            label = f"{base}_{n}"
            n += 1
        out[label] = read_trace(path)
    return out


def merged_ppl_table(traces: dict[str, list[TraceRow]]) -> tuple[list[int], dict[str, dict[int, float]]]:
    """Outer-join every trace on the token axis (blank where a run has no
    row at that token count)."""
    by_label = {label: {r.tokens: r.ppl for r in rows} for label, rows in traces.items()}
    axis = sorted({t for serie in by_label.values() for t in serie})
    return axis, by_label


def write_merged_csv(path: str, traces: dict[str, list[TraceRow]]) -> None:
    axis, by_label = merged_ppl_table(traces)
    labels = list(by_label)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tokens"] + [f"{label}_ppl" for label in labels])
        for t in axis:
            writer.writerow([t] + [repr(by_label[lab][t]) if t in by_label[lab] else "" for lab in labels])


def summarize(traces: dict[str, list[TraceRow]], baseline: str | None = None) -> list[dict]:
    """Per-run summary rows; ppl_change_pct is relative to the baseline run
    (the first one by default), mirroring percentage-drop style tables."""
    labels = list(traces)
    baseline = baseline or labels[0]
    if baseline not in traces:
        raise ValueError(f"baseline {baseline!r} is not one of {labels}")
    base_final = traces[baseline][-1].ppl
    rows = []
    for label in labels:
        trace = traces[label]
        final = trace[-1]
        rows.append(
            {
                "run": label,
                "final_tokens": final.tokens,
                "final_ppl": final.ppl,
                "best_ppl": min(r.ppl for r in trace),
                "cumulative_flops": final.cumulative_flops,
                "ppl_change_pct": 100.0 * (final.ppl - base_final) / base_final,
            }
        )
    return rows


def write_summary_csv(path: str, rows: list[dict]) -> None:
    fields = ["run", "final_tokens", "final_ppl", "best_ppl", "cumulative_flops", "ppl_change_pct"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def plot_ppl_curves(path: str, traces: dict[str, list[TraceRow]]) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, rows in traces.items():
        ax.plot([r.tokens for r in rows], [r.ppl for r in rows], label=label, linewidth=1.4)
    ax.set_xlabel("training tokens")
    ax.set_ylabel("held-out perplexity")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def plot_final_ppl_bars(path: str, summary_rows: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(summary_rows)), 4.0))
    labels = [r["run"] for r in summary_rows]
    values = [r["final_ppl"] for r in summary_rows]
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("final held-out perplexity")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def build_report(
    out_dir: str,
    trace_paths: list[str],
    labels: list[str] | None = None,
    baseline: str | None = None,
) -> list[dict]:
    """Write merged_ppl.csv, summary.csv, and both PNG figures."""
    os.makedirs(out_dir, exist_ok=True)
    traces = load_traces(trace_paths, labels)
    write_merged_csv(os.path.join(out_dir, "merged_ppl.csv"), traces)
    summary = summarize(traces, baseline)
    write_summary_csv(os.path.join(out_dir, "summary.csv"), summary)
    plot_ppl_curves(os.path.join(out_dir, "ppl_vs_tokens.png"), traces)
    plot_final_ppl_bars(os.path.join(out_dir, "final_ppl.png"), summary)
    logger.info("report written to %s (%d runs)", out_dir, len(traces))
    return summary
