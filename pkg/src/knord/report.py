"""Report emission: human-readable text, a flat CSV row, and figures.

Figures are rendered headless to PNG files next to the delimited output so a
batch run leaves a self-contained report directory.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_report_text(report, path) -> None:
    lines = [
        "relation discovery report",
        "=" * 33,
        f"instances scored : {report.subset_sizes['all']}",
        f"  known subset   : {report.subset_sizes['known']}",
        f"  novel subset   : {report.subset_sizes['novel']}",
        "",
        f"F1 (all)   : {report.f1_all:.4f}",
        f"F1 (known) : {report.f1_known:.4f}",
        f"F1 (novel) : {report.f1_novel:.4f}",
        "",
        "label mapping (prediction id -> class):",
    ]
    for label_id in sorted(report.mapping):
        used = int(report.contingency[label_id].sum())
        lines.append(f"  {label_id:4d} -> {report.mapping[label_id]} "
                     f"({used} predictions)")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_csv(report, path, setting="default") -> None:
    """One flat row per run: setting, the three F1 columns, subset sizes."""
    header = "setting,f1_all,f1_known,f1_novel,n_all,n_known,n_novel"
    row = (f"{setting},{report.f1_all:.6f},{report.f1_known:.6f},"
           f"{report.f1_novel:.6f},{report.subset_sizes['all']},"
           f"{report.subset_sizes['known']},{report.subset_sizes['novel']}")
    Path(path).write_text(header + "\n" + row + "\n", encoding="utf-8")


def format_table_row(report, setting="default") -> str:
    return (f"{setting}  F1(all)={report.f1_all:.3f}  "
            f"F1(known)={report.f1_known:.3f}  F1(novel)={report.f1_novel:.3f}")


_PNG_METADATA = {"Software": "knord"}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def render_figures(report, outdir, log_likelihood_trace=None,
                   confidences=None) -> list[Path]:
    """Render report figures into outdir; returns the written paths.

    confidences, when given, maps subset name ("known"/"novel") to a list of
    prediction confidences.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    names = ["all", "known", "novel"]
    values = [report.f1_all, report.f1_known, report.f1_novel]
    ax.bar(names, values, color=["#4477aa", "#66ccee", "#ee6677"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("micro-F1")
    ax.set_title("F1 by subset")
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    path = outdir / "f1_scores.png"
    _save(fig, path)
    written.append(path)

    active = [i for i in range(report.contingency.shape[0])
              if report.contingency[i].sum() > 0]
    if active:
        sub = report.contingency[active]
        fig, ax = plt.subplots(
            figsize=(max(4.0, 0.35 * len(report.class_names) + 1.5),
                     max(3.0, 0.3 * len(active) + 1.2)))
        im = ax.imshow(sub, cmap="Blues", aspect="auto")
        ax.set_xticks(range(len(report.class_names)))
        ax.set_xticklabels(report.class_names, rotation=90, fontsize=6)
        ax.set_yticks(range(len(active)))
        ax.set_yticklabels([f"{i}:{report.mapping[i]}" for i in active],
                           fontsize=6)
        ax.set_xlabel("gold class")
        ax.set_ylabel("prediction id")
        ax.set_title("prediction/gold contingency")
        fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
        path = outdir / "contingency.png"
        _save(fig, path)
        written.append(path)

    if log_likelihood_trace:
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        ax.plot(np.arange(1, len(log_likelihood_trace) + 1),
                log_likelihood_trace, marker=".", lw=1)
        ax.set_xlabel("EM iteration")
        ax.set_ylabel("log-likelihood")
        ax.set_title("mixture fit trace")
        fig.tight_layout()
        path = outdir / "loglik_trace.png"
        _save(fig, path)
        written.append(path)

    if confidences:
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        bins = np.linspace(0, 1, 21)
        for name, values in sorted(confidences.items()):
            if values:
                ax.hist(values, bins=bins, alpha=0.55, label=name)
        ax.set_xlabel("prediction confidence")
        ax.set_ylabel("count")
        ax.set_title("confidence by gold subset")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = outdir / "confidence_hist.png"
        _save(fig, path)
        written.append(path)

    return written
