"""Static PNG figures for run reports (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simenv import RunReport  # noqa: E402


def _steps(report: RunReport) -> np.ndarray:
    return np.arange(1, report.steps + 1)


def plot_run(report: RunReport, path, title: str = "") -> Path:
    """Entropy and per-dataset greedy score curves for one run."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    x = _steps(report)
    ax1.plot(x, report.entropy, lw=0.8)
    ax1.set_ylabel("policy entropy (nats)")
    for ds in report.dataset_ids:
        ax2.plot(x, [r[f"greedy_{ds}"] for r in report.rows], label=ds)
    ax2.set_ylabel("greedy content score")
    ax2.set_xlabel("step")
    ax2.legend()
    fig.suptitle(title or f"{report.mode} rewards, seed {report.seed}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_entropy_comparison(reports: dict[str, RunReport], path, title: str = "") -> Path:
    """Entropy traces of several runs on one axis."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, rep in reports.items():
        ax.plot(_steps(rep), rep.entropy, lw=0.8, label=label, alpha=0.85)
    ax.set_xlabel("step")
    ax.set_ylabel("policy entropy (nats)")
    ax.legend()
    ax.set_title(title or "training entropy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
