"""Render figures from an emitted metrics file.

Reads the JSON-lines output of a training run and writes accuracy and
loss curves (and, for private runs, accuracy against the privacy spend)
as image files next to wherever the caller points it. Purely a consumer
of the metrics format; training never imports this module.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import read_metrics  # noqa: E402


def render_report(metrics_path: str | Path, out_dir: str | Path,
                  fmt: str = "png") -> list[Path]:
    """Write curve figures for one metrics file; returns the created paths."""
    metrics_path = Path(metrics_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = read_metrics(metrics_path)
    header = next((ln for ln in lines if ln.get("type") == "header"), {})
    records = [ln for ln in lines if ln.get("type") == "record"]
    if not records:
        raise ValueError(f"{metrics_path}: no records to plot")

    cadence = header.get("cadence", "step")
    stem = metrics_path.stem
    steps = [r["step"] for r in records]
    created: list[Path] = []

    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(steps, [r["train_acc"] for r in records], label="train", marker="o", ms=3)
    ax.plot(steps, [r["test_acc"] for r in records], label="test", marker="s", ms=3)
    ax.set_xlabel(cadence)
    ax.set_ylabel("accuracy")
    ax.set_title(f"{header.get('mode', 'run')} accuracy")
    ax.legend()
    ax.grid(alpha=0.3)
    path = out_dir / f"{stem}_accuracy.{fmt}"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    created.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(steps, [r["train_loss"] for r in records], label="train", marker="o", ms=3)
    ax.plot(steps, [r["test_loss"] for r in records], label="test", marker="s", ms=3)
    ax.set_xlabel(cadence)
    ax.set_ylabel("cross-entropy")
    ax.set_title(f"{header.get('mode', 'run')} loss")
    ax.legend()
    ax.grid(alpha=0.3)
    path = out_dir / f"{stem}_loss.{fmt}"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    created.append(path)

    eps = [r.get("epsilon_spent") for r in records]
    if all(e is not None for e in eps):
        fig, ax = plt.subplots(figsize=(5.5, 3.6))
        ax.plot(eps, [r["test_acc"] for r in records], marker="o", ms=3)
        ax.set_xlabel("privacy spend (epsilon)")
        ax.set_ylabel("test accuracy")
        ax.set_title("accuracy vs privacy loss")
        ax.grid(alpha=0.3)
        path = out_dir / f"{stem}_privacy.{fmt}"
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        created.append(path)

    return created
