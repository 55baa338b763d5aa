"""Static figures for the report subcommands (Agg backend, PNG files)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curves(history: list[dict], path, title: str = "stage-1 loss",
                x_key: str = "epoch") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    keys = [k for k in history[0] if k.startswith("loss")] if history else []
    xs = [row[x_key] for row in history]
    for key in keys:
        ax.plot(xs, [row[key] for row in history], label=key)
    ax.set_xlabel(x_key)
    ax.set_ylabel("loss")
    ax.set_title(title)
    if keys:
        ax.legend()
    return _save(fig, path)


def sd_vs_n(summary: dict, path) -> Path:
    """``summary[mode] = [(n, mean, std), ...]``"""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode, rows in summary.items():
        ns = [r[0] for r in rows]
        ax.errorbar(ns, [r[1] for r in rows], yerr=[r[2] for r in rows], marker="o",
                    capsize=3, label=mode)
    ax.set_xscale("log")
    ax.set_xlabel("number of categories N")
    ax.set_ylabel("mean |cos| between styles (lower is better)")
    ax.legend()
    return _save(fig, path)


def lambda_sweep(rows: list[dict], path) -> Path:
    fig, ax = plt.subplots(1, 2, figsize=(8, 3.5))
    lams = [r["lam"] for r in rows]
    ax[0].errorbar(lams, [r["sd_mean"] for r in rows], yerr=[r["sd_std"] for r in rows], marker="o")
    ax[0].set_xlabel("lambda")
    ax[0].set_ylabel("SD")
    ax[1].errorbar(lams, [r["sc_mean"] for r in rows], yerr=[r["sc_std"] for r in rows], marker="o")
    ax[1].set_xlabel("lambda")
    ax[1].set_ylabel("SC")
    return _save(fig, path)


def timing_bars(table: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(table)
    ax.bar(names, [table[n]["median"] for n in names],
           yerr=[table[n]["stdev"] for n in names], capsize=4)
    ax.set_ylabel("stage-1 wall clock (s)")
    return _save(fig, path)
