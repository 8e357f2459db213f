"""Human-facing run artifacts: delimited reports and rendered figures.

Figures are written next to the delimited outputs (PNG, Agg backend, no
display required): training curves after `train`, a score histogram after
`eval`, and per-bag confidence-drop bars after `localize`.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import LocalizationResult
from .training import EpochReport

LOCALIZE_HEADER = "bag\tk_star\ts_top\tattention\tp_orig\tp_pert\tdrop"


def localization_rows(results: list[LocalizationResult]) -> list[str]:
    """TSV rows sorted by descending confidence drop (bag index breaks ties)."""
    ordered = sorted(results, key=lambda r: (-r.drop, r.bag_index))
    rows = []
    for r in ordered:
        s_top = ";".join(str(i) for i in r.s_top)
        att = ";".join(f"{a:.6f}" for a in r.attention)
        rows.append(
            f"{r.bag_index}\t{r.k_star}\t{s_top}\t{att}"
            f"\t{r.p_orig:.6f}\t{r.p_pert:.6f}\t{r.drop:.6f}"
        )
    return rows


def write_localization_tsv(results: list[LocalizationResult], path: str | Path) -> None:
    lines = [LOCALIZE_HEADER] + localization_rows(results)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="ascii")


def save_training_curves(
    history: list[EpochReport], val_f1: list[float], path: str | Path
) -> None:
    """Loss components (left) and validation F1 (right) per epoch."""
    epochs = [rep.epoch for rep in history]
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(10, 4))
    for attr, label in (
        ("l_cls", "classification"),
        ("l_proto", "prototype"),
        ("l_attn", "attention entropy"),
        ("l_con", "consistency"),
        ("l_total", "total"),
    ):
        ax_loss.plot(epochs, [getattr(rep, attr) for rep in history], label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_loss.set_title("training losses")
    ax_f1.plot(epochs, val_f1, marker="o", color="tab:green")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("validation F1")
    ax_f1.set_ylim(-0.02, 1.02)
    ax_f1.set_title("validation F1")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_histogram(
    scores: np.ndarray, labels: np.ndarray, tau: float, path: str | Path
) -> None:
    """Overlaid bag-probability histograms for the two classes plus tau."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(0.0, 1.0, 41)
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="normal bags")
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="anomalous bags")
    ax.axvline(tau, color="black", linestyle="--", label=f"tau={tau:.3f}")
    ax.set_xlabel("bag anomaly probability")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_drop_bars(
    results: list[LocalizationResult], path: str | Path, max_bags: int = 25
) -> None:
    """Original vs perturbed probability for the largest-drop positive bags."""
    ordered = sorted(results, key=lambda r: (-r.drop, r.bag_index))[:max_bags]
    fig, ax = plt.subplots(figsize=(7, max(3, 0.3 * len(ordered) + 1)))
    ys = np.arange(len(ordered))
    ax.barh(ys + 0.2, [r.p_orig for r in ordered], height=0.4, label="P original")
    ax.barh(ys - 0.2, [r.p_pert for r in ordered], height=0.4, label="P perturbed")
    ax.set_yticks(ys)
    ax.set_yticklabels([f"bag {r.bag_index}" for r in ordered], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("bag anomaly probability")
    ax.set_xlim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
