"""Report rendering: aligned text tables, delimited files, and figures."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import ACT_ORDER, CorpusStats
from .util import write_json

TABLE_COLUMNS = [
    ("l", "token_loss"),
    ("L_u", "utterance_len"),
    ("H", "unigram_entropy"),
    ("C", "success"),
    ("C_T", "success_per_turn"),
    ("C_S", "success_per_select"),
    ("Sel", "act:select"),
    ("Inf", "act:inform"),
    ("Ask", "act:ask"),
    ("Ans", "act:answer"),
    ("Greet", "act:greeting"),
    ("#Ent_1", "first_entity_freq"),
    ("|Attr_1|", "first_attr_domain"),
    ("#Ent", "entities_per_dialogue"),
    ("#Attr", "attrs_per_dialogue"),
]


def _cell(stats: CorpusStats, key: str) -> str:
    if key.startswith("act:"):
        value = stats.act_shares.get(key[4:], 0.0)
    else:
        value = getattr(stats, key)
    if value is None:
        return "-"
    return f"{value:.2f}"


def stats_table(rows: dict[str, CorpusStats]) -> str:
    """Aligned-column text table; one row per system."""
    headers = ["System"] + [h for h, _ in TABLE_COLUMNS]
    lines = [[name] + [_cell(st, key) for _, key in TABLE_COLUMNS]
             for name, st in rows.items()]
    widths = [max(len(headers[i]), *(len(l[i]) for l in lines)) if lines else len(headers[i])
              for i in range(len(headers))]
    def fmt(row):
        return "  ".join(c.rjust(w) for c, w in zip(row, widths))
    return "\n".join([fmt(headers)] + [fmt(l) for l in lines])


def save_stats_report(out_dir: str, rows: dict[str, CorpusStats]) -> list[str]:
    """Write stats.json, stats.txt, and an act-share figure; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    json_path = os.path.join(out_dir, "stats.json")
    write_json(json_path, {name: st.to_dict() for name, st in rows.items()})
    paths.append(json_path)
    txt_path = os.path.join(out_dir, "stats.txt")
    with open(txt_path, "w", encoding="utf-8") as f:
        f.write(stats_table(rows) + "\n")
    paths.append(txt_path)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(len(rows), 1)
    for i, (name, st) in enumerate(rows.items()):
        xs = [j + i * width for j in range(len(ACT_ORDER))]
        ax.bar(xs, [st.act_shares.get(a, 0.0) for a in ACT_ORDER], width, label=name)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(ACT_ORDER))])
    ax.set_xticklabels(ACT_ORDER)
    ax.set_ylabel("share of events")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig_path = os.path.join(out_dir, "act_shares.png")
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    paths.append(fig_path)
    return paths


def save_first_attr_histogram(out_dir: str, stats: CorpusStats,
                              name: str = "first_attr") -> list[str]:
    """Histogram of the skewness group of first-mentioned attributes:
    CSV plus a bar figure."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}_histogram.csv")
    hist = stats.first_attr_histogram
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["group", "count"])
        for group, count in hist.items():
            writer.writerow([group, count])
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.bar(list(hist.keys()), list(hist.values()), color="#4878cf")
    ax.set_ylabel("first mentions")
    ax.set_xlabel("value-distribution group of first-mentioned attribute")
    fig.tight_layout()
    png_path = os.path.join(out_dir, f"{name}_histogram.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def save_loss_curve(out_dir: str, history: list, name: str = "loss_curve") -> list[str]:
    """Training curve as CSV and a figure. history: EpochStats records."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_ll", "dev_ll"])
        for rec in history:
            writer.writerow([rec.epoch, f"{rec.train_ll:.6f}", f"{rec.dev_ll:.6f}"])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot([r.epoch for r in history], [r.train_ll for r in history], label="train")
    ax.plot([r.epoch for r in history], [r.dev_ll for r in history], label="dev")
    ax.set_xlabel("epoch")
    ax.set_ylabel("per-token loss (nats)")
    ax.legend()
    fig.tight_layout()
    png_path = os.path.join(out_dir, f"{name}.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]
