"""Human-readable summary and matplotlib figures for a plan report."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGURE_NAMES = ("candidate_costs.png", "termination_rates.png", "exit_curves.png")


def _si(x: float) -> str:
    for div, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "k")):
        if abs(x) >= div:
            return f"{x / div:.2f}{suffix}"
    return f"{x:.2f}"


def _duration(s: float) -> str:
    return f"{s:.3f} s" if s >= 1 else f"{s * 1e3:.2f} ms"


def _pct_change(x: float, base: float) -> str:
    if not base:
        return "n/a"
    return f"{(x - base) / base * 100:+.2f}%"


def summary_rows(report: Mapping) -> list[tuple[str, str, str, str]]:
    """(metric, predicted, simulated, change of predicted vs. baseline) rows."""
    base = report["baseline"]
    pred = report["chosen"]["predicted"]
    sim = report["chosen"]["simulated"]
    rows = [
        ("Acc.", f"{pred['accuracy'] * 100:.2f}%", f"{sim['accuracy'] * 100:.2f}%",
         f"{(pred['accuracy'] - base['accuracy']) * 100:+.2f} pp"),
        ("Mean MACs", _si(pred["mean_macs"]), _si(sim["mean_macs"]),
         _pct_change(pred["mean_macs"], base["macs"])),
        ("Mean Latency", _duration(pred["mean_latency_s"]), _duration(sim["mean_latency_s"]),
         _pct_change(pred["mean_latency_s"], base["latency_s"])),
    ]
    if base["energy_mj"]:
        rows.append(("Mean Energy", f"{pred['mean_energy_mj']:.3f} mJ", f"{sim['mean_energy_mj']:.3f} mJ",
                     _pct_change(pred["mean_energy_mj"], base["energy_mj"])))
    else:
        rows.append(("Mean Energy", "-", "-", ""))
    rows.append(("Early Term.", f"{pred['early_termination'] * 100:.2f}%",
                 f"{sim['early_termination'] * 100:.2f}%", ""))
    return rows


def summary_table(report: Mapping) -> str:
    chosen = report["chosen"]
    base = report["baseline"]
    head = [
        f"model      {report['model']['name']}  ({report['model']['blocks']} blocks, {_si(report['model']['macs'])} MACs)",
        f"chosen     {chosen['architecture']}"
        + ("  [zero augmentation]" if chosen["zero_augmentation"] else ""),
        "thresholds " + ", ".join(f"{t:.4g}" for t in chosen["thresholds"][:-1]) if chosen["exits"] else "thresholds -",
        "mapping    " + " -> ".join(f"{s['processor']}[{s['first_block']}..{s['last_block']}]" for s in chosen["mapping"]),
        f"baseline   {base['processor']}: acc {base['accuracy'] * 100:.2f}%, {_duration(base['latency_s'])}",
        f"worst case {_duration(chosen['worst_case_latency_s'])}",
        f"searched   {report['stats']['enumerated']} architectures, {report['stats']['survivors']} survivors, "
        f"{report['stats']['threshold_configurations']} threshold configurations",
        "",
    ]
    rows = [("", "predicted", "simulated", "vs. baseline")] + summary_rows(report)
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    rule = "-" * len(lines[0])
    return "\n".join(head + [lines[0], rule] + lines[1:]) + "\n"


def _candidate_costs(report, ax):
    cands = report["candidates"]
    n_exits = [len(c["exits"]) for c in cands]
    x = [c["mean_macs"] / report["baseline"]["macs"] for c in cands]
    y = [c["accuracy"] for c in cands]
    sc = ax.scatter(x, y, c=n_exits, s=10, cmap="viridis", alpha=0.7)
    best = cands[0]
    ax.scatter([x[0]], [y[0]], marker="*", s=160, color="tab:red", label=f"chosen: {best['architecture']}")
    ax.set_xlabel("mean MACs / baseline MACs")
    ax.set_ylabel("predicted accuracy")
    ax.legend(loc="lower right", fontsize="small")
    ax.figure.colorbar(sc, ax=ax, label="early exits")


def _termination(report, ax):
    pred = report["chosen"]["predicted"]["termination_rates"]
    sim = report["chosen"]["simulated"]["termination_rates"]
    labels = list(report["chosen"]["exits"]) + ["final"]
    idx = range(len(labels))
    w = 0.4
    ax.bar([i - w / 2 for i in idx], pred, w, label="predicted")
    ax.bar([i + w / 2 for i in idx], sim, w, label="simulated")
    ax.set_xticks(list(idx), labels)
    ax.set_ylabel("termination rate")
    ax.set_ylim(0, 1)
    ax.legend()


def _exit_curves(report, ax):
    curves = report["chosen"]["exit_curves"]
    thresholds = dict(zip(report["chosen"]["exits"], report["chosen"]["thresholds"]))
    if not curves:
        ax.text(0.5, 0.5, "no early exits", ha="center", va="center", transform=ax.transAxes)
        ax.set_axis_off()
        return
    for i, (loc, c) in enumerate(sorted(curves.items(), key=lambda kv: report["chosen"]["exits"].index(kv[0]))):
        color = f"C{i}"
        acc = [float("nan") if a is None else a for a in c["conditional_accuracy"]]
        ax.plot(c["threshold"], c["pass_rate"], "--", color=color, label=f"{loc} pass rate")
        ax.plot(c["threshold"], acc, "-", color=color, label=f"{loc} accuracy")
        ax.axvline(thresholds[loc], color=color, lw=0.8, alpha=0.6)
    ax.set_xlabel("confidence threshold")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize="small")


def render_figures(report: Mapping, directory: str | Path) -> list[Path]:
    """Write one PNG per view into ``directory`` and return their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, draw in zip(FIGURE_NAMES, (_candidate_costs, _termination, _exit_curves)):
        fig, ax = plt.subplots(figsize=(6, 4), layout="constrained")
        draw(report, ax)
        path = directory / name
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        out.append(path)
    return out
