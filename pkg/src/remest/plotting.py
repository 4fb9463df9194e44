"""Figure rendering for the report paths; every CSV a command writes gets a
companion PNG next to it."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (6.0, 3.8),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
})


def save_figure(fig, path) -> None:
    fig.savefig(path)
    plt.close(fig)


def plot_training_curve(rows, path) -> None:
    """ASEE (with std band) and mean age over evaluation points."""
    episodes = np.array([r.episode for r in rows])
    asee = np.array([r.asee_mean for r in rows])
    std = np.array([r.asee_std for r in rows])
    age = np.array([r.age_mean for r in rows])
    fig, ax = plt.subplots()
    ax.plot(episodes, asee, marker="o", label="ASEE (mean over eval graphs)")
    ax.fill_between(episodes, asee - std, asee + std, alpha=0.25)
    ax2 = ax.twinx()
    ax2.plot(episodes, age, marker="s", color="tab:orange", label="mean age")
    ax2.grid(False)
    ax.set_xlabel("episode")
    ax.set_ylabel("ASEE")
    ax2.set_ylabel("age")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="best")
    save_figure(fig, path)


def plot_baseline_bars(summaries, path) -> None:
    """summaries: list of dicts with policy, asee_mean, asee_std."""
    names = [s["policy"] for s in summaries]
    means = [s["asee_mean"] for s in summaries]
    stds = [s["asee_std"] for s in summaries]
    fig, ax = plt.subplots()
    ax.bar(names, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.8)
    ax.set_ylabel("ASEE")
    ax.set_title("baseline policies on held-out graphs")
    save_figure(fig, path)


def plot_transfer(rows, path) -> None:
    """rows: dicts with num_nodes, policy_asee, uniform_asee."""
    sizes = [r["num_nodes"] for r in rows]
    fig, ax = plt.subplots()
    ax.plot(sizes, [r["policy_asee"] for r in rows], marker="o",
            label="trained policy")
    ax.plot(sizes, [r["uniform_asee"] for r in rows], marker="s",
            label="uniform baseline")
    ax.set_xlabel("network size M")
    ax.set_ylabel("ASEE")
    ax.set_title("zero-shot transfer to larger networks")
    ax.legend()
    save_figure(fig, path)


def plot_trend(rows, path, value_key: str, ylabel: str) -> None:
    """Median-over-seeds trend of a distance against sample size n."""
    sizes = sorted({r["n"] for r in rows})
    medians = [np.median([r[value_key] for r in rows if r["n"] == n])
               for n in sizes]
    fig, ax = plt.subplots()
    for n in sizes:
        vals = [r[value_key] for r in rows if r["n"] == n]
        ax.plot([n] * len(vals), vals, ".", color="tab:gray", alpha=0.4,
                markersize=4)
    ax.plot(sizes, medians, marker="o", color="tab:red", label="median")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sampled graph size n")
    ax.set_ylabel(ylabel)
    ax.legend()
    save_figure(fig, path)


def plot_bound_scatter(rows, path) -> None:
    """Measured filter distance against its transfer bound (log-log)."""
    measured = np.array([r["distance"] for r in rows])
    bounds = np.array([r["bound"] for r in rows])
    fig, ax = plt.subplots()
    ax.loglog(bounds, measured, ".", alpha=0.7)
    lim = [min(measured.min(), bounds.min()) * 0.5,
           max(measured.max(), bounds.max()) * 2]
    ax.loglog(lim, lim, "--", color="tab:gray", label="measured = bound")
    ax.set_xlabel("bound")
    ax.set_ylabel("measured distance")
    ax.legend()
    save_figure(fig, path)
