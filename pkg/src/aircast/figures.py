"""Headless matplotlib rendering for run artifacts.

Every CLI path that produces a delimited report also drops a PNG next
to it. PNGs are presentation artifacts: they are excluded from the
byte-determinism guarantees the CSV/JSON outputs carry.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

POLLUTANT_LABELS = {"pm25": "PM2.5 (ug/m3)", "o3": "O3 (ug/m3)"}


def _finish(fig, path):
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_training_curves(report, path) -> None:
    """Two panels: L1 train/val per epoch, and the constraint components."""
    epochs = [r.epoch for r in report.records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6),
                                   constrained_layout=True)
    ax1.plot(epochs, [r.train.l1 for r in report.records], label="train L1")
    ax1.plot(epochs, [r.val.l1 for r in report.records], label="val L1")
    ax1.plot(epochs, [r.val_mae for r in report.records],
             label="val MAE (raw units)", linestyle="--")
    if report.best_epoch:
        ax1.axvline(report.best_epoch, color="gray", alpha=0.4, linewidth=1)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss / MAE")
    ax1.legend(fontsize=8)
    ax1.set_title("objective")

    ax2.plot(epochs, [r.train.dic_spatial for r in report.records],
             label="spatial imbalance")
    ax2.plot(epochs, [r.train.dic_temporal for r in report.records],
             label="temporal imbalance")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("constraint value")
    ax2.legend(fontsize=8)
    ax2.set_title("mass-balance terms (train)")
    _finish(fig, path)


def render_leadtime_curves(reports: list, path) -> None:
    """MAE versus lead hour, one panel per pollutant, one line per model."""
    pollutants = reports[0].pollutants
    fig, axes = plt.subplots(1, len(pollutants), figsize=(9.5, 3.6),
                             constrained_layout=True)
    if len(pollutants) == 1:
        axes = [axes]
    for ci, (ax, pol) in enumerate(zip(axes, pollutants)):
        for rep in reports:
            ax.plot(rep.lead_hours, rep.mae[:, ci], marker="o",
                    markersize=3, label=rep.tag)
        ax.set_xlabel("lead time (h)")
        ax.set_ylabel("MAE")
        ax.set_title(POLLUTANT_LABELS.get(pol, pol))
        ax.legend(fontsize=8)
    _finish(fig, path)


def render_suite_bars(result, path) -> None:
    """Mean overall MAE per configuration tag with per-seed dots."""
    tags = result.tags()
    means = [result.mean_overall_mae(t) for t in tags]
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(tags), 3.8),
                           constrained_layout=True)
    xs = np.arange(len(tags))
    ax.bar(xs, means, color="#7aa6c2", zorder=2)
    for xi, tag in zip(xs, tags):
        seeds = sorted(s for t, s in result.reports if t == tag)
        vals = [result.reports[(tag, s)].overall_mae() for s in seeds]
        ax.scatter([xi] * len(vals), vals, color="#1f3b57", s=12, zorder=3)
    ax.set_xticks(xs)
    ax.set_xticklabels(tags, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean MAE over leads (ug/m3)")
    ax.set_title("configuration sweep")
    _finish(fig, path)


def render_dic_curves(result, path) -> None:
    """Training-time constraint trajectories per cell, for the lambda sweep."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8), constrained_layout=True)
    for (tag, seed), tr in sorted(result.train_reports.items()):
        dic = [r.train.dic_spatial + r.train.dic_temporal for r in tr.records]
        ax.plot(range(1, len(dic) + 1), dic, label=f"{tag} seed {seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("spatial + temporal imbalance")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.set_title("constraint trajectories")
    _finish(fig, path)


def render_forecast(timestamps, station_ids, pred, truth, path,
                    pollutants=("pm25", "o3")) -> None:
    """Per-station forecast traces; dashed prediction over solid truth.

    pred/truth are (T, V, 2) in raw units; truth may be None when the
    horizon extends past the observed series.
    """
    t_axis = np.arange(1, pred.shape[0] + 1)
    fig, axes = plt.subplots(1, pred.shape[2], figsize=(9.5, 3.6),
                             constrained_layout=True)
    if pred.shape[2] == 1:
        axes = [axes]
    cmap = plt.get_cmap("tab10")
    for ci, (ax, pol) in enumerate(zip(axes, pollutants)):
        for vi, sid in enumerate(station_ids):
            color = cmap(vi % 10)
            if truth is not None:
                ax.plot(t_axis, truth[:, vi, ci], color=color, alpha=0.45,
                        linewidth=1.0)
            ax.plot(t_axis, pred[:, vi, ci], color=color, linestyle="--",
                    linewidth=1.0, label=sid if ci == 0 else None)
        ax.set_xlabel("lead time (h)")
        ax.set_ylabel(POLLUTANT_LABELS.get(pol, pol))
        ax.set_title(f"{pol}: forecast (dashed) vs observed")
    if len(station_ids) <= 12:
        fig.legend(fontsize=6, loc="outside right center")
    _finish(fig, path)
