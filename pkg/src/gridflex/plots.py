"""Figure rendering and plot-data emission for simulation runs.

Figures are rendered headlessly to PNG next to the delimited data series;
every artifact carries the run's config fingerprint (figure footer + PNG
metadata) so plots can always be traced back to the exact configuration.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _stamp(fig, fingerprint: str) -> dict:
    if fingerprint:
        fig.text(0.99, 0.01, f"config {fingerprint}", ha="right", va="bottom",
                 fontsize=6, color="0.5")
    return {"Software": f"gridflex config={fingerprint or 'unknown'}"}


def save_demand_figure(path, trace, benchmark, fingerprint: str = "") -> Path:
    """Mean daily profile plus the single worst benchmark-peak day."""
    agg = trace.aggregate_matrix()
    agg0 = benchmark.aggregate_matrix()
    worst = int(np.argmax(agg0.max(axis=1)))
    slots = np.arange(agg.shape[1])
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    axes[0].plot(slots, agg0.mean(axis=0), label="benchmark", color="0.4")
    axes[0].plot(slots, agg.mean(axis=0), label=trace.mode_variant or "mode",
                 color="tab:blue")
    axes[0].set_title("mean daily aggregate")
    axes[1].plot(slots, agg0[worst], color="0.4", label="benchmark")
    axes[1].plot(slots, agg[worst], color="tab:blue",
                 label=trace.mode_variant or "mode")
    axes[1].set_title(f"worst benchmark day (day {worst})")
    for ax in axes:
        ax.set_xlabel("slot")
        ax.legend(fontsize=8)
    axes[0].set_ylabel("aggregate demand (kW)")
    meta = _stamp(fig, fingerprint)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)
    return path


def save_price_figure(path, trace, fingerprint: str = "") -> Path:
    """All daily price curves, early days light, late days dark."""
    days = [d for d in trace.days if d.prices is not None]
    fig, ax = plt.subplots(figsize=(7, 4))
    if days:
        cmap = plt.get_cmap("viridis")
        for rec in days:
            ax.plot(rec.prices, color=cmap(rec.date_index / max(len(trace.days) - 1, 1)),
                    lw=0.8, alpha=0.7)
        sm = plt.cm.ScalarMappable(cmap=cmap,
                                   norm=plt.Normalize(0, len(trace.days) - 1))
        fig.colorbar(sm, ax=ax, label="day")
    else:
        ax.text(0.5, 0.5, "no price signal in this mode", ha="center",
                va="center", transform=ax.transAxes)
    ax.set_xlabel("slot")
    ax.set_ylabel("price signal")
    meta = _stamp(fig, fingerprint)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)
    return path


def save_peaks_figure(path, trace, benchmark, fingerprint: str = "") -> Path:
    agg = trace.aggregate_matrix().max(axis=1)
    agg0 = benchmark.aggregate_matrix().max(axis=1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(agg0, label="benchmark peak", color="0.4")
    ax.plot(agg, label=f"{trace.mode_variant or 'mode'} peak", color="tab:blue")
    ax.set_xlabel("day")
    ax.set_ylabel("daily peak (kW)")
    ax.legend(fontsize=8)
    meta = _stamp(fig, fingerprint)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)
    return path


def write_plot_data(outdir, trace, benchmark) -> None:
    """Per-day delimited series: demand curves and price curves."""
    outdir = Path(outdir)
    demand_dir = outdir / "curves"
    price_dir = outdir / "prices"
    demand_dir.mkdir(parents=True, exist_ok=True)
    price_dir.mkdir(parents=True, exist_ok=True)
    for rec, rec0 in zip(trace.days, benchmark.days):
        with open(demand_dir / f"demand_day_{rec.date_index:04d}.csv", "w",
                  newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "benchmark_kw", "mode_kw"])
            for s in range(rec.aggregate_demand_kw.size):
                w.writerow([s, f"{rec0.aggregate_demand_kw[s]:.17g}",
                            f"{rec.aggregate_demand_kw[s]:.17g}"])
        if rec.prices is not None:
            with open(price_dir / f"day_{rec.date_index:04d}.csv", "w",
                      newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["slot", "price"])
                for s in range(rec.prices.size):
                    w.writerow([s, f"{rec.prices[s]:.17g}"])
