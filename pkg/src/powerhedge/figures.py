"""Report figures: monthly payoff bars and the cumulative excess curve.

Rendering is separate from report emission on purpose; the CLI report path
calls this after writing the delimited files when figures are enabled.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError


def _fig_width(n_months):
    return max(6.0, 0.55 * n_months + 2.5)


def render_figures(report, out_dir):
    """Write monthly_payoffs.png and cumulative_excess.png; returns paths.

    Skipped months appear as gaps in the bars and are absent from the
    cumulative curve.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from None

    months = list(report.months)
    by_month = {r.month: r for r in report.rows}
    model = [by_month[m].payoff_mio_gbp if m in by_month else np.nan for m in months]
    cmp_pay = [by_month[m].cmp_payoff_mio_gbp if m in by_month else np.nan for m in months]
    idx = np.arange(len(months))

    fig, ax = plt.subplots(figsize=(_fig_width(len(months)), 4.0))
    width = 0.38
    ax.bar(idx - width / 2, model, width, label=report.model_label, color="#2c6fbb")
    ax.bar(idx + width / 2, cmp_pay, width, label=report.comparator_label, color="#c8a24b")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(idx)
    ax.set_xticklabels(months, rotation=45, ha="right")
    ax.set_ylabel("realized payoff (mio GBP)")
    ax.set_title("Monthly realized payoffs")
    ax.legend()
    fig.tight_layout()
    bars_path = os.path.join(out_dir, "monthly_payoffs.png")
    fig.savefig(bars_path, dpi=120)
    plt.close(fig)

    cum_months = [m for m, _ in report.cumulative]
    cum_vals = [v for _, v in report.cumulative]
    fig, ax = plt.subplots(figsize=(_fig_width(len(months)), 3.6))
    ax.plot(range(len(cum_months)), cum_vals, marker="o", color="#2c6fbb")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(range(len(cum_months)))
    ax.set_xticklabels(cum_months, rotation=45, ha="right")
    ax.set_ylabel("cumulative excess (mio GBP)")
    ax.set_title(f"{report.model_label} payoff in excess of {report.comparator_label}")
    fig.tight_layout()
    curve_path = os.path.join(out_dir, "cumulative_excess.png")
    fig.savefig(curve_path, dpi=120)
    plt.close(fig)
    return [bars_path, curve_path]
