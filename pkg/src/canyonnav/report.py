"""Result tables and figures.

Text tables use two decimals for meters and percent so they can be eyeballed
against published-style summaries; the CSV companions keep full precision.
Figures are rendered straight to files (Agg backend, no display needed).
"""

from __future__ import annotations

import csv
import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import DetectionReport, PositionMetrics

_NA = "n/a"


def format_metrics_table(metrics_by_label: dict[str, PositionMetrics]) -> str:
    """Aligned text table, one column per method."""
    labels = list(metrics_by_label)
    rows = [
        ("MEAN (m)", lambda m: f"{m.mean_2d_m:.2f}"),
        ("STD (m)", lambda m: f"{m.std_2d_m:.2f}"),
        ("Max (m)", lambda m: f"{m.max_2d_m:.2f}"),
        ("Avail", lambda m: f"{m.availability_pct:.2f} %"),
    ]
    width = max(12, *(len(l) + 2 for l in labels))
    head = "All data".ljust(12) + "".join(l.rjust(width) for l in labels)
    lines = [head, "-" * len(head)]
    for name, fmt in rows:
        lines.append(
            name.ljust(12)
            + "".join(fmt(metrics_by_label[l]).rjust(width) for l in labels)
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(path: str, metrics_by_label: dict[str, PositionMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "mean_2d_m", "std_2d_m", "max_2d_m", "availability_pct",
             "n_epochs", "n_converged"]
        )
        for label, m in metrics_by_label.items():
            writer.writerow(
                [label, f"{m.mean_2d_m:.6f}", f"{m.std_2d_m:.6f}", f"{m.max_2d_m:.6f}",
                 f"{m.availability_pct:.6f}", m.n_epochs, m.n_converged]
            )


def _acc_str(accuracy) -> str:
    return _NA if accuracy is None else f"{accuracy:.2f} %"


def format_detection_table(report: DetectionReport) -> str:
    head = "All data".ljust(26) + "".join(
        f"Elev ({b.lo_deg:.0f}-{b.hi_deg:.0f} deg)".rjust(20) for b in report.bins
    )
    lines = [head, "-" * len(head)]
    lines.append(
        "Share of NLOS sats".ljust(26)
        + "".join(f"{b.share_pct:.2f} %".rjust(20) for b in report.bins)
    )
    lines.append(
        "NLOS detection accuracy".ljust(26)
        + "".join(_acc_str(b.accuracy_pct).rjust(20) for b in report.bins)
    )
    return "\n".join(lines) + "\n"


def write_detection_csv(path: str, report: DetectionReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["bin_lo_deg", "bin_hi_deg", "n_true_nlos", "n_detected",
             "share_pct", "accuracy_pct"]
        )
        for b in report.bins:
            writer.writerow(
                [f"{b.lo_deg:.0f}", f"{b.hi_deg:.0f}", b.n_true_nlos, b.n_detected,
                 f"{b.share_pct:.6f}",
                 _NA if b.accuracy_pct is None else f"{b.accuracy_pct:.6f}"]
            )


def read_detection_csv(path: str):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            acc = row["accuracy_pct"]
            rows.append(
                (float(row["bin_lo_deg"]), float(row["bin_hi_deg"]),
                 int(row["n_true_nlos"]), int(row["n_detected"]),
                 float(row["share_pct"]), None if acc == _NA else float(acc))
            )
    return rows


def format_sweep_table(reports_by_nsw: dict[int, DetectionReport]) -> str:
    sizes = sorted(reports_by_nsw)
    first = reports_by_nsw[sizes[0]]
    head = "Window".ljust(10) + "".join(
        f"Elev ({b.lo_deg:.0f}-{b.hi_deg:.0f} deg)".rjust(20) for b in first.bins
    )
    lines = [head, "-" * len(head)]
    for n_sw in sizes:
        rep = reports_by_nsw[n_sw]
        lines.append(
            str(n_sw).ljust(10)
            + "".join(_acc_str(b.accuracy_pct).rjust(20) for b in rep.bins)
        )
    return "\n".join(lines) + "\n"


def write_sweep_csv(path: str, reports_by_nsw: dict[int, DetectionReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        first = reports_by_nsw[sorted(reports_by_nsw)[0]]
        header = ["n_sw"] + [
            f"accuracy_{b.lo_deg:.0f}_{b.hi_deg:.0f}_pct" for b in first.bins
        ]
        writer.writerow(header)
        for n_sw in sorted(reports_by_nsw):
            rep = reports_by_nsw[n_sw]
            writer.writerow(
                [n_sw]
                + [
                    _NA if b.accuracy_pct is None else f"{b.accuracy_pct:.6f}"
                    for b in rep.bins
                ]
            )


_CLASS_COLORS = {"LOS": "tab:blue", "CNLOS": "tab:orange", "FNLOS": "tab:red"}


def save_skyplot(path: str, verdict_rows, title: str = "Sky plot") -> None:
    """Polar sky plot of (epoch, sat, class, elev_deg, az_deg) rows."""
    fig, ax = plt.subplots(subplot_kw={"projection": "polar"}, figsize=(6, 6))
    ax.set_theta_zero_location("N")
    ax.set_theta_direction(-1)
    for cls, color in _CLASS_COLORS.items():
        az = [math.radians(r[4]) for r in verdict_rows if r[2] == cls]
        zen = [90.0 - r[3] for r in verdict_rows if r[2] == cls]
        if az:
            ax.scatter(az, zen, s=8, c=color, label=cls, alpha=0.6)
    ax.set_rlim(0, 90)
    ax.set_rticks([0, 30, 60, 90])
    ax.set_yticklabels(["90", "60", "30", "0"])
    ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="lower left", bbox_to_anchor=(-0.1, -0.1))
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_error_series(path: str, errors_by_label: dict[str, list], title="2-D error") -> None:
    """errors_by_label: label -> list of (epoch_s, error_m)."""
    fig, ax = plt.subplots(figsize=(9, 4))
    for label, series in errors_by_label.items():
        if not series:
            continue
        t0 = series[0][0]
        ax.plot([t - t0 for t, _ in series], [e for _, e in series],
                linewidth=0.9, label=label)
    ax.set_xlabel("epoch [s]")
    ax.set_ylabel("2-D error [m]")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_detection_bins(path: str, report: DetectionReport, title="NLOS detection") -> None:
    labels = [f"{b.lo_deg:.0f}-{b.hi_deg:.0f} deg" for b in report.bins]
    acc = [b.accuracy_pct if b.accuracy_pct is not None else 0.0 for b in report.bins]
    share = [b.share_pct for b in report.bins]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, share, 0.4, label="share of NLOS [%]", color="tab:gray")
    ax.bar(x + 0.2, acc, 0.4, label="detection accuracy [%]", color="tab:green")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 105)
    ax.set_title(title)
    ax.grid(alpha=0.3, axis="y")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sweep_figure(path: str, reports_by_nsw: dict[int, DetectionReport]) -> None:
    sizes = sorted(reports_by_nsw)
    fig, ax = plt.subplots(figsize=(6, 4))
    first = reports_by_nsw[sizes[0]]
    for i, b in enumerate(first.bins):
        ys = [
            reports_by_nsw[n].bins[i].accuracy_pct
            if reports_by_nsw[n].bins[i].accuracy_pct is not None
            else np.nan
            for n in sizes
        ]
        ax.plot(sizes, ys, marker="o", label=f"{b.lo_deg:.0f}-{b.hi_deg:.0f} deg")
    ax.set_xlabel("window size [frames]")
    ax.set_ylabel("detection accuracy [%]")
    ax.set_ylim(-5, 105)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
