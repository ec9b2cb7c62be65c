"""Trajectory metrics (RMSE in mm, Pearson correlation), per-channel and
aggregate reports, and plot emission."""

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import TONGUE_CHANNELS

log = logging.getLogger(__name__)


class MetricError(Exception):
    pass


class UndefinedCorrelation(MetricError):
    pass


@dataclass
class MetricsReport:
    channel_rmse: dict                      # channel name -> mm
    channel_cc: dict                        # channel name -> [-1, 1] or None
    mean_rmse: float
    mean_cc: float
    metadata: dict = field(default_factory=dict)

    def row(self):
        cells = [self.metadata.get("scenario", "-"),
                 self.metadata.get("variant", "-")]
        for name in sorted(self.channel_rmse):
            cells.append(f"{self.channel_rmse[name]:.3f}")
        cells.append(f"{self.mean_rmse:.3f}")
        cells.append(f"{self.mean_cc:.3f}")
        return cells


def rmse_channel(pred, truth):
    """Root mean square error over frames of one channel, in mm."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise MetricError(f"length mismatch {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def cc_channel(pred, truth):
    """Pearson correlation over pooled frames of one channel."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise MetricError(f"length mismatch {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise MetricError("correlation needs at least 2 frames")
    if np.ptp(truth) == 0:
        raise UndefinedCorrelation("truth channel is constant")
    pc = pred - pred.mean()
    tc = truth - truth.mean()
    denom = np.sqrt(np.sum(pc * pc) * np.sum(tc * tc))
    if denom == 0:
        return 0.0
    return float(np.clip(np.sum(pc * tc) / denom, -1.0, 1.0))


def aggregate(channel_values):
    """Arithmetic mean of the six per-channel values."""
    values = [channel_values[k] for k in sorted(channel_values)] \
        if isinstance(channel_values, dict) else list(channel_values)
    if len(values) != 6:
        raise MetricError(f"expected 6 channel values, got {len(values)}")
    if any(v is None or not np.isfinite(v) for v in values):
        raise MetricError("missing channel values")
    return float(np.mean(values))


def evaluate_predictions(pred_list, truth_list, channels=TONGUE_CHANNELS,
                         metadata=None, per_utterance=False):
    """Build a report from per-utterance (T,6) prediction/truth pairs in mm.

    Frames are pooled across the whole test set per channel before the
    metric is computed (the per-utterance variant averages utterance-level
    metrics instead).
    """
    if not pred_list:
        raise MetricError("empty prediction set")
    rmse, cc = {}, {}
    for c, name in enumerate(channels):
        if per_utterance:
            r = [rmse_channel(p[:, c], t[:, c])
                 for p, t in zip(pred_list, truth_list)]
            rmse[name] = float(np.mean(r))
            vals = []
            for p, t in zip(pred_list, truth_list):
                try:
                    vals.append(cc_channel(p[:, c], t[:, c]))
                except UndefinedCorrelation:
                    pass
            cc[name] = float(np.mean(vals)) if vals else None
        else:
            pred = np.concatenate([p[:, c] for p in pred_list])
            truth = np.concatenate([t[:, c] for t in truth_list])
            rmse[name] = rmse_channel(pred, truth)
            try:
                cc[name] = cc_channel(pred, truth)
            except UndefinedCorrelation:
                log.warning("channel %s: constant truth, correlation undefined",
                            name)
                cc[name] = None
    defined = [v for v in cc.values() if v is not None]
    meta = dict(metadata or {})
    meta.setdefault("n_test_utterances", len(pred_list))
    return MetricsReport(channel_rmse=rmse, channel_cc=cc,
                         mean_rmse=aggregate(rmse),
                         mean_cc=float(np.mean(defined)) if defined else np.nan,
                         metadata=meta)


def report_table(reports, csv_path=None):
    """Render reports as a text table (rows = scenario × variant)."""
    if not reports:
        raise MetricError("no reports to tabulate")
    channel_names = sorted(reports[0].channel_rmse)
    header = ["scenario", "variant"] + channel_names + ["RMSE", "CC"]
    rows = [r.row() for r in reports]
    widths = [max(len(header[i]), *(len(row[i]) for row in rows))
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    table = "\n".join(lines)
    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
    return table


def plot_outputs(report, pred, truth, out_dir, channels=TONGUE_CHANNELS,
                 all_reports=None, fmt="png"):
    """Emit predicted-vs-true trajectory overlays and a CC bar chart."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    written = []

    fig, axes = plt.subplots(3, 2, figsize=(10, 8), sharex=True)
    for c, (name, ax) in enumerate(zip(channels, axes.ravel())):
        ax.plot(truth[:, c], label="true", lw=1.2)
        ax.plot(pred[:, c], label="predicted", lw=1.0, ls="--")
        ax.set_title(name)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    fig.suptitle("Predicted vs true tongue trajectories (mm)")
    fig.tight_layout()
    path = os.path.join(out_dir, f"trajectories.{fmt}")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    reports = all_reports or [report]
    fig, ax = plt.subplots(figsize=(8, 4))
    labels = [f"{r.metadata.get('scenario', '?')}/{r.metadata.get('variant', '?')}"
              for r in reports]
    ax.bar(range(len(reports)), [r.mean_cc for r in reports])
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("mean CC")
    ax.set_title("Correlation by scenario and variant")
    fig.tight_layout()
    path = os.path.join(out_dir, f"cc_bars.{fmt}")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written
