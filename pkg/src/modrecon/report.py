"""Figure and summary rendering for training metrics and traces.

Every report call writes PNG figures next to a delimited summary so runs
can be inspected without replaying them.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lattice import Configuration, config_from_dict, mismatch_count  # noqa: E402
from .pipeline import Trace  # noqa: E402

FIGSIZE = (6.4, 4.0)


def _rolling_mean(values: np.ndarray, window: int) -> np.ndarray:
    if len(values) == 0:
        return values
    window = max(1, min(window, len(values)))
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out: dict[str, np.ndarray] = {}
    if not rows:
        return {k: np.zeros(0) for k in
                ("global_step", "episode", "return", "final_mismatch", "wall_ms")}
    for key in rows[0]:
        out[key] = np.array([float(r[key]) for r in rows])
    return out


def render_training_report(metrics_path, out_dir, window: int = 25) -> list[str]:
    """Return/mismatch curves as PNGs plus a rolling-mean summary CSV."""
    os.makedirs(out_dir, exist_ok=True)
    metrics = read_metrics(metrics_path)
    written = []

    steps = metrics["global_step"]
    for column, label, fname in (
        ("return", "episode return", "return_curve.png"),
        ("final_mismatch", "final mismatch", "mismatch_curve.png"),
    ):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ax.plot(steps, metrics[column], alpha=0.3, label="per episode")
        smooth = _rolling_mean(metrics[column], window)
        if len(smooth):
            ax.plot(steps[len(steps) - len(smooth):], smooth,
                    label=f"rolling mean ({min(window, len(steps))})")
        ax.set_xlabel("environment steps")
        ax.set_ylabel(label)
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    summary_path = os.path.join(out_dir, "training_summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episodes", "total_steps", "mean_return_last10",
                    "mean_mismatch_last10", "final_mismatch_last"])
        if len(steps):
            w.writerow([
                int(metrics["episode"][-1]),
                int(steps[-1]),
                float(np.mean(metrics["return"][-10:])),
                float(np.mean(metrics["final_mismatch"][-10:])),
                float(metrics["final_mismatch"][-1]),
            ])
    written.append(summary_path)
    return written


def render_trace_report(trace: Trace, out_dir) -> list[str]:
    """Joint curves and mismatch-versus-time from a replay trace."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    times = np.array([f["t"] for f in trace.frames])
    joints = np.array([f["joints"] for f in trace.frames])

    fig, ax = plt.subplots(figsize=FIGSIZE)
    for j in range(joints.shape[1] if joints.size else 0):
        ax.plot(times, joints[:, j], label=f"joint {j + 1}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("joint angle [rad]")
    ax.legend(ncol=3, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "trace_joints.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    target = config_from_dict(trace.header["target"])
    mismatches = []
    for frame in trace.frames:
        attached = [m for m in frame["modules"] if m["attached"]]
        if len(attached) != len(target.modules):
            mismatches.append(np.nan)
            continue
        config = config_from_dict({
            "anchor_id": trace.header["start"]["anchor_id"],
            "modules": [
                {"id": m["id"], "pos": [int(round(v)) for v in m["pos"]],
                 "orient": m["orient"], "function": ""}
                for m in attached
            ],
        })
        mismatches.append(mismatch_count(config, target))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(times, mismatches, drawstyle="steps-post")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("modules out of place")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "trace_mismatch.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    summary_path = os.path.join(out_dir, "trace_summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frames", "duration_s", "steps", "final_mismatch"])
        steps = {f["step"] for f in trace.frames if f["step"] >= 0}
        final = mismatches[-1] if mismatches else ""
        w.writerow([len(trace.frames),
                    float(times[-1]) if len(times) else 0.0,
                    len(steps), final])
    written.append(summary_path)
    return written


def render_generalization_report(curves: dict[str, list[int]], out_dir) -> list[str]:
    """Mismatch-versus-step curves for policy evaluation cases."""
    os.makedirs(out_dir, exist_ok=True)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for name, series in curves.items():
        ax.plot(range(len(series)), series, marker="o", label=name)
    ax.set_xlabel("plan step")
    ax.set_ylabel("modules out of place")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig_path = os.path.join(out_dir, "generalization.png")
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = os.path.join(out_dir, "generalization.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "step", "mismatch"])
        for name, series in curves.items():
            for i, v in enumerate(series):
                w.writerow([name, i, v])
    return [fig_path, csv_path]


def mismatch_curve(net, start: Configuration, target: Configuration,
                   max_steps: int = 64) -> list[int]:
    """Greedy-policy mismatch trajectory, for the generalization harness."""
    from .a3c import NoPlanFoundError, plan
    from .lattice import apply_action

    curve = [mismatch_count(start, target)]
    try:
        result = plan(net, start, target, max_steps=max_steps, allow_fallback=False)
        state = start
        for action in result.actions:
            state = apply_action(state, action)
            curve.append(mismatch_count(state, target))
    except NoPlanFoundError:
        pass
    return curve
