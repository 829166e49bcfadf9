"""Per-frame CSV reports, summary tables, figures, and overlays.

Column order and float formatting are fixed so reruns with identical
inputs produce byte-identical files. The figure files (success and
precision curves, fusion-weight timeline) are rendered next to the CSVs;
the CSVs remain the machine-readable contract.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .errors import (ConfigError, DataError, InvalidInputError,
                     NumericalError, ShapeError)
from .sequences import Sequence, write_ppm
from .tracker import TargetState, Tracker

FRAME_CSV_HEADER = "frame,x,y,w,h,beta_d,beta_s,xi,loss"
SUMMARY_CSV_HEADER = "sequence,mode,frames,auc,op_0.50,op_0.75,dp_20,error"

TRACKER_ERRORS = (ConfigError, DataError, InvalidInputError, NumericalError,
                  ShapeError)


@dataclass
class SequenceRun:
    "Everything produced by tracking one sequence."

    name: str
    mode: str
    rows: list
    states: list
    report: object = None
    error: str = ""

    @property
    def mode_slug(self) -> str:
        return self.mode.replace(":", "_")


def run_sequence(sequence: Sequence, cfg=None, mode: str = "adaptive",
                 name: str | None = None) -> SequenceRun:
    """Track a sequence from its first ground-truth box.

    Frame 0 is the initialization frame; its row carries the even
    weight split and zero slack by convention. Tracker failures are
    recorded and truncate the run instead of raising.
    """
    name = name if name is not None else sequence.name
    init_box = tuple(sequence.ground_truth[0])
    initial = TargetState.from_box(init_box)
    rows = [(0, *init_box, 0.5, 0.5, 0.0, 0.0)]
    states = [initial]
    error = ""
    try:
        trk = Tracker(sequence.frames[0], initial, cfg, mode=mode)
        for k in range(1, len(sequence)):
            state, fused, _ = trk.process_frame(sequence.frames[k])
            states.append(state)
            rows.append((k, *state.box, fused.beta_d, fused.beta_s,
                         fused.xi, fused.loss))
    except TRACKER_ERRORS as exc:
        error = f"frame {len(states)}: {exc}"
    report = None
    if not error and len(states) == len(sequence):
        report = metrics.success_metrics([s.box for s in states],
                                         sequence.ground_truth)
    return SequenceRun(name, mode, rows, states, report, error)


# ---------------------------------------------------------------------------
# delimited output


def _format_row(row) -> str:
    frame = f"{int(row[0])}"
    box = [f"{float(v):.4f}" for v in row[1:5]]
    betas = [f"{float(v):.6f}" for v in row[5:7]]
    tail = [f"{float(v):.9g}" for v in row[7:9]]
    return ",".join([frame, *box, *betas, *tail])


def write_frame_csv(path, rows) -> None:
    "One row per frame: box, fusion weights, slack, loss."
    lines = [FRAME_CSV_HEADER]
    lines.extend(_format_row(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _summary_line(run: SequenceRun) -> str:
    if run.report is None:
        stats = ["", "", "", ""]
    else:
        stats = [f"{run.report.auc:.6f}", f"{run.report.op_at_50:.6f}",
                 f"{run.report.op_at_75:.6f}", f"{run.report.dp_at_20:.6f}"]
    error = run.error.replace(",", ";").replace("\n", " ")
    return ",".join([run.name, run.mode, str(len(run.rows)), *stats, error])


def write_summary_csv(path, runs) -> None:
    "Summary table over sequences; failed runs keep their error text."
    lines = [SUMMARY_CSV_HEADER]
    lines.extend(_summary_line(run) for run in runs)
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# figures


def render_figures(out_dir, run: SequenceRun) -> list:
    "Success, precision, and weight-timeline figures next to the CSVs."
    if run.report is None:
        return []
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []

    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    axes[0].plot(metrics.OP_THRESHOLDS, run.report.op_curve)
    axes[0].set_xlabel("overlap threshold")
    axes[0].set_ylabel("overlap precision")
    axes[0].set_title(f"success (AUC {run.report.auc:.3f})")
    axes[0].set_ylim(-0.02, 1.02)
    axes[1].plot(metrics.DP_THRESHOLDS, run.report.dp_curve)
    axes[1].set_xlabel("center error threshold [px]")
    axes[1].set_ylabel("distance precision")
    axes[1].set_title(f"precision (DP@20 {run.report.dp_at_20:.3f})")
    axes[1].set_ylim(-0.02, 1.02)
    fig.tight_layout()
    curves_path = out_dir / f"{run.name}_{run.mode_slug}_curves.png"
    fig.savefig(curves_path, dpi=110)
    plt.close(fig)
    written.append(curves_path)

    frames = [row[0] for row in run.rows]
    beta_d = [row[5] for row in run.rows]
    fig, ax = plt.subplots(figsize=(9.0, 2.8))
    ax.plot(frames, beta_d, label="deep weight")
    ax.axhline(0.5, linestyle=":", linewidth=0.8, color="gray")
    ax.set_xlabel("frame")
    ax.set_ylabel("beta_d")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="upper right")
    fig.tight_layout()
    weights_path = out_dir / f"{run.name}_{run.mode_slug}_weights.png"
    fig.savefig(weights_path, dpi=110)
    plt.close(fig)
    written.append(weights_path)
    return written


# ---------------------------------------------------------------------------
# overlays


def _burn_box(frame: np.ndarray, box, color) -> None:
    h, w = frame.shape[:2]
    x0 = int(np.clip(round(box[0]), 0, w - 1))
    y0 = int(np.clip(round(box[1]), 0, h - 1))
    x1 = int(np.clip(round(box[0] + box[2]), 0, w - 1))
    y1 = int(np.clip(round(box[1] + box[3]), 0, h - 1))
    frame[y0, x0:x1 + 1] = color
    frame[y1, x0:x1 + 1] = color
    frame[y0:y1 + 1, x0] = color
    frame[y0:y1 + 1, x1] = color


def render_overlays(out_dir, sequence: Sequence, run: SequenceRun) -> None:
    "Burn predicted (light) and ground-truth (dark) boxes into pixmaps."
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, state in enumerate(run.states):
        frame = np.clip(np.asarray(sequence.frames[k], dtype=np.float64),
                        0.0, 1.0).copy()
        _burn_box(frame, sequence.ground_truth[k], (0.0, 0.35, 0.0))
        _burn_box(frame, state.box, (1.0, 1.0, 0.2))
        write_ppm(out_dir / f"{k + 1:04d}.ppm", frame)


# ---------------------------------------------------------------------------
# batch evaluation


def run_eval(named_sequences, cfg=None, mode: str = "adaptive",
             out_dir="out", overlay: bool = False,
             figures: bool = True) -> list:
    """Track every sequence, write reports, and return the runs.

    Per-sequence tracker errors land in the summary; the batch
    continues. An empty input still writes the summary header.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    for item in named_sequences:
        name, sequence = item if isinstance(item, tuple) else (item.name,
                                                               item)
        run = run_sequence(sequence, cfg, mode, name=name)
        write_frame_csv(out_dir / f"{name}_{run.mode_slug}_frames.csv",
                        run.rows)
        if figures:
            render_figures(out_dir, run)
        if overlay:
            render_overlays(out_dir / "overlay" / name, sequence, run)
        runs.append(run)
    write_summary_csv(out_dir / "summary.csv", runs)
    return runs
