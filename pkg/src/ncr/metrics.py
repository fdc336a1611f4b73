"""Smoothness, convergence and timing metrics for closed-loop runs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "numerical_gradient",
    "msd",
    "convergence_error",
    "timing_summary",
    "TimingSummary",
    "ControllerMetrics",
    "ComparisonReport",
    "controller_metrics",
]


def numerical_gradient(series, spacing: float = 1.0) -> np.ndarray:
    """Central differences inside, one-sided differences at the two ends."""
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise ValueError(f"need a 1-D series of length >= 2, got shape {y.shape}")
    return np.gradient(y, spacing, edge_order=1)


def msd(trajectories: Sequence, spacing: float = 1.0) -> float:
    """Mean squared derivative, averaged over a group of trajectories."""
    group = list(trajectories)
    if not group:
        raise ValueError("msd of an empty trajectory group")
    return float(np.mean([np.mean(numerical_gradient(t, spacing) ** 2) for t in group]))


def convergence_error(z_final, z_ref) -> float:
    """Sum of absolute per-coordinate errors."""
    a = np.asarray(z_final, dtype=np.float64).reshape(-1)
    b = np.asarray(z_ref, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.sum(np.abs(a - b)))


@dataclass(frozen=True)
class TimingSummary:
    mean: float
    median: float
    max: float


def timing_summary(record) -> TimingSummary:
    """Per-step wall-clock statistics in seconds."""
    t = getattr(record, "step_times", None)
    if t is None:
        raise ValueError("record has no timing data (timing disabled)")
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ValueError("record has no steps")
    return TimingSummary(float(np.mean(t)), float(np.median(t)), float(np.max(t)))


@dataclass(frozen=True)
class ControllerMetrics:
    controller: str
    msd_state: float
    msd_input: float
    abs_convergence_error: float
    mean_step_time: float
    median_step_time: float


def controller_metrics(record, spacing: float = 1.0) -> ControllerMetrics:
    ref = record.z_ref if record.z_ref is not None else np.zeros(record.states.shape[1])
    timing = timing_summary(record) if record.step_times is not None else TimingSummary(np.nan, np.nan, np.nan)
    return ControllerMetrics(
        record.controller,
        msd(record.states.T, spacing),
        msd(record.inputs.T, spacing),
        convergence_error(record.final_state, ref),
        timing.mean,
        timing.median,
    )


REPORT_COLUMNS = ("case", "controller", "msd_state", "msd_input", "abs_convergence_error",
                  "mean_step_time_s", "median_step_time_s")


@dataclass
class ComparisonReport:
    # case label -> controller tag -> metrics
    rows: dict[str, dict[str, ControllerMetrics]] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def add(self, case: str, m: ControllerMetrics) -> None:
        self.rows.setdefault(case, {})[m.controller] = m

    def to_csv(self, path, comment: str | None = None, timing: bool = True) -> None:
        cols = REPORT_COLUMNS if timing else REPORT_COLUMNS[:-2]
        with open(Path(path), "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(cols)
            for case, by_ctrl in self.rows.items():
                for ctrl, m in by_ctrl.items():
                    vals = [m.msd_state, m.msd_input, m.abs_convergence_error]
                    if timing:
                        vals += [m.mean_step_time, m.median_step_time]
                    writer.writerow([case, ctrl, *(repr(float(v)) for v in vals)])
            for case, msg in self.failures.items():
                writer.writerow([case, "FAILED", msg] + [""] * (len(cols) - 3))

    def table(self) -> str:
        """Metric-by-case grid, one cell per controller."""
        cases = list(self.rows)
        metrics = [("MSD (state)", "msd_state", "{:.2f}"),
                   ("MSD (input)", "msd_input", "{:.2f}"),
                   ("Abs. convergence error", "abs_convergence_error", "{:.2f}"),
                   ("Median time/step [ms]", "median_step_time", "{:.2f}")]
        width = 24
        lines = ["Metric".ljust(width) + "".join(f"Case {c}".ljust(width) for c in cases)]
        lines.append("-" * (width * (len(cases) + 1)))
        for label, attr, fmt in metrics:
            ctrls = sorted({k for c in cases for k in self.rows[c]})
            for i, ctrl in enumerate(ctrls):
                head = label if i == 0 else ""
                cells = []
                for c in cases:
                    m = self.rows[c].get(ctrl)
                    v = None if m is None else getattr(m, attr)
                    if v is not None and attr == "median_step_time":
                        v *= 1e3
                    cells.append(f"{ctrl}: " + ("-" if v is None or np.isnan(v) else fmt.format(v)))
                lines.append(head.ljust(width) + "".join(cell.ljust(width) for cell in cells))
        for case, msg in self.failures.items():
            lines.append(f"case {case} FAILED: {msg}")
        return "\n".join(lines)
