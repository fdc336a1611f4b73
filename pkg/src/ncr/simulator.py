"""Closed-loop NCR simulation and the trajectory record shared with the MPC baseline."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import conn, qp
from .dynamics import InputBounds, IntegrationError, PlantDescriptor, rk4_step
from .pmp import CostWeights

__all__ = ["SimConfig", "TrajectoryRecord", "SimulationError", "ncr_step", "simulate", "read_trajectory_csv"]


class SimulationError(RuntimeError):
    """Closed-loop failure; ``record`` holds the steps completed so far."""

    def __init__(self, message: str, step: int, record: "TrajectoryRecord | None" = None):
        super().__init__(message)
        self.step = step
        self.record = record


@dataclass
class SimConfig:
    z0: np.ndarray
    z_ref: np.ndarray | None = None
    bounds: InputBounds | None = None
    dt: float = 0.05
    steps: int = 200
    timing: bool = True
    absolute_angle: bool = False

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=np.float64).reshape(-1)
        self.z_ref = np.zeros_like(self.z0) if self.z_ref is None else np.asarray(self.z_ref, dtype=np.float64).reshape(-1)
        if self.z_ref.shape != self.z0.shape:
            raise ValueError(f"z_ref length {self.z_ref.size} != z0 length {self.z0.size}")
        if self.steps < 1 or not self.dt > 0:
            raise ValueError(f"need steps >= 1 and dt > 0, got {self.steps}, {self.dt}")


@dataclass
class TrajectoryRecord:
    """Logged closed-loop run: ``N+1`` states, ``N`` inputs / co-states / step times."""

    controller: str
    dt: float
    states: np.ndarray
    inputs: np.ndarray
    costates: np.ndarray | None = None
    step_times: np.ndarray | None = None
    z_ref: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.inputs)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def check(self) -> None:
        n = self.n_steps
        if len(self.states) != n + 1:
            raise ValueError(f"{len(self.states)} states for {n} inputs")
        for name in ("costates", "step_times"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{len(arr)} {name} for {n} inputs")

    def to_csv(self, path, comment: str | None = None, timing: bool = True) -> None:
        """One row per state sample ``t, z..., u..., lam..., step_wall_time_s``.

        The last row (final state) has empty input, co-state and time cells.
        ``timing=False`` drops the wall-time column for reproducible output.
        """
        p = self.states.shape[1]
        q = self.inputs.shape[1] if self.inputs.size else 0
        header = ["t", *(f"z{i + 1}" for i in range(p)), *(f"u{j + 1}" for j in range(q))]
        if self.costates is not None:
            header += [f"lam{i + 1}" for i in range(p)]
        if timing:
            header.append("step_wall_time_s")
        with open(Path(path), "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write(f"# controller={self.controller}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t)), *(repr(float(v)) for v in self.states[k])]
                if k < self.n_steps:
                    row += [repr(float(v)) for v in self.inputs[k]]
                    if self.costates is not None:
                        row += [repr(float(v)) for v in self.costates[k]]
                    if timing:
                        row.append(repr(float(self.step_times[k])) if self.step_times is not None else "")
                else:
                    row += [""] * (len(header) - len(row))
                writer.writerow(row)


def read_trajectory_csv(path) -> TrajectoryRecord:
    controller = "?"
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("# controller="):
                controller = line.strip().split("=", 1)[1]
            elif not line.startswith("#"):
                lines.append(line)
        reader = csv.reader(lines)
        header = next(reader)
        rows = list(reader)
    col = {name: i for i, name in enumerate(header)}
    zc = [col[h] for h in header if h.startswith("z")]
    uc = [col[h] for h in header if h.startswith("u")]
    lc = [col[h] for h in header if h.startswith("lam")]
    t = np.array([float(r[0]) for r in rows])
    states = np.array([[float(r[i]) for i in zc] for r in rows])
    body = rows[:-1]
    inputs = np.array([[float(r[i]) for i in uc] for r in body]).reshape(len(body), len(uc))
    costates = np.array([[float(r[i]) for i in lc] for r in body]).reshape(len(body), len(lc)) if lc else None
    step_times = None
    if "step_wall_time_s" in col:
        step_times = np.array([float(r[col["step_wall_time_s"]]) for r in body])
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    return TrajectoryRecord(controller, dt, states, inputs, costates, step_times)


def ncr_step(params: conn.ModelParams, z, z_ref, bounds: InputBounds, w: CostWeights,
             plant: PlantDescriptor, absolute_angle: bool = False):
    """Constrained input and the co-state used to compute it.

    The network sees the error state ``z - z_ref``. ``g`` in the QP is
    evaluated at the error state too, unless ``absolute_angle``.
    """
    z = np.asarray(z, dtype=np.float64)
    e = z - np.asarray(z_ref, dtype=np.float64)
    lam = conn.forward(params, e)[0]
    problem = qp.build_problem(z if absolute_angle else e, lam, w.R, bounds, plant)
    return qp.solve(problem), lam


def simulate(params: conn.ModelParams, cfg: SimConfig, w: CostWeights, plant: PlantDescriptor) -> TrajectoryRecord:
    bounds = cfg.bounds or plant.default_bounds
    if bounds is None:
        raise ValueError(f"no input bounds given and plant {plant.name!r} has no default")
    if cfg.z0.size != plant.p or params.arch.state_dim != plant.p:
        raise ValueError(
            f"dimension mismatch: z0 has {cfg.z0.size}, network expects {params.arch.state_dim}, plant {plant.p}")
    N = cfg.steps
    states = np.zeros((N + 1, plant.p))
    inputs = np.zeros((N, plant.q))
    lams = np.zeros((N, plant.p))
    times = np.zeros(N)
    states[0] = cfg.z0
    clock = time.perf_counter
    for k in range(N):
        try:
            t0 = clock()
            u, lam = ncr_step(params, states[k], cfg.z_ref, bounds, w, plant, cfg.absolute_angle)
            times[k] = clock() - t0
            inputs[k], lams[k] = u, lam
            states[k + 1] = rk4_step(plant, states[k], u, cfg.dt)
        except (IntegrationError, ValueError, FloatingPointError) as exc:
            partial = TrajectoryRecord("NCR", cfg.dt, states[:k + 1], inputs[:k], lams[:k], times[:k], cfg.z_ref)
            raise SimulationError(f"step {k}: {exc}", k, partial) from exc
    return TrajectoryRecord("NCR", cfg.dt, states, inputs, lams, times if cfg.timing else None, cfg.z_ref.copy())
