"""Unsupervised co-state network training.

Each training state is pushed through the network, the predicted co-states
drive the unconstrained optimal-input law along an ``n``-step RK4 rollout,
and the quadratic stage + terminal cost of that rollout, plus an L1 penalty
on the predicted co-states, is minimised with Adam.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import conn
from .dynamics import PlantDescriptor, rk4_batch
from .pmp import CostWeights, unconstrained_input_batch

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "DivergenceError",
    "Adam",
    "TrainResult",
    "sample_grid",
    "rollout_loss",
    "loss_graph",
    "train",
    "write_history_csv",
]

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    def __init__(self, message: str, step: int | None = None, epoch: int | None = None,
                 sample: int | None = None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch
        self.sample = sample


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    beta: float = 0.1
    horizon: int = 30
    dt: float = 0.05
    lower: Sequence[float] = (-2.0, -2.0, -2.0)
    upper: Sequence[float] = (2.0, 2.0, 2.0)
    samples_per_dim: int = 10
    seed: int = 0
    optimizer: str = "adam"
    batch_size: int = 1
    shuffle: bool = True
    dt_weighted: bool = False

    def __post_init__(self):
        self.lower = tuple(float(v) for v in self.lower)
        self.upper = tuple(float(v) for v in self.upper)
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.horizon < 1 or not self.dt > 0:
            raise ValueError(f"need horizon >= 1 and dt > 0, got {self.horizon}, {self.dt}")
        if self.samples_per_dim < 1 or self.batch_size < 1:
            raise ValueError("samples_per_dim and batch_size must be >= 1")
        if len(self.lower) != len(self.upper):
            raise ValueError("grid lower/upper lengths differ")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class LossBreakdown:
    stage: float
    terminal: float
    costate: float

    @property
    def total(self) -> float:
        return self.stage + self.terminal + self.costate


def sample_grid(cfg: TrainConfig) -> np.ndarray:
    """Evenly spaced grid over the training box, last dimension varying fastest.

    With one sample per dimension the grid collapses to the box midpoint.
    """
    lo = np.asarray(cfg.lower)
    hi = np.asarray(cfg.upper)
    if np.any(lo > hi):
        raise ValueError(f"grid lower bound exceeds upper: {lo} > {hi}")
    if cfg.samples_per_dim == 1:
        axes = [[0.5 * (a + b)] for a, b in zip(lo, hi)]
    else:
        axes = [np.linspace(a, b, cfg.samples_per_dim) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)), dtype=np.float64)


def loss_graph(arch: conn.Architecture, layers: Sequence, Z, cfg: TrainConfig, w: CostWeights,
               plant: PlantDescriptor):
    """Batch-mean stage, terminal and co-state losses for row states ``Z``.

    ``layers`` and the returned values are arrays or tape nodes alike.
    Raises :class:`DivergenceError` at the first rollout step whose state
    or running cost is non-finite.
    """
    B = Z.shape[0]
    p = plant.p
    lam_traj = conn.forward_batch(arch, layers, Z)
    step_weight = cfg.dt if cfg.dt_weighted else 1.0
    z = Z
    stage = None
    for i in range(cfg.horizon):
        lam = lam_traj[:, i * p:(i + 1) * p]
        u = unconstrained_input_batch(z, lam, w, plant)
        cost = ad.total(ad.matmul(z, w.Q) * z) + ad.total(ad.matmul(u, w.R) * u)
        stage = cost if stage is None else stage + cost
        z = rk4_batch(plant, z, u, cfg.dt)
        if not (np.all(np.isfinite(ad.value_of(z))) and np.isfinite(ad.value_of(stage)).all()):
            raise DivergenceError(f"non-finite state or cost at rollout step {i}", step=i)
    terminal = ad.total(ad.matmul(z, w.S) * z) * (1.0 / B)
    stage = stage * (step_weight / B)
    costate = ad.total(ad.absolute(lam_traj)) * (cfg.beta / B)
    return stage, terminal, costate


def rollout_loss(params: conn.ModelParams, z_k, cfg: TrainConfig, w: CostWeights,
                 plant: PlantDescriptor):
    """Loss breakdown and tape root for one state (or a ``(B, p)`` batch).

    Returns ``(LossBreakdown, root, leaves)``: ``root`` is the scalar total
    on a fresh tape and ``leaves`` are the parameter nodes in
    ``params.arrays()`` order.
    """
    if params.arch.state_dim != plant.p or params.arch.horizon != cfg.horizon:
        raise ValueError(
            f"network (p={params.arch.state_dim}, n={params.arch.horizon}) does not match "
            f"plant p={plant.p} / horizon n={cfg.horizon}")
    Z = np.atleast_2d(np.asarray(z_k, dtype=np.float64))
    tape = ad.Tape()
    leaves = [tape.variable(a) for a in params.arrays()]
    stage, terminal, costate = loss_graph(params.arch, leaves, Z, cfg, w, plant)
    root = stage + terminal + costate
    if not math.isfinite(root.value[0, 0]):
        raise DivergenceError("non-finite loss")
    breakdown = LossBreakdown(float(stage.value[0, 0]), float(terminal.value[0, 0]), float(costate.value[0, 0]))
    return breakdown, root, leaves


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, arrays: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = list(arrays)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: conn.ModelParams
    best_params: conn.ModelParams
    best_epoch: int
    # one row per epoch: (epoch, mean_stage, mean_terminal, mean_costate, mean_total)
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)

    @property
    def totals(self) -> np.ndarray:
        return np.array([row[4] for row in self.history])


def train(cfg: TrainConfig, w: CostWeights, plant: PlantDescriptor, params: conn.ModelParams,
          data: np.ndarray | None = None,
          on_epoch: Callable[[int, tuple], None] | None = None) -> TrainResult:
    """Train a copy of ``params``; ``data`` defaults to :func:`sample_grid`."""
    params = params.copy()
    data = sample_grid(cfg) if data is None else np.atleast_2d(np.asarray(data, dtype=np.float64))
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params.arrays(), lr=cfg.lr)
    history = []
    best_total, best_epoch, best = math.inf, 0, params.copy()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data)) if cfg.shuffle else np.arange(len(data))
        sums = np.zeros(3)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                breakdown, root, leaves = rollout_loss(params, data[idx], cfg, w, plant)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}, sample {int(idx[0])}: {exc}", step=exc.step,
                                      epoch=epoch, sample=int(idx[0])) from exc
            grads = ad.backward(root)
            opt.step([grads.wrt(leaf) for leaf in leaves])
            sums += len(idx) * np.array([breakdown.stage, breakdown.terminal, breakdown.costate])
        means = sums / len(data)
        row = (epoch, *map(float, means), float(means.sum()))
        history.append(row)
        if row[4] < best_total:
            best_total, best_epoch, best = row[4], epoch, params.copy()
        log.info("epoch %d/%d  stage %.4g  terminal %.4g  costate %.4g  total %.4g", *row[:1], cfg.epochs, *row[1:])
        if on_epoch is not None:
            on_epoch(epoch, row)
    return TrainResult(params, best, best_epoch, history)


HISTORY_COLUMNS = ("epoch", "mean_stage", "mean_terminal", "mean_costate", "mean_total")


def write_history_csv(history, path, comment: str | None = None) -> None:
    with open(Path(path), "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for epoch, *vals in history:
            writer.writerow([epoch, *(repr(float(v)) for v in vals)])
