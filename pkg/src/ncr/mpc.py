"""Receding-horizon nonlinear MPC by direct single shooting.

The decision variables are the ``P x q`` inputs over the horizon; the
objective is the quadratic stage cost along an RK4 rollout plus the
terminal cost. Each solve runs projected gradient descent with a monotone
Armijo backtracking search along the projection arc; gradients come from
the autodiff tape.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dynamics import InputBounds, IntegrationError, PlantDescriptor, rk4_batch, rk4_step
from .pmp import CostWeights
from .simulator import SimulationError, TrajectoryRecord

__all__ = ["MpcConfig", "SolveInfo", "MpcDivergenceError", "objective", "value_and_grad", "solve_ocp", "run_mpc"]


class MpcDivergenceError(ArithmeticError):
    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


@dataclass
class MpcConfig:
    horizon: int
    weights: CostWeights
    bounds: InputBounds
    dt: float = 0.05
    max_iter: int = 500
    tol: float = 1e-6
    warm_start: bool = True
    armijo: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 30
    ftol: float = 1e-12

    def __post_init__(self):
        if self.horizon < 1 or self.max_iter < 1:
            raise ValueError(f"need horizon >= 1 and max_iter >= 1, got {self.horizon}, {self.max_iter}")
        if not self.tol > 0 or not self.dt > 0:
            raise ValueError("tolerance and dt must be positive")


@dataclass
class SolveInfo:
    cost: float
    iterations: int
    converged: bool
    pg_norm: float


def objective(U, z0, cfg: MpcConfig, plant: PlantDescriptor, z_ref=None):
    """Shooting cost of input sequence ``U`` (``(P, q)`` array or tape node) as a 1x1 tensor."""
    w = cfg.weights
    z = np.asarray(z0, dtype=np.float64).reshape(1, -1)
    ref = np.zeros_like(z) if z_ref is None else np.asarray(z_ref, dtype=np.float64).reshape(1, -1)
    J = None
    for k in range(cfg.horizon):
        u = U[k:k + 1, :]
        e = z - ref
        cost = ad.total(ad.matmul(e, w.Q) * e) + ad.total(ad.matmul(u, w.R) * u)
        J = cost if J is None else J + cost
        z = rk4_batch(plant, z, u, cfg.dt)
    e = z - ref
    return J + ad.total(ad.matmul(e, w.S) * e)


def value_and_grad(U, z0, cfg: MpcConfig, plant: PlantDescriptor, z_ref=None):
    tape = ad.Tape()
    leaf = tape.variable(U)
    root = objective(leaf, z0, cfg, plant, z_ref)
    return float(root.value[0, 0]), ad.backward(root).wrt(leaf)


def _cost(U, z0, cfg, plant, z_ref) -> float:
    return float(objective(U, z0, cfg, plant, z_ref)[0, 0])


def solve_ocp(z_t, cfg: MpcConfig, plant: PlantDescriptor, warm=None, z_ref=None):
    """Minimise the shooting objective over the input box.

    Returns ``(U, info)`` with ``U`` of shape ``(P, q)``. The first trial
    step of each line search is ``initial_step`` on the first iteration and
    the Barzilai-Borwein step (capped at ``initial_step``) afterwards;
    accepted iterates never increase the objective. Besides the
    projected-gradient tolerance, the solve stops once an iteration lowers
    the objective by less than ``ftol`` relative, or the line search
    exhausts ``max_backtracks``; both mean the objective is flat to
    working precision.
    """
    lo, hi = cfg.bounds.lower, cfg.bounds.upper
    shape = (cfg.horizon, plant.q)
    if warm is None:
        U = np.zeros(shape)
    else:
        U = np.asarray(warm, dtype=np.float64)
        if U.shape != shape:
            raise ValueError(f"warm start must have shape {shape}, got {U.shape}")
    U = np.clip(U, lo, hi)

    f, G = value_and_grad(U, z_t, cfg, plant, z_ref)
    if not np.isfinite(f):
        raise MpcDivergenceError("non-finite objective at initial guess", 0)
    U_prev = G_prev = None
    pg = np.linalg.norm(U - np.clip(U - G, lo, hi))
    it = 0
    converged = pg <= cfg.tol
    while not converged and it < cfg.max_iter:
        t = cfg.initial_step
        if U_prev is not None:
            s, y = U - U_prev, G - G_prev
            sy = float(np.vdot(s, y))
            if sy > 0:
                t = min(cfg.initial_step, float(np.vdot(s, s)) / sy)
        for _ in range(cfg.max_backtracks + 1):
            U_new = np.clip(U - t * G, lo, hi)
            f_new = _cost(U_new, z_t, cfg, plant, z_ref)
            if np.isfinite(f_new) and f_new <= f + cfg.armijo * float(np.vdot(G, U_new - U)):
                break
            t *= cfg.backtrack
        else:
            break
        it += 1
        f_old = f
        U_prev, G_prev = U, G
        U = U_new
        f, G = value_and_grad(U, z_t, cfg, plant, z_ref)
        if not np.isfinite(f):
            raise MpcDivergenceError(f"non-finite objective at iteration {it}", it)
        pg = np.linalg.norm(U - np.clip(U - G, lo, hi))
        converged = pg <= cfg.tol
        if f_old - f <= cfg.ftol * max(1.0, abs(f)):
            break
    return U, SolveInfo(f, it, bool(converged), float(pg))


def run_mpc(z0, z_ref, steps: int, cfg: MpcConfig, plant: PlantDescriptor, timing: bool = True) -> TrajectoryRecord:
    """Apply the first input of each solve through RK4; warm-start with the shifted plan."""
    z0 = np.asarray(z0, dtype=np.float64)
    z_ref = np.zeros_like(z0) if z_ref is None else np.asarray(z_ref, dtype=np.float64)
    states = np.zeros((steps + 1, plant.p))
    inputs = np.zeros((steps, plant.q))
    times = np.zeros(steps)
    iterations = []
    states[0] = z0
    warm = None
    for k in range(steps):
        try:
            t0 = time.perf_counter()
            U, info = solve_ocp(states[k], cfg, plant, warm=warm, z_ref=z_ref)
            times[k] = time.perf_counter() - t0
            iterations.append(info.iterations)
            inputs[k] = U[0]
            states[k + 1] = rk4_step(plant, states[k], U[0], cfg.dt)
        except (MpcDivergenceError, IntegrationError) as exc:
            partial = TrajectoryRecord("MPC", cfg.dt, states[:k + 1], inputs[:k], None, times[:k], z_ref)
            raise SimulationError(f"step {k}: {exc}", k, partial) from exc
        if cfg.warm_start:
            warm = np.vstack([U[1:], U[-1:]])
    return TrajectoryRecord("MPC", cfg.dt, states, inputs, None, times if timing else None, z_ref.copy(),
                            meta={"iterations": iterations})
