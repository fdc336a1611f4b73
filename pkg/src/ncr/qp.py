"""Box-constrained minimisation of the input-dependent part of the Hamiltonian,

    minimise  u'Ru + c'u   subject to  lower <= u <= upper,   c = g(z)' lam,

for diagonal positive definite ``R``. The problem separates per coordinate,
so the exact minimiser is the clamped unconstrained one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import InputBounds, PlantDescriptor

__all__ = ["QpProblem", "UnsupportedStructureError", "build_problem", "solve", "solve_unconstrained", "objective"]


class UnsupportedStructureError(ValueError):
    """Only diagonal ``R`` has a closed-form box solution."""


@dataclass(frozen=True, eq=False)
class QpProblem:
    R: np.ndarray
    c: np.ndarray
    bounds: InputBounds

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        if np.count_nonzero(R - np.diag(np.diag(R))):
            raise UnsupportedStructureError("R must be diagonal")
        if np.any(np.diag(R) <= 0):
            raise ValueError(f"R diagonal must be strictly positive, got {np.diag(R)}")
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if c.shape[0] != R.shape[0] or self.bounds.q != R.shape[0]:
            raise ValueError(f"dimension mismatch: R {R.shape}, c {c.shape}, bounds {self.bounds.q}")
        if not np.all(np.isfinite(c)):
            raise ValueError("linear coefficient must be finite")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "c", c)

    @property
    def r_diag(self) -> np.ndarray:
        return np.diag(self.R)


def build_problem(z, lam, R, bounds: InputBounds, plant: PlantDescriptor) -> QpProblem:
    """QP for state ``z`` and co-state ``lam`` (the first row of the network output)."""
    c = plant.g(z).T @ np.asarray(lam, dtype=np.float64)
    return QpProblem(R, c, bounds)


def objective(qp: QpProblem, u) -> np.ndarray:
    """``u'Ru + c'u``; ``u`` may carry leading batch axes."""
    u = np.asarray(u, dtype=np.float64)
    return np.sum(u * u * qp.r_diag, axis=-1) + u @ qp.c


def solve_unconstrained(qp: QpProblem) -> np.ndarray:
    return -qp.c / (2.0 * qp.r_diag)


def solve(qp: QpProblem) -> np.ndarray:
    return np.clip(solve_unconstrained(qp), qp.bounds.lower, qp.bounds.upper)
