"""Hamiltonian, unconstrained optimal input and co-state dynamics for
quadratic-cost control-affine problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dynamics import PlantDescriptor

__all__ = [
    "CostWeights",
    "FactorizationError",
    "hamiltonian",
    "unconstrained_input",
    "unconstrained_input_batch",
    "costate_rhs",
    "terminal_costate",
    "state_jacobian_fd",
    "pmp_residual",
    "default_weights",
]

FD_STEP = 1e-6


class FactorizationError(np.linalg.LinAlgError):
    pass


def _sym_check(name: str, M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12, rtol=0.0):
        raise ValueError(f"{name} is not symmetric")


@dataclass(frozen=True, eq=False)
class CostWeights:
    """Stage weights ``Q``, ``R`` and terminal weight ``S``."""

    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "S"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64))
            _sym_check(name, M)
            object.__setattr__(self, name, M)
        if self.Q.shape != self.S.shape:
            raise ValueError(f"Q {self.Q.shape} and S {self.S.shape} must match")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError:
            raise FactorizationError("R is not positive definite") from None
        for name in ("Q", "S"):
            if np.linalg.eigvalsh(getattr(self, name)).min() < -1e-10:
                raise ValueError(f"{name} is not positive semidefinite")
        object.__setattr__(self, "_R_inv", np.linalg.inv(self.R))

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def q(self) -> int:
        return self.R.shape[0]

    @property
    def R_inv(self) -> np.ndarray:
        return self._R_inv

    @classmethod
    def diagonal(cls, q_diag, r_diag, terminal_scale: float | None = None, s_diag=None) -> "CostWeights":
        Q = np.diag(np.asarray(q_diag, dtype=np.float64))
        S = np.diag(np.asarray(s_diag, dtype=np.float64)) if s_diag is not None else terminal_scale * Q
        return cls(Q, np.diag(np.asarray(r_diag, dtype=np.float64)), S)


def default_weights() -> CostWeights:
    """Q = diag(10, 10, 10), R = diag(1, 1), S = 50 Q."""
    return CostWeights.diagonal([10.0, 10.0, 10.0], [1.0, 1.0], terminal_scale=50.0)


def _vec(name: str, x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{name}: expected length {n}, got shape {x.shape}")
    return x


def hamiltonian(z, u, lam, w: CostWeights, plant: PlantDescriptor) -> float:
    """``z'Qz + u'Ru + lam'(f(z) + g(z)u)``."""
    z = _vec("z", z, plant.p)
    u = _vec("u", u, plant.q)
    lam = _vec("lam", lam, plant.p)
    return float(z @ w.Q @ z + u @ w.R @ u + lam @ plant.xdot(z, u))


def unconstrained_input(z, lam, R, plant: PlantDescriptor) -> np.ndarray:
    """Stationary point of the Hamiltonian in ``u``: ``-R^{-1} g(z)' lam / 2``."""
    z = _vec("z", z, plant.p)
    lam = _vec("lam", lam, plant.p)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise FactorizationError("R is singular or not positive definite") from None
    return -0.5 * np.linalg.solve(L.T, np.linalg.solve(L, plant.g(z).T @ lam))


def unconstrained_input_batch(Z, Lam, w: CostWeights, plant: PlantDescriptor):
    """Batched, tape-recordable form of :func:`unconstrained_input` on row vectors."""
    return ad.matmul(plant.input_gain(Z, Lam), -0.5 * w.R_inv)


def state_jacobian_fd(plant: PlantDescriptor, z, u, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``f(z) + g(z)u`` with respect to ``z``."""
    J = np.zeros((plant.p, plant.p))
    for j in range(plant.p):
        e = np.zeros(plant.p)
        e[j] = step
        J[:, j] = (plant.xdot(z + e, u) - plant.xdot(z - e, u)) / (2.0 * step)
    return J


def costate_rhs(z, u, lam, w: CostWeights, plant: PlantDescriptor, *, use_fd: bool = False) -> np.ndarray:
    """``lamdot = -2Qz - (d(f + gu)/dz)' lam``.

    The plant's analytic Jacobian is used when available unless ``use_fd``.
    """
    z = _vec("z", z, plant.p)
    u = _vec("u", u, plant.q)
    lam = _vec("lam", lam, plant.p)
    if plant.state_jacobian is not None and not use_fd:
        J = np.asarray(plant.state_jacobian(z, u), dtype=np.float64)
    else:
        J = state_jacobian_fd(plant, z, u)
    return -2.0 * w.Q @ z - J.T @ lam


def terminal_costate(z_final, S) -> np.ndarray:
    """Co-state boundary value ``2 S z(t_f)`` for the quadratic terminal cost."""
    return 2.0 * np.asarray(S) @ np.asarray(z_final, dtype=np.float64)


def pmp_residual(record, w: CostWeights, plant: PlantDescriptor, dt: float) -> float:
    """Mean squared gap between the logged co-states' forward differences and
    the co-state dynamics evaluated along the logged trajectory.

    Diagnostic only. A record with fewer than two co-states has residual 0.
    """
    lams = getattr(record, "costates", None)
    if lams is None:
        raise ValueError("record carries no co-state sequence")
    lams = np.asarray(lams, dtype=np.float64)
    states = np.asarray(record.states, dtype=np.float64)
    inputs = np.asarray(record.inputs, dtype=np.float64)
    if len(lams) < 2:
        return 0.0
    if len(states) < len(lams) or len(inputs) < len(lams) - 1:
        raise ValueError(
            f"inconsistent record: {len(states)} states, {len(inputs)} inputs, {len(lams)} co-states")
    diffs = (lams[1:] - lams[:-1]) / dt
    model = np.array([costate_rhs(states[k], inputs[k], lams[k], w, plant) for k in range(len(lams) - 1)])
    return float(np.mean((diffs - model) ** 2))
