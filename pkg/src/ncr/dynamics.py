"""Control-affine plants ``zdot = f(z) + g(z) u`` and fixed-step RK4.

A plant exposes two views of the same model:

* ``drift(z)`` / ``input_matrix(z)`` for a single state, returning numpy
  arrays of shape ``(p,)`` and ``(p, q)``;
* ``rhs(Z, U)`` / ``input_gain(Z, Lam)`` over batches of row vectors
  (``Z`` is ``(B, p)``), written with :mod:`ncr.autodiff` ops so the same
  code drives fast numpy rollouts and differentiable tape rollouts.

``input_gain`` returns ``g(z)^T lam`` row by row; it is all the control
law and the Hamiltonian QP ever need from ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "IntegrationError",
    "PlantDescriptor",
    "InputBounds",
    "unicycle_drift",
    "unicycle_input_matrix",
    "unicycle",
    "double_integrator",
    "get_plant",
    "PLANTS",
    "rk4_step",
    "rollout",
    "rk4_batch",
    "rk4_jacobian",
]


class IntegrationError(ArithmeticError):
    """RK4 produced a non-finite state."""

    def __init__(self, message: str, step: int | None = None, entry: int | None = None):
        super().__init__(message)
        self.step = step
        self.entry = entry


def _check_dim(name: str, v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"{name}: expected length {n}, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class InputBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"bounds length mismatch: {lo.shape} vs {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("input bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def q(self) -> int:
        return self.lower.size

    def contains(self, u, atol: float = 0.0) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= self.lower - atol) and np.all(u <= self.upper + atol))


@dataclass(frozen=True, eq=False)
class PlantDescriptor:
    """A control-affine plant.

    ``state_jacobian(z, u)`` (optional) returns d(f(z) + g(z)u)/dz as a
    ``(p, p)`` array; without it the co-state machinery falls back to
    central finite differences. ``rhs``/``input_gain`` default to generic
    numpy evaluations of ``drift``/``input_matrix`` and are therefore not
    differentiable unless the plant supplies tape-aware versions.
    """

    name: str
    p: int
    q: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]
    rhs: Callable | None = None
    input_gain: Callable | None = None
    state_jacobian: Callable | None = None
    default_bounds: InputBounds | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.rhs is None:
            object.__setattr__(self, "rhs", self._generic_rhs)
        if self.input_gain is None:
            object.__setattr__(self, "input_gain", self._generic_input_gain)

    def f(self, z) -> np.ndarray:
        z = _check_dim(f"{self.name} state", z, self.p)
        return np.asarray(self.drift(z), dtype=np.float64).reshape(self.p)

    def g(self, z) -> np.ndarray:
        z = _check_dim(f"{self.name} state", z, self.p)
        return np.asarray(self.input_matrix(z), dtype=np.float64).reshape(self.p, self.q)

    def xdot(self, z, u) -> np.ndarray:
        u = _check_dim(f"{self.name} input", u, self.q)
        return self.f(z) + self.g(z) @ u

    def _generic_rhs(self, Z, U):
        if isinstance(Z, ad.Node) or isinstance(U, ad.Node):
            raise TypeError(f"plant {self.name!r} has no differentiable rhs")
        return np.stack([self.xdot(z, u) for z, u in zip(Z, U)])

    def _generic_input_gain(self, Z, Lam):
        if isinstance(Z, ad.Node) or isinstance(Lam, ad.Node):
            raise TypeError(f"plant {self.name!r} has no differentiable input gain")
        return np.stack([self.g(z).T @ lam for z, lam in zip(Z, Lam)])


# --- unicycle -------------------------------------------------------------

def unicycle_drift(z) -> np.ndarray:
    _check_dim("unicycle state", z, 3)
    return np.zeros(3)


def unicycle_input_matrix(z) -> np.ndarray:
    z = _check_dim("unicycle state", z, 3)
    c, s = np.cos(z[2]), np.sin(z[2])
    return np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])


def _unicycle_rhs(Z, U):
    theta = Z[:, 2:3]
    v = U[:, 0:1]
    w = U[:, 1:2]
    return ad.concat([v * ad.cos(theta), v * ad.sin(theta), w])


def _unicycle_input_gain(Z, Lam):
    theta = Z[:, 2:3]
    return ad.concat([Lam[:, 0:1] * ad.cos(theta) + Lam[:, 1:2] * ad.sin(theta), Lam[:, 2:3]])


def _unicycle_jacobian(z, u) -> np.ndarray:
    theta, v = z[2], u[0]
    J = np.zeros((3, 3))
    J[0, 2] = -v * np.sin(theta)
    J[1, 2] = v * np.cos(theta)
    return J


unicycle = PlantDescriptor(
    name="unicycle",
    p=3,
    q=2,
    drift=unicycle_drift,
    input_matrix=unicycle_input_matrix,
    rhs=_unicycle_rhs,
    input_gain=_unicycle_input_gain,
    state_jacobian=_unicycle_jacobian,
    default_bounds=InputBounds([-1.0, -4.0], [1.0, 4.0]),
)


# --- double integrator (linear control-affine example) --------------------

def _di_drift(z):
    return np.array([z[1], 0.0])


def _di_input_matrix(z):
    return np.array([[0.0], [1.0]])


def _di_rhs(Z, U):
    return ad.concat([Z[:, 1:2], U])


def _di_input_gain(Z, Lam):
    return Lam[:, 1:2]


double_integrator = PlantDescriptor(
    name="double_integrator",
    p=2,
    q=1,
    drift=_di_drift,
    input_matrix=_di_input_matrix,
    rhs=_di_rhs,
    input_gain=_di_input_gain,
    state_jacobian=lambda z, u: np.array([[0.0, 1.0], [0.0, 0.0]]),
    default_bounds=InputBounds([-1.0], [1.0]),
)


PLANTS: dict[str, PlantDescriptor] = {
    unicycle.name: unicycle,
    double_integrator.name: double_integrator,
}


def get_plant(name: str) -> PlantDescriptor:
    try:
        return PLANTS[name]
    except KeyError:
        raise KeyError(f"unknown plant {name!r}; registered: {sorted(PLANTS)}") from None


# --- integration ----------------------------------------------------------

def rk4_batch(plant: PlantDescriptor, Z, U, dt: float, fused: bool = True):
    """One classical RK4 step on a batch of row states, input held constant.

    On a tape, plants with an analytic ``state_jacobian`` record the whole
    step as a single node whose local Jacobian is propagated through the
    four stages; ``fused=False`` records every elementary op instead.
    """
    on_tape = isinstance(Z, ad.Node) or isinstance(U, ad.Node)
    if on_tape and fused and plant.state_jacobian is not None:
        return _rk4_fused(plant, Z, U, dt)
    k1 = plant.rhs(Z, U)
    k2 = plant.rhs(Z + (0.5 * dt) * k1, U)
    k3 = plant.rhs(Z + (0.5 * dt) * k2, U)
    k4 = plant.rhs(Z + dt * k3, U)
    return Z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_jacobian(plant: PlantDescriptor, z: np.ndarray, u: np.ndarray, dt: float):
    """RK4 step for one state and its Jacobian with respect to ``[z, u]``.

    Returns ``(z_next, J)`` with ``J`` of shape ``(p, p + q)``. Uses
    d(f + gu)/dz from the plant and d(f + gu)/du = g(z).
    """
    p, q = plant.p, plant.q
    E = np.zeros((p, p + q))
    E[:, :p] = np.eye(p)
    ks, dks = [], []
    zi, dzi = z, E
    for a in (0.5, 0.5, 1.0, None):
        G = np.asarray(plant.input_matrix(zi), dtype=np.float64).reshape(p, q)
        k = np.asarray(plant.drift(zi), dtype=np.float64).reshape(p) + G @ u
        dk = np.asarray(plant.state_jacobian(zi, u)) @ dzi
        dk[:, p:] += G
        ks.append(k)
        dks.append(dk)
        if a is not None:
            zi = z + (a * dt) * k
            dzi = E + (a * dt) * dk
    z_next = z + (dt / 6.0) * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3])
    J = E + (dt / 6.0) * (dks[0] + 2.0 * dks[1] + 2.0 * dks[2] + dks[3])
    return z_next, J


def _rk4_fused(plant: PlantDescriptor, Z, U, dt: float):
    Zv = ad.as_tensor(ad.value_of(Z))
    Uv = ad.as_tensor(ad.value_of(U))
    if Zv.shape[0] != Uv.shape[0]:
        raise ad.ShapeError(f"rk4: incompatible shapes {Zv.shape} and {Uv.shape}")
    p = plant.p
    out = np.empty_like(Zv)
    jacs = []
    for r in range(Zv.shape[0]):
        out[r], J = rk4_jacobian(plant, Zv[r], Uv[r], dt)
        jacs.append(J)
    jacs = np.array(jacs)

    def vjp_z(g):
        return np.einsum("bi,bij->bj", g, jacs[:, :, :p])

    def vjp_u(g):
        return np.einsum("bi,bij->bj", g, jacs[:, :, p:])

    parents = []
    if isinstance(Z, ad.Node):
        parents.append((Z, vjp_z))
    if isinstance(U, ad.Node):
        parents.append((U, vjp_u))
    return ad.record("rk4", [n for n, _ in parents], out, [v for _, v in parents])


def rk4_step(plant: PlantDescriptor, z, u, dt: float) -> np.ndarray:
    """Advance a single state by ``dt`` under zero-order-hold input ``u``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = _check_dim(f"{plant.name} state", z, plant.p)
    u = _check_dim(f"{plant.name} input", u, plant.q)
    out = np.asarray(rk4_batch(plant, z[None, :], u[None, :], dt)).reshape(plant.p)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        i = int(bad[0])
        raise IntegrationError(f"non-finite state entry z[{i}] = {out[i]} after RK4 step", entry=i)
    return out


def rollout(plant: PlantDescriptor, z0, inputs: Sequence, dt: float) -> np.ndarray:
    """States ``[z0, z1, ..., zN]`` from applying ``inputs`` in sequence."""
    z = _check_dim(f"{plant.name} state", z0, plant.p)
    states = [z]
    for k, u in enumerate(inputs):
        try:
            z = rk4_step(plant, z, u, dt)
        except IntegrationError as exc:
            raise IntegrationError(f"step {k}: {exc}", step=k, entry=exc.entry) from exc
        states.append(z)
    return np.array(states)
