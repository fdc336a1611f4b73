"""Co-state network: a tanh MLP from a state to an ``n x p`` co-state trajectory."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "Architecture",
    "ModelParams",
    "WeightFileError",
    "FormatVersionError",
    "TruncatedFileError",
    "ShapeInconsistencyError",
    "init",
    "forward",
    "forward_batch",
    "save",
    "load",
    "DEFAULT_HIDDEN",
    "FORMAT_VERSION",
]

DEFAULT_HIDDEN = (128, 128, 128)
MAGIC = b"CONN"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    state_dim: int
    horizon: int
    hidden_layers: tuple[int, ...] = DEFAULT_HIDDEN
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.state_dim < 1 or self.horizon < 1:
            raise ValueError(f"state_dim and horizon must be >= 1, got {self.state_dim}, {self.horizon}")
        if any(w < 1 for w in self.hidden_layers):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_layers}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.state_dim

    @property
    def output_dim(self) -> int:
        return self.horizon * self.state_dim

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_layers, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class ModelParams:
    """Weights ``W[i]`` of shape ``(fan_in, fan_out)`` and row biases ``b[i]`` of shape ``(1, fan_out)``."""

    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        if len(self.weights) != len(sizes) or len(self.biases) != len(sizes):
            raise ShapeInconsistencyError(
                f"expected {len(sizes)} layers, got {len(self.weights)} weights / {len(self.biases)} biases")
        for i, ((fi, fo), W, b) in enumerate(zip(sizes, self.weights, self.biases)):
            if W.shape != (fi, fo) or b.shape != (1, fo):
                raise ShapeInconsistencyError(
                    f"layer {i}: expected W {(fi, fo)} b {(1, fo)}, got {W.shape} {b.shape}")

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list in layer order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arch: Architecture, arrays: Sequence[np.ndarray], seed: int = 0) -> "ModelParams":
        return cls(arch, [np.array(a) for a in arrays[0::2]], [np.array(a) for a in arrays[1::2]], seed)

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.arch, self.arrays(), self.seed)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


class WeightFileError(Exception):
    """Base class for weight-file problems."""


class FormatVersionError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ShapeInconsistencyError(WeightFileError, ValueError):
    pass


def init(arch: Architecture, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_sizes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return ModelParams(arch, weights, biases, seed)


def forward_batch(arch: Architecture, layers: Sequence, Z):
    """Network output for a ``(B, p)`` batch as ``(B, n*p)``.

    ``layers`` is the flat ``[W0, b0, W1, b1, ...]`` list, either arrays or
    tape nodes; ``Z`` may likewise be an array or a node.
    """
    h = Z
    last = len(layers) // 2 - 1
    for i in range(last + 1):
        h = ad.matmul(h, layers[2 * i]) + layers[2 * i + 1]
        if i < last:
            h = ad.tanh(h)
    return h


def forward(params: ModelParams, z) -> np.ndarray:
    """Co-state trajectory for one state; row ``k`` is the co-state at offset ``k``."""
    z = np.asarray(z, dtype=np.float64)
    p = params.arch.state_dim
    if z.shape != (p,):
        raise ValueError(f"state must have length {p}, got shape {z.shape}")
    out = forward_batch(params.arch, params.arrays(), z[None, :])
    return np.asarray(out).reshape(params.arch.horizon, p)


# --- persistence ----------------------------------------------------------
# header: magic, version u32, p u32, n u32, hidden count u32, widths u32...,
# seed u64, payload byte count u64; then float64 W0, b0, W1, b1, ... (row-major)

def _expected_payload(arch: Architecture) -> int:
    return 8 * sum(fi * fo + fo for fi, fo in arch.layer_sizes)


def save(params: ModelParams, path) -> None:
    arch = params.arch
    header = MAGIC + struct.pack("<IIII", FORMAT_VERSION, arch.state_dim, arch.horizon, len(arch.hidden_layers))
    header += struct.pack(f"<{len(arch.hidden_layers)}I", *arch.hidden_layers)
    header += struct.pack("<QQ", params.seed, _expected_payload(arch))
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    Path(path).write_bytes(header + payload)


def _take(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise TruncatedFileError(f"file ends inside {what} (need {offset + n} bytes, have {len(buf)})")
    return buf[offset:offset + n]


def load(path) -> ModelParams:
    """Read a weight file; the embedded architecture is authoritative."""
    buf = Path(path).read_bytes()
    if _take(buf, 0, 4, "magic") != MAGIC:
        raise WeightFileError(f"{path}: not a CoNN weight file (bad magic)")
    version, p, n, n_hidden = struct.unpack("<IIII", _take(buf, 4, 16, "header"))
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    off = 20
    if n_hidden > (len(buf) - off) // 4:
        raise TruncatedFileError(f"{path}: hidden-layer count {n_hidden} exceeds file size")
    widths = struct.unpack(f"<{n_hidden}I", _take(buf, off, 4 * n_hidden, "layer widths"))
    off += 4 * n_hidden
    seed, payload_len = struct.unpack("<QQ", _take(buf, off, 16, "seed/payload length"))
    off += 16
    try:
        arch = Architecture(p, n, widths)
    except ValueError as exc:
        raise ShapeInconsistencyError(f"{path}: {exc}") from None
    if payload_len > len(buf) - off:
        raise TruncatedFileError(f"{path}: payload declares {payload_len} bytes, only {len(buf) - off} present")
    if payload_len != _expected_payload(arch):
        raise ShapeInconsistencyError(
            f"{path}: payload of {payload_len} bytes does not match architecture "
            f"(expects {_expected_payload(arch)})")
    if len(buf) - off != payload_len:
        raise ShapeInconsistencyError(f"{path}: {len(buf) - off - payload_len} trailing bytes")
    arrays = []
    for fi, fo in arch.layer_sizes:
        for shape in ((fi, fo), (1, fo)):
            count = shape[0] * shape[1]
            arrays.append(np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64))
            off += 8 * count
    return ModelParams.from_arrays(arch, arrays, seed)
