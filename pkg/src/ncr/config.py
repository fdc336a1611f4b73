"""Flat ``key = value`` run configuration with dotted section keys.

Grammar (one entry per line)::

    # comment                       blank lines and '#' comments are ignored
    section.key = value             value: number, bool, word, or comma list

Unknown keys are rejected so typos fail loudly. See ``docs/config.md``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import InputBounds, PlantDescriptor, get_plant
from .mpc import MpcConfig
from .pmp import CostWeights
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "CaseSpec", "parse_config", "load_config", "BENCHMARK_CASES", "DEFAULTS"]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


@dataclass(frozen=True)
class CaseSpec:
    label: str
    z0: tuple[float, ...]
    z_ref: tuple[float, ...]


BENCHMARK_CASES = {
    "A": CaseSpec("A", (-1.16, 1.37, -1.79), (0.0, 0.0, 0.0)),
    "B": CaseSpec("B", (-5.24, 4.11, 2.72), (0.0, 0.0, 0.0)),
    "C": CaseSpec("C", (-5.24, 4.11, 2.72), (1.0, 1.0, 0.0)),
}

# key -> (kind, default); kinds: int, float, bool, str, floats, ints, words
DEFAULTS: dict[str, tuple[str, object]] = {
    "plant": ("str", "unicycle"),
    "seed": ("int", 0),
    "out": ("str", "runs/ncr"),
    "ocp.Q": ("floats", (10.0, 10.0, 10.0)),
    "ocp.R": ("floats", (1.0, 1.0)),
    "ocp.S": ("floats", None),
    "ocp.terminal_scale": ("float", 50.0),
    "ocp.n": ("int", 30),
    "ocp.dt": ("float", 0.05),
    "ocp.u_lower": ("floats", None),
    "ocp.u_upper": ("floats", None),
    "conn.hidden": ("ints", (128, 128, 128)),
    "train.epochs": ("int", 50),
    "train.lr": ("float", 1e-3),
    "train.beta": ("float", 0.1),
    "train.lower": ("floats", (-2.0, -2.0, -2.0)),
    "train.upper": ("floats", (2.0, 2.0, 2.0)),
    "train.samples_per_dim": ("int", 10),
    "train.batch_size": ("int", 1),
    "train.shuffle": ("bool", True),
    "train.dt_weighted": ("bool", False),
    "train.optimizer": ("str", "adam"),
    "train.use_best": ("bool", False),
    "sim.steps": ("int", 200),
    "sim.z0": ("floats", BENCHMARK_CASES["A"].z0),
    "sim.zref": ("floats", None),
    "sim.absolute_angle": ("bool", False),
    "sim.timing": ("bool", True),
    "mpc.horizon": ("int", None),
    "mpc.max_iter": ("int", 500),
    "mpc.tol": ("float", 1e-6),
    "mpc.warm_start": ("bool", True),
    "compare.cases": ("words", ("A", "B", "C")),
    "compare.horizons": ("ints", (10, 30, 60)),
    "compare.sweep_steps": ("int", 20),
    "compare.train_missing": ("bool", True),
    "compare.sweep_epochs": ("int", None),
    "compare.plots": ("bool", True),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(kind: str, raw: str, line: int, key: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "str":
            return raw
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "floats":
            return tuple(float(s) for s in items)
        if kind == "ints":
            return tuple(int(s) for s in items)
        if kind == "words":
            return tuple(items)
    except ValueError as exc:
        raise ConfigError(str(exc), line, key) from None
    raise AssertionError(kind)


def parse_config(text: str) -> dict:
    """Parse config text into a dict of typed values (defaults filled in)."""
    values = {k: v for k, (_, v) in DEFAULTS.items()}
    cases: dict[str, dict] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if key.startswith("case."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in ("z0", "zref"):
                raise ConfigError("case keys look like case.<label>.z0 / case.<label>.zref", lineno, key)
            cases.setdefault(parts[1], {})[parts[2]] = _convert("floats", raw, lineno, key)
            continue
        if key not in DEFAULTS:
            raise ConfigError("unknown key", lineno, key)
        values[key] = _convert(DEFAULTS[key][0], raw, lineno, key)
    values["_cases"] = cases
    return values


def _canonical(values: dict) -> str:
    lines = []
    for k in sorted(values):
        if k == "_cases":
            for label in sorted(values[k]):
                for sub in sorted(values[k][label]):
                    lines.append(f"case.{label}.{sub}={values[k][label][sub]!r}")
        else:
            lines.append(f"{k}={values[k]!r}")
    return "\n".join(lines)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: parse_config(""))
    source: str | None = None

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def hash(self) -> str:
        """SHA-256 over the resolved settings; formatting and comments do not matter."""
        return hashlib.sha256(_canonical(self.values).encode()).hexdigest()

    @property
    def plant(self) -> PlantDescriptor:
        try:
            return get_plant(self["plant"])
        except KeyError as exc:
            raise ConfigError(str(exc), key="plant") from None

    @property
    def weights(self) -> CostWeights:
        Q = self["ocp.Q"]
        if self["ocp.S"] is not None:
            return CostWeights.diagonal(Q, self["ocp.R"], s_diag=self["ocp.S"])
        return CostWeights.diagonal(Q, self["ocp.R"], terminal_scale=self["ocp.terminal_scale"])

    @property
    def bounds(self) -> InputBounds:
        lo, hi = self["ocp.u_lower"], self["ocp.u_upper"]
        if lo is None and hi is None:
            if self.plant.default_bounds is None:
                raise ConfigError("plant has no default bounds; set ocp.u_lower/ocp.u_upper")
            return self.plant.default_bounds
        if lo is None or hi is None:
            raise ConfigError("set both ocp.u_lower and ocp.u_upper", key="ocp.u_lower")
        return InputBounds(lo, hi)

    def train_config(self, horizon: int | None = None, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=epochs or self["train.epochs"],
            lr=self["train.lr"],
            beta=self["train.beta"],
            horizon=horizon or self["ocp.n"],
            dt=self["ocp.dt"],
            lower=self["train.lower"],
            upper=self["train.upper"],
            samples_per_dim=self["train.samples_per_dim"],
            seed=self["seed"],
            optimizer=self["train.optimizer"],
            batch_size=self["train.batch_size"],
            shuffle=self["train.shuffle"],
            dt_weighted=self["train.dt_weighted"],
        )

    def mpc_config(self, horizon: int | None = None) -> MpcConfig:
        return MpcConfig(
            horizon=horizon or self["mpc.horizon"] or self["ocp.n"],
            weights=self.weights,
            bounds=self.bounds,
            dt=self["ocp.dt"],
            max_iter=self["mpc.max_iter"],
            tol=self["mpc.tol"],
            warm_start=self["mpc.warm_start"],
        )

    def cases(self) -> list[CaseSpec]:
        out = []
        custom = self["_cases"]
        for label in self["compare.cases"]:
            if label in custom:
                spec = custom[label]
                if "z0" not in spec:
                    raise ConfigError("custom case needs z0", key=f"case.{label}.z0")
                z0 = spec["z0"]
                out.append(CaseSpec(label, z0, spec.get("zref", tuple(0.0 for _ in z0))))
            elif label in BENCHMARK_CASES:
                out.append(BENCHMARK_CASES[label])
            else:
                raise ConfigError(f"unknown case {label!r}", key="compare.cases")
        return out

    def validate(self) -> None:
        plant = self.plant
        w = self.weights
        if w.p != plant.p or w.q != plant.q:
            raise ConfigError(f"weights are {w.p}x{w.q} but plant {plant.name} is p={plant.p}, q={plant.q}")
        if self.bounds.q != plant.q:
            raise ConfigError("input bounds length does not match plant input dimension", key="ocp.u_lower")
        if len(self["train.lower"]) != plant.p or len(self["train.upper"]) != plant.p:
            raise ConfigError("training grid bounds must have one entry per state", key="train.lower")
        if any(h < 1 for h in self["conn.hidden"]):
            raise ConfigError("hidden widths must be >= 1", key="conn.hidden")
        self.train_config()
        self.mpc_config()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    cfg = RunConfig(parse_config(path.read_text()), str(path))
    cfg.validate()
    return cfg
