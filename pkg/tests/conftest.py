import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

import ncr
from ncr import conn, pmp, training
from ncr.dynamics import unicycle

SRC = Path(ncr.__file__).parent


def central_diff(f, x, step=1e-6, order=2):
    """Independent gradient oracle: central differences of a scalar function of an array.

    ``order=4`` uses the five-point stencil, which tolerates a larger step
    and so keeps rounding noise down when ``f`` is large.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        def at(k):
            xk = x.copy()
            xk[idx] += k * step
            return f(xk)

        if order == 4:
            g[idx] = (at(-2) - 8 * at(-1) + 8 * at(1) - at(2)) / (12 * step)
        else:
            g[idx] = (at(1) - at(-1)) / (2 * step)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_weights():
    return pmp.default_weights()


def _source_digest() -> str:
    h = hashlib.sha256()
    for name in ("autodiff.py", "dynamics.py", "conn.py", "pmp.py", "training.py"):
        h.update((SRC / name).read_bytes())
    return h.hexdigest()[:16]


def trained_model(request, cfg: training.TrainConfig, hidden=conn.DEFAULT_HIDDEN):
    """Train once per (config, source) and cache the result under .pytest_cache.

    Returns the full :class:`TrainResult` and the wall time of the run that
    produced it.
    """
    key = hashlib.sha256(repr((cfg, tuple(hidden), _source_digest())).encode()).hexdigest()[:20]
    cache = request.config.cache.mkdir("ncr-models")
    paths = {name: cache / f"{key}_{name}" for name in ("final.bin", "best.bin", "meta.json")}
    if all(p.exists() for p in paths.values()):
        meta = json.loads(paths["meta.json"].read_text())
        result = training.TrainResult(conn.load(paths["final.bin"]), conn.load(paths["best.bin"]),
                                      meta["best_epoch"], [tuple(r) for r in meta["history"]])
        return result, meta["wall_time_s"]
    params = conn.init(conn.Architecture(unicycle.p, cfg.horizon, hidden), cfg.seed)
    t0 = time.perf_counter()
    result = training.train(cfg, pmp.default_weights(), unicycle, params)
    wall = time.perf_counter() - t0
    conn.save(result.params, paths["final.bin"])
    conn.save(result.best_params, paths["best.bin"])
    paths["meta.json"].write_text(json.dumps(
        {"best_epoch": result.best_epoch, "history": result.history, "wall_time_s": wall}))
    return result, wall


@pytest.fixture(scope="session")
def full_model(request):
    """CoNN trained with the full default setup (10^3 grid, 50 epochs, n = 30)."""
    return trained_model(request, training.TrainConfig())


@pytest.fixture(scope="session")
def mpc_case_a():
    """200-step closed-loop MPC run from the first benchmark state at P = 30."""
    from ncr import mpc

    cfg = mpc.MpcConfig(horizon=30, weights=pmp.default_weights(), bounds=unicycle.default_bounds)
    return mpc.run_mpc([-1.16, 1.37, -1.79], [0.0, 0.0, 0.0], 200, cfg, unicycle)


# acceptance summary: one PASS/FAIL line per criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict(capsys):
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
