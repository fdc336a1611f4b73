"""Command line entry point: ``ncr train|simulate|mpc|compare``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import conn, plotting
from .config import CaseSpec, ConfigError, RunConfig, load_config, parse_config
from .metrics import ComparisonReport, controller_metrics, convergence_error
from .mpc import run_mpc
from .simulator import SimConfig, SimulationError, simulate
from .training import DivergenceError, train, write_history_csv

log = logging.getLogger("ncr")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _vector(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncr", description="Neural co-state regulator toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, weights=False, states=False):
        p.add_argument("--config", type=Path, help="run configuration file (defaults built in)")
        p.add_argument("--out", type=Path, help="output directory (overrides 'out' in the config)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        if weights:
            p.add_argument("--weights", type=Path, help="CoNN weight file")
        if states:
            p.add_argument("--z0", type=_vector, help="initial state, e.g. '-1.16,1.37,-1.79'")
            p.add_argument("--zref", type=_vector, help="reference state, e.g. '1,1,0'")
            p.add_argument("--steps", type=int, help="number of closed-loop steps")
        return p

    common(sub.add_parser("train", help="train the co-state network"))
    common(sub.add_parser("simulate", help="closed-loop NCR run"), weights=True, states=True)
    common(sub.add_parser("mpc", help="closed-loop MPC baseline run"), states=True)
    cmp = common(sub.add_parser("compare", help="NCR vs MPC report and horizon sweep"), weights=True)
    cmp.add_argument("--cases", help="comma-separated case labels (overrides compare.cases)")
    cmp.add_argument("--horizons", help="comma-separated horizons (overrides compare.horizons)")
    return parser


def _load(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig(parse_config(""))
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    if getattr(args, "cases", None) is not None:
        cfg.values["compare.cases"] = tuple(s.strip() for s in args.cases.split(",") if s.strip())
    if getattr(args, "horizons", None) is not None:
        try:
            cfg.values["compare.horizons"] = tuple(int(s) for s in args.horizons.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"bad horizon list {args.horizons!r}", key="compare.horizons") from None
    cfg.validate()
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out if args.out is not None else cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, cfg: RunConfig, command: str, wall: float, artifacts: list[Path], **extra) -> None:
    manifest = {
        "command": command,
        "config_hash": cfg.hash,
        "config_source": cfg.source,
        "seed": cfg["seed"],
        "wall_time_s": wall,
        "artifacts": {p.name: _sha256(p) for p in artifacts if p.exists()},
        **extra,
    }
    (out / f"manifest_{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _tag(cfg: RunConfig) -> str:
    return f"config_sha256={cfg.hash}"


def _case_states(args, cfg: RunConfig, p: int):
    z0 = args.z0 if args.z0 is not None else cfg["sim.z0"]
    zref = args.zref if args.zref is not None else (cfg["sim.zref"] or tuple(0.0 for _ in range(p)))
    for name, v in (("--z0", z0), ("--zref", zref)):
        if len(v) != p:
            raise _UsageError(f"{name} needs {p} values for plant with p={p}, got {len(v)}")
    return np.array(z0), np.array(zref)


class _UsageError(Exception):
    pass


def train_model(cfg: RunConfig, horizon: int | None = None, epochs: int | None = None):
    plant = cfg.plant
    tcfg = cfg.train_config(horizon=horizon, epochs=epochs)
    arch = conn.Architecture(plant.p, tcfg.horizon, cfg["conn.hidden"])
    params = conn.init(arch, cfg["seed"])
    return train(tcfg, cfg.weights, plant, params)


def _chosen(cfg: RunConfig, result):
    return result.best_params if cfg["train.use_best"] else result.params


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    result = train_model(cfg)
    wall = time.perf_counter() - t0
    weights = out / "conn.bin"
    conn.save(_chosen(cfg, result), weights)
    conn.save(result.best_params, out / "conn_best.bin")
    history = out / "loss_history.csv"
    write_history_csv(result.history, history, comment=_tag(cfg))
    artifacts = [weights, out / "conn_best.bin", history]
    if cfg["compare.plots"]:
        artifacts.append(plotting.plot_loss_history(result.history, out / "loss_history.svg", _tag(cfg)))
    _write_manifest(out, cfg, "train", wall, artifacts, best_epoch=result.best_epoch)
    first, last = result.history[0][4], result.history[-1][4]
    print(f"trained {len(result.history)} epochs in {wall:.1f} s; mean loss {first:.4g} -> {last:.4g} "
          f"(best epoch {result.best_epoch})")
    print(f"weights: {weights}")
    return EXIT_OK


def _load_weights(path: Path | None, cfg: RunConfig) -> conn.ModelParams:
    if path is None:
        raise _UsageError("--weights is required")
    if not path.is_file():
        raise FileNotFoundError(f"weights not found: {path}")
    params = conn.load(path)
    if params.arch.state_dim != cfg.plant.p:
        raise ConfigError(
            f"weight file {path} is for p={params.arch.state_dim} but plant {cfg.plant.name} has p={cfg.plant.p}")
    return params


def cmd_simulate(args) -> int:
    cfg = _load(args)
    params = _load_weights(args.weights, cfg)
    plant = cfg.plant
    z0, zref = _case_states(args, cfg, plant.p)
    out = _out_dir(args, cfg)
    sim = SimConfig(z0, zref, cfg.bounds, cfg["ocp.dt"], args.steps or cfg["sim.steps"], cfg["sim.timing"],
                    cfg["sim.absolute_angle"])
    t0 = time.perf_counter()
    record = simulate(params, sim, cfg.weights, plant)
    path = out / "ncr_trajectory.csv"
    record.to_csv(path, comment=_tag(cfg))
    artifacts = [path]
    if cfg["compare.plots"]:
        artifacts.append(plotting.plot_trajectory(record, out / "ncr_trajectory.svg", "NCR", _tag(cfg)))
    _write_manifest(out, cfg, "simulate", time.perf_counter() - t0, artifacts)
    _print_final(record, zref)
    return EXIT_OK


def cmd_mpc(args) -> int:
    cfg = _load(args)
    plant = cfg.plant
    z0, zref = _case_states(args, cfg, plant.p)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    record = run_mpc(z0, zref, args.steps or cfg["sim.steps"], cfg.mpc_config(), plant)
    path = out / "mpc_trajectory.csv"
    record.to_csv(path, comment=_tag(cfg))
    artifacts = [path]
    if cfg["compare.plots"]:
        artifacts.append(plotting.plot_trajectory(record, out / "mpc_trajectory.svg", "MPC", _tag(cfg)))
    _write_manifest(out, cfg, "mpc", time.perf_counter() - t0, artifacts)
    _print_final(record, zref)
    return EXIT_OK


def _print_final(record, zref) -> None:
    zf = record.final_state
    print(f"{record.controller} final state: [{', '.join(f'{v:.4f}' for v in zf)}]")
    print(f"sum |z(t_f) - z_ref| = {convergence_error(zf, zref):.4f}")
    if record.step_times is not None and len(record.step_times):
        print(f"median step time: {np.median(record.step_times) * 1e3:.3f} ms")


def _run_case(values: dict, weights_path: str, case: CaseSpec, out: str, steps: int, horizon: int,
              write: bool) -> dict:
    """One case with both controllers; module-level so worker processes can run it."""
    cfg = RunConfig(values)
    plant = cfg.plant
    params = conn.load(weights_path)
    sim = SimConfig(case.z0, case.z_ref, cfg.bounds, cfg["ocp.dt"], steps, True, cfg["sim.absolute_angle"])
    ncr = simulate(params, sim, cfg.weights, plant)
    mpc = run_mpc(case.z0, case.z_ref, steps, cfg.mpc_config(horizon), plant)
    if write:
        case_dir = Path(out) / f"case_{case.label}"
        case_dir.mkdir(parents=True, exist_ok=True)
        for rec in (ncr, mpc):
            name = rec.controller.lower()
            rec.to_csv(case_dir / f"{name}_trajectory.csv", comment=_tag(cfg))
            if cfg["compare.plots"]:
                plotting.plot_trajectory(rec, case_dir / f"{name}_trajectory.svg",
                                         f"case {case.label}: {rec.controller}", _tag(cfg))
    return {"ncr": ncr, "mpc": mpc}


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("NCR_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def _map_cases(jobs):
    """Run ``(key, args)`` jobs, in parallel when NCR_THREADS allows; exceptions are returned, not raised."""
    results = {}
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {key: pool.submit(_run_case, *a) for key, a in jobs}
            for key, fut in futures.items():
                try:
                    results[key] = fut.result()
                except Exception as exc:  # reported per case
                    results[key] = exc
    else:
        for key, a in jobs:
            try:
                results[key] = _run_case(*a)
            except Exception as exc:
                results[key] = exc
    return results


def _weights_for_horizon(cfg: RunConfig, h: int, known: dict[int, Path], out: Path) -> Path | None:
    if h in known:
        return known[h]
    # keyed by config hash so a changed config never reuses stale weights
    path = out / "weights" / f"conn_n{h}_{cfg.hash[:12]}.bin"
    if path.is_file() and conn.load(path).arch.horizon == h:
        return path
    if not cfg["compare.train_missing"]:
        return None
    log.info("training CoNN for horizon %d", h)
    path.parent.mkdir(parents=True, exist_ok=True)
    result = train_model(cfg, horizon=h, epochs=cfg["compare.sweep_epochs"])
    conn.save(_chosen(cfg, result), path)
    return path


def cmd_compare(args) -> int:
    cfg = _load(args)
    cases = cfg.cases()
    if not cases:
        raise _UsageError("empty case list")
    horizons = list(cfg["compare.horizons"])
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    known: dict[int, Path] = {}
    if args.weights is not None:
        params = _load_weights(args.weights, cfg)
        known[params.arch.horizon] = args.weights
        main_h = params.arch.horizon
    else:
        main_h = cfg["ocp.n"]
    failures = {}
    main_weights = _weights_for_horizon(cfg, main_h, known, out)
    report = ComparisonReport()
    artifacts = []
    if main_weights is None:
        failures["all"] = f"no weights for horizon {main_h}"
    else:
        known[main_h] = main_weights
        jobs = [(c.label, (cfg.values, str(main_weights), c, str(out), cfg["sim.steps"], main_h, True))
                for c in cases]
        for label, res in _map_cases(jobs).items():
            if isinstance(res, Exception):
                failures[label] = f"{type(res).__name__}: {res}"
                continue
            for rec in (res["ncr"], res["mpc"]):
                report.add(label, controller_metrics(rec))
    report.failures.update(failures)
    report_csv = out / "report.csv"
    report.to_csv(report_csv, comment=_tag(cfg))
    (out / "report.txt").write_text(report.table() + "\n")
    artifacts += [report_csv, out / "report.txt"]
    print(report.table())

    # horizon sweep: per-step timing averaged over cases
    sweep = {"NCR": [], "MPC": []}
    sweep_h = []
    for h in horizons:
        wpath = _weights_for_horizon(cfg, h, known, out)
        if wpath is None:
            failures[f"n={h}"] = f"no weights for horizon {h}"
            continue
        known[h] = wpath
        jobs = [(c.label, (cfg.values, str(wpath), c, str(out), cfg["compare.sweep_steps"], h, False))
                for c in cases]
        res = _map_cases(jobs)
        bad = {k: v for k, v in res.items() if isinstance(v, Exception)}
        if bad:
            failures.update({f"n={h}/{k}": f"{type(v).__name__}: {v}" for k, v in bad.items()})
            continue
        sweep_h.append(h)
        sweep["NCR"].append(float(np.mean([np.median(r["ncr"].step_times) for r in res.values()])))
        sweep["MPC"].append(float(np.mean([np.median(r["mpc"].step_times) for r in res.values()])))
    timing_csv = out / "timing.csv"
    with open(timing_csv, "w") as fh:
        fh.write(f"# {_tag(cfg)}\n")
        fh.write("horizon,controller,median_step_time_s\n")
        for i, h in enumerate(sweep_h):
            for ctrl in ("NCR", "MPC"):
                fh.write(f"{h},{ctrl},{sweep[ctrl][i]!r}\n")
    artifacts.append(timing_csv)
    if sweep_h:
        for i, h in enumerate(sweep_h):
            print(f"n={h:3d}  NCR {sweep['NCR'][i] * 1e3:8.3f} ms/step   MPC {sweep['MPC'][i] * 1e3:9.3f} ms/step")
        if cfg["compare.plots"]:
            artifacts.append(plotting.plot_timing(sweep_h, sweep, out / "timing.svg", _tag(cfg)))
    if failures:
        report.failures.update(failures)
        report.to_csv(report_csv, comment=_tag(cfg))
        for k, v in failures.items():
            print(f"FAILED {k}: {v}", file=sys.stderr)
    _write_manifest(out, cfg, "compare", time.perf_counter() - t0, artifacts,
                    weights={str(h): str(p) for h, p in known.items()})
    return EXIT_FAIL if failures else EXIT_OK


COMMANDS = {"train": cmd_train, "simulate": cmd_simulate, "mpc": cmd_mpc, "compare": cmd_compare}


_VECTOR_FLAGS = ("--z0", "--zref")


def _join_vector_flags(argv):
    """Rewrite ``--z0 -1,2,3`` as ``--z0=-1,2,3`` so a leading minus is not read as an option."""
    out, it = [], iter(argv)
    for tok in it:
        if tok in _VECTOR_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_vector_flags(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (conn.WeightFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
