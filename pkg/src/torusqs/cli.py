"""Command-line front end.

Exit status: 0 success, 2 a tolerance was exceeded (numerical finding),
3 topology error, 4 bad input.

``TQS_THREADS`` caps internal parallelism.  Everything currently runs in a
single thread, so the variable is only validated; output never depends on it.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import invariance_harness as ih
from .quasistate_engine import (
    DEFAULT_T_REFINE,
    DEFAULT_TOL,
    b_curve_reeb,
    b_curve_tau,
    quasi_state,
)
from .surface_topology import TopologyError
from .torus_field import MIN_N, FieldError, RegularValueError, build_field, generate_field, read_raster

EXIT_OK, EXIT_TOLERANCE, EXIT_TOPOLOGY, EXIT_INPUT = 0, 2, 3, 4


class InputError(ValueError):
    pass


def _battery_table():
    return {
        "normalization": lambda seed, count, n, tol: ih.check_normalization(n),
        "quasilinearity": lambda seed, count, n, tol: ih.quasilinearity_battery(seed, count, n, tol),
        "monotone": lambda seed, count, n, tol: ih.monotone_battery(seed, count, n, tol),
        "tau-axioms": lambda seed, count, n, tol: ih.check_tau_axioms(seed, count, n),
        "annulus": lambda seed, count, n, tol: ih.check_annulus_values(n=n),
        "disk-vanishing": lambda seed, count, n, tol: ih.check_disk_vanishing(seed, count, n, tol),
        "symplectic": lambda seed, count, n, tol: ih.symplectic_battery(seed, count, n),
        "betti": lambda seed, count, n, tol: ih.betti_battery(seed, count, n),
    }


BATTERIES = tuple(_battery_table()) + ("all",)
DEFAULT_COUNTS = {"quasilinearity": 200, "monotone": 200, "tau-axioms": 200,
                  "disk-vanishing": 100, "symplectic": 20, "betti": 50}


@dataclass
class RunConfig:
    n: int = 128
    expr: str | None = None
    raster: str | None = None
    gen_seed: int | None = None
    gen_degree: int = 2
    zero_mean: bool = False
    mode: str = "both"
    battery: str | None = None
    seed: int = 0
    count: int | None = None
    t_refine: int = DEFAULT_T_REFINE
    tol: float | None = None
    out: str | None = None
    format: str = "json"

    def validate(self) -> None:
        if self.battery is not None:
            if self.battery not in BATTERIES:
                raise InputError(f"unknown battery {self.battery!r}")
            if self.format != "json":
                raise InputError("battery reports are written as json")
        else:
            sources = [self.expr is not None, self.raster is not None, self.gen_seed is not None]
            if sum(sources) != 1:
                raise InputError("exactly one of --expr, --raster, --gen-seed is required")
        if self.n < MIN_N:
            raise InputError(f"--n must be at least {MIN_N}")
        if self.t_refine < 1:
            raise InputError("--t-refine must be at least 1")
        if self.count is not None and self.count < 1:
            raise InputError("--count must be positive")
        if self.tol is not None and not self.tol > 0:
            raise InputError("--tol must be positive")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if obj is None or isinstance(obj, bool):
        return {None: "null", True: "true", False: "false"}[obj]
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format(obj, ".17g") if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [inner + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if hasattr(obj, "item"):  # numpy scalar
        return dumps(obj.item(), indent, _level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def load_field(cfg: RunConfig):
    if cfg.expr is not None:
        return build_field(cfg.n, cfg.expr)
    if cfg.raster is not None:
        try:
            f = read_raster(cfg.raster)
        except OSError as exc:
            raise InputError(f"cannot read raster: {exc}") from exc
        if f.n != cfg.n:
            raise InputError(f"raster has n={f.n} but --n is {cfg.n}")
        return f
    return generate_field(cfg.gen_seed, cfg.gen_degree, cfg.n, cfg.zero_mean)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def run_batteries(cfg: RunConfig) -> int:
    table = _battery_table()
    names = list(table) if cfg.battery == "all" else [cfg.battery]
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL
    reports = []
    for name in names:
        count = cfg.count if cfg.count is not None else DEFAULT_COUNTS.get(name, 1)
        rep = table[name](cfg.seed, count, cfg.n, tol)
        print(f"{rep.battery}: {rep.cases} cases, {len(rep.failures)} failures, "
              f"{rep.elapsed:.2f} s", file=sys.stderr)
        data = rep.to_json()
        data["elapsed"] = None  # wall time goes to stderr; artifacts stay bit-identical
        reports.append(data)
    _emit(dumps(reports[0] if len(reports) == 1 else reports), cfg.out)
    return EXIT_OK if all(not r["failures"] for r in reports) else EXIT_TOLERANCE


def thread_cap() -> int | None:
    raw = os.environ.get("TQS_THREADS")
    if raw is None or raw == "":
        return None
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap < 1:
        raise InputError(f"TQS_THREADS must be a positive integer, got {raw!r}")
    return cap


def run(cfg: RunConfig) -> int:
    cfg.validate()
    thread_cap()
    if cfg.battery is not None:
        return run_batteries(cfg)
    field_ = load_field(cfg)
    tol = cfg.tol if cfg.tol is not None else DEFAULT_TOL
    if cfg.format == "csv":
        if cfg.mode == "reeb":
            curve = b_curve_reeb(field_, t_refine=cfg.t_refine)
        else:
            curve = b_curve_tau(field_, t_refine=cfg.t_refine)
        _emit(curve.to_csv(), cfg.out)
        return EXIT_OK
    rep = quasi_state(field_, cfg.mode, tol=tol, t_refine=cfg.t_refine)
    rep.seed = cfg.gen_seed
    _emit(dumps(rep.to_json()), cfg.out)
    return EXIT_TOLERANCE if rep.flagged else EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="torusqs", description="Quasi-state of functions on the 2-torus.")
    p.add_argument("--n", type=int, default=128, help="grid size (vertices per side)")
    p.add_argument("--expr", help="field expression in p, q, e.g. 'sin(2*pi*q)'")
    p.add_argument("--raster", help="binary raster file")
    p.add_argument("--gen-seed", type=int, help="seed of a random trigonometric field")
    p.add_argument("--gen-degree", type=int, default=2, help="degree of the random field")
    p.add_argument("--zero-mean", action="store_true", help="drop the constant term")
    p.add_argument("--mode", choices=("reeb", "aarnes", "both"), default="both")
    p.add_argument("--battery", choices=BATTERIES, help="run a property battery instead")
    p.add_argument("--seed", type=int, default=0, help="first battery seed")
    p.add_argument("--count", type=int, help="number of battery cases")
    p.add_argument("--t-refine", type=int, default=DEFAULT_T_REFINE,
                   help="samples per critical interval")
    p.add_argument("--tol", type=float, help="override the agreement tolerance")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**{k: v for k, v in vars(args).items()})
    try:
        return run(cfg)
    except (InputError, FieldError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TopologyError, RegularValueError) as exc:
        print(f"topology error: {exc}", file=sys.stderr)
        return EXIT_TOPOLOGY


if __name__ == "__main__":
    sys.exit(main())
