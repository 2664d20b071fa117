"""
Command-line entry point.

Runs are described by an INI file; command-line flags override its keys::

    [grid]
    dim = 2
    cells = 64            ; or "64, 32"
    extent = 4.0

    [problem]
    case = eq27           ; eq27 | eq27_3d | timeseries_hom | timeseries_inhom | random | zero
    rho_csv =             ; node CSV, replaces the builtin charge
    eps_csv =             ; node CSV, replaces the builtin permittivity
    seed = 0
    center_rho = false

    [solver]
    method = zigzag
    tol = 1e-7
    max_passes = 200000

    [output]
    out = out
    emit_fields = true
    emit_report = true
    timing = false        ; wall times are written as 0 unless enabled

Sections ``[study]``, ``[profile]``, ``[timeseries]`` and ``[oracle]`` hold
the settings of the corresponding commands. Exit status: 0 converged,
2 stopped at ``max_passes``, 1 error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hlrelax import bench, oracle
from hlrelax.grid import (
    AXES, GridSpec, NodeField, read_node_csv,
    write_node_csv, write_staggered_csv,
)
from hlrelax.relax import RelaxMethod
from hlrelax.solver import Problem, recover_potential, solve

log = logging.getLogger("hlrelax")

CASES = ("eq27", "eq27_3d", "timeseries_hom", "timeseries_inhom", "random",
         "zero")
EXIT_OK, EXIT_ERROR, EXIT_MAX_PASSES = 0, 1, 2

# default energy-drop tolerance of the oracle comparison; the relaxed field
# must approach the exact minimiser to about 1e-10
ORACLE_TOL = 1e-18


class ConfigError(ValueError):
    pass


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(",", " ").split()]


def _names(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v for v in str(text).replace(",", " ").split()]


def _opt_path(text):
    text = str(text).strip()
    return Path(text) if text else None


# (section, key) -> (RunConfig attribute, parser)
_SCHEMA = {
    ("grid", "dim"): ("dim", int),
    ("grid", "cells"): ("cells", _ints),
    ("grid", "extent"): ("extent", float),
    ("problem", "case"): ("case", str),
    ("problem", "rho_csv"): ("rho_csv", _opt_path),
    ("problem", "eps_csv"): ("eps_csv", _opt_path),
    ("problem", "seed"): ("seed", int),
    ("problem", "center_rho"): ("center_rho", _bool),
    ("solver", "method"): ("method", str),
    ("solver", "tol"): ("tol", float),
    ("solver", "max_passes"): ("max_passes", int),
    ("output", "out"): ("out", Path),
    ("output", "emit_fields"): ("emit_fields", _bool),
    ("output", "emit_report"): ("emit_report", _bool),
    ("output", "timing"): ("timing", _bool),
    ("study", "ns"): ("Ns", _ints),
    ("study", "methods"): ("methods", _names),
    ("profile", "n"): ("profile_N", int),
    ("profile", "checkpoints"): ("checkpoints", _ints),
    ("profile", "section"): ("section", float),
    ("timeseries", "n"): ("ts_N", int),
    ("timeseries", "steps"): ("steps", int),
    ("oracle", "n"): ("oracle_N", int),
}


@dataclass
class RunConfig:
    """Settings of one command; ``None`` means "use the command default"."""

    dim: int = 2
    cells: list = field(default_factory=lambda: [32])
    extent: float = 4.0
    case: str = "eq27"
    rho_csv: Path | None = None
    eps_csv: Path | None = None
    seed: int = 0
    center_rho: bool = False
    method: str = "zigzag"
    tol: float | None = None
    max_passes: int = 200_000
    out: Path = Path("out")
    emit_fields: bool = True
    emit_report: bool = True
    timing: bool = False
    Ns: list = field(default_factory=lambda: [32, 64, 128])
    methods: list = field(default_factory=lambda: ["single", "forward",
                                                   "zigzag"])
    profile_N: int = 128
    checkpoints: list = field(default_factory=lambda: [0, 50, 100])
    section: float = 0.5
    ts_N: int = 64
    steps: int = 100
    oracle_N: int = 16

    def validate(self):
        if self.case not in CASES:
            raise ConfigError(f"[problem] case: unknown case {self.case!r}; "
                              f"choose from {', '.join(CASES)}")
        if self.case == "eq27_3d":
            self.dim = 3
        if self.dim not in (2, 3):
            raise ConfigError(f"[grid] dim: must be 2 or 3, got {self.dim}")
        try:
            self.method = RelaxMethod.parse(self.method).value
            self.methods = [RelaxMethod.parse(m).value for m in self.methods]
        except ValueError as err:
            raise ConfigError(f"[solver] method: {err}") from None
        if self.tol is not None and not self.tol > 0:
            raise ConfigError(f"[solver] tol: must be positive, got {self.tol}")
        if self.max_passes < 1:
            raise ConfigError("[solver] max_passes: must be at least 1")
        return self

    def grid(self) -> GridSpec:
        cells = list(self.cells)
        if len(cells) == 1:
            cells = cells * self.dim
        if len(cells) != self.dim:
            raise ConfigError(f"[grid] cells: {len(cells)} values for a "
                              f"{self.dim}D grid")
        try:
            return GridSpec((float(self.extent),) * self.dim, tuple(cells))
        except ValueError as err:
            raise ConfigError(f"[grid] {err}") from None


def _line_of(path, section, key):
    current = None
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
        elif current == section and s.split("=")[0].strip().lower() == key:
            return n
    return None


def load_config(path) -> RunConfig:
    """Parse an INI file into a :class:`RunConfig`; unknown keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as err:
        raise ConfigError(f"{path}: {err}") from None
    cfg = RunConfig()
    known_sections = {s for s, _ in _SCHEMA}
    for section in parser.sections():
        if section.lower() not in known_sections:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            entry = _SCHEMA.get((section.lower(), key))
            line = _line_of(path, section.lower(), key)
            where = f"{path}:{line}: [{section}] {key}"
            if entry is None:
                raise ConfigError(f"{where}: unknown key")
            attr, conv = entry
            try:
                setattr(cfg, attr, conv(raw))
            except ValueError as err:
                raise ConfigError(f"{where}: {err}") from None
    return cfg


# Problem assembly

def _default_tol(cfg):
    if cfg.tol is not None:
        return cfg.tol
    return bench.TABLE_TOL if cfg.case.startswith("eq27") else 1e-7


def build_problem(cfg: RunConfig, method=None, tol=None):
    """Problem and, for manufactured cases, the exact field."""
    exact = None
    method = method or cfg.method
    tol = tol if tol is not None else _default_tol(cfg)
    if cfg.case.startswith("eq27"):
        spec = cfg.grid()
        if spec.extent != (4.0,) * spec.dim:
            raise ConfigError("[grid] extent: the manufactured cases live on "
                              "(0, 4)")
        case = bench.ManufacturedCase(spec, *bench._CASES[spec.dim])
        rho, eps = case.rho.values, case.eps_nodes.values
        exact = case.exact_field()
    else:
        spec = cfg.grid()
        if cfg.case.startswith("timeseries"):
            if spec.dim != 2:
                raise ConfigError("[grid] dim: the time series is 2D")
            tss = bench.TimeSeriesSpec(N=spec.cells[0], steps=cfg.steps,
                                       seed=cfg.seed,
                                       inhomogeneous=cfg.case.endswith("inhom"))
            if spec.cells[0] != spec.cells[1] or spec.extent[0] != 4.0:
                raise ConfigError("[grid] the time series uses a square "
                                  "(0, 4)^2 grid")
            rho = np.zeros(spec.cells)
            for rho in tss.rho_sequence():
                pass
            eps = tss.eps_nodes()
        elif cfg.case == "random":
            rng = np.random.Generator(np.random.PCG64(cfg.seed))
            rho = rng.uniform(-1.0, 1.0, spec.cells)
            rho -= rho.mean()
            eps = bench._CASES[spec.dim][1](*spec.node_coords())
        else:
            rho = np.zeros(spec.cells)
            eps = np.ones(spec.cells)
    if cfg.rho_csv is not None:
        rho = read_node_csv(cfg.rho_csv, spec).values
        exact = None
    if cfg.eps_csv is not None:
        eps = read_node_csv(cfg.eps_csv, spec).values
        exact = None
    problem = Problem(spec, NodeField(spec, rho), NodeField(spec, eps),
                      method=method, tol=tol, max_passes=cfg.max_passes,
                      center_rho=cfg.center_rho)
    return problem, exact


# Commands

def _outdir(cfg):
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def cmd_solve(cfg: RunConfig) -> int:
    problem, exact = build_problem(cfg)
    E, report = solve(problem, exact=exact)
    out = _outdir(cfg)
    if cfg.emit_fields:
        for a in range(problem.spec.dim):
            write_staggered_csv(out / f"E_{AXES[a]}.csv", E, a)
        try:
            phi = recover_potential(E)
        except ValueError as err:
            log.warning("phi.csv skipped: %s", err)
        else:
            write_node_csv(out / "phi.csv", phi)
    if cfg.emit_report:
        (out / "report.json").write_text(report.to_json(wall_time=cfg.timing)
                                         + "\n")
    print(f"passes={report.passes} gauss_residual={report.gauss_residual:.3e} "
          f"curl_residual={report.curl_residual:.3e}"
          + (f" error_inf={report.error_inf:.6e}"
             if report.error_inf is not None else ""))
    return EXIT_OK if report.converged else EXIT_MAX_PASSES


def cmd_study(cfg: RunConfig) -> int:
    dim = 3 if cfg.case == "eq27_3d" else cfg.dim
    rows = bench.run_convergence_study(cfg.Ns, cfg.methods, dim=dim,
                                       tol=_default_tol(cfg),
                                       max_passes=cfg.max_passes)
    bench.write_study_csv(_outdir(cfg) / "study.csv", rows, timing=cfg.timing)
    for r in rows:
        order = "" if r.order is None else f"{r.order:.4f}"
        print(f"{r.N:5d} {r.method:8s} {r.error_inf:.6e} {order:>7s} "
              f"{r.passes}")
    return EXIT_OK


def cmd_profile(cfg: RunConfig) -> int:
    case = bench.ManufacturedCase.eq27(cfg.profile_N)
    profiles = {}
    for m in cfg.methods:
        res = bench.residual_profile(case.problem(m), m, cfg.checkpoints,
                                     cfg.section)
        profiles[m] = res
        summary = " ".join(f"{p}:{np.abs(c).max():.3e}"
                           for p, (_, c) in sorted(res.items()))
        print(f"{m:8s} max|curl| {summary}")
    bench.write_profile_csv(_outdir(cfg) / "profile.csv", profiles)
    return EXIT_OK


def cmd_timeseries(cfg: RunConfig) -> int:
    inhom = cfg.case == "timeseries_inhom"
    tss = bench.TimeSeriesSpec(N=cfg.ts_N, steps=cfg.steps, seed=cfg.seed,
                               tol=cfg.tol if cfg.tol is not None else 1e-7,
                               inhomogeneous=inhom)
    records = []
    for m in cfg.methods:
        res = bench.run_time_series(tss, m, baseline=cfg.timing,
                                    max_passes=cfg.max_passes)
        records.extend(res.records)
        print(f"{m:8s} mean passes {res.mean('passes'):.2f} "
              f"mean edge touches {res.mean('edge_touches'):.4g}")
    bench.write_timeseries_csv(_outdir(cfg) / "timeseries.csv", records,
                               timing=cfg.timing)
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig) -> int:
    cfg.cells = [cfg.oracle_N]
    tol = cfg.tol if cfg.tol is not None else ORACLE_TOL
    problem, _ = build_problem(cfg, tol=tol)
    _, E_ref = oracle.direct_solve(problem)
    worst = 0.0
    status = EXIT_OK
    rows = []
    for m in cfg.methods:
        problem.method = RelaxMethod.parse(m)
        E, report = solve(problem)
        dev = (E - E_ref).max_abs()
        worst = max(worst, dev)
        rows.append({"method": m, "passes": report.passes,
                     "max_deviation": dev})
        if not report.converged:
            status = EXIT_MAX_PASSES
        print(f"{m:8s} passes {report.passes:6d} max deviation {dev:.3e}")
    print(f"max deviation {worst:.3e}")
    (_outdir(cfg) / "oracle.json").write_text(json.dumps(
        {"N": cfg.oracle_N, "case": cfg.case, "tol": tol, "methods": rows},
        indent=2) + "\n")
    return status


COMMANDS = {
    "solve": cmd_solve,
    "study": cmd_study,
    "profile": cmd_profile,
    "timeseries": cmd_timeseries,
    "oracle-check": cmd_oracle_check,
}


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--method", help="single | forward | zigzag")
    common.add_argument("--tol", type=float, help="energy-drop tolerance")
    common.add_argument("--seed", type=int)
    common.add_argument("--max-passes", type=int, dest="max_passes")
    common.add_argument("--center-rho", action="store_true", default=None,
                        dest="center_rho",
                        help="subtract a nonzero mean charge")
    common.add_argument("--case", choices=CASES)
    common.add_argument("--N", type=int, help="cells per axis")
    common.add_argument("--dim", type=int, choices=(2, 3))
    common.add_argument("--timing", action="store_true", default=None,
                        help="record wall times (outputs stop being "
                             "reproducible byte for byte)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hlrelax", description=(
        "Curl-free local relaxation solver for the periodic Poisson "
        "equation."))
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one problem")
    s = sub.add_parser("study", parents=[common],
                       help="manufactured-solution convergence study")
    s.add_argument("--Ns", type=_ints)
    s.add_argument("--methods", type=_names)
    s = sub.add_parser("profile", parents=[common],
                       help="curl residual along a section")
    s.add_argument("--methods", type=_names)
    s.add_argument("--checkpoints", type=_ints)
    s.add_argument("--section", type=float)
    s = sub.add_parser("timeseries", parents=[common],
                       help="warm-started solves of a random charge sequence")
    s.add_argument("--methods", type=_names)
    s.add_argument("--steps", type=int)
    s = sub.add_parser("oracle-check", parents=[common],
                       help="compare relaxation with the direct solve")
    s.add_argument("--methods", type=_names)
    return p


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    direct = ("out", "method", "tol", "seed", "max_passes", "center_rho",
              "case", "dim", "timing", "Ns", "methods", "checkpoints",
              "section", "steps")
    for name in direct:
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if args.method is not None and getattr(args, "methods", None) is None \
            and args.command != "solve":
        cfg.methods = [args.method]
    if args.N is not None:
        cfg.cells = [args.N]
        cfg.profile_N = cfg.ts_N = cfg.oracle_N = args.N
    if args.case == "eq27_3d" and args.dim is None:
        cfg.dim = 3
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.command == "oracle-check" and not args.config \
                and args.case is None:
            cfg.case = "random"
        cfg = _apply_flags(cfg, args).validate()
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, OSError) as err:
        print(f"hlrelax {args.command}: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
