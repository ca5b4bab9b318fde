"""Command-line driver for the sweep-convergence and cost experiments.

Subcommands write CSV tables, to files inside ``--out`` or to stdout::

    cisdc spectrum --preset fig2 --out results/
    cisdc linear --preset table1
    cisdc nonlinear-order --preset fig4 --out results/
    cisdc nonlinear-sweeps --preset table3
    cisdc pipeline-bench --workers 1,2 --nx 2000

Settings come from (lowest to highest precedence) built-in defaults, a
preset, a ``--config`` file of ``key = value`` lines and explicit flags.
Exit codes: 0 success, 2 usage error, 3 numeric failure.
"""

import argparse
import csv
import io
import math
import os
from pathlib import Path
import sys
import time
import warnings

import numpy as np

from . import analysis
from .errors import CisdcError, InvalidArgumentError, NumericError, SingularStageError, SolveError, StageError
from .integrators import Scheme, cisdcq_sweep, initial_state, parse_scheme, scheme_label, sweep
from .pipeline import execute_pipelined
from .problems import (
    LinearScalarProblem,
    ReactionDiffusionGrid,
    ReactionDiffusionProblem,
    StiffnessTriple,
    nonlinear_sweep_study,
    reference_solution,
    refinement_study,
)
from .quadrature import EulerConvention, build_tables

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

COMMANDS = ("spectrum", "linear", "nonlinear-order", "nonlinear-sweeps", "pipeline-bench")

DEFAULTS = {
    "spectrum": dict(
        scheme="misdc,misdcq,imexq,cisdcq", M="4", nu="1,3,6", dt="1", a="1",
        d_rule="half_of_r", r_min="1e-2", r_max="1e6", per_decade="40",
    ),
    "linear": dict(
        scheme="misdcq,cisdcq", M="4", nu="1,3,6", dt="1", tol="1e-14", a="1", d="-5", r="-5",
    ),
    "nonlinear-order": dict(
        scheme="misdc,misdcq,cisdcq-1", M="4", sweeps="2,4", dt="0.2,0.1,0.05,0.025",
        nx="200", a="1", d="2", r="4", t_final="1",
    ),
    "nonlinear-sweeps": dict(M="4", nu="1,3,6", dt="0.05", nx="200", sweeps="15", a="1", d="2", r="4"),
    "pipeline-bench": dict(M="2", nu="3", dt="0.05", nx="2000", sweeps="3", workers="1,2", a="1", d="2", r="4"),
}

PRESETS = {
    "fig2": ("spectrum", dict(d_rule="half_of_r")),
    "fig3": ("spectrum", dict(d_rule="fixed", d="-5")),
    "table1": ("linear", dict(triples="1:-2:-4,1:-10:-20,1:-50:-100")),
    "table2": ("linear", dict(triples="1:-100:-5,1:-5:-5,1:-5:-100")),
    "fig4": ("nonlinear-order", dict(sweeps="2,4,8")),
    "table3": ("nonlinear-sweeps", dict(triples="1:2:4,1:8:16,1:16:32")),
}

CONFIG_KEYS = {
    "scheme", "M", "nu", "dt", "nx", "sweeps", "tol", "workers", "preset", "out",
    "euler_convention", "a", "d", "r", "triples", "d_rule", "r_min", "r_max",
    "per_decade", "t_final", "cache_dir",
}


class UsageError(CisdcError):
    pass


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def resolve_settings(command, flags, config_path=None):
    """Merge defaults, preset, config file and flags (highest precedence last)."""
    file_cfg = read_config(config_path) if config_path else {}
    preset = flags.get("preset") or file_cfg.get("preset")
    settings = dict(DEFAULTS[command])
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        owner, values = PRESETS[preset]
        if owner != command:
            raise UsageError(f"preset {preset!r} belongs to the {owner!r} subcommand")
        settings.update(values)
    settings.update(file_cfg)
    settings.update({k: v for k, v in flags.items() if v is not None})
    return settings


def _floats(text, name):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"--{name}: empty list")
    return vals


def _ints(text, name, minimum=1):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError(f"--{name}: empty list")
    if min(vals) < minimum:
        raise UsageError(f"--{name}: values must be >= {minimum}")
    return vals


def _int(text, name, minimum=1):
    vals = _ints(text, name, minimum)
    if len(vals) != 1:
        raise UsageError(f"--{name}: expected a single integer")
    return vals[0]


def _float(text, name):
    vals = _floats(text, name)
    if len(vals) != 1:
        raise UsageError(f"--{name}: expected a single number")
    return vals[0]


def _triples(s):
    if "triples" in s:
        out = []
        for item in s["triples"].split(","):
            parts = item.split(":")
            if len(parts) != 3:
                raise UsageError(f"triples: expected a:d:r, got {item!r}")
            out.append(StiffnessTriple(*_floats(",".join(parts), "triples")))
        return out
    return [StiffnessTriple(_float(s["a"], "a"), _float(s["d"], "d"), _float(s["r"], "r"))]


def _schemes(s, nus):
    """Expand the scheme list; bare ``cisdcq`` takes every ``nu``."""
    out = []
    for name in str(s["scheme"]).split(","):
        name = name.strip()
        if not name:
            continue
        try:
            kind, nu = parse_scheme(name)
        except InvalidArgumentError as exc:
            raise UsageError(str(exc)) from None
        if kind is Scheme.CISDCQ and nu is None:
            out.extend((kind, n) for n in nus)
        else:
            out.append((kind, nu))
    if not out:
        raise UsageError("--scheme: empty list")
    return out


def _convention(s):
    try:
        return EulerConvention(s.get("euler_convention", EulerConvention.CUMULATIVE.value))
    except ValueError:
        raise UsageError("--euler-convention must be literal or cumulative") from None


class Output:
    """CSV sinks: files under ``out_dir`` or blocks on stdout."""

    def __init__(self, out_dir, stream):
        self.dir = Path(out_dir) if out_dir else None
        self.stream = stream
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def table(self, name, header):
        if self.dir is None:
            self.stream.write(f"# {name}\n")
            fh = _NoClose(self.stream)
        else:
            fh = open(self.dir / name, "w", newline="")
        return _Table(fh, header)

    def note(self, text):
        sys.stderr.write(text + "\n")


class _NoClose(io.TextIOBase):
    def __init__(self, stream):
        self._s = stream

    def write(self, text):
        return self._s.write(text)

    def flush(self):
        self._s.flush()


class _Table:
    def __init__(self, fh, header):
        self.fh = fh
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(header)

    def row(self, *values):
        self.writer.writerow([_fmt(v) for v in values])
        self.fh.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if isinstance(self.fh, _NoClose):
            self.fh.flush()
        else:
            self.fh.close()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "NA" if math.isnan(v) else repr(float(v))
    if v is None:
        return "NA"
    return str(v)


def _tag(t):
    return f"a{t.a:g}_d{t.d:g}_r{t.r:g}"


def cmd_spectrum(s, out):
    M = _int(s["M"], "M")
    nus = _ints(s["nu"], "nu")
    dt = _float(s["dt"], "dt")
    a = _float(s["a"], "a")
    conv = _convention(s)
    d_rule = s["d_rule"]
    if d_rule not in ("half_of_r", "fixed"):
        raise UsageError("d_rule must be half_of_r or fixed")
    d_fixed = _float(s["d"], "d") if d_rule == "fixed" else None
    r_min, r_max = _float(s["r_min"], "r_min"), _float(s["r_max"], "r_max")
    per_decade = _int(s["per_decade"], "per_decade")
    if not (0 < r_min <= r_max):
        raise UsageError("empty r-grid: need 0 < r_min <= r_max")
    r_grid = analysis.log_r_grid(r_min, r_max, per_decade)
    if len(r_grid) == 0:
        raise UsageError("empty r-grid")
    with out.table("spectrum.csv", ["scheme", "M", "nu", "a", "d", "r", "dt", "gamma"]) as tab:
        for kind, nu in _schemes(s, nus):
            for r in r_grid:
                d = float(r) / 2 if d_rule == "half_of_r" else d_fixed
                try:
                    gamma = analysis.affine_iteration_matrix(
                        kind, StiffnessTriple(a, d, float(r)), dt, M, nu, conv
                    ).gamma
                except (SingularStageError, NumericError):
                    gamma = float("nan")
                tab.row(scheme_label(kind, nu), M, nu or 0, a, d, float(r), dt, gamma)
    return EXIT_OK


def cmd_linear(s, out):
    M = _int(s["M"], "M")
    nus = _ints(s["nu"], "nu")
    dt = _float(s["dt"], "dt")
    tol = _float(s["tol"], "tol")
    conv = _convention(s)
    schemes = _schemes(s, nus)
    if all(k is not Scheme.MISDCQ for k, _ in schemes):
        schemes.insert(0, (Scheme.MISDCQ, None))
    for t in _triples(s):
        counts = {}
        with out.table(f"increments_{_tag(t)}.csv", ["scheme", "nu", "sweep", "increment"]) as tab:
            for kind, nu in schemes:
                counts[(kind, nu)] = _record_increments(tab, kind, nu, t, dt, M, tol, conv)
        n_m = counts[(Scheme.MISDCQ, None)]
        with out.table(f"cost_{_tag(t)}.csv", ["scheme", "nu", "N_sweeps", "R"]) as tab:
            for (kind, nu), n in counts.items():
                if kind is Scheme.CISDCQ:
                    R = analysis.cost_ratio(analysis.CostInputs(1.0, 1.0, nu, M, n_misdcq=n_m, n_cisdcq=n))
                else:
                    R = float("nan")
                tab.row(scheme_label(kind, nu), nu or 0, n, R)
    return EXIT_OK


def _record_increments(tab, kind, nu, triple, dt, M, tol, conv, cap=analysis.SWEEP_CAP):
    tables = build_tables(M, conv)
    problem = LinearScalarProblem(triple)
    state = initial_state(problem, np.array([problem.phi0]), M)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, cap + 1):
            state = sweep(kind, state, tables, problem, dt, nu)
            inc = state.increment()
            tab.row(scheme_label(kind, nu), nu or 0, k, inc)
            if inc <= tol:
                return k
    warnings.warn(f"{scheme_label(kind, nu)} reached the {cap}-sweep cap", analysis.SweepCapWarning)
    return cap


def cmd_nonlinear_order(s, out):
    M = _int(s["M"], "M")
    nx = _int(s["nx"], "nx", minimum=8)
    dts = _floats(s["dt"], "dt")
    sweeps = _ints(s["sweeps"], "sweeps")
    t_final = _float(s["t_final"], "t_final")
    triple = _triples(s)[0]
    grid = ReactionDiffusionGrid(nx, a=triple.a, d=triple.d, r=triple.r)
    out.note(f"sigma = a*dt/dx: {', '.join(f'{triple.a * dt / grid.dx:g}' for dt in dts)}")
    ref = reference_solution(grid, t_final, M=M, cache_dir=s.get("cache_dir"))
    results = []
    with out.table("errors.csv", ["scheme", "sweeps", "dt", "l1_error"]) as tab:
        for kind, nu in _schemes(s, [1]):
            for k in sweeps:
                res = refinement_study(scheme_label(kind, nu), k, dts, grid, t_final, M=M, reference=ref)
                results.append(res)
                for dt, e in zip(res.dts, res.errors):
                    tab.row(res.scheme, k, dt, e)
    with out.table("slopes.csv", ["scheme", "sweeps", "slope"]) as tab:
        for res in results:
            tab.row(res.scheme, res.sweeps, res.slope)
    return EXIT_OK


def cmd_nonlinear_sweeps(s, out):
    M = _int(s["M"], "M")
    nx = _int(s["nx"], "nx", minimum=8)
    dt = _float(s["dt"], "dt")
    nus = _ints(s["nu"], "nu")
    ref_sweeps = _int(s["sweeps"], "sweeps")
    for t in _triples(s):
        grid = ReactionDiffusionGrid(nx, a=t.a, d=t.d, r=t.r)
        eps, rows = nonlinear_sweep_study(grid, dt, M, nus, ref_sweeps)
        out.note(f"{_tag(t)}: sigma = {t.a * dt / grid.dx:g}, epsilon = {eps:.6e}")
        with out.table(f"sweeps_{_tag(t)}.csv", ["scheme", "nu", "N_sweeps", "R"]) as tab:
            for row in rows:
                tab.row(row.scheme, row.nu, row.n_sweeps, row.ratio)
    return EXIT_OK


def cmd_pipeline_bench(s, out):
    M = _int(s["M"], "M")
    nu = _int(s["nu"], "nu")
    nx = _int(s["nx"], "nx", minimum=8)
    dt = _float(s["dt"], "dt")
    repeats = _int(s["sweeps"], "sweeps")
    workers = _ints(s["workers"], "workers")
    t = _triples(s)[0]
    problem = ReactionDiffusionProblem(ReactionDiffusionGrid(nx, a=t.a, d=t.d, r=t.r))
    tables = build_tables(M, _convention(s))
    state0 = initial_state(problem, problem.initial_value(), M)
    header = ["workers", "nx", "M", "nu", "serial_ns", "parallel_ns", "identical"]
    with out.table("pipeline_bench.csv", header) as tab:
        for w in workers:
            serial_state, par_state = state0, state0
            serial_ns = parallel_ns = 0
            identical = True
            for _ in range(repeats):
                t0 = time.perf_counter_ns()
                serial_state = cisdcq_sweep(serial_state, tables, problem, dt, nu)
                t1 = time.perf_counter_ns()
                par_state, _ = execute_pipelined(problem, par_state, tables, dt, nu, w)
                t2 = time.perf_counter_ns()
                serial_ns += t1 - t0
                parallel_ns += t2 - t1
                identical &= all(
                    np.array_equal(x, y) for x, y in zip(serial_state.phi, par_state.phi)
                )
            tab.row(w, nx, M, nu, serial_ns, parallel_ns, bool(identical))
            out.note(f"workers={w}: speedup {serial_ns / max(parallel_ns, 1):.3f}")
    return EXIT_OK


HANDLERS = {
    "spectrum": cmd_spectrum,
    "linear": cmd_linear,
    "nonlinear-order": cmd_nonlinear_order,
    "nonlinear-sweeps": cmd_nonlinear_sweeps,
    "pipeline-bench": cmd_pipeline_bench,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--scheme", help="comma-separated schemes, e.g. misdcq,cisdcq-3")
    add("--M", help="number of subintervals")
    add("--nu", help="nested-iteration counts, comma-separated")
    add("--dt", help="time step (nonlinear-order: comma-separated list)")
    add("--nx", help="cell count of the PDE grid")
    add("--sweeps", help="sweep counts (nonlinear-order) or reference sweeps")
    add("--tol", help="increment tolerance")
    add("--workers", help="worker counts, comma-separated")
    add("--preset", help=f"one of {', '.join(PRESETS)}")
    add("--out", help="output directory (default: stdout)")
    add("--euler-convention", dest="euler_convention", choices=[c.value for c in EulerConvention])
    add("--config", help="key = value settings file")
    add("--a", help="advection coefficient")
    add("--d", help="diffusion coefficient")
    add("--r", help="reaction coefficient")
    add("--triples", help="a:d:r triples, comma-separated")
    add("--d-rule", dest="d_rule", help="half_of_r or fixed")
    add("--r-min", dest="r_min", help="smallest |r| of the scan")
    add("--r-max", dest="r_max", help="largest |r| of the scan")
    add("--per-decade", dest="per_decade", help="scan points per decade of |r|")
    add("--t-final", dest="t_final", help="final time of the refinement study")
    add("--cache-dir", dest="cache_dir", help="directory for cached reference fields")

    parser = _Parser(prog="cisdc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None, stdout=None):
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        settings = resolve_settings(args.command, flags, args.config)
        out = Output(settings.get("out"), stdout)
        return HANDLERS[args.command](settings, out)
    except (UsageError, InvalidArgumentError) as exc:
        sys.stderr.write(f"cisdc: usage error: {exc}\n")
        return EXIT_USAGE
    except (NumericError, SolveError, StageError, SingularStageError, FloatingPointError) as exc:
        stdout.flush()
        sys.stderr.write(f"cisdc: numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except BrokenPipeError:
        # reader went away (e.g. piped into head); nothing left to report
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
