"""Command-line front end: ``thinflow {regime,cell,drag,macro,verify} --config FILE``."""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import DomainError, FlowParams, RegimeError, RegimeSpec, classify_regime
from .grid import ResolutionError, build_cell, build_exterior, parse_shape
from .homog import TABLE_COLUMNS, DragCoefficient, drag, format_row, table_row
from .macro import (MacroConvergenceError, MacroDomain, brinkman_solve, darcy_mobility, darcy_solve,
                    reynolds_solve)
from .stokes_pl import SolverConfig, SolverError, solve_cell

log = logging.getLogger("thinflow")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    return cp


def config_hash(cp: configparser.ConfigParser) -> str:
    canon = {s: dict(sorted(cp[s].items())) for s in sorted(cp.sections())}
    return hashlib.sha256(json.dumps(canon, sort_keys=True).encode()).hexdigest()[:16]


def header(cp) -> str:
    return f"thinflow {__version__} config-sha256={config_hash(cp)}"


def _get(cp, section, key, conv=str, default=None):
    if not cp.has_section(section) or not cp.has_option(section, key):
        if default is None:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _floats(text):
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _vectors(text):
    """'1,0; 0,1' -> [(1.0, 0.0), (0.0, 1.0)]"""
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            v = _floats(chunk)
            if len(v) != 2:
                raise ValueError(f"expected a 2-vector, got {chunk!r}")
            out.append(tuple(v))
    return out


def flow_params(cp) -> FlowParams:
    return FlowParams(_get(cp, "flow", "r", float), _get(cp, "flow", "mu", float, 1.0))


def solver_config(cp) -> SolverConfig:
    s = "solver"
    return SolverConfig.geometric(
        kappa0=_get(cp, s, "kappa0", float, 1e-2),
        kappa_min=_get(cp, s, "kappa_min", float, 1e-6),
        steps=_get(cp, s, "kappa_steps", int, 5),
        picard_max=_get(cp, s, "picard_max", int, 60),
        tol_rel=_get(cp, s, "tol_rel", float, 1e-8),
        tol_inner=_get(cp, s, "tol_inner", float, 1e-10),
        linearization=_get(cp, s, "linearization", str, "newton"),
    )


_EXPR_NS = {name: getattr(np, name) for name in
            ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "sinh", "cosh", "tanh", "arctan2")}


def _expr(text):
    code = compile(text, "<forcing>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NS and name not in ("x", "y"):
            raise ConfigError(f"forcing expression uses unknown name {name!r}")

    def f(X, Y):
        return np.broadcast_to(eval(code, {"__builtins__": {}}, dict(_EXPR_NS, x=X, y=Y)), X.shape)

    return f


def macro_domain(cp) -> MacroDomain:
    s = "macro"
    Lx, Ly = _get(cp, s, "Lx", float, 1.0), _get(cp, s, "Ly", float, 1.0)
    nx, ny = _get(cp, s, "nx", int), _get(cp, s, "ny", int)
    kind = _get(cp, s, "forcing", str).strip()
    if kind == "potential":
        return MacroDomain.from_potential(Lx, Ly, nx, ny, _expr(_get(cp, s, "phi", str)))
    if kind == "field":
        fx, fy = _expr(_get(cp, s, "fx", str)), _expr(_get(cp, s, "fy", str))
        return MacroDomain.from_function(Lx, Ly, nx, ny, lambda X, Y: (fx(X, Y), fy(X, Y)))
    if kind == "constant":
        return MacroDomain.constant(Lx, Ly, nx, ny, _vectors(_get(cp, s, "f", str))[0])
    raise ConfigError(f"[macro] forcing must be potential|field|constant, got {kind!r}")


# ---------------------------------------------------------------------------
# commands


def _emit(args, data, text):
    print(json.dumps(data, indent=2, sort_keys=True) if args.json else text)


def cmd_regime(cp, args):
    sec = "regime"
    spec = RegimeSpec(
        r=_get(cp, "flow", "r", str),
        a_delta=_get(cp, sec, "a_delta", str),
        a_h=_get(cp, sec, "a_h", str),
        c_delta=_get(cp, sec, "c_delta", float, 1.0),
        c_h=_get(cp, sec, "c_h", float, 1.0),
    )
    reg = classify_regime(spec)
    data = {"regime": reg.tag, "lambda": None if reg.lam is None else float(reg.lam),
            "a_sigma": float(reg.a_sigma), "a_h": float(reg.a_h), "r": float(spec.r),
            "a_delta": float(spec.a_delta), "exact": spec.exact}
    table = (f"{reg}\n"
             f"  {'quantity':<10}{'exponent':>12}\n"
             f"  {'delta':<10}{float(spec.a_delta):>12.6g}\n"
             f"  {'h':<10}{float(spec.a_h):>12.6g}\n"
             f"  {'sigma':<10}{float(reg.a_sigma):>12.6g}")
    _emit(args, data, table)
    if args.out:
        _write_json(Path(args.out) / "regime.json", dict(data, header=header(cp)))
    return EXIT_OK


def _write_json(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cell_jobs(cp):
    s = "cell"
    shape = parse_shape(_get(cp, s, "shape", str, "disk:0.25"))
    deltas = _get(cp, s, "deltas", _floats)
    xis = _get(cp, s, "xis", _vectors)
    n = _get(cp, s, "n", int, 0)
    cpu = _get(cp, s, "cells_per_unit", int, 0)
    if bool(n) == bool(cpu):
        raise ConfigError("[cell] give exactly one of n or cells_per_unit")
    jobs = []
    for d in deltas:
        nn = n if n else max(16, int(round(cpu / d)))
        geom = build_cell(shape, d, nn)  # validates before any solve starts
        for xi in xis:
            jobs.append((d, xi, geom))
    return jobs


def _row_key(delta, xi):
    return f"{delta:.17g},{xi[0]:.17g},{xi[1]:.17g}"


def cmd_cell(cp, args):
    params = flow_params(cp)
    cfg = solver_config(cp)
    jobs = _cell_jobs(cp)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "permeability.csv"
    head = header(cp)
    done = {}
    if path.exists():
        lines = path.read_text().splitlines()
        if lines and lines[0] == f"# {head}":
            for line in lines[2:]:
                parts = line.split(",")
                if len(parts) == len(TABLE_COLUMNS) and parts[4] != "nan":
                    done[",".join(parts[1:4])] = line
        else:
            log.warning("existing %s was produced by a different config; recomputing", path)
    todo = [j for j in jobs if _row_key(j[0], j[1]) not in done]

    def run(job):
        d, xi, geom = job
        try:
            fld, rep = solve_cell(geom, xi, params, cfg)
            U = fld.mean_velocity_integral()
            return format_row(table_row(params.r, d, xi, U, rep.energy, rep.outer_iters, rep.final_residual))
        except SolverError as exc:
            rep = exc.report
            return format_row(table_row(params.r, d, xi, (math.nan, math.nan), math.nan,
                                        rep.outer_iters if rep else -1,
                                        rep.final_residual if rep else math.nan))

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        results = dict(zip([_row_key(j[0], j[1]) for j in todo], pool.map(run, todo)))
    done.update(results)
    failed = 0
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {head}\n")
        fh.write(",".join(TABLE_COLUMNS) + "\n")
        for d, xi, _ in jobs:
            line = done[_row_key(d, xi)]
            failed += line.split(",")[4] == "nan"
            fh.write(line + "\n")
    _emit(args, {"rows": len(jobs), "computed": len(todo), "failed": failed, "path": str(path)},
          f"wrote {len(jobs)} rows ({len(todo)} computed, {failed} failed) to {path}")
    return EXIT_SOLVER if failed else EXIT_OK


def _drag_from_config(cp, params, cfg):
    s = "exterior"
    if cp.has_option(s, "g_r"):
        return DragCoefficient(_get(cp, s, "g_r", float), params.r)
    geom = build_exterior(parse_shape(_get(cp, s, "shape", str, "disk:0.25")),
                          _get(cp, s, "R", float, 8.0), _get(cp, s, "n", int, 128))
    return drag(geom, params, cfg)


def cmd_drag(cp, args):
    params = flow_params(cp)
    cfg = solver_config(cp)
    g = _drag_from_config(cp, params, cfg)
    data = {"g_r": g.g_r, "r": g.r, "R": g.R, "n": g.n, "obstacle": g.obstacle,
            "history": [list(h) for h in g.history], "header": header(cp)}
    out = Path(args.out or ".")
    _write_json(out / "drag.json", data)
    _emit(args, data, f"g_r = {g.g_r:.12g}  (R={g.R}, n={g.n}); wrote {out / 'drag.json'}")
    return EXIT_OK


def cmd_macro(cp, args):
    params = flow_params(cp)
    dom = macro_domain(cp)
    model = _get(cp, "macro", "model", str).strip()
    if model == "reynolds":
        sol = reynolds_solve(dom, params)
    elif model in ("darcy", "brinkman"):
        g = _drag_from_config(cp, params, solver_config(cp))
        if model == "darcy":
            sol = darcy_solve(dom, darcy_mobility(g, params))
        else:
            lam = _get(cp, "macro", "lambda", float)
            sol = brinkman_solve(dom, lam, g, params, m=_get(cp, "macro", "m", int, 256))
        sol.summary["g_r"] = g.g_r
    else:
        raise ConfigError(f"[macro] model must be darcy|brinkman|reynolds, got {model!r}")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    head = header(cp)
    sol.to_csv(dom, out / f"macro_{model}.csv", head)
    if sol.profiles is not None:
        sol.profiles_to_csv(out / f"macro_{model}_profiles.csv", head)
    sol.summary_json(out / f"macro_{model}.json", regime=model, header=head, r=params.r, mu=params.mu)
    _emit(args, sol.summary, f"{model}: {sol.iterations} iterations, residual {sol.residual:.3e}; "
                             f"max|U| = {np.abs(sol.U_cell).max():.6g}; wrote {out}")
    return EXIT_OK


def cmd_verify(cp, args):
    from . import verify

    names = _get(cp, "verify", "checks", lambda t: [c.strip() for c in t.split(",") if c.strip()], [])
    if not names:
        names = verify.SUITES[_get(cp, "verify", "suite", str, "quick").strip()]
    results = verify.run(names)
    report = {"header": header(cp), "passed": all(r.passed for r in results),
              "checks": [r.as_dict() for r in results]}
    if args.out:
        _write_json(Path(args.out) / "verify.json", report)
    _emit(args, report, "\n".join(r.line() for r in results))
    return EXIT_OK if report["passed"] else EXIT_VERIFY


COMMANDS = {"regime": cmd_regime, "cell": cmd_cell, "drag": cmd_drag, "macro": cmd_macro, "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="thinflow", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker pool size")
    ap.add_argument("--json", action="store_true", help="machine-readable stdout")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cp = load_config(args.config)
        return COMMANDS[args.command](cp, args)
    except (SolverError, MacroConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, DomainError, RegimeError, ResolutionError, ValueError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
