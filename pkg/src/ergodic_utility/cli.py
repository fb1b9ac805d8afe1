"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 math/domain failure, 4 no decision.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from . import dist, duality, ergodic, sde
from .expr import DomainError, ExprSyntaxError
from .functions import BrownianDrift, InversionError, ValidationError, domain_grid
from .specs import DYNAMIC, UTILITY, format_interval, parse_cli_spec

EXIT_OK, EXIT_INPUT, EXIT_MATH, EXIT_NO_DECISION = 0, 2, 3, 4


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def _emit(text: str, out: str | None) -> None:
    """Write to ``out`` atomically (temp file + rename) or to stdout."""
    if out is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(out))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(payload: dict) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def _defaults(args) -> dict:
    return {"a_u": args.a_u, "b_u": args.b_u, "x0": args.x0}


def _bd(args) -> BrownianDrift:
    return BrownianDrift(args.a_u, args.b_u)


def _sim_config(args, **over) -> sde.SimConfig:
    values = dict(dt=args.dt, horizon=args.horizon, n_paths=args.paths, seed=args.seed,
                  boundary_policy=args.boundary)
    values.update(over)
    return sde.SimConfig(**values)


def _table_csv(header, columns) -> str:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- commands


def cmd_derive_dynamic(args) -> int:
    u = parse_cli_spec(args.utility, UTILITY, args.domain)
    bd = _bd(args)
    x0 = args.x0 if args.x0 is not None else u.reference_x0
    p = duality.dynamic_from_utility(u, bd, x0)
    formulas = p.formulas
    if args.format == "json":
        payload = {"utility": u.name, "a_u": bd.a_u, "b_u": bd.b_u, "drift": formulas.get("drift"),
                   "diffusion": formulas.get("diffusion"), "domain": format_interval(p.domain), "x0": p.x0}
        if not formulas:
            payload["table"] = _sampled(p)
        _emit(_json(payload), args.out)
    elif args.format == "csv" or not formulas:
        grid = _grid_for(p.domain, args.grid, p.x0)
        _emit(_table_csv(["x", "a_x", "b_x"], [grid, p.drift(grid), p.diffusion(grid)]), args.out)
    else:
        text = (f"utility: {u.name}  (a_u = {bd.a_u:g}, b_u = {bd.b_u:g})\n"
                f"a_x(x) = {formulas['drift']}\n"
                f"b_x(x) = {formulas['diffusion']}\n")
        _emit(text, args.out)
    return EXIT_OK


def _grid_for(domain, n, center):
    lo, hi = domain
    return domain_grid(domain, n, center=center if not (math.isfinite(lo) and math.isfinite(hi)) else None)


def _sampled(p, n=32):
    grid = _grid_for(p.domain, n, p.x0)
    return [[float(x), float(a), float(b)] for x, a, b in zip(grid, p.drift(grid), p.diffusion(grid))]


def cmd_check(args) -> int:
    p = parse_cli_spec(args.dynamic[0], DYNAMIC, args.domain, _defaults(args))
    report = duality.check_consistency(p, args.grid, args.tol)
    payload = report.to_dict(include_grid=args.include_grid)
    payload["dynamic"] = p.name
    _emit(_json(payload), args.out)
    return EXIT_OK


def cmd_derive_utility(args) -> int:
    p = parse_cli_spec(args.dynamic[0], DYNAMIC, args.domain, _defaults(args))
    report = duality.check_consistency(p, tol=args.tol)
    if not report.consistent:
        raise duality.InconsistentDynamicError(
            f"{p.name} is inconsistent (residual {report.residual:.3g}); no utility exists", report)
    b_u = args.b_u if args.b_u is not None else 1.0
    bd = BrownianDrift(report.inferred_a_u_over_b_u * b_u, b_u)
    x_ref = args.x_ref if args.x_ref is not None else p.x0
    u = duality.utility_from_dynamic(p, bd, x_ref, args.u_ref, tol=args.tol)
    grid = _grid_for(p.domain, args.grid, p.x0)
    if args.format == "json":
        _emit(_json({"dynamic": p.name, "a_u": bd.a_u, "b_u": bd.b_u, "x_ref": x_ref, "u_ref": args.u_ref,
                     "table": [[float(x), float(v), float(d)] for x, v, d in zip(grid, u.u(grid), u.u_prime(grid))]}),
              args.out)
    else:
        _emit(_table_csv(["x", "u", "u_prime"], [grid, u.u(grid), u.u_prime(grid)]), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    p = parse_cli_spec(args.dynamic[0], DYNAMIC, args.domain, _defaults(args))
    cfg = _sim_config(args)
    ens = sde.simulate(p, cfg, workers=args.workers)
    if len(ens) == 0:
        raise sde.SimulationError(f"every path failed: {ens.diagnostics()}")
    paths = list(ens)
    if args.transform:
        u = parse_cli_spec(args.transform, UTILITY, args.domain)
        paths = [sde.transform_path(q, u) for q in paths]
    if args.format == "json":
        _emit(_json({"dynamic": p.name, "config": cfg.to_dict(), "diagnostics": ens.diagnostics(),
                     "t": paths[0].times.tolist(), "paths": [q.values.tolist() for q in paths]}), args.out)
    else:
        _emit(sde.paths_to_csv(paths[0] if len(paths) == 1 else paths), args.out)
    return EXIT_OK


def cmd_growth(args) -> int:
    p = parse_cli_spec(args.dynamic[0], DYNAMIC, args.domain, _defaults(args))
    u = parse_cli_spec(args.utility, UTILITY, args.domain)
    cfg = _sim_config(args)
    if args.mode == "time":
        ens = sde.simulate(p, cfg.replace(n_paths=1))
        if len(ens) == 0:
            raise sde.SimulationError(f"the path failed: {ens.diagnostics()}")
        est = ergodic.time_average_rate(sde.transform_path(ens[0], u), args.block_dt)
        payload = {"estimate": est.to_dict(), "diagnostics": ens.diagnostics()}
    elif args.mode == "ensemble":
        ens = sde.simulate_at(p, cfg.replace(horizon=args.block_dt), [args.block_dt], workers=args.workers)
        du = np.asarray(u.u(ens.values[ens.ok, -1])) - float(u.u(p.x0))
        est = ergodic.ensemble_average_rate(du, float(ens.times[-1]))
        payload = {"estimate": est.to_dict(), "diagnostics": ens.diagnostics()}
    else:
        report = ergodic.ergodicity_check(p, u, cfg, args.block_dt, workers=args.workers)
        payload = report.to_dict()
    payload.update({"dynamic": p.name, "utility": u.name, "mode": args.mode, "seed": args.seed,
                    "config": cfg.to_dict()})
    _emit(_json(payload), args.out)
    return EXIT_OK


def cmd_decide(args) -> int:
    if len(args.dynamic) != 2:
        raise ValidationError("decide needs exactly two --dynamic arguments")
    pa = parse_cli_spec(args.dynamic[0], DYNAMIC, args.domain, _defaults(args))
    pb = parse_cli_spec(args.dynamic[1], DYNAMIC, args.domain, _defaults(args))
    u = parse_cli_spec(args.utility, UTILITY, args.domain)
    cfg = _sim_config(args)
    names = (args.dynamic[0], args.dynamic[1]) if args.dynamic[0] != args.dynamic[1] else None
    result = ergodic.decide(pa, pb, u, args.epsilon, cfg, common_noise=args.common_noise,
                            pure_simulation=args.pure_simulation, workers=args.workers, names=names)
    payload = result.to_dict()
    payload["utility"] = u.name
    _emit(_json(payload), args.out)
    return EXIT_NO_DECISION if result.chosen is None else EXIT_OK


def cmd_density(args) -> int:
    u = parse_cli_spec(args.utility, UTILITY, args.domain)
    x0 = args.x0 if args.x0 is not None else u.reference_x0
    d = dist.wealth_density(u, _bd(args), x0, args.t, args.convention)
    grid = None
    if args.grid:
        lo, hi = d.grid[0], d.grid[-1]
        grid = np.linspace(lo, hi, args.grid)
    if args.format == "json":
        xs = d.grid if grid is None else grid
        _emit(_json({"utility": u.name, "t": args.t, "params": d.params, "mass": d.mass,
                     "x": xs.tolist(), "pdf": np.asarray(d.pdf(xs)).tolist()}), args.out)
    else:
        _emit(dist.density_to_csv(d, grid), args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parsing


def _add_common(sp, sim=False):
    sp.add_argument("--a_u", "--a-u", dest="a_u", type=float, default=0.5, help="utility drift (default 0.5)")
    sp.add_argument("--b_u", "--b-u", dest="b_u", type=float, default=1.0, help="utility volatility (default 1)")
    sp.add_argument("--x0", type=float, default=None, help="initial wealth")
    sp.add_argument("--domain", default=None, help="domain 'lo,hi' for expr: specs (inf allowed)")
    sp.add_argument("--out", default=None, help="output file (default stdout)")
    if sim:
        sp.add_argument("--dt", type=float, default=0.01)
        sp.add_argument("--horizon", type=float, default=10.0)
        sp.add_argument("--paths", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--boundary", choices=[b.value for b in sde.BoundaryPolicy],
                        default=sde.BoundaryPolicy.REFLECT_AT_EPSILON.value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergodic-utility", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("derive-dynamic", help="wealth dynamic implied by a utility")
    sp.add_argument("--utility", required=True)
    sp.add_argument("--format", choices=["text", "json", "csv"], default="text")
    sp.add_argument("--grid", type=int, default=64)
    _add_common(sp)
    sp.set_defaults(func=cmd_derive_dynamic)

    sp = sub.add_parser("check", help="consistency condition of a dynamic")
    sp.add_argument("--dynamic", action="append", required=True)
    sp.add_argument("--grid", type=int, default=duality.DEFAULT_GRID)
    sp.add_argument("--tol", type=float, default=duality.DEFAULT_TOL)
    sp.add_argument("--include-grid", action="store_true")
    _add_common(sp)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("derive-utility", help="utility function of a consistent dynamic")
    sp.add_argument("--dynamic", action="append", required=True)
    sp.add_argument("--x_ref", "--x-ref", dest="x_ref", type=float, default=None)
    sp.add_argument("--u_ref", "--u-ref", dest="u_ref", type=float, default=0.0)
    sp.add_argument("--grid", type=int, default=128)
    sp.add_argument("--tol", type=float, default=duality.DEFAULT_TOL)
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(sp)
    sp.set_defaults(func=cmd_derive_utility)

    sp = sub.add_parser("simulate", help="Euler-Maruyama sample paths")
    sp.add_argument("--dynamic", action="append", required=True)
    sp.add_argument("--transform", default=None, help="utility to apply to the paths")
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(sp, sim=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("growth", help="time- or ensemble-average utility growth rate")
    sp.add_argument("--dynamic", action="append", required=True)
    sp.add_argument("--utility", required=True)
    sp.add_argument("--mode", choices=["time", "ensemble", "check"], default="check")
    sp.add_argument("--block_dt", "--block-dt", dest="block_dt", type=float, default=1.0)
    _add_common(sp, sim=True)
    sp.set_defaults(func=cmd_growth)

    sp = sub.add_parser("decide", help="time-based choice between two dynamics")
    sp.add_argument("--dynamic", action="append", required=True, help="give twice")
    sp.add_argument("--utility", required=True)
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--common-noise", action="store_true", help="extension: shared noise stream")
    sp.add_argument("--pure-simulation", action="store_true")
    _add_common(sp, sim=True)
    sp.set_defaults(func=cmd_decide, horizon=64.0, paths=4000)

    sp = sub.add_parser("density", help="wealth density at time t (CSV x,pdf)")
    sp.add_argument("--utility", required=True)
    sp.add_argument("--t", type=float, default=5.0)
    sp.add_argument("--grid", type=int, default=0, help="evenly spaced points (default: quantile grid)")
    sp.add_argument("--convention", choices=[dist.BROWNIAN, dist.PRINTED_T_SQUARED], default=dist.BROWNIAN)
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_common(sp)
    sp.set_defaults(func=cmd_density)
    return parser


_MATH_ERRORS = (DomainError, InversionError, dist.NormalizationError, duality.InconsistentDynamicError,
                sde.SimulationError, ArithmeticError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        sys.stderr.close()
        return EXIT_OK
    except _MATH_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MATH
    except (ValidationError, ExprSyntaxError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
