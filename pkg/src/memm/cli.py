"""Command line interface: ``memm {validate,solve,simulate,verify,bns-check}``.

Exit status: 0 ok, 2 configuration or model error, 3 solver failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (AdmissibilityError, ClampError, CorruptionError, ModelFileError,
                     ModelValidationError, NonConvergenceError, TruncationError)
from .ipde import Grid, Surface, picard_solve, read_surface_csv, write_surface_csv
from .model import validate_model
from .modelfile import bns_params_from_dict, model_from_dict, read_config
from .montecarlo import residuals, simulate_paths, verify_suite, write_stats_json
from .special import check_bns_admissibility, solve_deterministic_phi, solve_orthogonal

log = logging.getLogger("memm")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _grid_arg(text):
    try:
        n, m = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 64x64, got {text!r}")
    if n < 2 or m < 2:
        raise argparse.ArgumentTypeError("grid needs at least 2 points per axis")
    return n, m


def _positive(kind):
    def parse(text):
        val = kind(text)
        if not val > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text!r}")
        return val
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--model", help="YAML model file")
    src.add_argument("--preset", help="name of a shipped preset")
    common.add_argument("--grid", type=_grid_arg, help="time x state grid, e.g. 64x64")
    common.add_argument("--tol", type=_positive(float), help="Picard tolerance (sup norm)")
    common.add_argument("--paths", type=_positive(int), default=100_000)
    common.add_argument("--steps", type=_positive(int), default=500)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=_positive(int), default=1)
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="memm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check the standing assumptions")
    sub.add_parser("solve", parents=[common], help="solve the IPDE and export the surface")
    p = sub.add_parser("simulate", parents=[common], help="simulate paths")
    p.add_argument("--measure", choices=["P", "Qstar"], default="P")
    p.add_argument("--dump-paths", type=int, default=0, metavar="N",
                   help="also write the first N paths to paths.csv")
    p.add_argument("--surface", help="directory of a previous solve (default: solve inline)")
    p = sub.add_parser("verify", parents=[common], help="Monte Carlo verification")
    p.add_argument("--surface", help="directory of a previous solve (default: solve inline)")
    p.add_argument("--z-threshold", type=_positive(float), default=4.0)
    p.add_argument("--residual-paths", type=int, default=1000)
    sub.add_parser("bns-check", parents=[common], help="BN-S admissibility report")
    return parser


# -- helpers ------------------------------------------------------------------

def _load_config(args):
    if args.model is None and args.preset is None:
        raise UsageError("one of --model or --preset is required")
    return read_config(path=args.model, preset=args.preset)


def _solver_options(args, loaded):
    opts = dict(loaded.solver)
    grid = args.grid or tuple(opts.pop("grid", (64, 64)))
    opts.pop("grid", None)
    if args.tol is not None:
        opts["tol"] = args.tol
    return Grid.for_model(loaded.model, *grid), opts


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _manifest(args, out: Path, config, source, status, outputs):
    payload = {
        "command": args.command,
        "argv": sys.argv[1:],
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "model_source": source,
        "model": config,
        "seed": args.seed,
        "threads": args.threads,
        "exit_status": status,
        "outputs": sorted(outputs),
        "versions": {"memm": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    _write_json(out / "manifest.json", payload)


def _solve(loaded, grid, opts, threads):
    model = loaded.model
    kwargs = {k: opts[k] for k in ("tol", "max_sweeps", "max_clamp_fraction") if k in opts}
    if "c_trunc" in opts:
        kwargs["c_trunc"] = opts["c_trunc"]
    return picard_solve(model, grid, "memm", threads=threads, **kwargs)


def write_fields_csv(path, fields):
    """Node diagnostics: market price of risk, jump ratios and identity errors."""
    n = fields.W_L.shape[-1]
    ortho = fields.orthogonality_error()
    form = fields.source_form_error()
    ratio = fields.jump_ratio
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "y", "lambda_hat", "sigma_M", "orthogonality_error", "source_form_error"]
                     + [f"ratio_{i}" for i in range(n)])
        for j, t in enumerate(fields.grid.times):
            for k, y in enumerate(fields.grid.ys):
                out.writerow([repr(float(v)) for v in
                              [t, y, fields.lambda_hat[j, k], fields.sigma_M[j, k],
                               ortho[j, k], form[j, k], *ratio[j, k]]])


def _surface_for(args, loaded, out, outputs):
    """Surface and fields from ``--surface`` or from an inline solve."""
    if getattr(args, "surface", None):
        path = Path(args.surface)
        path = path / "surface.csv" if path.is_dir() else path
        if not path.is_file():
            raise ModelFileError(f"surface file not found: {path}")
        surface, fields = read_surface_csv(path, loaded.model)
        return surface, fields, None
    grid, opts = _solver_options(args, loaded)
    surface, fields, report = _solve(loaded, grid, opts, args.threads)
    return surface, fields, report


# -- commands -----------------------------------------------------------------

def cmd_validate(args, loaded, out, outputs):
    grid, _ = _solver_options(args, loaded)
    report = validate_model(loaded.model, resolution=grid.shape)
    _write_json(out / "validation.json", report.to_dict())
    outputs.append("validation.json")
    for v in report.violations[:20]:
        print(v)
    print("validation", "passed" if report.passed else f"failed ({len(report.violations)} violations)")
    return EXIT_OK if report.passed else EXIT_CONFIG


def cmd_solve(args, loaded, out, outputs):
    grid, opts = _solver_options(args, loaded)
    surface, fields, report = _solve(loaded, grid, opts, args.threads)
    model = loaded.model
    c = -surface.initial_value(model.V0)
    write_surface_csv(out / "surface.csv", surface, fields)
    write_fields_csv(out / "fields.csv", fields)
    outputs += ["surface.csv", "fields.csv"]
    payload = {"c": c, "u0": surface.initial_value(model.V0), "grid": list(grid.shape),
               "family": loaded.family, **report.to_dict(),
               "max_orthogonality_error": float(fields.orthogonality_error().max()),
               "max_source_form_error": float(fields.source_form_error().max()),
               "min_jump_ratio": float(fields.jump_ratio.min()) if model.n_atoms else None}
    if loaded.family == "orthogonal":
        v, u_lin, _ = solve_orthogonal(model, grid, tol=min(opts.get("tol", 1e-9), 1e-12))
        with open(out / "v_surface.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "y", "v"])
            for j, t in enumerate(grid.times):
                for k, y in enumerate(grid.ys):
                    w.writerow([repr(float(t)), repr(float(y)), repr(float(v.values[j, k]))])
        outputs.append("v_surface.csv")
        payload["exp_u_minus_v_max_abs"] = float(np.max(np.abs(np.exp(surface.values) - v.values)))
        payload["u_minus_log_v_max_abs"] = float(np.max(np.abs(surface.values - u_lin.values)))
    if loaded.family == "deterministic":
        gap = max(abs(fields.phi_hat[j, k] - solve_deterministic_phi(model, t, y))
                  for j, t in enumerate(grid.times) for k, y in enumerate(grid.ys))
        payload["deterministic_root_max_abs_diff"] = gap
    _write_json(out / "report.json", payload)
    outputs.append("report.json")
    print(f"c = {c:.10g} after {report.iterations} sweeps (grid {grid.shape[0]}x{grid.shape[1]})")
    return EXIT_OK


def cmd_simulate(args, loaded, out, outputs):
    fields = None
    if args.measure == "Qstar" or args.surface:
        _, fields, _ = _surface_for(args, loaded, out, outputs)
    keep = args.dump_paths > 0
    batch = simulate_paths(loaded.model, fields, args.measure, args.paths, args.steps, args.seed,
                           store_paths=keep)
    summary = {"measure": args.measure, "n_paths": batch.n_paths, "n_steps": args.steps,
               "mean_S_T": float(batch.S_T.mean()), "mean_V_T": float(batch.V_T.mean()),
               "clamped_paths": int((batch.clamps > 0).sum())}
    if fields is not None and args.measure == "P":
        summary["mean_Z_T"] = float(np.exp(batch.logZ_T).mean())
    _write_json(out / "simulation.json", summary)
    outputs.append("simulation.json")
    if keep:
        n = min(args.dump_paths, batch.n_paths)
        with open(out / "paths.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "step", "t", "V", "S", "logZ"] + [f"N_{i}" for i in range(loaded.model.n_atoms)])
            for p in range(n):
                for i, t in enumerate(batch.times):
                    cnt = list(batch.counts[p, i]) if i < len(batch.times) - 1 else [0] * loaded.model.n_atoms
                    w.writerow([p, i, repr(float(t)), repr(float(batch.V[p, i])),
                                repr(float(math.exp(batch.logS[p, i]))), repr(float(batch.logZ[p, i]))] + cnt)
        outputs.append("paths.csv")
    print(json.dumps(summary))
    return EXIT_OK


def residual_bound(surface, fields, n_steps):
    """Grid-consistent bound for the median pathwise residual."""
    n_t, n_y = surface.grid.shape
    scale = max(float(np.abs(surface.values).max()), float(np.abs(fields.g).max()) * surface.grid.T)
    return 10.0 * (1.0 / n_steps + 1.0 / (n_t - 1) + 1.0 / (n_y - 1)) * scale + 1e-12


def cmd_verify(args, loaded, out, outputs):
    surface, fields, _ = _surface_for(args, loaded, out, outputs)
    model = loaded.model
    stats = verify_suite(model, fields, surface, args.paths, args.steps, args.seed)
    failed = [name for name, s in stats.items() if not s.passed(args.z_threshold)]
    extra = {"z_threshold": args.z_threshold}
    if args.residual_paths > 0:
        batch = simulate_paths(model, fields, "P", args.residual_paths, args.steps, args.seed + 1,
                               store_paths=True)
        med = float(np.median(np.abs(residuals(batch, surface, fields))))
        bound = residual_bound(surface, fields, args.steps)
        extra["pathwise_residual"] = {"median_abs": med, "bound": bound, "n_paths": batch.n_paths}
        if not med <= bound:
            failed.append("pathwise_residual")
    extra["failed"] = failed
    write_stats_json(out / "verify.json", stats, _jsonable(extra))
    outputs.append("verify.json")
    for s in stats.values():
        print(f"{s.name:16s} estimate={s.estimate:.6g} target={s.target:.6g} "
              f"se={s.std_error:.3g} z={s.z_score:+.2f}")
    if failed:
        print("verification failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


def cmd_bns_check(args, config, source, out, outputs):
    if config.get("family") != "bns":
        raise ModelFileError(f"{source}: bns-check needs a model of family 'bns'")
    params = bns_params_from_dict(config, source)
    grid = args.grid or (64, 64)
    report = check_bns_admissibility(params, resolution=grid)
    _write_json(out / "bns_check.json", report.to_dict())
    outputs.append("bns_check.json")
    for line in report.messages:
        print(line)
    print("admissible" if report.admissible else "not admissible")
    return EXIT_OK if report.admissible else EXIT_CONFIG


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "simulate": cmd_simulate,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    outputs: list[str] = []
    config, source, status = None, None, EXIT_CONFIG
    try:
        out.mkdir(parents=True, exist_ok=True)
        config, source = _load_config(args)
        if args.command == "bns-check":
            status = cmd_bns_check(args, config, source, out, outputs)
        else:
            loaded = model_from_dict(config, source)
            status = COMMANDS[args.command](args, loaded, out, outputs)
    except (UsageError, ModelFileError, ModelValidationError, AdmissibilityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    except (NonConvergenceError, TruncationError, ClampError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        detail = getattr(exc, "report", None) or getattr(exc, "detail", None)
        if detail is not None and hasattr(detail, "to_dict") and out.is_dir():
            _write_json(out / "report.json", detail.to_dict())
            outputs.append("report.json")
        status = EXIT_SOLVER
    except CorruptionError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        status = EXIT_VERIFY
    if out.is_dir():
        _manifest(args, out, config, source, status, outputs)
    return status


if __name__ == "__main__":
    sys.exit(main())
