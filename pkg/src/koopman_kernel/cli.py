"""``koopman solve|grid|converge|traj|list``: run configs and write CSV/JSON artifacts.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 evaluation failure
or a model that does not match the config.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import collocation as co
from . import config as cf
from . import dynsys as ds
from . import metrics as me
from . import trajectory as tr
from .errors import ConfigError, KoopmanError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_EVAL = 0, 2, 3, 4
LAMBDA_MATCH_TOL = 1e-6


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------------

def fmt(x) -> str:
    """Shortest round-trip decimal for a float."""
    return repr(float(x))


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj):
    write_atomic(path, json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def csv_text(header, columns) -> str:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def log(msg):
    print(msg, file=sys.stderr)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def _load_config(args) -> cf.RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = cf.load(args.config)
    if getattr(args, "eta", None) is not None:
        if args.eta < 0:
            raise ConfigError("--eta must be nonnegative")
        cfg.eta = float(args.eta)
    return cfg


def _out_dir(args, cfg) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(cfg.output or f"out/{cfg.name or 'run'}")


def _load_model(args, cfg, out: Path) -> co.EigenfunctionModel:
    path = Path(args.model) if args.model else out / "model.json"
    try:
        model = co.load_model(path)
    except FileNotFoundError:
        raise CommandError(EXIT_EVAL, f"model file not found: {path}") from None
    except (ValueError, KeyError, TypeError) as err:
        raise CommandError(EXIT_EVAL, f"cannot read model {path}: {err}") from None
    if model.dimension != cfg.dimension:
        raise CommandError(EXIT_EVAL, f"model dimension {model.dimension} != config {cfg.dimension}")
    if abs(model.lam - cfg.lam) > LAMBDA_MATCH_TOL:
        raise CommandError(EXIT_EVAL, f"model lambda {model.lam!r} does not match the config "
                                      f"eigenpair {cfg.lam!r}")
    return model


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    lin = ds.linearize(cfg.system)
    Z = co.sample(cfg.domain, cfg.scheme)
    try:
        gs = co.build(cfg.system, lin, cfg.pair_index, Z, cfg.kernel, eta=cfg.eta,
                      eta_rel=cfg.eta_rel)
        model = co.solve(gs)
    except KoopmanError as err:
        raise CommandError(EXIT_SOLVER, f"{type(err).__name__}: {err}") from None
    rho = me.fill_distance(Z.points, cfg.domain)
    diag = dict(model.diagnostics)
    diag.update({
        "config": cfg.name,
        "lambda": model.lam,
        "w": model.w,
        "sigma": cfg.sigma,
        "n_points": len(Z),
        "fill_distance": rho,
        "eigenvalues": list(lin.eigenvalues),
        "linearization_warnings": list(lin.warnings),
    })
    write_atomic(out / "model.json", co.dumps_model(model))
    write_json(out / "diagnostics.json", diag)
    log(f"solved {cfg.name}: lambda={model.lam:.6g}, n={len(model.coefficients)}, "
        f"eta={model.eta:.3e} -> {out}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    model = _load_model(args, cfg, out)
    eg = cfg.eval_grid or cf.EvalGrid((100,) * cfg.dimension if cfg.dimension <= 2
                                      else (40,) * cfg.dimension)
    X = eg.points(cfg.domain)
    d = cfg.dimension
    try:
        phi = model.batch_eval(X)
    except (KoopmanError, ArithmeticError) as err:
        raise CommandError(EXIT_EVAL, f"evaluation failed: {err}") from None
    if not np.all(np.isfinite(phi)):
        raise CommandError(EXIT_EVAL, "evaluation produced non-finite values")

    header = [f"x{i + 1}" for i in range(d)] + ["phi_star"]
    cols = [X[:, i] for i in range(d)] + [phi]
    summary = {
        "config": cfg.name, "lambda": model.lam, "n_points": len(X),
        "n_extrapolated": int(model.extrapolation_mask(X).sum()),
        "phi_star_min": float(phi.min(initial=np.inf)),
        "phi_star_max": float(phi.max(initial=-np.inf)),
    }
    if cfg.truth is not None:
        try:
            truth = me.evaluate_truth(cfg.truth, X)
            rep = me.error_report(phi, truth, X, cfg.eps_floor, cfg.align)
        except (KoopmanError, ArithmeticError) as err:
            raise CommandError(EXIT_EVAL, f"truth evaluation failed: {err}") from None
        header += ["phi_true", "abs_err", "rel_err", "excluded"]
        cols += [truth, rep.abs_err, rep.rel_err, ["1" if e else "0" for e in rep.excluded]]
        summary.update(rep.summary)
        summary["truth"] = cfg.truth_text
        summary["eps_floor"] = cfg.eps_floor
        summary["align"] = cfg.align
    write_atomic(out / "phi.csv", csv_text(header, cols))
    write_json(out / "summary.json", summary)
    msg = f"grid {cfg.name}: {len(X)} points -> {out / 'phi.csv'}"
    if cfg.truth is not None:
        msg += f" (median rel err {summary['rel_err_median']:.3e})"
    log(msg)
    return EXIT_OK


def _parse_shapes(text, d):
    shapes = []
    for tok in text.split(","):
        parts = [int(p) for p in tok.lower().split("x")]
        if len(parts) == 1:
            parts = parts * d
        if len(parts) != d:
            raise ConfigError(f"shape {tok!r} does not match dimension {d}")
        shapes.append(tuple(parts))
    return shapes


def cmd_converge(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    settings = cfg.convergence or cf.ConvergenceSettings([])
    shapes = _parse_shapes(args.shapes, cfg.dimension) if args.shapes else settings.shapes
    if not shapes:
        raise ConfigError("no grid shapes (give --shapes or convergence.shapes)")
    eta = cfg.eta if args.eta is not None else settings.eta
    eta_rel = settings.eta_rel if settings.eta_rel is not None else cfg.eta_rel
    holdout = co.halton_points(cfg.domain, settings.holdout)
    try:
        rec = me.convergence_study(cfg.system, cfg.pair_index, cfg.domain, cfg.kernel, shapes,
                                   eta=eta, eta_rel=eta_rel, truth=cfg.truth, holdout=holdout,
                                   eval_shape=cfg.eval_grid.shape if cfg.eval_grid else None,
                                   eps_floor=cfg.eps_floor)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    cols = [[r.N for r in rec.rows], [r.rho for r in rec.rows],
            [r.residual_rms for r in rec.rows], [r.rel_err_median for r in rec.rows],
            [r.status for r in rec.rows]]
    cols[0] = [str(n) for n in cols[0]]
    write_atomic(out / "convergence.csv",
                 csv_text(["N", "rho", "residual_rms", "rel_err_median", "status"], cols))
    write_json(out / "summary.json", {
        "config": cfg.name, "lambda": cfg.lam, "slope": rec.slope,
        "slope_status": rec.slope_status, "eta": eta, "eta_rel": eta_rel,
        "holdout": settings.holdout,
        "rows": [{"N": r.N, "shape": list(r.shape), "rho": r.rho,
                  "residual_rms": r.residual_rms, "rel_err_median": r.rel_err_median,
                  "status": r.status} for r in rec.rows],
    })
    n_ok = len(rec.ok_rows)
    log(f"converge {cfg.name}: {n_ok}/{len(rec.rows)} rows ok, slope={rec.slope}")
    return EXIT_OK if n_ok >= 2 else EXIT_SOLVER


def cmd_traj(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    model = _load_model(args, cfg, out)
    t = cfg.trajectory or cf.TrajectorySettings(co.halton_points(cfg.domain, 20), 2.0, 0.005)
    box = t.box if t.box is not None else cfg.domain
    try:
        rep = tr.property_check(model.batch_eval, model.lam, cfg.system, t.starts, t.T, t.dt,
                                t.floor, box)
    except (KoopmanError, ArithmeticError, ValueError) as err:
        raise CommandError(EXIT_EVAL, f"trajectory check failed: {err}") from None
    obj = rep.to_dict()
    obj["config"] = cfg.name
    obj["box"] = {"lower": box.lower, "upper": box.upper}
    write_json(out / "property.json", obj)
    log(f"traj {cfg.name}: median deviation {rep.median:.3e}, max {rep.max:.3e}")
    return EXIT_OK


def list_text() -> str:
    lines = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name in ds.builtin_names():
            vf = ds.builtin(name)
            lin = ds.linearize(vf)
            eq = ", ".join(f"{v:.2f}" for v in vf.equilibrium)
            lams = ", ".join(f"{v:.6f}" for v in lin.eigenvalues)
            short = ", ".join(f"{v:.2f}" for v in lin.eigenvalues)
            lines.append(f"{name}  dim={vf.dimension}  equilibrium=({eq})  "
                         f"eigenvalues=[{lams}]  ({short})  {ds.BUILTIN_NOTES.get(name, '')}")
    return "\n".join(lines) + "\n"


def cmd_list(args) -> int:
    sys.stdout.write(list_text())
    if args.presets:
        sys.stdout.write("presets: " + " ".join(cf.preset_names()) + "\n")
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopman", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", required=True, help="config file or preset name")
        sp.add_argument("--out", help="output directory (overrides config 'output')")
        sp.add_argument("--eta", type=float, help="absolute ridge (overrides config)")
        if model:
            sp.add_argument("--model", help="model.json (default: <out>/model.json)")

    common(sub.add_parser("solve", help="fit phi* and write model.json"))
    common(sub.add_parser("grid", help="evaluate a model on the config grid"), model=True)
    sp = sub.add_parser("converge", help="residual versus fill distance study")
    common(sp)
    sp.add_argument("--shapes", help="comma-separated grid shapes, e.g. 10x10,20x20")
    common(sub.add_parser("traj", help="check the eigenfunction identity along RK4 paths"),
           model=True)
    sp = sub.add_parser("list", help="list builtin systems")
    sp.add_argument("--presets", action="store_true", help="also list preset names")
    return p


COMMANDS = {"solve": cmd_solve, "grid": cmd_grid, "converge": cmd_converge,
            "traj": cmd_traj, "list": cmd_list}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        log(f"config error: {err}")
        return EXIT_CONFIG
    except CommandError as err:
        log(str(err))
        return err.code
    except KoopmanError as err:
        log(f"{type(err).__name__}: {err}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
