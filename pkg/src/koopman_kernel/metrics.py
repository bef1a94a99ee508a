"""Error fields against known eigenfunctions, PDE residuals, fill distance, convergence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import collocation as co
from . import expr as ex
from .errors import DegenerateTruth, EmptySet, KoopmanError

DEFAULT_PROBES = {1: 20000, 2: 600, 3: 80}


def default_probe_resolution(d: int) -> int:
    return DEFAULT_PROBES.get(d, 12)


def fill_distance(Z, box: co.Box, probe_resolution=None) -> float:
    """Largest distance from a probe-grid point of ``box`` to its nearest point of ``Z``.

    Approaches the true fill distance from below as the probe grid is refined.
    """
    Z = np.asarray(Z, float).reshape(-1, box.dimension)
    if len(Z) == 0:
        raise EmptySet("fill distance of an empty set")
    res = probe_resolution or default_probe_resolution(box.dimension)
    if res < 2:
        raise ValueError("probe resolution must be at least 2 per axis")
    probes = co.grid_points(box, (res,) * box.dimension)
    dist, _ = cKDTree(Z).query(probes, k=1)
    return float(dist.max())


# ----------------------------------------------------------------------------
# error fields
# ----------------------------------------------------------------------------

def evaluate_truth(truth, points) -> np.ndarray:
    """Evaluate an expression (or text, or vectorised callable) at each row."""
    X = np.asarray(points, float)
    if isinstance(truth, str):
        truth = ex.parse(truth, X.shape[1])
    if isinstance(truth, ex.Expr):
        v = ex.evaluate(truth, [X[:, i] for i in range(X.shape[1])])
        return np.broadcast_to(np.asarray(v, float), (len(X),)).copy()
    return np.asarray(truth(X), float)


@dataclass
class ErrorReport:
    points: np.ndarray
    phi_star: np.ndarray
    phi_true: np.ndarray
    abs_err: np.ndarray
    rel_err: np.ndarray      # NaN where excluded
    excluded: np.ndarray
    alpha: float
    eps_floor: float
    summary: dict = field(default_factory=dict)


def align_scale(phi_star, phi_true) -> float:
    """Least-squares alpha minimising sum (alpha phi* - phi_true)^2."""
    den = float(phi_star @ phi_star)
    if den == 0.0:
        return 1.0
    return float(phi_star @ phi_true) / den


def error_report(phi_star, phi_true, points=None, eps_floor=1e-2, align=False) -> ErrorReport:
    phi_star = np.asarray(phi_star, float)
    phi_true = np.asarray(phi_true, float)
    peak = float(np.max(np.abs(phi_true), initial=0.0))
    if peak == 0.0:
        raise DegenerateTruth("reference eigenfunction vanishes on the whole grid")
    alpha = align_scale(phi_star, phi_true) if align else 1.0
    abs_err = np.abs(alpha * phi_star - phi_true)
    excluded = np.abs(phi_true) < eps_floor * peak
    rel = np.full_like(abs_err, np.nan)
    keep = ~excluded
    rel[keep] = abs_err[keep] / np.abs(phi_true[keep])
    inc = rel[keep]
    summary = {
        "n_points": int(len(abs_err)),
        "n_excluded": int(excluded.sum()),
        "alpha": alpha,
        "rel_err_median": float(np.median(inc)) if inc.size else float("nan"),
        "rel_err_mean": float(np.mean(inc)) if inc.size else float("nan"),
        "rel_err_max": float(np.max(inc)) if inc.size else float("nan"),
        "abs_err_max": float(np.max(abs_err, initial=0.0)),
    }
    return ErrorReport(points, phi_star, phi_true, abs_err, rel, excluded, alpha,
                       eps_floor, summary)


def error_field(model, truth, grid, eps_floor=1e-2, align=False) -> ErrorReport:
    grid = np.asarray(grid, float).reshape(-1, model.dimension)
    return error_report(model.batch_eval(grid), evaluate_truth(truth, grid), grid,
                        eps_floor, align)


# ----------------------------------------------------------------------------
# PDE residual
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualSummary:
    rms: float
    max: float
    n_points: int


def generator_residual(model, vf, points) -> np.ndarray:
    """grad phi*(x) . f(x) - lam phi*(x) with a central-difference gradient."""
    X = np.asarray(points, float).reshape(-1, model.dimension)
    grad = model.grad_phi_fd(X)
    return np.sum(grad * vf.batch(X), axis=1) - model.lam * model.batch_eval(X)


def pde_residual(model, vf, holdout) -> ResidualSummary:
    r = generator_residual(model, vf, holdout)
    if r.size == 0:
        return ResidualSummary(0.0, 0.0, 0)
    return ResidualSummary(float(np.sqrt(np.mean(r * r))), float(np.max(np.abs(r))), int(r.size))


def function_residual(fn, grad_fn, vf, lam, points) -> ResidualSummary:
    """Generator residual of an arbitrary (value, gradient) pair, e.g. an analytic truth."""
    X = np.asarray(points, float)
    r = np.sum(grad_fn(X) * vf.batch(X), axis=1) - lam * fn(X)
    return ResidualSummary(float(np.sqrt(np.mean(r * r))), float(np.max(np.abs(r))), int(r.size))


# ----------------------------------------------------------------------------
# convergence in the fill distance
# ----------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    N: int
    shape: tuple
    rho: float
    residual_rms: float
    rel_err_median: float
    status: str


@dataclass
class ConvergenceRecord:
    rows: list
    slope: float | None
    slope_status: str

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.status == "ok"]


def loglog_slope(rho, err):
    rho = np.asarray(rho, float)
    err = np.asarray(err, float)
    good = (rho > 0) & (err > 0) & np.isfinite(err)
    if good.sum() < 2:
        return None
    return float(np.polyfit(np.log(rho[good]), np.log(err[good]), 1)[0])


def convergence_study(vf, pair_index, box, kern, grid_shapes, eta=None,
                      eta_rel=co.DEFAULT_ETA_REL, truth=None, holdout=None,
                      eval_shape=None, eps_floor=1e-2, probe_resolution=None):
    """Refine the collocation grid and track held-out residual versus fill distance.

    One row per grid shape; a failing solve marks its row instead of aborting.
    The slope is fitted to log(residual RMS) against log(rho).
    """
    from .dynsys import linearize

    shapes = [tuple(int(s) for s in sh) for sh in grid_shapes]
    sizes = [int(np.prod(s)) for s in shapes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("grid shapes must be strictly increasing in point count")
    lin = linearize(vf)
    if holdout is None:
        holdout = co.halton_points(box, 500)
    eval_grid = None
    if truth is not None:
        eval_grid = co.grid_points(box, eval_shape or (100,) * box.dimension)

    rows = []
    for shape, n in zip(shapes, sizes):
        Z = co.sample(box, co.Grid(shape))
        rho = fill_distance(Z.points, box, probe_resolution)
        try:
            gs = co.build(vf, lin, pair_index, Z, kern, eta=eta, eta_rel=eta_rel)
            model = co.solve(gs)
            res = pde_residual(model, vf, holdout).rms
            med = float("nan")
            if eval_grid is not None:
                med = error_field(model, truth, eval_grid, eps_floor).summary["rel_err_median"]
            rows.append(ConvergenceRow(n, shape, rho, res, med, "ok"))
        except (KoopmanError, np.linalg.LinAlgError) as err:
            rows.append(ConvergenceRow(n, shape, rho, float("nan"), float("nan"),
                                       f"failed: {type(err).__name__}"))
    rows.sort(key=lambda r: -r.rho)
    ok = [r for r in rows if r.status == "ok"]
    slope = loglog_slope([r.rho for r in ok], [r.residual_rms for r in ok])
    status = "ok" if slope is not None else "insufficient"
    return ConvergenceRecord(rows, slope, status)
