"""Min-norm kernel collocation for the nonlinear part h of a principal eigenfunction.

For an eigenpair (lam, w) of E = Df(x_e) the eigenfunction is
phi(x) = w.(x - x_e) + h(x), where h solves

    grad h . f - lam h = -w.G,    h(x_e) = 0,    grad h(x_e) = 0.

The constraints become linear functionals; h* is the minimum-RKHS-norm
function satisfying them (up to the ridge ``eta``), given in closed form by
h*(x) = K(x, F) (K(F, F) + eta D)^{-1} Y, where D is the identity on the
PDE rows and zero on the boundary rows.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg as sla
from scipy.stats import qmc

from . import kernel as kn
from .dynsys import Linearization, VectorField
from .errors import DomainError, IllConditioned, InvalidDomain, SingularSystem

DEFAULT_ETA_REL = 1e-10
FD_STEP = 1e-5
REPRESENTER_TOL = 1e-8


# ----------------------------------------------------------------------------
# domains and sampling
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, float).reshape(-1)
        hi = np.asarray(self.upper, float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise InvalidDomain("lower and upper corners must have the same nonzero length")
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(hi <= lo):
            raise InvalidDomain(f"degenerate box [{lo.tolist()}, {hi.tolist()}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo, hi, d):
        return cls(np.full(d, float(lo)), np.full(d, float(hi)))

    @property
    def dimension(self):
        return self.lower.size

    def contains(self, points, tol=1e-12) -> np.ndarray:
        pts = np.asarray(points, float).reshape(-1, self.dimension)
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)

    def shifted(self, offset):
        return Box(self.lower + offset, self.upper + offset)


@dataclass(frozen=True)
class Grid:
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))


@dataclass(frozen=True)
class Halton:
    count: int


@dataclass(frozen=True, eq=False)
class CollocationSet:
    points: np.ndarray
    domain: Box
    scheme: object

    def __len__(self):
        return len(self.points)


def grid_points(box: Box, shape) -> np.ndarray:
    """Tensor grid including endpoints, first coordinate varying slowest."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != box.dimension or min(shape) < 1:
        raise InvalidDomain(f"grid shape {shape} does not fit a {box.dimension}-d box")
    axes = [np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])
            for lo, hi, n in zip(box.lower, box.upper, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def halton_points(box: Box, count: int) -> np.ndarray:
    """First ``count`` points of the unscrambled Halton sequence (index 0 skipped)."""
    if count < 1:
        raise InvalidDomain("halton count must be positive")
    unit = qmc.Halton(d=box.dimension, scramble=False).random(count + 1)[1:]
    return box.lower + unit * (box.upper - box.lower)


def sample(box: Box, scheme) -> CollocationSet:
    if isinstance(scheme, Grid):
        pts = grid_points(box, scheme.shape)
    elif isinstance(scheme, Halton):
        pts = halton_points(box, scheme.count)
    else:
        raise InvalidDomain(f"unknown sampling scheme {scheme!r}")
    return CollocationSet(pts, box, scheme)


# ----------------------------------------------------------------------------
# Gram system
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GramSystem:
    functionals: list
    arrays: kn.FunctionalArrays
    gram: np.ndarray
    rhs: np.ndarray
    eta: float
    lam: float
    w: np.ndarray
    equilibrium: np.ndarray
    kernel: kn.GaussianKernel
    domain: Box | None = None

    @property
    def mean_diagonal(self):
        return float(np.mean(np.diag(self.gram))) if len(self.rhs) else 1.0


def boundary_functionals(d):
    origin = np.zeros(d)
    return [kn.PointEval(origin)] + [kn.PointDeriv(origin, j) for j in range(1, d + 1)]


def build(vf: VectorField, lin: Linearization, pair_index: int, Z: CollocationSet | None,
          kern: kn.GaussianKernel, eta=None, eta_rel=DEFAULT_ETA_REL) -> GramSystem:
    """Assemble functionals, Gram matrix and right-hand side for one eigenpair.

    Functionals act in coordinates centred on the equilibrium. ``eta=None``
    selects ``eta_rel`` times the mean Gram diagonal.
    """
    d = vf.dimension
    if kern.dimension != d:
        raise ValueError(f"kernel has {kern.dimension} lengthscales, system dimension is {d}")
    lam = lin.eigenvalues[pair_index]
    w = np.asarray(lin.eigenvectors[pair_index], float)
    xe = vf.equilibrium
    pts = np.zeros((0, d)) if Z is None else np.asarray(Z.points, float)

    try:
        vel = vf.batch(pts)
    except DomainError:
        for p in pts:
            try:
                vf(p)
            except DomainError as err:
                raise DomainError(f"{err} at point {p.tolist()}") from None
        raise
    G = vel - (pts - xe) @ lin.E.T
    Y = np.concatenate([np.zeros(d + 1), -(G @ w)])

    funcs = boundary_functionals(d)
    funcs += [kn.PdeOp(u, v, lam) for u, v in zip(pts - xe, vel)]
    arrays = kn.FunctionalArrays.from_list(funcs, d)
    K = kn.gram(kern, arrays)
    if eta is None:
        eta = eta_rel * float(np.mean(np.diag(K)))
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return GramSystem(funcs, arrays, K, Y, float(eta), float(lam), w, xe.copy(), kern,
                      None if Z is None else Z.domain)


# ----------------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------------

def _residual(A, c, Y):
    """Y - A c accumulated in extended precision where the platform has it."""
    ld = np.longdouble
    return (Y.astype(ld) - A.astype(ld) @ c.astype(ld)).astype(float)


def _cholesky_solve(A, Y, refine=3):
    factor = sla.cho_factor(A, lower=True, check_finite=False)
    c = sla.cho_solve(factor, Y, check_finite=False)
    for _ in range(refine):
        c = c + sla.cho_solve(factor, _residual(A, c, Y), check_finite=False)
    return c


def ridge_mask(n, d):
    """1 on PDE rows, 0 on the d + 1 boundary rows (those stay exact)."""
    mask = np.ones(n)
    mask[:d + 1] = 0.0
    return mask


def system_matrix(gs: GramSystem, eta=None) -> np.ndarray:
    eta = gs.eta if eta is None else eta
    d = len(gs.w)
    return gs.gram + np.diag(eta * ridge_mask(len(gs.rhs), d))


def representer_tolerance(Y) -> float:
    return REPRESENTER_TOL * (1.0 + float(np.max(np.abs(Y), initial=0.0)))


def ridge_ladder(eta, scale):
    """eta itself, then x10 steps from max(eta, 1e-12 scale) up to 1e-6 scale."""
    out = [eta]
    e = max(eta, 1e-12 * scale)
    if e <= eta:
        e *= 10.0
    while e <= 1e-6 * scale * (1 + 1e-9):
        out.append(e)
        e *= 10.0
    return out


def solve(gs: GramSystem) -> EigenfunctionModel:
    """Coefficients of the representer formula, escalating the ridge if needed.

    The ridge is applied to the PDE rows only, so h*(x_e) = 0 and
    grad h*(x_e) = 0 hold to rounding error whatever ``eta`` is. A rung of
    the ladder is accepted once the factorization succeeds and the
    representer residual meets its tolerance; if none does, the most
    accurate factorized rung is kept, and lstsq is the last resort.
    """
    n = len(gs.rhs)
    d = len(gs.w)
    scale = gs.mean_diagonal
    tol = representer_tolerance(gs.rhs)
    path = []
    coeffs = None
    eta = gs.eta
    method = "cholesky"
    best = None  # (residual, eta, c)

    if not np.any(gs.rhs):
        coeffs = np.zeros(n)
        method = "trivial"
        path.append({"eta": eta, "result": "zero rhs"})
    else:
        for e in ridge_ladder(eta, scale):
            try:
                c = _cholesky_solve(system_matrix(gs, e), gs.rhs)
            except (np.linalg.LinAlgError, sla.LinAlgError):
                path.append({"eta": e, "result": "cholesky failed"})
                continue
            if not np.all(np.isfinite(c)):
                path.append({"eta": e, "result": "non-finite"})
                continue
            r = float(np.max(np.abs(_residual(system_matrix(gs, e), c, gs.rhs))))
            if r <= tol:
                path.append({"eta": e, "result": "ok", "residual": r})
                coeffs, eta = c, e
                break
            path.append({"eta": e, "result": "inaccurate", "residual": r})
            if best is None or r < best[0]:
                best = (r, e, c)
        if coeffs is None and best is not None:
            _, eta, coeffs = best
            method = "cholesky-best"
            path.append({"eta": eta, "result": "kept most accurate rung"})
    if coeffs is None:
        method = "lstsq"
        eta = gs.eta
        c, *_ = np.linalg.lstsq(system_matrix(gs, eta), gs.rhs, rcond=None)
        path.append({"eta": eta, "result": "lstsq"})
        if not np.all(np.isfinite(c)):
            raise SingularSystem("Gram system could not be solved by any fallback")
        coeffs = c
    if eta > 1e-8 * scale:
        warnings.warn(f"ridge escalated to {eta:.3e} (mean diagonal {scale:.3e})",
                      IllConditioned, stacklevel=2)

    A = system_matrix(gs, eta)
    resid = _residual(A, coeffs, gs.rhs)
    constraint = _residual(gs.gram, coeffs, gs.rhs)
    y_pde = np.abs(gs.rhs[d + 1:])
    diagnostics = {
        "eta_requested": gs.eta,
        "eta_used": eta,
        "mean_diagonal": scale,
        "solver": method,
        "path": path,
        "n_functionals": n,
        "representer_residual_inf": float(np.max(np.abs(resid), initial=0.0)),
        "representer_tolerance": tol,
        "rhs_inf": float(np.max(np.abs(gs.rhs), initial=0.0)),
        "pde_constraint_residual_inf": float(np.max(np.abs(constraint[d + 1:]), initial=0.0)),
        "pde_constraint_residual_scaled_inf": float(
            np.max(np.abs(constraint[d + 1:]) / (1.0 + y_pde), initial=0.0)),
    }
    model = EigenfunctionModel(gs.lam, gs.w, gs.equilibrium, gs.kernel, gs.functionals,
                               coeffs, eta, gs.domain, diagnostics)
    diagnostics["h_at_equilibrium"] = abs(model.eval_h(gs.equilibrium))
    diagnostics["grad_h_at_equilibrium_inf"] = float(
        np.max(np.abs(model.grad_h(gs.equilibrium))))
    diagnostics["grad_h_at_equilibrium_fd_inf"] = float(
        np.max(np.abs(model.grad_h_fd(gs.equilibrium))))
    diagnostics["grad_h_fd_step"] = model.boundary_fd_step()
    return model


# ----------------------------------------------------------------------------
# model
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EigenfunctionModel:
    lam: float
    w: np.ndarray
    equilibrium: np.ndarray
    kernel: kn.GaussianKernel
    functionals: list
    coefficients: np.ndarray
    eta: float
    domain: Box | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return len(self.w)

    @cached_property
    def arrays(self):
        return kn.FunctionalArrays.from_list(self.functionals, self.dimension)

    def _h_series(self, points, dtype):
        X = np.asarray(points, float).reshape(-1, self.dimension) - self.equilibrium
        if len(X) == 0 or len(self.coefficients) == 0:
            return np.zeros(len(X), dtype=dtype)
        c = self.coefficients.astype(dtype)

        # row-wise reduction keeps each value independent of the batch layout
        def rows(a, b):
            R = kn.eval_matrix(self.kernel, X[a:b], self.arrays, dtype=dtype)
            return (R * c).sum(axis=1)

        return np.concatenate(kn.map_blocks(rows, len(X)))

    def _phi_series(self, points, dtype):
        X = np.asarray(points, float).reshape(-1, self.dimension)
        lin = (X.astype(dtype) - self.equilibrium) @ self.w.astype(dtype)
        return lin + self._h_series(X, dtype)

    def batch_h(self, points, precise=True) -> np.ndarray:
        """h* at each row of ``points``.

        By default the representer series is summed in extended precision:
        the coefficients are large and alternate in sign, so a plain double
        sum loses several digits. ``precise=False`` is faster.
        """
        return self._h_series(points, np.longdouble if precise else float).astype(float)

    def batch_eval(self, points, precise=True) -> np.ndarray:
        return self._phi_series(points, np.longdouble if precise else float).astype(float)

    def eval_h(self, x) -> float:
        return float(self.batch_h(np.asarray(x, float).reshape(1, -1))[0])

    def eval_phi(self, x) -> float:
        return float(self.batch_eval(np.asarray(x, float).reshape(1, -1))[0])

    def grad_h(self, x) -> np.ndarray:
        """Analytic gradient of h* at a single point."""
        u = (np.asarray(x, float) - self.equilibrium).reshape(1, -1)
        if len(self.coefficients) == 0:
            return np.zeros(self.dimension)
        return np.array([
            (kn.grad_eval_matrix(self.kernel, u, self.arrays, j)[0] * self.coefficients).sum()
            for j in range(1, self.dimension + 1)
        ])

    def boundary_fd_step(self) -> float:
        """Central-difference step balancing roundoff against truncation.

        Summation error of the representer series is about eps * max|c|, so the
        quotient's roundoff scales like that over the step; the cube root is the
        usual balance point. Never below ``FD_STEP``.
        """
        eps = float(np.finfo(np.longdouble).eps)
        scale = float(np.max(np.abs(self.coefficients), initial=0.0))
        return max(FD_STEP, (eps * scale) ** (1.0 / 3.0))

    def grad_h_fd(self, x, step=None) -> np.ndarray:
        step = self.boundary_fd_step() if step is None else step
        return _central_gradient(lambda p: self._h_series(p, np.longdouble), x, step)

    def grad_phi_fd(self, points, step=FD_STEP) -> np.ndarray:
        """Central-difference gradients of phi* at each row of ``points``."""
        X = np.asarray(points, float).reshape(-1, self.dimension)
        d = self.dimension
        out = np.empty_like(X)
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            diff = (self._phi_series(X + e, np.longdouble)
                    - self._phi_series(X - e, np.longdouble))
            out[:, j] = (diff / (2 * step)).astype(float)
        return out

    def extrapolation_mask(self, points) -> np.ndarray:
        X = np.asarray(points, float).reshape(-1, self.dimension)
        if self.domain is None:
            return np.zeros(len(X), dtype=bool)
        return ~self.domain.contains(X)

    def rkhs_norm_sq(self, gram_matrix) -> float:
        c = self.coefficients
        return float(c @ gram_matrix @ c)


def _central_gradient(fn, x, step):
    x = np.asarray(x, float)
    d = x.size
    pts = np.empty((2 * d, d))
    for j in range(d):
        pts[2 * j] = x
        pts[2 * j + 1] = x
        pts[2 * j, j] += step
        pts[2 * j + 1, j] -= step
    v = fn(pts)
    return ((v[0::2] - v[1::2]) / (2 * step)).astype(float)


def zero_model(lam, w, equilibrium, kern, domain=None) -> EigenfunctionModel:
    """Model with h* = 0, i.e. phi*(x) = w.(x - x_e)."""
    d = len(w)
    return EigenfunctionModel(float(lam), np.asarray(w, float), np.asarray(equilibrium, float),
                              kern, boundary_functionals(d), np.zeros(d + 1), 0.0, domain, {})


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

def _s(x) -> str:
    return format(float(x), ".17g")


def _sv(v):
    return [_s(x) for x in np.asarray(v, float).reshape(-1)]


def _functional_to_json(f):
    if isinstance(f, kn.PointEval):
        return {"kind": "eval", "point": _sv(f.point)}
    if isinstance(f, kn.PointDeriv):
        return {"kind": "deriv", "point": _sv(f.point), "axis": int(f.axis)}
    return {"kind": "pde", "point": _sv(f.point), "velocity": _sv(f.velocity),
            "lambda": _s(f.lam)}


def _functional_from_json(obj):
    p = np.array([float(s) for s in obj["point"]])
    kind = obj["kind"]
    if kind == "eval":
        return kn.PointEval(p)
    if kind == "deriv":
        return kn.PointDeriv(p, int(obj["axis"]))
    if kind == "pde":
        return kn.PdeOp(p, np.array([float(s) for s in obj["velocity"]]), float(obj["lambda"]))
    raise ValueError(f"unknown functional kind {kind!r}")


def model_to_dict(model: EigenfunctionModel) -> dict:
    out = {
        "format": "koopman-eigenfunction-model/1",
        "lambda": _s(model.lam),
        "w": _sv(model.w),
        "equilibrium": _sv(model.equilibrium),
        "sigma": _sv(model.kernel.lengthscales),
        "eta": _s(model.eta),
        "domain": None,
        "functionals": [_functional_to_json(f) for f in model.functionals],
        "coefficients": _sv(model.coefficients),
    }
    if model.domain is not None:
        out["domain"] = {"lower": _sv(model.domain.lower), "upper": _sv(model.domain.upper)}
    return out


def model_from_dict(obj: dict) -> EigenfunctionModel:
    vec = lambda key: np.array([float(s) for s in obj[key]])  # noqa: E731
    dom = obj.get("domain")
    box = None
    if dom is not None:
        box = Box(np.array([float(s) for s in dom["lower"]]),
                  np.array([float(s) for s in dom["upper"]]))
    return EigenfunctionModel(
        float(obj["lambda"]), vec("w"), vec("equilibrium"),
        kn.GaussianKernel(vec("sigma")),
        [_functional_from_json(f) for f in obj["functionals"]],
        vec("coefficients"), float(obj["eta"]), box, {},
    )


def dumps_model(model: EigenfunctionModel) -> str:
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def loads_model(text: str) -> EigenfunctionModel:
    return model_from_dict(json.loads(text))


def load_model(path) -> EigenfunctionModel:
    with open(path) as fh:
        return loads_model(fh.read())
