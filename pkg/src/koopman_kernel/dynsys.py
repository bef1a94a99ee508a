"""Vector fields, their linearization at an equilibrium, and the nonlinear remainder."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import (
    ComplexEigenvalue,
    NearDegenerateSpectrum,
    NonHyperbolic,
    NotAnEquilibrium,
    RepeatedEigenvalue,
    UnknownSystem,
)

EQUILIBRIUM_TOL = 1e-8
IMAG_TOL = 1e-8
SEPARATION_TOL = 1e-8
NEAR_DEGENERATE_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class VectorField:
    """ẋ = f(x) with f given componentwise by expressions over x1..xd."""

    dimension: int
    components: tuple
    equilibrium: np.ndarray
    sources: tuple = ()
    name: str = ""

    def __post_init__(self):
        if len(self.components) != self.dimension:
            raise ValueError(
                f"expected {self.dimension} components, got {len(self.components)}"
            )
        xe = np.asarray(self.equilibrium, dtype=float).reshape(-1)
        if xe.shape != (self.dimension,):
            raise ValueError("equilibrium has the wrong dimension")
        object.__setattr__(self, "equilibrium", xe)
        residual = np.max(np.abs(self(xe)))
        if residual > EQUILIBRIUM_TOL:
            raise NotAnEquilibrium(
                f"|f(x_e)|_inf = {residual:.3e} exceeds {EQUILIBRIUM_TOL:g} at x_e={xe.tolist()}"
            )

    @classmethod
    def from_expressions(cls, texts, dimension, equilibrium=None, name=""):
        comps = tuple(ex.parse(t, dimension) for t in texts)
        if equilibrium is None:
            equilibrium = np.zeros(dimension)
        return cls(dimension, comps, equilibrium, tuple(texts), name)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([ex.evaluate(c, x) for c in self.components])

    def batch(self, points) -> np.ndarray:
        """Evaluate f at every row of an (N, d) array."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        cols = [pts[:, i] for i in range(self.dimension)]
        out = np.empty_like(pts)
        for i, c in enumerate(self.components):
            out[:, i] = np.broadcast_to(ex.evaluate(c, cols), (len(pts),))
        return out

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([ex.evaluate_dual(c, x)[1] for c in self.components])

    def shifted(self, offset) -> "VectorField":
        """The field translated so that its equilibrium moves by ``offset``.

        g(y) = f(y - offset); the components are rewritten symbolically.
        """
        offset = np.asarray(offset, dtype=float)
        subst = [
            ex.Sub(ex.Var(i + 1), ex.Constant(float(o))) for i, o in enumerate(offset)
        ]
        comps = tuple(_substitute(c, subst) for c in self.components)
        return VectorField(
            self.dimension,
            comps,
            self.equilibrium + offset,
            tuple(ex.to_string(c) for c in comps),
            self.name,
        )


def _substitute(e, subst):
    if isinstance(e, ex.Var):
        return subst[e.index - 1]
    if isinstance(e, ex.Constant):
        return e
    if isinstance(e, ex.Neg):
        return ex.Neg(_substitute(e.child, subst))
    if isinstance(e, ex.Func):
        return ex.Func(e.name, _substitute(e.child, subst))
    if isinstance(e, ex.Pow):
        return ex.Pow(_substitute(e.base, subst), _substitute(e.exponent, subst))
    return type(e)(_substitute(e.left, subst), _substitute(e.right, subst))


# ----------------------------------------------------------------------------
# builtin systems
# ----------------------------------------------------------------------------

GRADIENT3D_P = np.array([
    [0.2, 0.1, 0.05],
    [0.1, 0.3, 0.05],
    [0.05, 0.05, 0.2],
])

BUILTIN_NOTES = {
    "example1": "polynomial system with eigenvalues -1 and 3 at the origin",
    "example2": "rational/trigonometric saddle with eigenvalues -1 and 2.5",
    "duffing": "unforced Duffing oscillator, delta=0.5 beta=-1 alpha=1, saddle at origin",
    "gradient3d": "gradient flow of x'Px + exp(-(x1-x2)^2)",
}


def _example1_sources(lam1=-1.0, lam2=3.0):
    q = "(x1^2 - x2 - 2*x1*x2^2 + x2^4)"
    f1 = (f"-2*({lam2!r})*x2*{q} + ({lam1!r})*"
          "(x1 + 4*x1^2*x2 - x2^2 - 8*x1*x2^3 + 4*x2^5)")
    f2 = f"2*({lam1!r})*(x1 - x2^2)^2 - ({lam2!r})*{q}"
    return [f1, f2]


def _example2_sources():
    den = "(9*x1^2*x2^2 + 6*x1^2 + 3*x2^2 + cos(x2) + 2)"
    f1 = ("((7.5*x2^2 + 5.0)*(x1^3 + x1 + sin(x2)) + (-x1 + x2^3 + 2*x2)*cos(x2))"
          f" / {den}")
    f2 = ("(2.5*x1^3 + 2.5*x1 - (3*x1^2 + 1)*(-x1 + x2^3 + 2*x2) + 2.5*sin(x2))"
          f" / {den}")
    return [f1, f2]


def _duffing_sources(delta=0.5, beta=-1.0, alpha=1.0):
    return ["x2", f"-({delta!r})*x2 - x1*(({beta!r}) + ({alpha!r})*x1^2)"]


def _gradient3d_sources(P=GRADIENT3D_P):
    # f = -grad V, V = x'Px + exp(-(x1 - x2)^2)
    bump = "2*(x1 - x2)*exp(-(x1 - x2)^2)"
    out = []
    for i in range(3):
        lin = " + ".join(f"({float(2 * P[i, j])!r})*x{j + 1}" for j in range(3))
        term = {0: f" + {bump}", 1: f" - {bump}", 2: ""}[i]
        out.append(f"-({lin}){term}")
    return out


_BUILTINS = {
    "example1": (2, _example1_sources),
    "example2": (2, _example2_sources),
    "duffing": (2, _duffing_sources),
    "gradient3d": (3, _gradient3d_sources),
}


def builtin_names():
    return list(_BUILTINS)


def builtin(name: str) -> VectorField:
    try:
        d, make = _BUILTINS[name]
    except KeyError:
        raise UnknownSystem(f"{name!r} (choose from {builtin_names()})") from None
    return VectorField.from_expressions(make(), d, np.zeros(d), name=name)


# ----------------------------------------------------------------------------
# linearization
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Linearization:
    E: np.ndarray
    eigenvalues: tuple          # real simple eigenvalues, descending
    eigenvectors: tuple         # unit left eigenvectors, same order
    skipped: tuple = ()         # complex eigenvalues that were dropped
    warnings: tuple = ()
    equilibrium: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def pairs(self):
        return list(zip(self.eigenvalues, self.eigenvectors))

    def select(self, index=None, target=None, tol=1e-6) -> int:
        """Resolve a selector to a pair index: by position, or by nearest eigenvalue."""
        if (index is None) == (target is None):
            raise ValueError("give exactly one of index or target")
        if index is not None:
            if not 0 <= index < len(self.eigenvalues):
                raise IndexError(f"eigenpair index {index} out of range")
            return index
        hits = [i for i, lam in enumerate(self.eigenvalues) if abs(lam - target) <= tol]
        if len(hits) != 1:
            raise LookupError(
                f"eigenvalue target {target} matches {len(hits)} pairs "
                f"among {list(self.eigenvalues)}"
            )
        return hits[0]


def _normalize(w):
    w = w / np.linalg.norm(w)
    for wi in w:
        if abs(wi) > 1e-12:
            if wi < 0:
                w = -w
            break
    return w


def linearize(vf: VectorField) -> Linearization:
    """Jacobian at the equilibrium and its real simple left eigenpairs."""
    E = vf.jacobian(vf.equilibrium)
    d = vf.dimension
    lams = np.linalg.eigvals(E)
    if np.any(np.abs(lams.real) <= IMAG_TOL):
        raise NonHyperbolic(f"eigenvalue on the imaginary axis: {lams.tolist()}")

    notes = []
    skipped = tuple(complex(l) for l in lams if abs(l.imag) > IMAG_TOL)
    if skipped:
        msg = f"skipping complex eigenvalues {list(skipped)}"
        warnings.warn(msg, ComplexEigenvalue, stacklevel=2)
        notes.append(msg)

    real = np.sort(np.array([l.real for l in lams if abs(l.imag) <= IMAG_TOL]))[::-1]
    gaps = -np.diff(real)
    if np.any(gaps <= SEPARATION_TOL):
        raise RepeatedEigenvalue(f"repeated eigenvalue in {real.tolist()}")
    if np.any(gaps <= NEAR_DEGENERATE_TOL):
        msg = f"near-degenerate spectrum {real.tolist()}"
        warnings.warn(msg, NearDegenerateSpectrum, stacklevel=2)
        notes.append(msg)

    vecs = []
    for lam in real:
        # null vector of E^T - lam I, i.e. w^T E = lam w^T
        _, _, vt = np.linalg.svd(E.T - lam * np.eye(d))
        vecs.append(_normalize(vt[-1]))
    return Linearization(
        E, tuple(float(l) for l in real), tuple(vecs), skipped, tuple(notes),
        vf.equilibrium.copy(),
    )


class Remainder:
    """G(x) = f(x) - E (x - x_e), the purely nonlinear part of the field."""

    def __init__(self, vf: VectorField, lin: Linearization):
        self.vf = vf
        self.E = lin.E
        self.xe = vf.equilibrium

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.vf(x) - self.E @ (x - self.xe)

    def batch(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.vf.dimension)
        return self.vf.batch(pts) - (pts - self.xe) @ self.E.T


def remainder(vf: VectorField, lin: Linearization) -> Remainder:
    return Remainder(vf, lin)
