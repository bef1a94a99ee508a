"""Anisotropic Gaussian kernel, its derivatives, and pairings of linear functionals.

Every functional used here has the form ``u -> a . grad u(z) + c u(z)``:

* ``PointEval(z)``          a = 0,    c = 1
* ``PointDeriv(z, j)``      a = e_j,  c = 0
* ``PdeOp(z, f(z), lam)``   a = f(z), c = -lam

so the pairing of two functionals applied to both kernel arguments expands to

    a_a' H_xy a_b + c_b a_a . grad_x K + c_a a_b . grad_y K + c_a c_b K.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

BLOCK_ROWS = 256


def worker_count() -> int:
    """Thread cap from ``KOOPMAN_THREADS`` (0 or unset: all cores)."""
    try:
        n = int(os.environ.get("KOOPMAN_THREADS", "0"))
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def map_blocks(fn, n_rows, block=BLOCK_ROWS):
    """Apply ``fn(start, stop)`` over row blocks, possibly in threads, in order."""
    ranges = [(i, min(i + block, n_rows)) for i in range(0, n_rows, block)]
    workers = min(worker_count(), len(ranges))
    if workers <= 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """K(x, y) = exp(-sum_i (x_i - y_i)^2 / (2 sigma_i^2))."""

    lengthscales: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.lengthscales, dtype=float).reshape(-1)
        if s.size == 0 or np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ValueError(f"lengthscales must be positive, got {s.tolist()}")
        object.__setattr__(self, "lengthscales", s)

    @property
    def dimension(self):
        return self.lengthscales.size

    @property
    def inv_sq(self):
        return 1.0 / self.lengthscales**2

    def k(self, x, y) -> float:
        r = np.asarray(x, float) - np.asarray(y, float)
        return float(np.exp(-0.5 * np.sum(r * r * self.inv_sq)))

    def grad_x(self, x, y) -> np.ndarray:
        r = np.asarray(x, float) - np.asarray(y, float)
        return -(r * self.inv_sq) * self.k(x, y)

    def grad_y(self, x, y) -> np.ndarray:
        r = np.asarray(x, float) - np.asarray(y, float)
        return (r * self.inv_sq) * self.k(x, y)

    def hess_xy(self, x, y) -> np.ndarray:
        """d^2 K / dx_i dy_j."""
        r = np.asarray(x, float) - np.asarray(y, float)
        u = r * self.inv_sq
        return (np.diag(self.inv_sq) - np.outer(u, u)) * self.k(x, y)


# ----------------------------------------------------------------------------
# functionals
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PointEval:
    point: np.ndarray

    def weights(self, d):
        return np.asarray(self.point, float), np.zeros(d), 1.0


@dataclass(frozen=True, eq=False)
class PointDeriv:
    point: np.ndarray
    axis: int  # 1-based

    def weights(self, d):
        a = np.zeros(d)
        a[self.axis - 1] = 1.0
        return np.asarray(self.point, float), a, 0.0


@dataclass(frozen=True, eq=False)
class PdeOp:
    """u -> grad u(z) . f(z) - lam u(z); the velocity f(z) is stored, not recomputed."""

    point: np.ndarray
    velocity: np.ndarray
    lam: float

    def weights(self, d):
        return np.asarray(self.point, float), np.asarray(self.velocity, float), -float(self.lam)


Functional = PointEval | PointDeriv | PdeOp


def pairing(kern: GaussianKernel, a, b) -> float:
    """Functional ``a`` applied to the first kernel argument, ``b`` to the second."""
    d = kern.dimension
    za, wa, ca = a.weights(d)
    zb, wb, cb = b.weights(d)
    value = ca * cb * kern.k(za, zb)
    if cb and np.any(wa):
        value += cb * wa @ kern.grad_x(za, zb)
    if ca and np.any(wb):
        value += ca * wb @ kern.grad_y(za, zb)
    if np.any(wa) and np.any(wb):
        value += wa @ kern.hess_xy(za, zb) @ wb
    return float(value)


def eval_row(kern: GaussianKernel, x, functionals) -> np.ndarray:
    """Entry i is functional i applied to K(x, .) in its second argument."""
    F = FunctionalArrays.from_list(functionals, kern.dimension)
    return eval_matrix(kern, np.asarray(x, float).reshape(1, -1), F)[0]


# ----------------------------------------------------------------------------
# vectorized assembly
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FunctionalArrays:
    """Stacked (point, gradient weight, value weight) triples of a functional list."""

    points: np.ndarray   # (n, d)
    grad_w: np.ndarray   # (n, d)
    value_w: np.ndarray  # (n,)

    @classmethod
    def from_list(cls, functionals, d):
        n = len(functionals)
        pts, gw, vw = np.zeros((n, d)), np.zeros((n, d)), np.zeros(n)
        for i, f in enumerate(functionals):
            pts[i], gw[i], vw[i] = f.weights(d)
        return cls(pts, gw, vw)

    def __len__(self):
        return len(self.value_w)


def _pair_block(kern, X, A, cA, Y, B, cB):
    s = kern.inv_sq
    sq = np.zeros((len(X), len(Y)))
    au = np.zeros_like(sq)
    bu = np.zeros_like(sq)
    dot = np.zeros_like(sq)
    for i in range(kern.dimension):
        diff = X[:, i, None] - Y[None, :, i]
        sq += s[i] * diff * diff
        au += (A[:, i, None] * s[i]) * diff
        bu += diff * (B[None, :, i] * s[i])
        dot += (A[:, i, None] * s[i]) * B[None, :, i]
    K = np.exp(-0.5 * sq)
    ca = cA[:, None]
    cb = cB[None, :]
    return K * (dot - au * bu - cb * au + ca * bu + ca * cb)


def gram(kern: GaussianKernel, F: FunctionalArrays) -> np.ndarray:
    """Symmetric matrix of pairings between every pair of functionals in ``F``."""
    n = len(F)

    def rows(a, b):
        return _pair_block(kern, F.points[a:b], F.grad_w[a:b], F.value_w[a:b],
                           F.points, F.grad_w, F.value_w)

    if n == 0:
        return np.zeros((0, 0))
    G = np.vstack(map_blocks(rows, n))
    return 0.5 * (G + G.T)


def eval_matrix(kern: GaussianKernel, X, F: FunctionalArrays, dtype=float) -> np.ndarray:
    """(m, n) matrix whose row p is ``eval_row`` at X[p].

    ``dtype=np.longdouble`` evaluates in extended precision where available.
    """
    X = np.asarray(X, dtype).reshape(-1, kern.dimension)
    s = kern.inv_sq.astype(dtype)
    pts = F.points.astype(dtype)
    gw = F.grad_w.astype(dtype)
    sq = np.zeros((len(X), len(F)), dtype=dtype)
    bu = np.zeros_like(sq)
    for i in range(kern.dimension):
        diff = X[:, i, None] - pts[None, :, i]
        sq += s[i] * diff * diff
        bu += diff * (gw[None, :, i] * s[i])
    return np.exp(-0.5 * sq) * (bu + F.value_w.astype(dtype)[None, :])


def grad_eval_matrix(kern: GaussianKernel, X, F: FunctionalArrays, axis: int) -> np.ndarray:
    """d/dx_axis of ``eval_matrix`` rows (``axis`` is 1-based)."""
    X = np.asarray(X, float).reshape(-1, kern.dimension)
    A = np.zeros_like(X)
    A[:, axis - 1] = 1.0
    return _pair_block(kern, X, A, np.zeros(len(X)), F.points, F.grad_w, F.value_w)
