"""Fixed-step RK4 and the eigenfunction identity phi(s_t(x)) = exp(lam t) phi(x)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Blowup

BLOWUP_NORM = 1e8
GROWTH_CAP = 1e3


@dataclass(frozen=True, eq=False)
class Trajectory:
    x0: np.ndarray
    dt: float
    times: np.ndarray    # (K+1,), last entry is T exactly
    states: np.ndarray   # (K+1, d)


def _time_grid(T, dt):
    if not T > 0 or not 0 < dt <= T:
        raise ValueError(f"need T > 0 and 0 < dt <= T, got T={T}, dt={dt}")
    n_full = int(np.floor(T / dt + 1e-9))
    times = np.arange(n_full + 1) * dt
    if T - times[-1] > 1e-12 * max(1.0, T):
        times = np.append(times, T)
    else:
        times[-1] = T
    return times


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_rk4(vf, x0, T, dt) -> Trajectory:
    """Classical RK4 with a shortened final step so the last time is exactly T."""
    times = _time_grid(float(T), float(dt))
    x = np.asarray(x0, float).reshape(-1).copy()
    states = np.empty((len(times), x.size))
    states[0] = x
    for k in range(1, len(times)):
        x = _rk4_step(vf, x, times[k] - times[k - 1])
        n = np.linalg.norm(x)
        if not np.isfinite(n) or n > BLOWUP_NORM:
            raise Blowup(f"state norm {n:.3e} at t={times[k]:.6g} from x0={states[0].tolist()}")
        states[k] = x
    return Trajectory(states[0].copy(), float(dt), times, states)


def integrate_many(vf, starts, T, dt, fn=integrate_rk4):
    """Batched RK4 over all starts at once; rows that blow up are frozen and flagged.

    Returns (times, states (n, K+1, d), blown (n,) bool).
    """
    times = _time_grid(float(T), float(dt))
    X = np.array(starts, float).reshape(len(starts), -1)
    states = np.full((len(X), len(times), X.shape[1]), np.nan)
    states[:, 0] = X
    alive = np.ones(len(X), bool)
    for k in range(1, len(times)):
        h = times[k] - times[k - 1]
        if alive.any():
            nxt = _rk4_step(vf.batch, X[alive], h)
            norms = np.linalg.norm(nxt, axis=1)
            bad = ~np.isfinite(norms) | (norms > BLOWUP_NORM)
            idx = np.flatnonzero(alive)
            X[idx[~bad]] = nxt[~bad]
            states[idx[~bad], k] = nxt[~bad]
            alive[idx[bad]] = False
    return times, states, ~alive


# ----------------------------------------------------------------------------
# eigenfunction identity along trajectories
# ----------------------------------------------------------------------------

@dataclass
class TrajectoryCheck:
    x0: list
    max_deviation: float
    steps_used: int
    t_end: float
    truncated: bool
    blowup: bool


@dataclass
class PropertyReport:
    lam: float
    T: float
    dt: float
    horizon: float
    floor: float
    trajectories: list = field(default_factory=list)

    @property
    def deviations(self):
        return np.array([t.max_deviation for t in self.trajectories])

    @property
    def max(self):
        d = self.deviations
        return float(np.nanmax(d)) if d.size else float("nan")

    @property
    def median(self):
        d = self.deviations
        return float(np.nanmedian(d)) if d.size else float("nan")

    def to_dict(self):
        return {
            "lambda": self.lam, "T": self.T, "dt": self.dt, "horizon": self.horizon,
            "floor": self.floor, "max_deviation": self.max, "median_deviation": self.median,
            "trajectories": [t.__dict__ for t in self.trajectories],
        }


def growth_horizon(lam, T):
    """Largest horizon <= T with exp(lam t) <= GROWTH_CAP (unrestricted for lam <= 0)."""
    if lam <= 0:
        return float(T)
    return float(min(T, np.log(GROWTH_CAP) / lam))


def property_check(phi, lam, vf, starts, T, dt, floor=None, box=None) -> PropertyReport:
    """Max relative deviation of phi(s_t(x0)) from exp(lam t) phi(x0) per start.

    ``phi`` maps an (n, d) array to n values (e.g. ``model.batch_eval``).
    A trajectory is cut at the first state outside ``box``; for lam > 0 the
    horizon is shortened so the growth factor stays below ``GROWTH_CAP``.
    """
    starts = np.asarray(starts, float).reshape(len(starts), -1)
    horizon = growth_horizon(lam, T)
    dt_eff = min(float(dt), horizon)
    times, states, blown = integrate_many(vf, starts, horizon, dt_eff)
    phi0 = np.asarray(phi(starts), float)
    if floor is None:
        floor = 1e-6 * float(np.max(np.abs(phi0), initial=0.0))
    report = PropertyReport(float(lam), float(T), float(dt), horizon, float(floor))

    n, K1, d = states.shape
    flat = states.reshape(-1, d)
    finite = np.all(np.isfinite(flat), axis=1)
    inside = finite.copy()
    if box is not None:
        inside &= box.contains(np.where(finite[:, None], flat, 0.0))
    inside = inside.reshape(n, K1)
    # valid prefix: up to (excluding) the first state that is outside or missing
    first_bad = np.where(inside.all(axis=1), K1, np.argmin(inside, axis=1))

    vals = np.full(n * K1, np.nan)
    ok = inside.reshape(-1)
    if ok.any():
        vals[ok] = phi(flat[ok])
    vals = vals.reshape(n, K1)
    growth = np.exp(lam * times)

    for i in range(n):
        m = int(first_bad[i])
        denom = max(abs(phi0[i]), floor)
        if m == 0 or denom == 0.0:
            dev = float("nan") if m == 0 else 0.0
        else:
            dev = float(np.max(np.abs(vals[i, :m] - growth[:m] * phi0[i])) / denom)
        report.trajectories.append(TrajectoryCheck(
            starts[i].tolist(), dev, m, float(times[m - 1]) if m else 0.0,
            bool(m < K1 and not blown[i]), bool(blown[i])))
    return report


def koopman_property_check(model, vf, starts, T, dt, floor=None, box="domain") -> PropertyReport:
    """``property_check`` for a solved model; the validity box defaults to its domain."""
    if box == "domain":
        box = model.domain
    return property_check(model.batch_eval, model.lam, vf, starts, T, dt, floor, box)
