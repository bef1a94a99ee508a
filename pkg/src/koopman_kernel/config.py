"""JSON run configuration and the presets shipped with the package."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import collocation as co
from . import dynsys as ds
from . import expr as ex
from . import kernel as kn
from .errors import ConfigError, KoopmanError

KNOWN_KEYS = {
    "name", "note", "system", "domain", "sampling", "sigma", "eigenpair", "eta", "eta_rel",
    "eval_grid", "truth", "align", "eps_floor", "output", "trajectory", "convergence",
}


@dataclass
class EvalGrid:
    shape: tuple
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    fixed: dict = field(default_factory=dict)   # 1-based axis -> value

    def points(self, domain: co.Box) -> np.ndarray:
        lo = domain.lower.copy() if self.lower is None else self.lower.copy()
        hi = domain.upper.copy() if self.upper is None else self.upper.copy()
        axes = []
        for i, n in enumerate(self.shape):
            if i + 1 in self.fixed:
                axes.append(np.array([self.fixed[i + 1]]))
            elif n == 1:
                axes.append(np.array([0.5 * (lo[i] + hi[i])]))
            else:
                axes.append(np.linspace(lo[i], hi[i], n))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class TrajectorySettings:
    starts: np.ndarray
    T: float
    dt: float
    floor: float | None = None
    box: co.Box | None = None      # None means the training domain


@dataclass
class ConvergenceSettings:
    shapes: list
    holdout: int = 500
    eta: float | None = None
    eta_rel: float | None = None


@dataclass
class RunConfig:
    name: str
    system: ds.VectorField
    domain: co.Box
    scheme: object
    sigma: np.ndarray
    pair_index: int
    lam: float
    eta: float | None = None
    eta_rel: float = co.DEFAULT_ETA_REL
    eval_grid: EvalGrid | None = None
    truth: ex.Expr | None = None
    truth_text: str | None = None
    align: bool = False
    eps_floor: float = 1e-2
    output: str | None = None
    trajectory: TrajectorySettings | None = None
    convergence: ConvergenceSettings | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def kernel(self):
        return kn.GaussianKernel(self.sigma)

    @property
    def dimension(self):
        return self.system.dimension


# ----------------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------------

def _vec(obj, key, d=None, where=""):
    try:
        v = np.asarray(obj[key], dtype=float).reshape(-1)
    except KeyError:
        raise ConfigError(f"missing '{key}'{where}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}'{where} must be a list of numbers") from None
    if d is not None and v.size != d:
        raise ConfigError(f"'{key}'{where} must have length {d}, got {v.size}")
    return v


def _system(obj):
    if not isinstance(obj, dict):
        raise ConfigError("'system' must be an object")
    if "builtin" in obj:
        return ds.builtin(obj["builtin"])
    try:
        texts = list(obj["expressions"])
        d = int(obj.get("dimension", len(texts)))
    except KeyError:
        raise ConfigError("'system' needs 'builtin' or 'expressions'") from None
    xe = obj.get("equilibrium")
    return ds.VectorField.from_expressions(texts, d, None if xe is None else np.asarray(xe, float),
                                           name=obj.get("name", "custom"))


def _scheme(obj, d):
    kind = obj.get("scheme")
    if kind == "grid":
        shape = tuple(int(s) for s in obj["shape"])
        if len(shape) != d:
            raise ConfigError(f"grid shape {shape} does not match dimension {d}")
        return co.Grid(shape)
    if kind == "halton":
        return co.Halton(int(obj["count"]))
    raise ConfigError(f"unknown sampling scheme {kind!r} (grid or halton)")


def _axis(key):
    k = str(key)
    if k.startswith("x"):
        k = k[1:]
    return int(k)


def _eval_grid(obj, d):
    shape = tuple(int(s) for s in obj["shape"])
    if len(shape) != d:
        raise ConfigError(f"eval_grid shape {shape} does not match dimension {d}")
    lower = _vec(obj, "lower", d, " in eval_grid") if "lower" in obj else None
    upper = _vec(obj, "upper", d, " in eval_grid") if "upper" in obj else None
    fixed = {_axis(k): float(v) for k, v in obj.get("fixed", {}).items()}
    for axis in fixed:
        if not 1 <= axis <= d or shape[axis - 1] != 1:
            raise ConfigError(f"fixed axis x{axis} must exist and have shape 1")
    return EvalGrid(shape, lower, upper, fixed)


def from_dict(raw: dict, name: str = "") -> RunConfig:
    try:
        return _from_dict(raw, name)
    except KoopmanError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"{type(err).__name__}: {err}") from err
    except (KeyError, TypeError, ValueError, IndexError, LookupError) as err:
        raise ConfigError(f"invalid config: {err}") from err


def _from_dict(raw, name):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    vf = _system(raw.get("system"))
    d = vf.dimension
    dom = raw.get("domain") or {}
    box = co.Box(_vec(dom, "lower", d, " in domain"), _vec(dom, "upper", d, " in domain"))
    scheme = _scheme(raw.get("sampling") or {}, d)

    sigma = raw.get("sigma")
    if sigma is None:
        raise ConfigError("missing 'sigma'")
    sigma = np.asarray(sigma, float).reshape(-1)
    if sigma.size == 1:
        sigma = np.full(d, sigma[0])
    if sigma.size != d:
        raise ConfigError(f"sigma must have length {d}, got {sigma.size}")

    lin = ds.linearize(vf)
    sel = raw.get("eigenpair") or {"index": 0}
    try:
        idx = lin.select(index=sel.get("index"), target=sel.get("lambda"))
    except (ValueError, IndexError, LookupError) as err:
        raise ConfigError(f"eigenpair selector {sel}: {err}") from None

    eg = _eval_grid(raw["eval_grid"], d) if raw.get("eval_grid") else None
    truth_text = raw.get("truth")
    truth = ex.parse(truth_text, d) if truth_text else None

    traj = None
    if raw.get("trajectory"):
        t = raw["trajectory"]
        starts = t.get("starts", {"halton": 20})
        if isinstance(starts, dict):
            sbox = box
            if "lower" in starts:
                sbox = co.Box(_vec(starts, "lower", d), _vec(starts, "upper", d))
            starts = co.halton_points(sbox, int(starts["halton"]))
        else:
            starts = np.asarray(starts, float).reshape(-1, d)
        tbox = None
        if t.get("box"):
            tbox = co.Box(_vec(t["box"], "lower", d), _vec(t["box"], "upper", d))
        traj = TrajectorySettings(starts, float(t.get("T", 2.0)), float(t.get("dt", 0.005)),
                                  t.get("floor"), tbox)

    conv = None
    if raw.get("convergence"):
        c = raw["convergence"]
        conv = ConvergenceSettings([tuple(int(s) for s in sh) for sh in c["shapes"]],
                                   int(c.get("holdout", 500)), c.get("eta"), c.get("eta_rel"))

    eta = raw.get("eta")
    return RunConfig(
        name=raw.get("name", name), system=vf, domain=box, scheme=scheme, sigma=sigma,
        pair_index=idx, lam=lin.eigenvalues[idx],
        eta=None if eta is None else float(eta),
        eta_rel=float(raw.get("eta_rel", co.DEFAULT_ETA_REL)),
        eval_grid=eg, truth=truth, truth_text=truth_text, align=bool(raw.get("align", False)),
        eps_floor=float(raw.get("eps_floor", 1e-2)), output=raw.get("output"),
        trajectory=traj, convergence=conv, raw=raw,
    )


# ----------------------------------------------------------------------------
# presets and files
# ----------------------------------------------------------------------------

def preset_names():
    root = resources.files("koopman_kernel") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_raw(ref: str) -> tuple[dict, str]:
    """Load a config by path, or by preset name when no such file exists."""
    p = Path(ref)
    if p.is_file():
        text, name = p.read_text(), p.stem
    else:
        res = resources.files("koopman_kernel") / "presets" / f"{ref}.json"
        if not res.is_file():
            raise ConfigError(f"no config file or preset named {ref!r} "
                              f"(presets: {', '.join(preset_names())})")
        text, name = res.read_text(), ref
    try:
        return json.loads(text), name
    except json.JSONDecodeError as err:
        raise ConfigError(f"{ref}: invalid JSON: {err}") from None


def load(ref: str) -> RunConfig:
    raw, name = read_raw(ref)
    return from_dict(raw, name)
