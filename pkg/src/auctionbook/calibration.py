"""Multi-start least-squares fits of the stationary ansatz and the dynamic model.

Every local search runs in an unconstrained space (log for positive
parameters, ``log(k - 1)`` for ``k >= 1``, logit for ``w``) with Nelder-Mead,
then is polished by a bounded trust-region least-squares step.  Starts are
drawn log-uniformly within one decade of data-driven seeds from independent
child seeds of a master seed, so the result does not depend on the order in
which starts are evaluated and adding starts never worsens it.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares, minimize, nnls
from scipy.special import expit, logit

from .errors import ConfigurationError, FitError, NumericalFailure
from .io import format_params, read_params, write_params
from .model_core import (
    DEFAULT_T,
    CancellationRateParams,
    DiffusionSchedule,
    LatentBookParams,
    StationaryFitParams,
    SubmissionRateParams,
    eval_stationary_revealed,
)
from .pde_solver import DensityField, PriceGrid, RateModel, integrate

N_STARTS = 18
VARIANTS = ("zero", "constant-diffusion", "time-diffusion")
DYNAMIC_NAMES = ("C_r", "x_r", "k", "w", "nu_l", "x_0", "m")
DIFFUSION_NAMES = {"zero": (), "constant-diffusion": ("D_r", "D_l"), "time-diffusion": ("D_0", "D_T", "D_l")}


# ---------------------------------------------------------------- transforms


@dataclass(frozen=True)
class ParamSpec:
    """``kind``: ``log`` (> 0), ``log1`` (>= 1 via ``1 + exp``), ``logit`` ((0, 1))."""

    name: str
    kind: str
    lower: float
    upper: float

    def to_internal(self, v: float) -> float:
        if self.kind == "log":
            return math.log(max(v, 1e-300))
        if self.kind == "log1":
            return math.log(max(v - 1.0, 1e-300))
        return float(logit(min(max(v, 1e-12), 1 - 1e-12)))

    def to_natural(self, u: float) -> float:
        if self.kind == "log":
            v = math.exp(min(u, 700.0))
        elif self.kind == "log1":
            v = 1.0 + math.exp(min(u, 700.0))
        else:
            v = float(expit(u))
        return min(max(v, self.lower), self.upper)

    def sample(self, rng, seed: float) -> float:
        """Log-uniform within one decade of ``seed`` (of ``seed - 1`` for ``log1``)."""
        if self.kind == "logit":
            return float(rng.uniform(max(self.lower, 0.05), min(self.upper, 0.995)))
        base = seed - 1.0 if self.kind == "log1" else seed
        v = base * 10.0 ** rng.uniform(-1.0, 1.0)
        v = 1.0 + v if self.kind == "log1" else v
        return min(max(v, self.lower), self.upper)


def _specs_for(names):
    table = {
        "scaled_a": ParamSpec("scaled_a", "log", 0.0, np.inf),
        "scaled_b": ParamSpec("scaled_b", "log", 0.0, np.inf),
        "C_r": ParamSpec("C_r", "log", 1e-8, 1e4),
        "x_r": ParamSpec("x_r", "log", 1e-6, 1.0),
        "k": ParamSpec("k", "log1", 1.0, 1e3),
        "w": ParamSpec("w", "logit", 0.0, 1.0),
        "nu_l": ParamSpec("nu_l", "log", 1e-8, 1e2),
        "x_0": ParamSpec("x_0", "log", 1e-6, 1.0),
        "m": ParamSpec("m", "log", 1e-8, 1e4),
        "D_r": ParamSpec("D_r", "log", 0.0, 1e-2),
        "D_l": ParamSpec("D_l", "log", 0.0, 1e-2),
        "D_0": ParamSpec("D_0", "log", 0.0, 1e-1),
        "D_T": ParamSpec("D_T", "log", 0.0, 1e-2),
    }
    return [table[n] for n in names]


# ---------------------------------------------------------------- results


@dataclass
class StartTrace:
    init: np.ndarray
    final: np.ndarray
    objective: float
    nfev: int
    success: bool


@dataclass
class FitResult:
    names: Tuple[str, ...]
    params: np.ndarray
    objective: float
    traces: List[StartTrace]
    window: Tuple[float, float]
    variant: str
    fixed: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.params)}

    def parameter_block(self) -> Dict[str, float]:
        """Fitted and fixed parameters together, readable by :func:`read_fit_params`."""
        out = dict(self.fixed)
        out.update(self.as_dict())
        return out

    def summary(self) -> Dict[str, object]:
        out: Dict[str, object] = {"variant": self.variant, "objective": self.objective,
                                  "window_lo": self.window[0], "window_hi": self.window[1],
                                  "n_starts": len(self.traces)}
        out.update(self.parameter_block())
        for i, tr in enumerate(self.traces, start=1):
            out[f"start_{i:02d}_objective"] = tr.objective
            out[f"start_{i:02d}_init"] = list(tr.init)
            out[f"start_{i:02d}_final"] = list(tr.final)
        return out

    def report(self) -> str:
        vals = {k: (",".join(f"{float(e):.17e}" for e in v) if isinstance(v, list) else v)
                for k, v in self.summary().items()}
        return format_params(vals)

    def write(self, path) -> None:
        write_params(path, self.summary())

    @property
    def stationary(self) -> StationaryFitParams:
        d = self.as_dict()
        return StationaryFitParams(d["scaled_a"], d["scaled_b"], d["x_r"], d["k"], d["w"])


def read_fit_params(path) -> Dict[str, float]:
    """Parameter block of a written fit (per-start traces and metadata dropped)."""
    raw = read_params(path)
    skip = ("variant", "objective", "window_lo", "window_hi", "n_starts")
    return {k: float(v) for k, v in raw.items() if k not in skip and not k.startswith("start_")}


def _better(a, b):
    """Lower objective wins; ties go to the lexicographically smaller vector."""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] < b[0]
    return tuple(a[1]) < tuple(b[1])


def _multistart(specs, residuals: Callable[[np.ndarray], np.ndarray], seeds: Sequence[float],
                n_starts: int, seed: int, maxfev: int, threads: int, window, variant, fixed) -> FitResult:
    if n_starts < 1:
        raise ConfigurationError("need at least one start")
    names = tuple(s.name for s in specs)
    children = np.random.SeedSequence(seed).spawn(n_starts)
    inits = []
    for child in children:
        rng = np.random.default_rng(child)
        inits.append(np.array([s.sample(rng, sd) for s, sd in zip(specs, seeds)]))

    def natural(u):
        return np.array([s.to_natural(v) for s, v in zip(specs, u)])

    def sse(v):
        try:
            r = residuals(v)
        except (NumericalFailure, ConfigurationError, FloatingPointError):
            return math.inf
        val = float(np.dot(r, r))
        return val if math.isfinite(val) else math.inf

    lower = np.array([s.lower for s in specs])
    upper = np.array([s.upper for s in specs])

    def run(init):
        u0 = np.array([s.to_internal(v) for s, v in zip(specs, init)])
        f0 = sse(init)
        scale = f0 if math.isfinite(f0) and f0 > 0 else 1.0
        res = minimize(lambda u: sse(natural(u)) / scale, u0, method="Nelder-Mead",
                       options={"maxfev": maxfev, "xatol": 1e-7, "fatol": 1e-14, "adaptive": len(specs) > 3})
        v = natural(res.x)
        best_v, best_f = v, sse(v)
        nfev = res.nfev
        if math.isfinite(best_f):
            v0 = np.clip(v, lower, upper)
            xs = np.maximum(np.abs(v0), 1e-12)
            try:
                pol = least_squares(residuals, v0, bounds=(lower, upper), x_scale=xs, method="trf",
                                    xtol=1e-12, ftol=1e-14, gtol=1e-14, max_nfev=100 * len(specs))
                nfev += pol.nfev
                f = sse(pol.x)
                if f < best_f:
                    best_v, best_f = pol.x, f
            except (NumericalFailure, ConfigurationError, ValueError):
                pass
        return StartTrace(np.asarray(init, float), np.asarray(best_v, float), best_f, int(nfev),
                          bool(math.isfinite(best_f)))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            traces = list(pool.map(run, inits))
    else:
        traces = [run(i) for i in inits]
    best = None
    for tr in traces:
        if tr.success and _better((tr.objective, tr.final), best):
            best = (tr.objective, tr.final)
    if best is None:
        raise FitError("no start converged to a finite objective", traces)
    return FitResult(names, np.array(best[1]), float(best[0]), traces, window, variant, dict(fixed))


# ---------------------------------------------------------------- static fit


STATIC_NAMES = ("scaled_a", "scaled_b", "x_r", "k", "w")


def _shape(x, x_r, k, w):
    ax = np.abs(x)
    return w * np.exp(-ax / x_r) + (1.0 - w) * np.exp(-ax / (k * x_r))


def _linear_part(x, y, x_r, k, w):
    """Best non-negative (a, b) for fixed exponential shape."""
    s = _shape(x, x_r, k, w)
    basis = np.column_stack([np.maximum(x, 0.0) * s, s])
    coef, _ = nnls(basis, y)
    return coef


def efolding_scale(x, y) -> float:
    """Density-weighted mean distance from 0 on the negative side (exact for a pure exponential)."""
    m = (x < 0) & (y > 0)
    if m.sum() < 2:
        m = y > 0
    if not m.any():
        return 1e-3
    return float(max(np.sum(np.abs(x[m]) * y[m]) / np.sum(y[m]), 1e-5))


def fit_static(x, density, window: float = 0.05, n_starts: int = N_STARTS, seed: int = 0,
               maxfev: int = 2000, threads: int = 1) -> FitResult:
    """Least-squares fit of ``max(ax+b, b) * (w e^{-|x|/x_r} + (1-w) e^{-|x|/(k x_r)})``.

    Starts search only ``(x_r, k, w)``; ``(a, b)`` are solved exactly by
    non-negative linear least squares, then all five are polished together.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(density, dtype=float)
    m = np.abs(x) <= window + 1e-12
    x, y = x[m], y[m]
    if x.size < 50:
        raise ConfigurationError("need at least 50 buckets in the fit window")
    if not np.any(y != 0):
        raise FitError("book is identically zero in the fit window")
    specs3 = _specs_for(("x_r", "k", "w"))
    seeds = (efolding_scale(x, y), 5.0, 0.8)

    def resid3(v):
        a, b = _linear_part(x, y, *v)
        return max(a, 0) * np.maximum(x, 0) * _shape(x, *v) + b * _shape(x, *v) - y

    pre = _multistart(specs3, resid3, seeds, n_starts, seed, maxfev, threads, (-window, window),
                      "static", {})
    # polish each start with all five parameters
    specs5 = _specs_for(STATIC_NAMES)
    lower = np.array([0.0, 0.0, 1e-6, 1.0, 0.0])
    upper = np.array([np.inf, np.inf, 1.0, 1e3, 1.0])

    def resid5(v):
        a, b, x_r, k, w = v
        return np.maximum(a * x + b, b) * _shape(x, x_r, k, w) - y

    traces = []
    best = None
    for tr in pre.traces:
        a, b = _linear_part(x, y, *tr.final)
        v0 = np.array([a, b, *tr.final])
        f0 = float(np.sum(resid5(v0) ** 2))
        v, f = v0, f0
        try:
            xs = np.maximum(np.abs(v0), 1e-12)
            pol = least_squares(resid5, np.clip(v0, lower, upper), bounds=(lower, upper), x_scale=xs,
                                xtol=1e-14, ftol=1e-15, gtol=1e-15, max_nfev=500)
            fp = float(np.sum(pol.fun ** 2))
            if fp < f:
                v, f = pol.x, fp
        except ValueError:
            pass
        init = np.array([np.nan, np.nan, *tr.init])
        t5 = StartTrace(init, v, f, tr.nfev, math.isfinite(f))
        traces.append(t5)
        if t5.success and _better((f, v), best):
            best = (f, v)
    if best is None:
        raise FitError("no start converged", traces)
    return FitResult(STATIC_NAMES, np.array(best[1]), float(best[0]), traces, (-window, window), "static", {})


def static_objective(x, density, params: StationaryFitParams, window: float = 0.05) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(density, dtype=float)
    m = np.abs(x) <= window + 1e-12
    r = eval_stationary_revealed(x[m], params) - y[m]
    return float(np.dot(r, r))


# ---------------------------------------------------------------- dynamic fit


@dataclass
class Snapshots:
    """Revealed densities ``rho[i, j]`` at times ``t[i]`` and log-prices ``x[j]``."""

    t: np.ndarray
    x: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.rho.shape != (self.t.size, self.x.size):
            raise ConfigurationError("snapshot array must be (times, prices)")
        if np.any(np.diff(self.t) <= 0) or np.any(np.diff(self.x) <= 0):
            raise ConfigurationError("snapshot times and prices must increase")

    @classmethod
    def from_fields(cls, fields) -> "Snapshots":
        return cls([f.t for f in fields], fields[0].grid.x, np.array([f.rho_r for f in fields]))

    def window(self, x_lo: float, x_hi: float, times: Optional[Sequence[float]] = None) -> "Snapshots":
        mx = (self.x >= x_lo - 1e-12) & (self.x <= x_hi + 1e-12)
        mt = np.ones(self.t.size, bool) if times is None else np.isin(np.round(self.t, 9), np.round(times, 9))
        return Snapshots(self.t[mt], self.x[mx], self.rho[np.ix_(mt, mx)])


@dataclass(frozen=True)
class DynamicConfig:
    """Fixed inputs of the dynamic fit.

    ``latent``, ``gamma_r`` and ``t_r0`` come from the static fit and the
    change-point estimator.  ``pad`` widens the solver grid beyond the fit
    window when diffusion is on.
    """

    latent: LatentBookParams
    gamma_r: float
    t_r0: float
    T: float = DEFAULT_T
    window: Tuple[float, float] = (-0.02, 0.02)
    times: Tuple[float, ...] = tuple(float(v) for v in range(10, 301, 10))
    dt: float = 1.0
    pad: float = 0.03
    T_s: float = 180.0

    def fixed(self) -> Dict[str, float]:
        return {"a": self.latent.a, "b": self.latent.b, "gamma_r": self.gamma_r, "t_r0": self.t_r0,
                "T": self.T, "T_s": self.T_s}


def rate_model(params: Mapping[str, float], cfg: DynamicConfig) -> RateModel:
    sub = SubmissionRateParams(C_r=params["C_r"], x_r=params["x_r"], k=params["k"], w=params["w"],
                               gamma_r=cfg.gamma_r, t_r0=cfg.t_r0, x_0=params["x_0"], m=params["m"], T=cfg.T)
    return RateModel.from_params(sub, CancellationRateParams(nu_l=params["nu_l"], T=cfg.T))


def diffusion_schedule(params: Mapping[str, float], variant: str, cfg: DynamicConfig) -> DiffusionSchedule:
    if variant == "zero":
        return DiffusionSchedule.zero()
    if variant == "constant-diffusion":
        return DiffusionSchedule.constant(params["D_r"], params["D_l"])
    if variant == "time-diffusion":
        return DiffusionSchedule.time_varying(params["D_0"], params["D_T"], cfg.T_s, D_l=params["D_l"])
    raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _model_grid(x, variant, cfg):
    dx = float(np.median(np.diff(x)))
    if not np.allclose(np.diff(x), dx, rtol=1e-6, atol=1e-15):
        raise ConfigurationError("snapshot prices must be equally spaced")
    if variant == "zero":
        return PriceGrid(float(x[0]), float(x[-1]), x.size)
    n_pad = int(round(cfg.pad / dx))
    return PriceGrid(float(x[0]) - n_pad * dx, float(x[-1]) + n_pad * dx, x.size + 2 * n_pad)


def predict(params: Mapping[str, float], variant: str, x, times, cfg: DynamicConfig) -> np.ndarray:
    """Model revealed density at ``times`` x ``x`` from the empty-book initial condition."""
    x = np.asarray(x, dtype=float)
    grid = _model_grid(x, variant, cfg)
    field0 = DensityField.initial(grid, cfg.latent)
    fields = integrate(field0, rate_model(params, cfg), diffusion_schedule(params, variant, cfg),
                       float(max(times)), cfg.dt, list(times), latent=cfg.latent)
    if variant == "zero":
        return np.array([f.rho_r for f in fields])
    return np.array([np.interp(x, grid.x, f.rho_r) for f in fields])


def objective_dynamic(params: Mapping[str, float], snapshots: Snapshots, cfg: DynamicConfig,
                      variant: str = "zero") -> float:
    """Sum of squared errors over the fit window and fit times."""
    data = snapshots.window(*cfg.window, cfg.times)
    try:
        model = predict(params, variant, data.x, data.t, cfg)
    except NumericalFailure as exc:
        raise NumericalFailure(f"{exc} (parameters {dict(params)})") from exc
    r = model - data.rho
    return float(np.sum(r * r))


def fit_dynamic(snapshots: Snapshots, cfg: DynamicConfig, variant: str = "zero",
                frozen: Optional[Mapping[str, float]] = None, n_starts: int = N_STARTS, seed: int = 0,
                maxfev: int = 1500, threads: int = 1, seeds: Optional[Mapping[str, float]] = None) -> FitResult:
    """Fit the dynamic model to snapshots.

    ``zero`` fits the seven rate parameters.  The diffusion variants keep the
    rate parameters ``frozen`` (normally a previous zero-diffusion fit) and
    fit only the diffusivities.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    data = snapshots.window(*cfg.window, cfg.times)
    if data.t.size == 0 or data.x.size < 2:
        raise ConfigurationError("no snapshot data inside the fit window and times")
    fixed = cfg.fixed()
    if variant == "zero":
        names = DYNAMIC_NAMES
        default = _dynamic_seeds(data, cfg)
    else:
        if frozen is None:
            raise ConfigurationError(f"variant {variant!r} needs the zero-diffusion parameters")
        fixed.update({k: float(frozen[k]) for k in DYNAMIC_NAMES})
        names = DIFFUSION_NAMES[variant]
        default = {"D_r": 1e-8, "D_l": 1e-8, "D_0": 1e-6, "D_T": 1e-8}
    if seeds:
        default.update(seeds)
    specs = _specs_for(names)
    # the time-varying schedule needs D_T <= D_0
    base = dict(fixed)

    def residuals(v):
        p = dict(base)
        p.update(zip(names, v))
        if variant == "time-diffusion" and p["D_T"] > p["D_0"]:
            return np.full(data.rho.size, 1e3 * (1.0 + p["D_T"] / max(p["D_0"], 1e-300)))
        return (predict(p, variant, data.x, data.t, cfg) - data.rho).ravel()

    return _multistart(specs, residuals, [default[n] for n in names], n_starts, seed, maxfev, threads,
                       cfg.window, variant, fixed)


def _dynamic_seeds(data: Snapshots, cfg: DynamicConfig) -> Dict[str, float]:
    """Data-driven centers for the start distribution.

    ``x_r`` from the e-folding scale of the last snapshot; the rate scales
    from the early growth of the book near ``x = 0`` (initial slope
    ``nu_r * rho_latent``) and its saturation level.
    """
    x, t, rho = data.x, data.t, data.rho
    last = rho[-1]
    x_r = efolding_scale(-np.abs(x), last)
    j0 = int(np.argmin(np.abs(x)))
    rho_l0 = max(cfg.latent.b, 1e-12)
    nu_r0 = max(rho[0, j0] / (rho_l0 * t[0]), 1e-6)
    frac = min(max(last[j0] / rho_l0, 1e-3), 0.999)
    nu_l0 = max(nu_r0 * (1.0 - frac) / frac, 1e-5)
    C_r = nu_r0 * (cfg.gamma_r + cfg.T - cfg.t_r0)
    neg = x <= -0.75 * (x[-1] - x[0]) / 2
    if neg.any():
        far = float(np.median(rho[0, neg]) / (rho_l0 * t[0]))
    else:
        far = nu_r0 * 0.1
    m = max(far * cfg.gamma_r / max(C_r, 1e-12), 1e-4)
    return {"C_r": C_r, "x_r": x_r, "k": 5.0, "w": 0.8, "nu_l": nu_l0, "x_0": x_r, "m": m}
