"""Scaling exponents of the indicative log-price inside auction regimes.

Four exponents are estimated from an ensemble of days sampled every second:

* ``H`` (Hurst): growth of the squared displacement from the regime origin;
* ``J`` (Joseph): growth of the rescaled range ``R_t / S_t`` (correlations);
* ``M`` (Moses): growth of the sum of absolute increments (non-stationarity);
* ``L`` (Noah): growth of the sum of squared increments (heavy tails).

For self-similar processes they satisfy ``H = J + L + M - 1``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from . import kernels
from .errors import ConfigurationError, DomainError
from .io import write_table

DEFAULT_BOUNDARIES = (0, 30, 60, 120, 240, 300)
FIRST_T = 3  # log-log fits skip the first two samples of a regime
NULL_DAYS = 4000
NULL_SEED = 20240917


@dataclass(frozen=True)
class RegimeSegmentation:
    boundaries: Tuple[int, ...] = DEFAULT_BOUNDARIES

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0 or any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ConfigurationError("regime boundaries must start at 0 and increase strictly")
        object.__setattr__(self, "boundaries", b)

    @property
    def regimes(self) -> List[Tuple[int, int]]:
        return list(zip(self.boundaries[:-1], self.boundaries[1:]))

    def __len__(self) -> int:
        return len(self.boundaries) - 1


@dataclass
class PriceEnsemble:
    """Log-prices ``X[d, s] = log(p_s / p_0)`` of each day, one column per second."""

    X: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[1] < 2:
            raise ConfigurationError("need at least two samples per day")
        if not np.all(np.isfinite(self.X)):
            raise ConfigurationError("log-prices must be finite")

    @classmethod
    def from_prices(cls, prices) -> "PriceEnsemble":
        p = np.atleast_2d(np.asarray(prices, dtype=float))
        if np.any(p <= 0):
            raise ConfigurationError("prices must be > 0")
        lp = np.log(p)
        return cls(lp - lp[:, :1])

    @property
    def n_days(self) -> int:
        return self.X.shape[0]

    @property
    def n_steps(self) -> int:
        return self.X.shape[1] - 1

    def regime(self, regime: Optional[Tuple[int, int]]) -> "PriceEnsemble":
        """Samples ``start..end`` re-centered at the regime start."""
        if regime is None:
            return self
        start, end = regime
        if not (0 <= start < end <= self.n_steps):
            raise ConfigurationError(f"regime {regime} outside the series (0..{self.n_steps})")
        sub = self.X[:, start:end + 1]
        return PriceEnsemble(sub - sub[:, :1])

    def increments(self) -> np.ndarray:
        return np.diff(self.X, axis=1)

    def days(self, idx) -> "PriceEnsemble":
        return PriceEnsemble(self.X[idx])


def _slope(t, y) -> float:
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 2:
        raise DomainError("not enough positive points for a log-log fit")
    return float(np.polyfit(np.log(t[ok]), np.log(y[ok]), 1)[0])


def _times(n):
    t = np.arange(1, n + 1, dtype=float)
    return t, t >= FIRST_T


def hurst_msd(ensemble: PriceEnsemble, regime=None, method: str = "origin") -> float:
    """Hurst exponent from the mean squared displacement.

    ``origin`` (default): half the log-log slope of the across-day median of
    ``X_t^2`` against ``t``, displacements measured from the regime start.
    ``sliding``: half the slope of the time- and day-averaged
    ``(X_{t+tau} - X_t)^2`` against ``tau`` for ``tau`` in ``[1, n/4]``.
    """
    e = ensemble.regime(regime)
    n = e.n_steps
    if method == "origin":
        if n < 8 + FIRST_T - 1:
            raise ConfigurationError("regime too short for an MSD fit")
        t, m = _times(n)
        msd = np.median(e.X[:, 1:] ** 2, axis=0)
    elif method == "sliding":
        tau_max = n // 4
        if tau_max < 8:
            raise ConfigurationError("need at least 8 lags for an MSD fit")
        t = np.arange(1, tau_max + 1, dtype=float)
        m = np.ones(tau_max, bool)
        msd = np.array([np.mean((e.X[:, k:] - e.X[:, :-k]) ** 2) for k in range(1, tau_max + 1)])
    else:
        raise ConfigurationError(f"unknown MSD method {method!r}")
    if np.all(msd[m] == 0):
        raise DomainError("zero mean squared displacement at all lags")
    return 0.5 * _slope(t[m], msd[m])


@lru_cache(maxsize=64)
def _null_rescaled_range(n: int) -> np.ndarray:
    rng = np.random.default_rng(NULL_SEED + n)
    inc = rng.standard_normal((NULL_DAYS, n))
    X = np.concatenate([np.zeros((NULL_DAYS, 1)), np.cumsum(inc, axis=1)], axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(kernels.rescaled_range(X), axis=0)


def rescaled_range_curve(ensemble: PriceEnsemble, regime=None) -> np.ndarray:
    """Across-day mean of ``R_t / S_t`` for ``t = 1..n`` (days with ``S_t = 0`` skipped)."""
    e = ensemble.regime(regime)
    rs = kernels.rescaled_range(e.X)
    bad = ~np.isfinite(rs[:, FIRST_T - 1:])
    if bad.any():
        warnings.warn(f"{int(bad.any(axis=1).sum())} day(s) with S_t = 0 excluded from the rescaled range",
                      RuntimeWarning)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(rs, axis=0)


def joseph(ensemble: PriceEnsemble, regime=None, null_correction: bool = True) -> float:
    """Joseph exponent from the rescaled range.

    The small-sample bias of ``R/S`` is removed by dividing by the same curve
    for iid Gaussian increments (fixed-seed Monte Carlo) and adding back 1/2.
    """
    e = ensemble.regime(regime)
    n = e.n_steps
    if n < 16:
        raise ConfigurationError("regime must span at least 16 samples")
    curve = rescaled_range_curve(e)
    t, m = _times(n)
    if null_correction:
        return 0.5 + _slope(t[m], curve[m] / _null_rescaled_range(n)[m])
    return _slope(t[m], curve[m])


def _check_days(e):
    if e.n_days < 30:
        raise ConfigurationError("need at least 30 days")


def moses(ensemble: PriceEnsemble, regime=None) -> float:
    """Moses exponent: slope of the median running sum of ``|dX|`` minus 1/2."""
    e = ensemble.regime(regime)
    _check_days(e)
    inc = e.increments()
    if np.all(inc == 0):
        raise DomainError("all increments are zero")
    t, m = _times(e.n_steps)
    return _slope(t[m], np.median(np.cumsum(np.abs(inc), axis=1), axis=0)[m]) - 0.5


def noah(ensemble: PriceEnsemble, regime=None, M: Optional[float] = None) -> float:
    """Noah exponent from the median running sum of ``dX^2``: ``(slope - 2M + 1) / 2``."""
    e = ensemble.regime(regime)
    _check_days(e)
    inc = e.increments()
    if np.all(inc == 0):
        raise DomainError("all increments are zero")
    if M is None:
        M = moses(e)
    t, m = _times(e.n_steps)
    s = _slope(t[m], np.median(np.cumsum(inc**2, axis=1), axis=0)[m])
    return 0.5 * (s - 2.0 * M + 1.0)


def tail_exponent(ensemble: PriceEnsemble, regime=None, tail_fraction: float = 0.05) -> float:
    """Hill estimate of the tail exponent of ``|dX|`` from the top ``tail_fraction``."""
    e = ensemble.regime(regime)
    a = np.sort(np.abs(e.increments()).ravel())[::-1]
    a = a[a > 0]
    k = max(int(tail_fraction * a.size), 2)
    if a.size <= k:
        raise DomainError("not enough non-zero increments for a tail fit")
    return float(1.0 / np.mean(np.log(a[:k] / a[k])))


def noah_from_tail(gamma_tail: float) -> float:
    return max(0.5, 1.0 / gamma_tail)


@dataclass(frozen=True)
class Exponents:
    H: float
    J: float
    L: float
    M: float

    @property
    def residual(self) -> float:
        return self.H - (self.J + self.L + self.M - 1.0)


def exponents(ensemble: PriceEnsemble, regime=None) -> Exponents:
    e = ensemble.regime(regime)
    M = moses(e)
    return Exponents(hurst_msd(e), joseph(e), noah(e, M=M), M)


# ---------------------------------------------------------------- significance


@dataclass(frozen=True)
class Significance:
    estimate: float
    se: float
    p_value: float
    stars: str


def stars_for(p: float) -> str:
    if not np.isfinite(p):
        return "NA"
    return "***" if p < 1e-3 else "**" if p < 1e-2 else "*" if p < 5e-2 else ""


def significance(samples, estimate: Optional[float] = None, null: float = 0.5) -> Significance:
    """Two-sided normal test of ``estimate == null`` with the bootstrap standard error."""
    s = np.asarray(samples, dtype=float)
    s = s[np.isfinite(s)]
    if s.size < 30:
        raise ConfigurationError("need at least 30 bootstrap replicates")
    est = float(np.mean(s)) if estimate is None else float(estimate)
    se = float(np.std(s, ddof=1))
    if se <= 1e-12 * max(1.0, abs(est)):
        if est == null:
            return Significance(est, 0.0, 1.0, "")
        return Significance(est, 0.0, math.nan, "NA")
    p = float(2.0 * ndtr(-abs(est - null) / se))
    return Significance(est, se, p, stars_for(p))


def bootstrap(ensemble: PriceEnsemble, statistic: Callable[[PriceEnsemble], float], n_boot: int = 200,
              seed: int = 0) -> np.ndarray:
    """Statistic recomputed on days resampled with replacement."""
    rng = np.random.default_rng(seed)
    out = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, ensemble.n_days, ensemble.n_days)
        try:
            out[i] = statistic(ensemble.days(idx))
        except (DomainError, ConfigurationError):
            out[i] = np.nan
    return out


# ---------------------------------------------------------------- jump on close


def jump_ratio(series, p_ref: Optional[float], p_auction: float, mode: str = "ref") -> np.ndarray:
    """``(p_t - p_ref) / (p_auction - p_ref)``; in ``first-indicative`` mode the
    reference is the first price of the series."""
    p = np.asarray(series, dtype=float)
    if mode == "ref":
        if p_ref is None:
            raise ConfigurationError("mode 'ref' needs p_ref")
        base = float(p_ref)
    elif mode == "first-indicative":
        base = float(p[0])
    else:
        raise ConfigurationError(f"unknown jump mode {mode!r}")
    if p_auction == base:
        raise DomainError("auction price equals the reference; jump ratio undefined")
    return (p - base) / (p_auction - base)


def sign_agreement(p_ref, p_first, p_auction) -> float:
    """Fraction of days where the close-to-reference and close-to-first-indicative
    moves have the same sign (days with a zero move are skipped)."""
    a = np.sign(np.asarray(p_auction, float) - np.asarray(p_ref, float))
    b = np.sign(np.asarray(p_auction, float) - np.asarray(p_first, float))
    ok = (a != 0) & (b != 0)
    if not ok.any():
        return math.nan
    return float(np.mean(a[ok] == b[ok]))


# ---------------------------------------------------------------- report


NAMES = ("H", "J", "L", "M")
REPORT_HEADER = ["regime", "stock", "H", "J", "L", "M", "residual", "se_H", "se_J", "se_L", "se_M",
                 "stars_H", "stars_J", "stars_L", "stars_M"]


@dataclass
class ScalingRow:
    regime: int
    stock: str
    values: dict
    se: dict
    stars: dict

    @property
    def residual(self) -> float:
        v = self.values
        if any(v.get(k) is None for k in NAMES):
            return math.nan
        return v["H"] - (v["J"] + v["L"] + v["M"] - 1.0)


def _statistics(skip):
    def f_H(e):
        return hurst_msd(e)

    def f_M(e):
        return moses(e)

    def f_L(e):
        return noah(e)

    def f_J(e):
        return joseph(e)

    fs = {"H": f_H, "J": f_J, "L": f_L, "M": f_M}
    return {k: v for k, v in fs.items() if k not in skip}


def scaling_report(ensemble: PriceEnsemble, stock: str = "SYN",
                   segmentation: RegimeSegmentation = RegimeSegmentation(), n_boot: int = 200,
                   seed: int = 0, force: bool = False) -> List[ScalingRow]:
    """Exponents, bootstrap standard errors and stars per regime.

    H is skipped in the first regime and J in the last unless ``force``.
    """
    rows = []
    last = len(segmentation)
    for i, reg in enumerate(segmentation.regimes, start=1):
        e = ensemble.regime(reg)
        skip = set()
        if not force:
            if i == 1:
                skip.add("H")
            if i == last:
                skip.add("J")
        stats = _statistics(skip)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            values = {k: f(e) for k, f in stats.items()}
            se, stars = {}, {}
            for j, (k, f) in enumerate(stats.items()):
                sig = significance(bootstrap(e, f, n_boot, seed + 7919 * i + j), estimate=values[k])
                se[k], stars[k] = sig.se, sig.stars
        rows.append(ScalingRow(i, stock, values, se, stars))
    return rows


def write_report(rows: Sequence[ScalingRow], path) -> None:
    def val(d, k):
        return d.get(k, math.nan)

    cols = [[r.regime for r in rows], [r.stock for r in rows]]
    cols += [[val(r.values, k) for r in rows] for k in NAMES]
    cols += [[r.residual for r in rows]]
    cols += [[val(r.se, k) for r in rows] for k in NAMES]
    cols += [[r.stars.get(k, "NA") or "-" for r in rows] for k in NAMES]
    write_table(path, REPORT_HEADER, cols)
