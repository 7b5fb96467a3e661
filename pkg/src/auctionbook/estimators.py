"""Tick-level estimators of cancellation, submission and price-update rates.

Log-prices are measured in the frame of the stream's reference price (exact
for mirrored sell-only streams, where the indicative price is pinned there).
Grids keep numerator and denominator separately so that estimates from
several days pool by summation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .auction_engine import BUY, CANCEL, CLASS_NAMES, SELL, SUBMIT, UPDATE, TickStream, bucket_index
from .errors import ConfigurationError
from .io import format_params, write_table
from .model_core import LatentBookParams, eval_latent_initial


@dataclass(frozen=True)
class EstimatorConfig:
    """Bucketing and filtering options.

    ``normalize="exposure"`` divides cancellation and update sums by the time
    the price level was non-empty inside the bin; ``"bin"`` divides by the bin
    length as in the textbook estimator (biased low when levels empty out).
    """

    dx: float = 2e-4
    dt: float = 2.0
    x_min: float = -0.05
    x_max: float = 0.05
    agent_classes: Optional[Tuple[str, ...]] = None
    side: int = SELL
    t_end: Optional[float] = None
    normalize: str = "exposure"

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0):
            raise ConfigurationError("dx and dt must be > 0")
        if not self.x_min < self.x_max:
            raise ConfigurationError("empty price window")
        if self.normalize not in ("exposure", "bin"):
            raise ConfigurationError(f"unknown normalization {self.normalize!r}")
        if self.agent_classes is not None and not set(self.agent_classes) <= set(CLASS_NAMES):
            raise ConfigurationError(f"unknown agent classes {self.agent_classes}")

    def bucket_range(self):
        k_lo = int(bucket_index(self.x_min, self.dx))
        k_hi = int(bucket_index(self.x_max, self.dx))
        return k_lo, k_hi


@dataclass
class RateGrid:
    """Time bins x price buckets; ``value = num / den`` (NaN where ``den == 0``)."""

    t_edges: np.ndarray
    x_centers: np.ndarray
    num: np.ndarray
    den: np.ndarray
    kind: str = "rate"

    @property
    def value(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.den > 0, self.num / np.where(self.den > 0, self.den, 1.0), np.nan)

    @property
    def t_bins(self) -> np.ndarray:
        return self.t_edges[:-1]

    def band(self, x_lo: float, x_hi: float) -> np.ndarray:
        return (self.x_centers >= x_lo - 1e-12) & (self.x_centers <= x_hi + 1e-12)

    def series(self, x_lo: float, x_hi: float):
        """Pooled value over buckets with centers in ``[x_lo, x_hi]``, per time bin."""
        m = self.band(x_lo, x_hi)
        num = self.num[:, m].sum(axis=1)
        den = self.den[:, m].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.t_edges[1:], np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    def profile(self, t_lo: float = -np.inf, t_hi: float = np.inf):
        """Pooled value per bucket over time bins inside ``[t_lo, t_hi]``."""
        m = (self.t_edges[:-1] >= t_lo) & (self.t_edges[1:] <= t_hi)
        num = self.num[m].sum(axis=0)
        den = self.den[m].sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.x_centers, np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    def write(self, path) -> None:
        tt, xx = np.meshgrid(self.t_bins, self.x_centers, indexing="ij")
        write_table(path, ["t_bin", "x_bucket", "value"], [tt.ravel(), xx.ravel(), self.value.ravel()])


def combine(grids: Sequence[RateGrid]) -> RateGrid:
    """Pool grids estimated on the same binning (e.g. several days)."""
    g0 = grids[0]
    for g in grids[1:]:
        if g.num.shape != g0.num.shape or not np.allclose(g.t_edges, g0.t_edges):
            raise ConfigurationError("grids must share binning to be combined")
    return RateGrid(g0.t_edges, g0.x_centers, sum(g.num for g in grids), sum(g.den for g in grids), g0.kind)


# ---------------------------------------------------------------- helpers


def _check_sorted(ticks: TickStream):
    if not ticks.is_sorted():
        raise ConfigurationError("stream is not sorted by timestamp")


def _t_end(ticks: TickStream, cfg: EstimatorConfig) -> float:
    if cfg.t_end is not None:
        return cfg.t_end
    if ticks.clearing_time is not None:
        return min(ticks.clearing_time, ticks.T)
    return ticks.T


def _edges(ticks, cfg):
    t_end = _t_end(ticks, cfg)
    n = max(1, int(math.floor(t_end / cfg.dt + 1e-9)))
    return np.arange(n + 1) * cfg.dt


def _x_of(price, ticks, side):
    x = np.log(np.asarray(price, dtype=float) / ticks.ref_price)
    return x if side == SELL else -x


def _counted(ticks: TickStream, cfg: EstimatorConfig) -> np.ndarray:
    m = ticks.side == cfg.side
    if cfg.agent_classes is not None:
        m &= np.isin(ticks.agent, [CLASS_NAMES.index(c) for c in cfg.agent_classes])
    return m


def _level_history(ticks: TickStream, side: int):
    """Volume changes per price level in time order.

    Returns arrays over entries ``(event, price, t, delta, v_before, v_after)``;
    an UPDATE contributes two entries (leave the old level, join the new one).
    """
    m = ticks.side == side
    idx = np.flatnonzero(m)
    k = ticks.kind[idx]
    q = ticks.qty[idx]
    ev = np.concatenate([idx, idx[k == UPDATE]])
    price = np.concatenate([ticks.price[idx], ticks.new_price[idx][k == UPDATE]])
    delta = np.concatenate([np.where(k == SUBMIT, q, -q), q[k == UPDATE]])
    t = ticks.ts_us[ev] / 1e6
    order = np.lexsort((ev, price))
    ev, price, delta, t = ev[order], price[order], delta[order], t[order]
    csum = np.cumsum(delta)
    start = np.r_[True, price[1:] != price[:-1]]
    grp = np.cumsum(start) - 1
    base = (csum - delta)[start]
    v_after = csum - base[grp]
    v_before = v_after - delta
    return ev, price, t, delta, v_before, v_after, start


def _exposure(ticks, cfg, edges, bucket_of_price):
    """Time each bucket's price levels were non-empty, summed over levels, per bin."""
    k_lo, k_hi = cfg.bucket_range()
    nb = k_hi - k_lo + 1
    nt = len(edges) - 1
    ev, price, t, delta, vb, va, start = _level_history(ticks, cfg.side)
    if len(ev) == 0:
        return np.zeros((nt, nb))
    t_end = edges[-1]
    # a level is occupied from an entry leaving it non-empty until its next entry
    nxt = np.r_[t[1:], t_end]
    last = np.r_[start[1:], True]
    nxt[last] = t_end
    occ = (va > 0) & (nxt > t)
    s, e = np.minimum(t[occ], t_end), np.minimum(nxt[occ], t_end)
    b = bucket_of_price(price[occ]) - k_lo
    keep = (b >= 0) & (b < nb) & (e > s)
    s, e, b = s[keep], e[keep], b[keep]
    # integral of the occupancy count: E(tau) = sum over starts/ends before tau of +-(tau - t_e)
    times = np.concatenate([s, e])
    sign = np.concatenate([np.ones(len(s)), -np.ones(len(e))])
    bb = np.concatenate([b, b])
    span = t_end + 1.0
    key = bb * span + times
    order = np.argsort(key, kind="stable")
    key, sign, times = key[order], sign[order], times[order]
    csign = np.r_[0.0, np.cumsum(sign)]
    ctime = np.r_[0.0, np.cumsum(sign * times)]
    qkey = np.arange(nb)[None, :] * span + edges[:, None]
    pos = np.searchsorted(key, qkey, "right")
    lo = np.searchsorted(key, np.arange(nb) * span, "left")[None, :]
    C = csign[pos] - csign[lo]
    S = ctime[pos] - ctime[lo]
    E = edges[:, None] * C - S
    return np.diff(E, axis=0)


def _bin_of(t, edges):
    return np.searchsorted(edges, t, "right") - 1


def _bucket_fn(ticks, cfg):
    side = cfg.side

    def f(price):
        return bucket_index(_x_of(price, ticks, side), cfg.dx)
    return f


def _occupied_levels(ticks, cfg, edges, bucket_of_price):
    """Number of distinct non-empty-at-some-point levels per (bin, bucket)."""
    exp_by_level = []
    ev, price, t, delta, vb, va, start = _level_history(ticks, cfg.side)
    k_lo, k_hi = cfg.bucket_range()
    nb = k_hi - k_lo + 1
    nt = len(edges) - 1
    out = np.zeros((nt, nb))
    if len(ev) == 0:
        return out
    t_end = edges[-1]
    nxt = np.r_[t[1:], t_end]
    nxt[np.r_[start[1:], True]] = t_end
    occ = (va > 0) & (nxt > t)
    b = bucket_of_price(price[occ]) - k_lo
    b0 = np.clip(_bin_of(t[occ], edges), 0, nt - 1)
    b1 = np.clip(_bin_of(np.minimum(nxt[occ], t_end) - 1e-12, edges), 0, nt - 1)
    keep = (b >= 0) & (b < nb)
    seen = set()
    for p, bk, lo_, hi_ in zip(price[occ][keep], b[keep], b0[keep], b1[keep]):
        for tb in range(lo_, hi_ + 1):
            if (p, tb) not in seen:
                seen.add((p, tb))
                out[tb, bk] += 1
    return out


# ---------------------------------------------------------------- estimators


def estimate_cancel_rate(ticks: TickStream, config: EstimatorConfig = EstimatorConfig()) -> RateGrid:
    """Per-volume cancellation rate: sum of ``q / V_p(t-)`` over cancellations,
    divided by level exposure (or bin length, see :class:`EstimatorConfig`)."""
    _check_sorted(ticks)
    cfg = config
    edges = _edges(ticks, cfg)
    k_lo, k_hi = cfg.bucket_range()
    nb, nt = k_hi - k_lo + 1, len(edges) - 1
    bucket_of = _bucket_fn(ticks, cfg)
    ev, price, t, delta, vb, va, start = _level_history(ticks, cfg.side)
    counted = _counted(ticks, cfg)
    m = (ticks.kind[ev] == CANCEL) & counted[ev] & (vb > 0)
    num = np.zeros((nt, nb))
    tb = _bin_of(t[m], edges)
    b = bucket_of(price[m]) - k_lo
    ok = (tb >= 0) & (tb < nt) & (b >= 0) & (b < nb)
    np.add.at(num, (tb[ok], b[ok]), (-delta[m] / vb[m])[ok])
    if cfg.normalize == "exposure":
        den = _exposure(ticks, cfg, edges, bucket_of)
    else:
        den = _occupied_levels(ticks, cfg, edges, bucket_of) * cfg.dt
    return RateGrid(edges, np.arange(k_lo, k_hi + 1) * cfg.dx, num, den, "cancel")


def estimate_submit_flux(ticks: TickStream, config: EstimatorConfig, Q_a: float) -> RateGrid:
    """Submitted density per second, ``sum(dV) / (dx * Q_a * dt)`` per bin."""
    _check_sorted(ticks)
    if not Q_a > 0:
        raise ConfigurationError("Q_a must be > 0")
    cfg = config
    edges = _edges(ticks, cfg)
    k_lo, k_hi = cfg.bucket_range()
    nb, nt = k_hi - k_lo + 1, len(edges) - 1
    m = (ticks.kind == SUBMIT) & _counted(ticks, cfg)
    num = np.zeros((nt, nb))
    tb = _bin_of(ticks.t[m], edges)
    b = _bucket_fn(ticks, cfg)(ticks.price[m]) - k_lo
    ok = (tb >= 0) & (tb < nt) & (b >= 0) & (b < nb)
    np.add.at(num, (tb[ok], b[ok]), ticks.qty[m][ok] / (cfg.dx * Q_a))
    den = np.full((nt, nb), cfg.dt)
    return RateGrid(edges, np.arange(k_lo, k_hi + 1) * cfg.dx, num, den, "submit_flux")


def infer_submission_rate(flux: RateGrid, latent: LatentBookParams) -> RateGrid:
    """Divide the submitted flux by the latent density at each bucket center."""
    rho = np.asarray(eval_latent_initial(flux.x_centers, latent), dtype=float)
    zero = rho <= 0
    if zero.any():
        warnings.warn("latent density vanishes in some buckets; rate set to NaN", RuntimeWarning)
    scale = np.where(zero, np.nan, rho)
    den = np.where(zero[None, :], 0.0, flux.den * scale[None, :])
    return RateGrid(flux.t_edges, flux.x_centers, flux.num.copy(), den, "submit_rate")


@dataclass
class UpdateEstimate:
    """Price-update kernel ``gamma[x, y]`` (rate density in ``y``) and the
    second-moment term ``update_term(x) = 1/2 sum (x - y)^2 Gamma_D(x, y) dy``."""

    x_centers: np.ndarray
    gamma: np.ndarray
    update_term: np.ndarray
    exposure: np.ndarray


def estimate_update_rate(ticks: TickStream, config: EstimatorConfig = EstimatorConfig()) -> UpdateEstimate:
    _check_sorted(ticks)
    cfg = config
    edges = _edges(ticks, cfg)
    k_lo, k_hi = cfg.bucket_range()
    nb = k_hi - k_lo + 1
    x_c = np.arange(k_lo, k_hi + 1) * cfg.dx
    bucket_of = _bucket_fn(ticks, cfg)
    ev, price, t, delta, vb, va, start = _level_history(ticks, cfg.side)
    counted = _counted(ticks, cfg)
    # the leaving half of each UPDATE: negative delta at the old price
    m = (ticks.kind[ev] == UPDATE) & (delta < 0) & counted[ev] & (vb > 0) & (t < edges[-1])
    frac = -delta[m] / vb[m]
    x_from = _x_of(price[m], ticks, cfg.side)
    x_to = _x_of(ticks.new_price[ev[m]], ticks, cfg.side)
    bx = bucket_index(x_from, cfg.dx) - k_lo
    by = bucket_index(x_to, cfg.dx) - k_lo
    if cfg.normalize == "exposure":
        expo = _exposure(ticks, cfg, edges, bucket_of).sum(axis=0)
    else:
        expo = _occupied_levels(ticks, cfg, edges, bucket_of).sum(axis=0) * cfg.dt
    gamma = np.zeros((nb, nb))
    ok = (bx >= 0) & (bx < nb) & (by >= 0) & (by < nb)
    np.add.at(gamma, (bx[ok], by[ok]), frac[ok])
    term = np.zeros(nb)
    okx = (bx >= 0) & (bx < nb)
    np.add.at(term, bx[okx], 0.5 * (x_from - x_to)[okx] ** 2 * frac[okx])
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(expo[:, None] > 0, gamma / (np.where(expo > 0, expo, 1.0)[:, None] * cfg.dx), 0.0)
        term = np.where(expo > 0, term / np.where(expo > 0, expo, 1.0), 0.0)
    return UpdateEstimate(x_c, gamma, term, expo)


def realized_volatility(prices) -> float:
    """Root mean square of one-step log returns of a 1-second price series."""
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise ConfigurationError("need at least two prices")
    r = np.diff(np.log(p))
    return float(np.sqrt(np.mean(r**2)))


def log_mode(values, bins_per_decade: int = 4) -> float:
    """Center of the most populated log10 bin among positive values (0 if none)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v) & (v > 0)]
    if v.size == 0:
        return 0.0
    lv = np.log10(v)
    k = np.floor(lv * bins_per_decade).astype(np.int64)
    ks, counts = np.unique(k, return_counts=True)
    best = ks[np.argmax(counts)]
    return float(10 ** ((best + 0.5) / bins_per_decade))


@dataclass
class DiffusionEstimate:
    sigma: float
    var_beta: float
    x: np.ndarray
    update_term: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return 0.5 * self.var_beta * self.sigma**2 + self.update_term

    def summary(self) -> dict:
        occupied = self.update_term[self.update_term > 0]
        return {
            "sigma": self.sigma,
            "var_beta": self.var_beta,
            "half_var_beta_sigma2": 0.5 * self.var_beta * self.sigma**2,
            "update_term_mode": log_mode(self.update_term),
            "update_term_median": float(np.median(occupied)) if occupied.size else 0.0,
            "update_term_max": float(self.update_term.max()) if self.update_term.size else 0.0,
            "D_median": float(np.median(self.D)) if self.D.size else 0.0,
        }

    def report(self) -> str:
        return format_params(self.summary())


def estimate_diffusion(sigma: float, update: UpdateEstimate, var_beta: float = 1.0) -> DiffusionEstimate:
    if sigma < 0 or var_beta < 0:
        raise ConfigurationError("sigma and var_beta must be >= 0")
    return DiffusionEstimate(float(sigma), float(var_beta), update.x_centers, update.update_term)


# ---------------------------------------------------------------- change point


@dataclass(frozen=True)
class DeadlineFit:
    C: float
    gamma: float
    t0: float
    l1: float
    level: float


def _weighted_median(values, weights):
    """Weighted medians along the last axis."""
    order = np.argsort(values, axis=-1)
    v = np.take_along_axis(values, order, -1)
    w = np.take_along_axis(np.broadcast_to(weights, values.shape), order, -1)
    cw = np.cumsum(w, axis=-1)
    half = 0.5 * cw[..., -1:]
    i = np.argmax(cw >= half, axis=-1)
    return np.take_along_axis(v, i[..., None], -1)[..., 0]


def _deadline_l1(t, y, T, gammas, t0=-np.inf):
    """Best L1 fit of ``y = C / (gamma + T - max(t, t0))`` for each gamma: (C, error)."""
    u = 1.0 / (gammas[:, None] + T - np.maximum(t, t0)[None, :])
    C = _weighted_median(y[None, :] / u, u)
    err = np.abs(y[None, :] - C[:, None] * u).sum(axis=1)
    return C, err


def fit_deadline_rate(t, y, T: float = 300.0, t_min: float = 0.0, t_max: Optional[float] = None,
                      min_post: int = 10, gamma_max: float = 1e4, continuous: bool = True) -> DeadlineFit:
    """Change-point fit: constant before ``t0``, ``C / (gamma + T - t)`` after.

    Candidate ``t0`` are the integer seconds in ``[t_min, t_max]`` (default
    ``T - 10``) that leave at least ``min_post`` points at or after ``t0``.
    Both pieces minimize absolute errors; ties go to the later ``t0``.  With
    ``continuous`` the constant is the value of the deadline law at ``t0``;
    otherwise it is a free level (the median of the pre-``t0`` points).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (t >= t_min) & (t <= T)
    t, y = t[ok], y[ok]
    order = np.argsort(t)
    t, y = t[order], y[order]
    t_max = T - 10.0 if t_max is None else t_max
    cands = np.arange(math.ceil(t_min), math.floor(t_max) + 1, dtype=float)
    cands = cands[(len(t) - np.searchsorted(t, cands, "left")) >= min_post]
    if cands.size == 0:
        raise ConfigurationError(f"fewer than {min_post} points after every candidate change point")
    gammas = np.geomspace(1e-3, gamma_max, 141)

    def piece(t0, g):
        k = int(np.searchsorted(t, t0, "left"))
        if continuous:
            C, err = _deadline_l1(t, y, T, g, t0)
            return C, err, None
        level = float(np.median(y[:k])) if k else 0.0
        C, err = _deadline_l1(t[k:], y[k:], T, g)
        return C, err + np.abs(y[:k] - level).sum(), level

    best = None
    for t0 in cands:
        C, err, _ = piece(t0, gammas)
        j = int(np.argmin(err))
        if best is None or err[j] <= best[0] * (1 + 1e-12):
            best = (err[j], t0, gammas[j])
    _, t0, g = best
    # refine gamma at the chosen change point
    lo, hi = g / 3.0, min(g * 3.0, gamma_max)

    def obj(gm):
        return float(piece(t0, np.array([gm]))[1][0])

    res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6 * hi})
    if res.fun < obj(g):
        g = float(res.x)
    C, err, level = piece(t0, np.array([g]))
    C = float(C[0])
    if level is None:
        level = C / (g + T - t0)
    return DeadlineFit(C=C, gamma=float(g), t0=float(t0), l1=float(err[0]), level=float(level))


def nu_ratio(ticks: TickStream, window_seconds: float, x_band: float, T: Optional[float] = None,
             side: Optional[int] = None) -> float:
    """Submissions over cancellations with ``|x| <= x_band`` in ``[T - window, T]``."""
    T = ticks.T if T is None else T
    t = ticks.t
    m = (t >= T - window_seconds) & (t <= T)
    if side is not None:
        m &= ticks.side == side
    x = np.log(ticks.price / ticks.ref_price)
    m &= np.abs(x) <= x_band + 1e-15
    subs = int(np.sum(m & (ticks.kind == SUBMIT)))
    cans = int(np.sum(m & (ticks.kind == CANCEL)))
    if cans == 0:
        warnings.warn("no cancellations in window; ratio is infinite", RuntimeWarning)
        return math.inf
    return subs / cans
