"""Model parameters and closed-form solutions of the latent/revealed auction book.

Everything here is a pure function of immutable parameter records.  Prices are
log-prices ``x`` measured from the indicative price; times are seconds from the
start of the accumulation period, with the auction deadline at ``T``.
Functions accept scalars or numpy arrays for ``x``; the rate functions also
broadcast over an array ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigurationError, DomainError

ArrayLike = Union[float, np.ndarray]
Profile = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]

DEFAULT_T = 300.0


def _check_time(t, T):
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0.0) or np.any(tt > T):
        raise DomainError(f"time {t} outside [0, {T}]")


def _profile(profile: Profile, x: np.ndarray) -> np.ndarray:
    if profile is None:
        return np.ones_like(x)
    if callable(profile):
        return np.asarray(profile(x), dtype=float)
    return np.broadcast_to(np.asarray(profile, dtype=float), x.shape)


@dataclass(frozen=True)
class LatentBookParams:
    """Linear latent book ``max(a*x + b, b)``."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigurationError(f"latent slope a must be > 0, got {self.a}")
        if not self.b >= 0:
            raise ConfigurationError(f"latent baseline b must be >= 0, got {self.b}")


@dataclass(frozen=True)
class SubmissionRateParams:
    """Two-exponential submission rate with a deadline-accelerated fast term.

    For ``x >= 0`` the rate is a weighted sum of a fast term (price scale
    ``x_r``, growing as ``1/(gamma_r + T - t)`` after ``t_r0``) and a slow term
    (price scale ``k*x_r``, frozen at its ``t_r0`` value).  On ``[-x_0, 0)`` a
    single exponential joins the value at ``0`` to the far plateau
    ``m*C_r/gamma_r`` used for ``x < -x_0``.
    """

    C_r: float
    x_r: float
    k: float
    w: float
    gamma_r: float
    t_r0: float
    x_0: float
    m: float
    T: float = DEFAULT_T

    def __post_init__(self):
        checks = [
            (self.C_r > 0, "C_r must be > 0"),
            (self.x_r > 0, "x_r must be > 0"),
            (self.k >= 1, "k must be >= 1"),
            (0 <= self.w <= 1, "w must lie in [0, 1]"),
            (self.gamma_r > 0, "gamma_r must be > 0 (the far plateau is m*C_r/gamma_r)"),
            (0 <= self.t_r0 <= self.T, "t_r0 must lie in [0, T]"),
            (self.x_0 > 0, "x_0 must be > 0"),
            (self.m > 0, "m must be > 0"),
            (self.T > 0, "T must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)

    @property
    def plateau(self) -> float:
        return self.m * self.C_r / self.gamma_r

    def fast_amplitude(self, t):
        return self.w * self.C_r / (self.gamma_r + self.T - np.maximum(t, self.t_r0))

    @property
    def slow_amplitude(self) -> float:
        return (1.0 - self.w) * self.C_r / (self.gamma_r + self.T - self.t_r0)

    def A_star(self, t):
        """Value at ``x = 0``; continuity fixes the negative-side amplitude to it."""
        return self.fast_amplitude(t) + self.slow_amplitude

    def x_r_star(self, t: float) -> float:
        """Negative-side price scale; ``inf`` when the branch is flat."""
        ratio = math.log(float(self.A_star(t)) / self.plateau)
        return math.inf if ratio == 0 else self.x_0 / ratio


@dataclass(frozen=True)
class CancellationRateParams:
    """Either a constant rate ``nu_l`` or the deadline form
    ``C_l * profile(x) / (gamma_l + T - max(t, t_l0))``."""

    nu_l: Optional[float] = None
    C_l: Optional[float] = None
    gamma_l: Optional[float] = None
    t_l0: Optional[float] = None
    T: float = DEFAULT_T
    profile: Optional[Profile] = field(default=None, compare=False)

    def __post_init__(self):
        if self.nu_l is not None:
            if self.C_l is not None:
                raise ConfigurationError("give either nu_l or the deadline form, not both")
            if not self.nu_l >= 0:
                raise ConfigurationError("nu_l must be >= 0")
        else:
            if self.C_l is None or self.gamma_l is None or self.t_l0 is None:
                raise ConfigurationError("deadline form needs C_l, gamma_l and t_l0")
            if not self.C_l >= 0 or not self.gamma_l > 0:
                raise ConfigurationError("deadline form needs C_l >= 0 and gamma_l > 0")
            if not 0 <= self.t_l0 <= self.T:
                raise ConfigurationError("t_l0 must lie in [0, T]")

    @classmethod
    def constant(cls, nu_l: float, T: float = DEFAULT_T) -> "CancellationRateParams":
        return cls(nu_l=nu_l, T=T)

    @classmethod
    def deadline(cls, C_l, gamma_l, t_l0, T=DEFAULT_T, profile=None) -> "CancellationRateParams":
        return cls(C_l=C_l, gamma_l=gamma_l, t_l0=t_l0, T=T, profile=profile)

    @property
    def kind(self) -> str:
        return "constant" if self.nu_l is not None else "deadline"


@dataclass(frozen=True)
class DiffusionSchedule:
    """Revealed/latent diffusivities in (log-price)^2 per second.

    ``kind`` is ``"zero"``, ``"constant"`` (``D_r``, ``D_l``) or ``"time"``
    (``D_0`` up to one second, then a ``1/t`` interpolation to ``D_T`` reached
    at ``T_s``; ``D_l`` constant).
    """

    kind: str = "zero"
    D_r: float = 0.0
    D_l: float = 0.0
    D_0: float = 0.0
    D_T: float = 0.0
    T_s: float = 180.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "time"):
            raise ConfigurationError(f"unknown diffusion kind {self.kind!r}")
        if min(self.D_r, self.D_l, self.D_0, self.D_T) < 0:
            raise ConfigurationError("diffusivities must be >= 0")
        if self.kind == "time":
            if self.D_T > self.D_0:
                raise ConfigurationError("time-varying schedule needs D_T <= D_0")
            if not self.T_s > 1:
                raise ConfigurationError("saturation time T_s must exceed 1 second")

    @classmethod
    def zero(cls) -> "DiffusionSchedule":
        return cls("zero")

    @classmethod
    def constant(cls, D_r: float, D_l: float) -> "DiffusionSchedule":
        return cls("constant", D_r=D_r, D_l=D_l)

    @classmethod
    def time_varying(cls, D_0, D_T, T_s=180.0, D_l=0.0) -> "DiffusionSchedule":
        return cls("time", D_l=D_l, D_0=D_0, D_T=D_T, T_s=T_s)

    def revealed(self, t: float) -> float:
        return eval_diffusion_schedule(t, self)

    def latent(self, t: float) -> float:
        return 0.0 if self.kind == "zero" else self.D_l

    @property
    def max_revealed(self) -> float:
        return {"zero": 0.0, "constant": self.D_r, "time": self.D_0}[self.kind]


@dataclass(frozen=True)
class StationaryFitParams:
    """Parameters of the two-exponential stationary book; ``scaled_*`` carry
    the ``nu_r/nu_l`` factor."""

    scaled_a: float
    scaled_b: float
    x_r: float
    k: float
    w: float

    def __post_init__(self):
        if not (self.scaled_a > 0 and self.scaled_b >= 0 and self.x_r > 0
                and self.k >= 1 and 0 <= self.w <= 1):
            raise ConfigurationError(f"invalid stationary parameters {self}")


def eval_latent_initial(x: ArrayLike, p: LatentBookParams) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    out = np.maximum(p.a * x + p.b, p.b)
    return out if out.ndim else float(out)


def eval_submission_rate(x: ArrayLike, t: float, p: SubmissionRateParams) -> ArrayLike:
    """Submission intensity per unit of latent density, in 1/second."""
    _check_time(t, p.T)
    x = np.asarray(x, dtype=float)
    fast = p.fast_amplitude(t)
    slow = p.slow_amplitude
    xp = np.maximum(x, 0.0)
    positive = fast * np.exp(-xp / p.x_r) + slow * np.exp(-xp / (p.k * p.x_r))
    A = fast + slow
    plateau = p.plateau
    # A * (plateau/A)^(-x/x_0) joins A at 0 and the plateau at -x_0
    xm = np.clip(x, -p.x_0, 0.0)
    middle = A * np.exp(xm / p.x_0 * np.log(A / plateau))
    out = np.where(x >= 0, positive, np.where(x >= -p.x_0, middle, plateau))
    return out if out.ndim else float(out)


def eval_cancellation_rate(x: ArrayLike, t: float, p: CancellationRateParams) -> ArrayLike:
    _check_time(t, p.T)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if p.kind == "constant":
        out = np.full(np.broadcast(x, t).shape, float(p.nu_l))
    else:
        out = p.C_l * _profile(p.profile, x) / (p.gamma_l + p.T - np.maximum(t, p.t_l0))
    return out if out.ndim else float(out)


def eval_stationary_revealed(x: ArrayLike, f: StationaryFitParams) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    shape = f.w * np.exp(-ax / f.x_r) + (1.0 - f.w) * np.exp(-ax / (f.k * f.x_r))
    out = np.maximum(f.scaled_a * x + f.scaled_b, f.scaled_b) * shape
    return out if out.ndim else float(out)


def eval_time_independent_dynamic(x: ArrayLike, t: float, submit: Profile, cancel: Profile,
                                  latent: LatentBookParams) -> ArrayLike:
    """Revealed density from an empty book under time-independent rates.

    ``submit`` and ``cancel`` are the rates at ``x``: scalars, arrays or
    callables of ``x``.
    """
    if t < 0:
        raise DomainError("t must be >= 0")
    x = np.asarray(x, dtype=float)
    nr = _profile(submit, x)
    nl = _profile(cancel, x)
    total = np.maximum(latent.a * x + latent.b, latent.b)
    s = nr + nl
    with np.errstate(divide="ignore", invalid="ignore"):
        # -expm1(-s t)/s stays accurate when s*t is tiny
        growth = np.where(s > 0, -np.expm1(-s * t) / np.where(s > 0, s, 1.0), t)
    out = nr * total * growth
    return out if out.ndim else float(out)


def eval_deadline_solution(x: ArrayLike, t: float, C_r: float, C_l: float, gamma: float,
                           t0: float, latent: LatentBookParams, T: float = DEFAULT_T,
                           Gamma_r: Profile = None, Gamma_l: Profile = None) -> ArrayLike:
    """Revealed density after activation of deadline rates sharing ``gamma`` and ``t0``.

    Before ``t0`` both rates hold their activation values, so the starting
    point is the time-independent solution evaluated at ``t0``.
    """
    if t < t0:
        raise DomainError(f"t={t} precedes activation t0={t0}")
    if t > T + gamma:
        raise DomainError(f"t={t} beyond the perceived deadline T+gamma={T + gamma}")
    x = np.asarray(x, dtype=float)
    gr = C_r * _profile(Gamma_r, x)
    gl = C_l * _profile(Gamma_l, x)
    horizon0 = gamma + T - t0
    rho0 = np.asarray(eval_time_independent_dynamic(x, t0, gr / horizon0, gl / horizon0, latent))
    total = np.maximum(latent.a * x + latent.b, latent.b)
    s = gr + gl
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_T = np.where(s > 0, gr * total / np.where(s > 0, s, 1.0), 0.0)
    power = ((gamma + T - t) / horizon0) ** s
    out = rho_T - (rho_T - rho0) * power
    return out if out.ndim else float(out)


def eval_diffusion_schedule(t: float, d: DiffusionSchedule) -> float:
    """Revealed diffusivity at time ``t``."""
    if d.kind == "zero":
        return 0.0
    if d.kind == "constant":
        return d.D_r
    if t <= 1.0:
        return d.D_0
    if t >= d.T_s:
        return d.D_T
    return (d.D_T - d.D_0) * (1.0 / t - 1.0) / (1.0 / d.T_s - 1.0) + d.D_0
