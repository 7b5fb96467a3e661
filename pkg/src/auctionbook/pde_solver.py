"""Numerical integration of the coupled sell-side revealed/latent system.

Strang splitting: the linear reaction pair is advanced exactly per node (using
time-integrated rates), diffusion by Crank-Nicolson (or an explicit step when
asked).  Boundary conditions: revealed book zero-flux at both edges; latent
book pinned to ``b`` on the left and with slope ``a`` on the right.

One integration is single-threaded and deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError, NumericalFailure
from .io import write_table
from .model_core import (
    DEFAULT_T,
    CancellationRateParams,
    DiffusionSchedule,
    LatentBookParams,
    SubmissionRateParams,
    eval_cancellation_rate,
    eval_latent_initial,
    eval_submission_rate,
)

# Gauss-Legendre nodes/weights on [0, 1]
_GL_NODES = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

NEGATIVE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PriceGrid:
    x_min: float = -0.05
    x_max: float = 0.05
    n: int = 1001

    def __post_init__(self):
        if not (self.x_min < 0 < self.x_max):
            raise ConfigurationError("grid must straddle x = 0")
        if self.n < 3:
            raise ConfigurationError("grid needs at least 3 points")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)


@dataclass
class DensityField:
    grid: PriceGrid
    rho_r: np.ndarray
    rho_l: np.ndarray
    t: float = 0.0

    @classmethod
    def initial(cls, grid: PriceGrid, latent: LatentBookParams, t: float = 0.0) -> "DensityField":
        """Empty revealed book on top of the linear latent book."""
        x = grid.x
        return cls(grid, np.zeros_like(x), np.asarray(eval_latent_initial(x, latent)), t)

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.rho_r.copy(), self.rho_l.copy(), self.t)


class DeadlineRate:
    """``C * profile(x) / (gamma + T - max(t, t0))``: constant before ``t0``."""

    def __init__(self, C, gamma, t0, T=DEFAULT_T, profile=None):
        self.C, self.gamma, self.t0, self.T = C, gamma, t0, T
        self.profile = profile

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        prof = np.ones_like(x) if self.profile is None else np.asarray(
            self.profile(x) if callable(self.profile) else self.profile, dtype=float)
        return self.C * prof / (self.gamma + self.T - np.maximum(t, self.t0))


class RateModel:
    """Submission and cancellation intensities as functions of ``(x, t)``.

    Each side is a :class:`SubmissionRateParams` / :class:`CancellationRateParams`,
    a callable ``f(x, t)``, or a time-independent profile (scalar, array over the
    grid, or callable of ``x`` wrapped with :meth:`static`).  ``vectorized``
    declares that the callables broadcast over an array ``t``; ``T`` is the
    auction deadline, after which a simulator freezes the rates.
    """

    def __init__(self, submit: Callable, cancel: Callable, time_independent: bool = False,
                 breakpoints: Sequence[float] = (), T: float = DEFAULT_T, vectorized: bool = False):
        self._submit = submit
        self._cancel = cancel
        self.time_independent = time_independent
        self.breakpoints = tuple(sorted(breakpoints))
        self.T = T
        self.vectorized = vectorized

    @classmethod
    def from_params(cls, submission: SubmissionRateParams,
                    cancellation: CancellationRateParams) -> "RateModel":
        T = submission.T
        breaks = [submission.t_r0]
        if cancellation.kind == "deadline":
            breaks.append(cancellation.t_l0)

        def submit(x, t):
            return eval_submission_rate(x, np.clip(t, 0.0, T), submission)

        def cancel(x, t):
            return eval_cancellation_rate(x, np.clip(t, 0.0, cancellation.T), cancellation)

        model = cls(submit, cancel, breakpoints=breaks, T=T, vectorized=True)
        model.submission = submission
        model.cancellation = cancellation
        return model

    @classmethod
    def static(cls, submit, cancel) -> "RateModel":
        def wrap(profile):
            if callable(profile):
                return lambda x, t: np.asarray(profile(x), dtype=float)
            return lambda x, t: np.broadcast_to(np.asarray(profile, dtype=float),
                                                np.shape(x)).astype(float)
        return cls(wrap(submit), wrap(cancel), time_independent=True, vectorized=True)

    @classmethod
    def deadline(cls, C_r, C_l, gamma, t0, T=DEFAULT_T, Gamma_r=None, Gamma_l=None) -> "RateModel":
        return cls(DeadlineRate(C_r, gamma, t0, T, Gamma_r), DeadlineRate(C_l, gamma, t0, T, Gamma_l),
                   breakpoints=[t0], T=T, vectorized=True)

    @staticmethod
    def _pairwise(fn, vectorized, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if vectorized:
            return np.broadcast_to(np.asarray(fn(x, t), dtype=float), np.broadcast(x, t).shape)
        xb, tb = np.broadcast_arrays(x, t)
        return np.array([float(fn(xi, ti)) for xi, ti in zip(xb.ravel(), tb.ravel())]).reshape(xb.shape)

    def submit_at(self, x, t) -> np.ndarray:
        """Submission rate at paired ``(x, t)`` arrays (times past ``T`` frozen)."""
        return self._pairwise(self._submit, self.vectorized, x, np.minimum(t, self.T))

    def cancel_at(self, x, t) -> np.ndarray:
        return self._pairwise(self._cancel, self.vectorized, x, np.minimum(t, self.T))

    def submit(self, x, t) -> np.ndarray:
        return np.asarray(self._submit(x, t), dtype=float)

    def cancel(self, x, t) -> np.ndarray:
        return np.asarray(self._cancel(x, t), dtype=float)

    def integrated(self, x, t1: float, t2: float):
        """Time integrals of both rates over ``[t1, t2]`` at each ``x``."""
        h = t2 - t1
        if self.time_independent:
            return self.submit(x, t1) * h, self.cancel(x, t1) * h
        A = 0.0
        B = 0.0
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            tq = t1 + node * h
            A = A + weight * self.submit(x, tq)
            B = B + weight * self.cancel(x, tq)
        return A * h, B * h

    def integrated_steps(self, x, nodes):
        """:meth:`integrated` over every interval of ``nodes`` at once, shape (steps, len(x))."""
        x = np.asarray(x, dtype=float)[None, :]
        t1 = np.asarray(nodes[:-1], dtype=float)[:, None]
        h = np.diff(np.asarray(nodes, dtype=float))[:, None]
        if self.time_independent:
            return self.submit(x[0], t1[0, 0]) * h, self.cancel(x[0], t1[0, 0]) * h
        A = 0.0
        B = 0.0
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            tq = t1 + node * h
            A = A + weight * self._pairwise(self._submit, self.vectorized, x, tq)
            B = B + weight * self._pairwise(self._cancel, self.vectorized, x, tq)
        return A * h, B * h


def reaction_step(rho_r, rho_l, A, B):
    """Exact update of the reveal/unreveal pair given integrated rates.

    Exact when the two rates share their time dependence over the step;
    the node total ``rho_r + rho_l`` is preserved.
    """
    total = rho_r + rho_l
    s = A + B
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(s > 0, A / np.where(s > 0, s, 1.0), 0.0)
    eq = frac * total
    new_r = eq + (rho_r - eq) * np.exp(-s)
    return new_r, total - new_r


def _laplacian_bands(n, dx, D, h, theta, kind):
    """Bands of ``I - theta*h*D*Lap`` with the boundary rows for ``kind``."""
    mu = theta * h * D / dx**2
    lower = np.full(n, -mu)
    upper = np.full(n, -mu)
    diag = np.full(n, 1.0 + 2.0 * mu)
    if kind == "revealed":
        upper[0] = -2.0 * mu
        lower[n - 1] = -2.0 * mu
    else:
        diag[0], upper[0] = 1.0, 0.0
        lower[n - 1] = -2.0 * mu
    return lower, diag, upper


def _apply_laplacian(u, dx, kind, slope):
    lap = np.empty_like(u)
    lap[1:-1] = u[2:] - 2.0 * u[1:-1] + u[:-2]
    if kind == "revealed":
        lap[0] = 2.0 * (u[1] - u[0])
        lap[-1] = 2.0 * (u[-2] - u[-1])
    else:
        lap[0] = 0.0
        lap[-1] = 2.0 * (u[-2] - u[-1]) + 2.0 * dx * slope
    return lap / dx**2


def diffusion_step(u, dx, D, h, kind, latent=None, scheme="cn"):
    """Advance ``u_t = D u_xx`` by ``h`` with the boundary handling of ``kind``
    (``"revealed"`` or ``"latent"``)."""
    if D <= 0:
        return u
    slope = latent.a if kind == "latent" else 0.0
    if scheme == "explicit":
        out = u + h * D * _apply_laplacian(u, dx, kind, slope)
        if kind == "latent":
            out[0] = latent.b
        return out
    rhs = u + 0.5 * h * D * _apply_laplacian(u, dx, kind, slope)
    if kind == "latent":
        rhs[-1] += 0.5 * h * D * 2.0 * slope / dx
        rhs[0] = latent.b
    lower, diag, upper = _laplacian_bands(len(u), dx, D, h, 0.5, kind)
    return kernels.solve_tridiagonal(lower, diag, upper, rhs)


def _infer_latent(field: DensityField) -> LatentBookParams:
    x, l = field.grid.x, field.rho_l
    a = (l[-1] - l[-2]) / (x[-1] - x[-2])
    return LatentBookParams(a=max(a, 1e-300), b=max(float(l[0]), 0.0))


def _check_nonnegative(*arrays, t):
    for arr in arrays:
        low = arr.min()
        if low < -NEGATIVE_TOLERANCE:
            raise NumericalFailure(f"negative density {low:.3e} at t={t:.6g}")
        if low < 0:
            np.maximum(arr, 0.0, out=arr)


def _time_nodes(t0, t_end, dt, extra):
    n = max(1, int(math.ceil((t_end - t0) / dt - 1e-9)))
    nodes = set(np.linspace(t0, t_end, n + 1).tolist())
    nodes.update(t for t in extra if t0 < t < t_end)
    nodes = np.array(sorted(nodes))
    # drop near-duplicates that would create vanishing steps
    keep = np.concatenate([[True], np.diff(nodes) > 1e-9 * max(1.0, abs(t_end))])
    return nodes[keep]


def integrate(initial: DensityField, rates: RateModel, d: DiffusionSchedule, t_end: float,
              dt: float = 0.05, snapshot_times: Optional[Iterable[float]] = None,
              latent: Optional[LatentBookParams] = None, scheme: str = "cn") -> list:
    """Integrate from ``initial.t`` to ``t_end`` and return fields at ``snapshot_times``.

    ``latent`` supplies the boundary slope/baseline; when omitted they are read
    off the edges of ``initial.rho_l``.  ``scheme`` is ``"cn"`` or
    ``"explicit"`` for the diffusion sub-step.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be > 0")
    if scheme not in ("cn", "explicit"):
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    t0 = float(initial.t)
    if t_end < t0:
        raise ConfigurationError("t_end precedes the initial time")
    snaps = sorted(float(s) for s in (snapshot_times if snapshot_times is not None else [t_end]))
    tol = 1e-9 * max(1.0, abs(t_end))
    if snaps and (snaps[0] < t0 - tol or snaps[-1] > t_end + tol):
        raise ConfigurationError("snapshot times must lie in [initial.t, t_end]")
    grid = initial.grid
    dx = grid.dx
    if scheme == "explicit":
        dmax = max(d.max_revealed, d.latent(t0))
        if dmax * dt / dx**2 > 0.5:
            raise ConfigurationError(
                f"explicit diffusion unstable: D*dt/dx^2 = {dmax * dt / dx**2:.3g} > 0.5")
    if latent is None:
        latent = _infer_latent(initial)
    diffusive = d.kind != "zero" and (d.max_revealed > 0 or d.D_l > 0)

    x = grid.x
    r = np.array(initial.rho_r, dtype=float)
    l = np.array(initial.rho_l, dtype=float)
    nodes = _time_nodes(t0, t_end, dt, list(snaps) + list(rates.breakpoints))
    out = []
    pending = list(snaps)

    def emit(t):
        while pending and abs(pending[0] - t) <= tol:
            out.append(DensityField(grid, r.copy(), l.copy(), pending.pop(0)))

    emit(t0)
    if not diffusive and rates.vectorized:
        # reaction only: all step integrals in batches, then the exact recurrence
        batch = 256
        for b0 in range(0, len(nodes) - 1, batch):
            seg = nodes[b0:b0 + batch + 1]
            A, B = rates.integrated_steps(x, seg)
            for i, t2 in enumerate(seg[1:]):
                r, l = reaction_step(r, l, A[i], B[i])
                _check_nonnegative(r, l, t=t2)
                emit(t2)
        return out
    if rates.vectorized:
        # Strang steps with the two half-step integrals of each step precomputed in batches
        batch = 256
        for b0 in range(0, len(nodes) - 1, batch):
            seg = nodes[b0:b0 + batch + 1]
            mids = 0.5 * (seg[:-1] + seg[1:])
            half = np.empty(2 * len(seg) - 1)
            half[0::2], half[1::2] = seg, mids
            A, B = rates.integrated_steps(x, half)
            for i, (t1, t2) in enumerate(zip(seg[:-1], seg[1:])):
                h = t2 - t1
                tm = mids[i]
                r, l = reaction_step(r, l, A[2 * i], B[2 * i])
                r = diffusion_step(r, dx, d.revealed(tm), h, "revealed", scheme=scheme)
                l = diffusion_step(l, dx, d.latent(tm), h, "latent", latent, scheme=scheme)
                r, l = reaction_step(r, l, A[2 * i + 1], B[2 * i + 1])
                _check_nonnegative(r, l, t=t2)
                emit(t2)
        return out
    for t1, t2 in zip(nodes[:-1], nodes[1:]):
        h = t2 - t1
        if not diffusive:
            A, B = rates.integrated(x, t1, t2)
            r, l = reaction_step(r, l, A, B)
        else:
            tm = 0.5 * (t1 + t2)
            A, B = rates.integrated(x, t1, tm)
            r, l = reaction_step(r, l, A, B)
            r = diffusion_step(r, dx, d.revealed(tm), h, "revealed", scheme=scheme)
            l = diffusion_step(l, dx, d.latent(tm), h, "latent", latent, scheme=scheme)
            A, B = rates.integrated(x, tm, t2)
            r, l = reaction_step(r, l, A, B)
        _check_nonnegative(r, l, t=t2)
        emit(t2)
    return out


def write_snapshots(fields: Sequence[DensityField], path) -> None:
    """Delimited table with columns ``t,x,rho_r,rho_l``, one row per (time, node)."""
    t = np.concatenate([np.full(f.grid.n, f.t) for f in fields])
    x = np.concatenate([f.grid.x for f in fields])
    rr = np.concatenate([f.rho_r for f in fields])
    rl = np.concatenate([f.rho_l for f in fields])
    write_table(path, ["t", "x", "rho_r", "rho_l"], [t, x, rr, rl])


@dataclass(frozen=True)
class PointwiseParams:
    """Parameters of the single-price revealed-density ODEs.

    ``variant="distinct-gammas"`` uses deadline cancellations ``C_l/(gamma_l+T-t)``;
    ``variant="constant-cancel"`` uses the constant ``nu_l``.
    """

    C_r: float
    gamma_r: float
    C_l: float = 0.0
    gamma_l: float = 0.0
    nu_l: float = 0.0
    T: float = DEFAULT_T
    rho_sigma: float = 1.0
    Gamma_r: float = 1.0
    Gamma_l: float = 1.0
    rho_init: float = 0.0


def integrate_ode_pointwise(x: float, variant: str, params: PointwiseParams,
                            t_span: tuple, dt: float):
    """Classical RK4 trajectory of the revealed density at one price.

    Returns ``(t, rho)`` arrays.  ``x`` only labels the trajectory; price
    dependence enters through ``Gamma_r``/``Gamma_l``.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be > 0")
    if variant not in ("distinct-gammas", "constant-cancel"):
        raise ConfigurationError(f"unknown variant {variant!r}")
    p = params
    t_a, t_b = map(float, t_span)
    limit = p.T + p.gamma_r
    if variant == "distinct-gammas":
        limit = min(limit, p.T + p.gamma_l)
    if t_b >= limit or t_a >= limit:
        raise DomainError(f"t_span reaches the singular time {limit}")

    def submit(t):
        return p.C_r * p.Gamma_r / (p.gamma_r + p.T - t)

    def cancel(t):
        if variant == "constant-cancel":
            return p.nu_l * p.Gamma_l
        return p.C_l * p.Gamma_l / (p.gamma_l + p.T - t)

    def f(t, rho):
        nr = submit(t)
        return nr * p.rho_sigma - (nr + cancel(t)) * rho

    n = max(1, int(math.ceil((t_b - t_a) / dt - 1e-12)))
    ts = np.linspace(t_a, t_b, n + 1)
    rho = np.empty(n + 1)
    rho[0] = p.rho_init
    for i in range(n):
        t, h, y = ts[i], ts[i + 1] - ts[i], rho[i]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        rho[i + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return ts, rho
