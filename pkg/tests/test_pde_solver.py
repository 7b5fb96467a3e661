import numpy as np
import pytest
from scipy.special import ndtr

from auctionbook.errors import ConfigurationError, DomainError, NumericalFailure
from auctionbook.io import read_table, float_column
from auctionbook.model_core import (
    DiffusionSchedule,
    LatentBookParams,
    eval_deadline_solution,
    eval_time_independent_dynamic,
)
from auctionbook.pde_solver import (
    DensityField,
    PointwiseParams,
    PriceGrid,
    RateModel,
    integrate,
    integrate_ode_pointwise,
    write_snapshots,
)

LATENT = LatentBookParams(6.77, 0.0058)


def submit_profile(x):
    return 0.05 * np.exp(-np.abs(x) / 0.003) + 0.002


def test_grid_invariants():
    g = PriceGrid()
    assert g.dx == pytest.approx(1e-4)
    with pytest.raises(ConfigurationError):
        PriceGrid(0.01, 0.05, 11)
    with pytest.raises(ConfigurationError):
        PriceGrid(-1, 1, 2)


def test_time_independent_matches_closed_form():
    grid = PriceGrid(-0.03, 0.03, 301)
    field = DensityField.initial(grid, LATENT)
    rates = RateModel.static(submit_profile, 0.023)
    times = [10.0, 60.0, 150.0]
    out = integrate(field, rates, DiffusionSchedule.zero(), 150.0, 0.5, times, latent=LATENT)
    for f in out:
        exact = eval_time_independent_dynamic(grid.x, f.t, submit_profile(grid.x), 0.023, LATENT)
        assert np.max(np.abs(f.rho_r - exact) / exact) <= 1e-4


def test_linear_latent_unchanged_by_diffusion():
    grid = PriceGrid(-0.05, 0.05, 201)
    a, b = 2.0, 0.5
    latent = LatentBookParams(a, b)
    # linear on the whole grid, with the left edge value as baseline
    x = grid.x
    rho_l = a * (x - grid.x_min) + b
    field = DensityField(grid, np.zeros_like(x), rho_l, 0.0)
    rates = RateModel.static(0.0, 0.0)
    out = integrate(field, rates, DiffusionSchedule.constant(0.0, 1e-5), 100.0, 1.0, [50.0, 100.0],
                    latent=latent)
    for f in out:
        np.testing.assert_allclose(f.rho_l, rho_l, rtol=1e-12, atol=1e-14)


def test_deadline_matches_closed_form():
    grid = PriceGrid(-0.02, 0.02, 201)
    C_r, C_l, g, t0 = 0.6, 0.3, 5.0, 200.0
    field = DensityField.initial(grid, LATENT)
    rates = RateModel.deadline(C_r, C_l, g, t0)
    times = [220.0, 260.0, 300.0]
    out = integrate(field, rates, DiffusionSchedule.zero(), 300.0, 0.5, times, latent=LATENT)
    for f in out:
        exact = eval_deadline_solution(grid.x, f.t, C_r, C_l, g, t0, LATENT)
        assert np.max(np.abs(f.rho_r - exact) / exact) <= 1e-4


def test_mass_exchange_without_diffusion():
    grid = PriceGrid(-0.02, 0.02, 101)
    field = DensityField.initial(grid, LATENT)
    total0 = field.rho_r + field.rho_l
    rates = RateModel(lambda x, t: submit_profile(x) * (1 + t / 100), lambda x, t: 0.02 + 0 * x)
    out = integrate(field, rates, DiffusionSchedule.zero(), 300.0, 1.0, [100.0, 300.0])
    for f in out:
        np.testing.assert_allclose(f.rho_r + f.rho_l, total0, rtol=1e-10)


def _sum_oracle(x, t, a, b, D):
    sigma = np.sqrt(2 * D * t)
    z = x / sigma
    return b + a * (x * ndtr(z) + sigma * np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi))


def _convergence_error(n, dt, D=2e-6, nr=0.05, nl=0.02, t_end=6.0):
    grid = PriceGrid(-0.04, 0.04, n)
    x = grid.x
    a, b = LATENT.a, LATENT.b
    s = nr + nl
    t1 = 1.0
    # with equal diffusivities the revealed share of the sum field is (nr/s)(1-e^{-st})
    total = _sum_oracle(x, t1, a, b, D)
    frac = nr / s * (1 - np.exp(-s * t1))
    field = DensityField(grid, frac * total, (1 - frac) * total, t1)
    out = integrate(field, RateModel.static(nr, nl), DiffusionSchedule.constant(D, D), t_end, dt,
                    [t_end], latent=LATENT)
    exact = nr / s * (1 - np.exp(-s * t_end)) * _sum_oracle(x, t_end, a, b, D)
    mask = np.abs(x) <= 0.02
    return np.max(np.abs(out[0].rho_r - exact)[mask])


def test_convergence_order():
    e1 = _convergence_error(201, 0.2)
    e2 = _convergence_error(401, 0.1)
    order = np.log2(e1 / e2)
    assert order >= 1.8


def test_long_time_stationary():
    # stationary balance: revealed = (submit/cancel) * latent at every node
    grid = PriceGrid(-0.02, 0.02, 101)
    nl = 0.05
    nr = submit_profile(grid.x)
    field = DensityField.initial(grid, LATENT)
    t_end = 50.0 / min(nr.min(), nl)
    out = integrate(field, RateModel.static(submit_profile, nl), DiffusionSchedule.zero(),
                    t_end, 25.0, [t_end], latent=LATENT)
    np.testing.assert_allclose(out[0].rho_r, nr / nl * out[0].rho_l, rtol=1e-3)


def test_latent_right_slope():
    grid = PriceGrid(-0.02, 0.02, 201)
    field = DensityField.initial(grid, LATENT)
    out = integrate(field, RateModel.static(submit_profile, 0.023), DiffusionSchedule.constant(1e-8, 5e-8),
                    300.0, 1.0, [300.0], latent=LATENT)
    slope = (out[0].rho_l[-1] - out[0].rho_l[-2]) / grid.dx
    assert slope == pytest.approx(LATENT.a, rel=0.05)
    # pinned by the diffusion sub-step; the trailing reaction half-step moves it slightly
    assert out[0].rho_l[0] == pytest.approx(LATENT.b, rel=1e-3)


def test_explicit_stability_check():
    grid = PriceGrid(-0.01, 0.01, 201)
    field = DensityField.initial(grid, LATENT)
    with pytest.raises(ConfigurationError):
        integrate(field, RateModel.static(0.1, 0.1), DiffusionSchedule.constant(1e-5, 0.0), 1.0, 0.1,
                  scheme="explicit")


def test_explicit_agrees_with_cn():
    grid = PriceGrid(-0.02, 0.02, 81)
    field = DensityField.initial(grid, LATENT)
    d = DiffusionSchedule.constant(1e-7, 1e-7)
    rates = RateModel.static(submit_profile, 0.023)
    cn = integrate(field, rates, d, 50.0, 0.2, [50.0], latent=LATENT)[0]
    ex = integrate(field, rates, d, 50.0, 0.2, [50.0], latent=LATENT, scheme="explicit")[0]
    np.testing.assert_allclose(ex.rho_r, cn.rho_r, rtol=1e-3, atol=1e-9)


def test_negative_density_raises():
    grid = PriceGrid(-0.01, 0.01, 21)
    field = DensityField(grid, -np.ones(21), np.ones(21), 0.0)
    with pytest.raises(NumericalFailure):
        integrate(field, RateModel.static(0.0, 0.0), DiffusionSchedule.zero(), 1.0, 0.5)


def test_snapshot_range_checked():
    grid = PriceGrid(-0.01, 0.01, 21)
    field = DensityField.initial(grid, LATENT)
    with pytest.raises(ConfigurationError):
        integrate(field, RateModel.static(0.1, 0.1), DiffusionSchedule.zero(), 1.0, 0.5, [2.0])
    with pytest.raises(ConfigurationError):
        integrate(field, RateModel.static(0.1, 0.1), DiffusionSchedule.zero(), 1.0, 0.0)


def test_time_varying_diffusion_runs():
    grid = PriceGrid(-0.02, 0.02, 201)
    field = DensityField.initial(grid, LATENT)
    d = DiffusionSchedule.time_varying(1.2e-5, 2.2e-8, 180.0, D_l=4.8e-9)
    out = integrate(field, RateModel.static(submit_profile, 0.023), d, 300.0, 0.5, [10.0, 300.0],
                    latent=LATENT)
    assert all(np.all(f.rho_r >= 0) for f in out)
    assert out[1].rho_r.sum() > out[0].rho_r.sum()


def test_snapshot_file(tmp_path):
    grid = PriceGrid(-0.01, 0.01, 11)
    field = DensityField.initial(grid, LATENT)
    out = integrate(field, RateModel.static(0.1, 0.1), DiffusionSchedule.zero(), 2.0, 0.5, [1.0, 2.0])
    path = tmp_path / "rho.tsv"
    write_snapshots(out, path)
    cols = read_table(path)
    assert list(cols) == ["t", "x", "rho_r", "rho_l"]
    assert len(cols["t"]) == 22
    np.testing.assert_allclose(float_column(cols["rho_r"])[11:], out[1].rho_r, rtol=1e-16)


class TestPointwise:
    def test_equal_gammas_match_closed_form(self):
        C, g, t0 = 0.7, 4.0, 150.0
        x = 0.001
        total = LATENT.a * x + LATENT.b
        rho0 = eval_deadline_solution(x, t0, C, C, g, t0, LATENT)
        p = PointwiseParams(C_r=C, gamma_r=g, C_l=C, gamma_l=g, rho_sigma=total, rho_init=rho0)
        ts, rho = integrate_ode_pointwise(x, "distinct-gammas", p, (t0, 300.0), 0.05)
        exact = [eval_deadline_solution(x, t, C, C, g, t0, LATENT) for t in ts]
        np.testing.assert_allclose(rho, exact, rtol=1e-6)

    def test_no_cancellation_reveals_everything(self):
        p = PointwiseParams(C_r=0.5, gamma_r=2.0, nu_l=0.0, rho_sigma=0.3)
        ts, rho = integrate_ode_pointwise(0.0, "constant-cancel", p, (0.0, 301.999), 1e-3)
        assert rho[-1] == pytest.approx(0.3, rel=1e-2)
        # closed form: rho_sigma * (1 - ((g+T-t)/(g+T))^C_r)
        t = 250.0
        i = np.argmin(np.abs(ts - t))
        assert rho[i] == pytest.approx(0.3 * (1 - ((302 - ts[i]) / 302) ** 0.5), rel=1e-8)

    def test_convex_near_deadline(self):
        p = PointwiseParams(C_r=2.0, gamma_r=1.0, C_l=2.0, gamma_l=20.0)
        ts, rho = integrate_ode_pointwise(0.0, "distinct-gammas", p, (0.0, 300.0), 0.01)
        tail = rho[ts >= 270.0]
        assert np.all(np.diff(tail, 2) > 0)

    def test_singular_time(self):
        p = PointwiseParams(C_r=1.0, gamma_r=1.0, C_l=1.0, gamma_l=1.0)
        with pytest.raises(DomainError):
            integrate_ode_pointwise(0.0, "distinct-gammas", p, (0.0, 301.0), 0.1)

    def test_bad_variant(self):
        with pytest.raises(ConfigurationError):
            integrate_ode_pointwise(0.0, "other", PointwiseParams(1.0, 1.0), (0.0, 1.0), 0.1)
