import math
import warnings

import numpy as np
import pytest

from auctionbook.auction_engine import SimulationConfig, TickEvent, TickStream, UpdateKernel, simulate_flow
from auctionbook.errors import ConfigurationError
from auctionbook.estimators import (
    EstimatorConfig,
    combine,
    estimate_cancel_rate,
    estimate_diffusion,
    estimate_submit_flux,
    estimate_update_rate,
    fit_deadline_rate,
    infer_submission_rate,
    log_mode,
    nu_ratio,
    realized_volatility,
)
from auctionbook.io import float_column, read_table
from auctionbook.model_core import LatentBookParams
from auctionbook.pde_solver import RateModel

REF = 20000
LATENT = LatentBookParams(6.77, 0.0058)


def stream(rows, **meta):
    """rows: (t_seconds, kind, price, qty[, new_price[, agent]])"""
    events = []
    for i, r in enumerate(rows):
        t, kind, price, qty = r[:4]
        newp = r[4] if len(r) > 4 else None
        agent = r[5] if len(r) > 5 else "NON"
        events.append(TickEvent(int(round(t * 1e6)), kind, "SELL", price, qty, newp, agent, i + 1))
    meta.setdefault("ref_price", REF)
    return TickStream.from_events(events, **meta)


def value_at(grid, t, x):
    i = np.searchsorted(grid.t_edges, t, "right") - 1
    j = int(np.argmin(np.abs(grid.x_centers - x)))
    return grid.value[i, j]


class TestCancelRate:
    def test_single_cancel(self):
        s = stream([(0.0, "SUBMIT", REF, 200), (1.0, "CANCEL", REF, 50)])
        for norm in ("exposure", "bin"):
            g = estimate_cancel_rate(s, EstimatorConfig(t_end=2.0, normalize=norm))
            assert value_at(g, 0.5, 0.0) == pytest.approx(0.125)

    def test_no_cancels_is_zero(self):
        s = stream([(0.0, "SUBMIT", REF, 200)])
        g = estimate_cancel_rate(s, EstimatorConfig(t_end=4.0))
        assert value_at(g, 3.0, 0.0) == 0.0
        # empty buckets are undefined
        assert np.isnan(value_at(g, 3.0, 0.01))

    def test_unsorted_raises(self):
        s = stream([(1.0, "SUBMIT", REF, 200), (0.5, "SUBMIT", REF, 50)])
        with pytest.raises(ConfigurationError):
            estimate_cancel_rate(s)

    def test_partial_occupancy_uses_exposure(self):
        # level exists for one second of the bin and half its volume is cancelled
        s = stream([(1.0, "SUBMIT", REF, 100), (1.5, "CANCEL", REF, 50)])
        g = estimate_cancel_rate(s, EstimatorConfig(t_end=2.0))
        assert value_at(g, 0.0, 0.0) == pytest.approx(0.5)
        g = estimate_cancel_rate(s, EstimatorConfig(t_end=2.0, normalize="bin"))
        assert value_at(g, 0.0, 0.0) == pytest.approx(0.25)

    def test_agent_filter(self):
        s = stream([(0.0, "SUBMIT", REF, 200), (0.5, "CANCEL", REF, 50, None, "HFT"),
                    (1.0, "CANCEL", REF, 50, None, "NON")])
        g = estimate_cancel_rate(s, EstimatorConfig(t_end=2.0, agent_classes=("HFT",)))
        assert value_at(g, 0.0, 0.0) == pytest.approx(50 / 200 / 2)

    def test_scale_covariance(self):
        rows = [(0.0, "SUBMIT", REF, 200), (0.3, "SUBMIT", REF + 3, 40), (1.0, "CANCEL", REF, 50),
                (2.5, "CANCEL", REF + 3, 10), (3.1, "CANCEL", REF, 70)]
        cfg = EstimatorConfig(t_end=4.0)
        g1 = estimate_cancel_rate(stream(rows), cfg)
        g7 = estimate_cancel_rate(stream([(t, k, p, 7 * q) for t, k, p, q in rows]), cfg)
        np.testing.assert_allclose(g1.value, g7.value, rtol=1e-14)


class TestSubmitFlux:
    def test_single_submit(self):
        s = stream([(0.5, "SUBMIT", REF, 30)])
        g = estimate_submit_flux(s, EstimatorConfig(t_end=2.0), Q_a=10000)
        assert value_at(g, 0.0, 0.0) == pytest.approx(7.5)
        assert np.nansum(g.value) == pytest.approx(7.5)

    def test_no_submissions(self):
        g = estimate_submit_flux(stream([]), EstimatorConfig(t_end=4.0), Q_a=1.0)
        assert np.all(g.value == 0)

    def test_scale_covariance(self):
        rows = [(0.5, "SUBMIT", REF, 30), (1.7, "SUBMIT", REF - 9, 11), (2.2, "SUBMIT", REF + 40, 3)]
        cfg = EstimatorConfig(t_end=4.0)
        g1 = estimate_submit_flux(stream(rows), cfg, 1000.0)
        g5 = estimate_submit_flux(stream([(t, k, p, 5 * q) for t, k, p, q in rows]), cfg, 5000.0)
        np.testing.assert_allclose(g1.value, g5.value, rtol=1e-14)

    def test_bad_q(self):
        with pytest.raises(ConfigurationError):
            estimate_submit_flux(stream([]), EstimatorConfig(), 0.0)

    def test_inferred_rate_divides_by_latent(self):
        s = stream([(0.5, "SUBMIT", REF, 30)])
        g = infer_submission_rate(estimate_submit_flux(s, EstimatorConfig(t_end=2.0), 10000), LATENT)
        assert value_at(g, 0.0, 0.0) == pytest.approx(7.5 / LATENT.b)

    def test_zero_latent_warns(self):
        s = stream([(0.5, "SUBMIT", REF, 30)])
        flux = estimate_submit_flux(s, EstimatorConfig(t_end=2.0), 10000)
        with pytest.warns(RuntimeWarning):
            g = infer_submission_rate(flux, LatentBookParams(1.0, 0.0))
        neg = g.x_centers <= 0
        assert np.all(np.isnan(g.value[:, neg]))
        assert np.all(np.isfinite(g.value[:, ~neg]))


def test_updates_excluded_from_cancel_and_submit():
    # only UPDATE events (on volume that exists before the window)
    s = stream([(0.5, "UPDATE", REF, 10, REF + 2), (1.0, "UPDATE", REF + 2, 10, REF + 5)])
    cfg = EstimatorConfig(t_end=2.0)
    c = estimate_cancel_rate(s, cfg)
    f = estimate_submit_flux(s, cfg, 1.0)
    assert np.all(np.nan_to_num(c.value) == 0)
    assert np.all(f.value == 0)


def test_additivity_over_disjoint_streams():
    a = [(0.0, "SUBMIT", REF, 100), (1.0, "CANCEL", REF, 30), (3.0, "SUBMIT", REF + 4, 10),
         (3.5, "CANCEL", REF, 70), (3.9, "CANCEL", REF + 4, 10)]
    b = [(4.5, "SUBMIT", REF - 2, 60), (5.0, "CANCEL", REF - 2, 20), (6.0, "SUBMIT", REF, 5),
         (7.0, "CANCEL", REF - 2, 40)]
    cfg = EstimatorConfig(t_end=8.0)
    whole = stream(a + b)
    for est in (estimate_cancel_rate, lambda s, c: estimate_submit_flux(s, c, 100.0)):
        ga, gb, gw = est(stream(a), cfg), est(stream(b), cfg), est(whole, cfg)
        if gw.kind == "submit_flux":
            np.testing.assert_allclose(gw.num, ga.num + gb.num)
        else:
            np.testing.assert_allclose(combine([ga, gb]).value, gw.value, equal_nan=True)


def test_grid_file(tmp_path):
    s = stream([(0.0, "SUBMIT", REF, 200), (1.0, "CANCEL", REF, 50)])
    g = estimate_cancel_rate(s, EstimatorConfig(t_end=4.0, x_min=-0.001, x_max=0.001))
    g.write(tmp_path / "g.tsv")
    cols = read_table(tmp_path / "g.tsv")
    assert list(cols) == ["t_bin", "x_bucket", "value"]
    assert len(cols["value"]) == g.value.size
    np.testing.assert_allclose(float_column(cols["value"]), g.value.ravel(), equal_nan=True)


class TestUpdateRate:
    def test_no_updates(self):
        s = stream([(0.0, "SUBMIT", REF, 200), (1.0, "CANCEL", REF, 50)])
        u = estimate_update_rate(s, EstimatorConfig(t_end=2.0))
        assert np.all(u.update_term == 0)
        assert np.all(u.gamma == 0)

    def test_full_moves_at_unit_rate(self):
        p1 = REF + 20
        s = stream([(0.0, "SUBMIT", REF, 10), (1.0, "UPDATE", REF, 10, p1), (1.0, "SUBMIT", REF, 10),
                    (1.999999, "UPDATE", REF, 10, p1)])
        u = estimate_update_rate(s, EstimatorConfig(t_end=2.0))
        j = int(np.argmin(np.abs(u.x_centers)))
        dx = math.log(p1 / REF)
        assert u.update_term[j] == pytest.approx(0.5 * dx**2, rel=1e-5)
        assert u.update_term[j] == pytest.approx(5e-7, rel=1e-3)
        # the kernel integrates to the total move rate
        assert u.gamma[j].sum() * 2e-4 == pytest.approx(1.0, rel=1e-5)

    def test_planted_gaussian_kernel(self):
        ker = UpdateKernel(0.01, jump_std_ticks=3.0)
        cfg = SimulationConfig(volume_scale=2e6)
        rates = RateModel.static(0.05, 0.02)
        units = []
        for seed in range(30):
            s = simulate_flow(rates, LATENT, ker, seed=seed, config=cfg)
            units.append(s)
        ec = EstimatorConfig(x_min=-0.01, x_max=0.01)
        num = np.zeros(101)
        expo = np.zeros(101)
        for s in units:
            u = estimate_update_rate(s, ec)
            num += u.update_term * u.exposure
            expo += u.exposure
        pooled = num.sum() / expo.sum()
        dx_tick = math.log1p(1 / 20000)
        expected = 0.5 * ker.rate * ker.second_moment_ticks() * dx_tick**2
        assert pooled == pytest.approx(expected, rel=0.1)


class TestVolatility:
    def test_constant(self):
        assert realized_volatility(np.full(10, 3.0)) == 0.0

    def test_alternating(self):
        r = 0.01
        p = 100 * np.exp(r * (np.arange(11) % 2))
        assert realized_volatility(p) == pytest.approx(r)

    def test_brownian(self):
        rng = np.random.default_rng(3)
        n = 3600
        p = np.exp(np.cumsum(np.r_[0.0, 1e-4 * rng.standard_normal(n)]))
        se = 1e-4 / math.sqrt(2 * n)
        assert abs(realized_volatility(p) - 1e-4) <= 3 * se

    def test_too_short(self):
        with pytest.raises(ConfigurationError):
            realized_volatility([1.0])


def test_diffusion_report():
    s = stream([(0.0, "SUBMIT", REF, 10), (1.0, "UPDATE", REF, 10, REF + 20)])
    u = estimate_update_rate(s, EstimatorConfig(t_end=2.0))
    d = estimate_diffusion(1e-4, u)
    assert np.all(d.D >= 0.5e-8)
    text = d.report()
    assert "sigma" in text and "update_term_mode" in text
    with pytest.raises(ConfigurationError):
        estimate_diffusion(-1.0, u)


def test_log_mode():
    assert log_mode([]) == 0.0
    v = np.r_[np.full(10, 3e-12), [1e-8, 2e-6]]
    assert 1e-12 <= log_mode(v) <= 1e-11


class TestDeadlineFit:
    def test_constant_series(self):
        t = np.arange(0, 301, 2.0)
        y = np.full(t.size, 0.04)
        fit = fit_deadline_rate(t, y, 300.0)
        last = t[-10]
        assert fit.t0 == last
        assert fit.C / fit.gamma == pytest.approx(0.04, rel=1e-2)

    def test_too_few_points(self):
        t = np.arange(290, 301, 2.0)
        with pytest.raises(ConfigurationError):
            fit_deadline_rate(t, np.ones(t.size), 300.0)

    def test_noise_free_recovery(self):
        t = np.arange(60, 301, 2.0)
        y = 2.38 / (16 + 300 - np.maximum(t, 202))
        fit = fit_deadline_rate(t, y, 300.0, t_min=60)
        assert fit.C == pytest.approx(2.38, rel=1e-3)
        assert fit.gamma == pytest.approx(16, rel=1e-3)
        assert abs(fit.t0 - 202) <= 2

    @pytest.mark.parametrize("C,g,t0,t_min", [(2.38, 16.0, 202.0, 60.0), (0.93, 3.1, 210.0, 0.0)])
    def test_noisy_recovery(self, C, g, t0, t_min):
        rng = np.random.default_rng(11)
        t = np.arange(t_min, 301, 2.0)
        ok = 0
        for _ in range(20):
            y = C / (g + 300 - np.maximum(t, t0)) * (1 + 0.05 * rng.standard_normal(t.size))
            f = fit_deadline_rate(t, y, 300.0, t_min=t_min)
            ok += abs(f.C / C - 1) <= 0.15 and abs(f.gamma / g - 1) <= 0.25 and abs(f.t0 - t0) <= 10
        assert ok >= 18


class TestRatio:
    def test_counts(self):
        rows = [(295.0, "SUBMIT", REF, 1)] * 7 + [(296.0, "CANCEL", REF, 1)] * 5
        s = stream(sorted(rows))
        assert nu_ratio(s, 10.0, 0.001) == pytest.approx(1.4)

    def test_equal(self):
        s = stream([(295.0, "SUBMIT", REF, 1), (296.0, "CANCEL", REF, 1)])
        assert nu_ratio(s, 10.0, 0.001) == 1.0

    def test_outside_band_or_window_ignored(self):
        s = stream([(100.0, "CANCEL", REF, 1), (295.0, "SUBMIT", REF, 1), (296.0, "CANCEL", REF + 400, 1),
                    (297.0, "CANCEL", REF, 1)])
        assert nu_ratio(s, 10.0, 0.001) == 1.0

    def test_no_cancels(self):
        s = stream([(295.0, "SUBMIT", REF, 1)])
        with pytest.warns(RuntimeWarning):
            assert nu_ratio(s, 10.0, 0.001) == math.inf
