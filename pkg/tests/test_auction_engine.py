import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auctionbook.auction_engine import (
    CANCEL,
    SELL,
    SUBMIT,
    UPDATE,
    OrderBookState,
    SimulationConfig,
    TickEvent,
    TickStream,
    UpdateKernel,
    brute_force_clearing,
    clear_stream,
    demand,
    indicative_price,
    indicative_series,
    replay,
    simulate_flow,
    snapshot_stream,
    supply,
)
from auctionbook.errors import ConfigurationError, NoClearing
from auctionbook.model_core import CancellationRateParams, LatentBookParams, SubmissionRateParams
from auctionbook.pde_solver import RateModel

LATENT = LatentBookParams(6.77, 0.0058)
REF_SUBMIT = SubmissionRateParams(C_r=0.93, x_r=0.0023, k=4.9, w=0.87, gamma_r=3.1, t_r0=210.0,
                              x_0=0.0032, m=0.016)


def book_from(sells=(), buys=(), ref=2000, mo_buy=0, mo_sell=0):
    book = OrderBookState(0.005, ref, mo_buy, mo_sell)
    oid = 0
    for side, orders in (("SELL", sells), ("BUY", buys)):
        for qty, price in orders:
            oid += 1
            book.add(oid, side, price, qty)
    return book


class TestSupplyDemand:
    def test_empty(self):
        book = book_from()
        assert supply(book, 2000) == 0 and demand(book, 2000) == 0

    def test_cumulative(self):
        book = book_from(sells=[(50, 2000), (50, 2020)])
        assert supply(book, 2020) == 100
        assert supply(book, 2010) == 50

    def test_random_against_orders(self):
        rng = np.random.default_rng(3)
        orders = [(int(rng.integers(1, 500)), int(rng.integers(1990, 2010)), rng.random() < 0.5)
                  for _ in range(100)]
        book = book_from(sells=[(q, p) for q, p, s in orders if s], buys=[(q, p) for q, p, s in orders if not s])
        for p in range(1985, 2015):
            assert supply(book, p) == sum(q for q, pp, s in orders if s and pp <= p)
            assert demand(book, p) == sum(q for q, pp, s in orders if not s and pp >= p)


class TestClearing:
    def test_single_cross(self):
        res = indicative_price(book_from(sells=[(100, 2000)], buys=[(100, 2000)]))
        assert (res.price, res.matched_volume, res.surplus, res.surplus_side) == (2000, 100, 0, "NONE")

    def test_sell_surplus(self):
        res = indicative_price(book_from(sells=[(50, 2000), (50, 2020)], buys=[(80, 2020)]))
        assert (res.price, res.matched_volume, res.surplus, res.surplus_side) == (2020, 80, 20, "SELL")

    def test_market_orders_only_buy(self):
        res = indicative_price(book_from(sells=[(100, 2000)], mo_buy=50))
        assert (res.price, res.matched_volume) == (2000, 50)

    def test_no_cross(self):
        with pytest.raises(NoClearing):
            indicative_price(book_from(sells=[(100, 2010)], buys=[(100, 2000)]))
        with pytest.raises(NoClearing):
            indicative_price(book_from())

    def test_reference_tie_break(self):
        # two levels with equal volume and surplus: closer to the reference wins
        book = book_from(sells=[(100, 1995)], buys=[(100, 2005)], ref=2004)
        assert indicative_price(book).price == 2005
        book = book_from(sells=[(100, 1995)], buys=[(100, 2005)], ref=2000)
        assert indicative_price(book).price == 1995

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 300), st.integers(1990, 2010), st.booleans()), max_size=12),
           st.integers(0, 200), st.integers(0, 200), st.integers(1985, 2015))
    def test_matches_exhaustive(self, orders, mo_buy, mo_sell, ref):
        book = book_from(sells=[(q, p) for q, p, s in orders if s], buys=[(q, p) for q, p, s in orders if not s],
                         ref=ref, mo_buy=mo_buy, mo_sell=mo_sell)
        try:
            expected = brute_force_clearing(book)
        except NoClearing:
            with pytest.raises(NoClearing):
                indicative_price(book)
            return
        res = indicative_price(book)
        assert res == expected
        s = supply(book, res.price) + mo_sell
        d = demand(book, res.price) + mo_buy
        assert res.matched_volume == min(s, d) and res.surplus == abs(s - d)


class TestBookState:
    def test_cancel_more_than_resting(self):
        book = book_from(sells=[(100, 2000)])
        with pytest.raises(ConfigurationError):
            book.cancel(1, 150)

    def test_partial_cancel_and_move(self):
        book = book_from(sells=[(100, 2000)])
        book.cancel(1, 40)
        book.move(1, 2003)
        assert supply(book, 2002) == 0 and supply(book, 2003) == 60
        assert sum(book.levels[2003].orders.values()) == book.levels[2003].sell

    def test_event_validation(self):
        with pytest.raises(ConfigurationError):
            TickEvent(0, "UPDATE", "SELL", 10, 5, 10)
        with pytest.raises(ConfigurationError):
            TickEvent(0, "SUBMIT", "SELL", 10, 0)


class TestSimulation:
    rates = RateModel.from_params(REF_SUBMIT, CancellationRateParams.constant(0.023))

    def test_zero_rates_empty(self):
        s = simulate_flow(RateModel.static(0.0, 0.0), LATENT, seed=1)
        assert len(s) == 0

    def test_invalid_inputs(self):
        with pytest.raises(ConfigurationError):
            simulate_flow(self.rates, LATENT, seed=-1)
        with pytest.raises(ConfigurationError):
            simulate_flow(self.rates, LATENT, seed=1, horizon=400.0)
        with pytest.raises(ConfigurationError):
            SimulationConfig(latent_mode="other")

    def test_reproducible(self):
        a = simulate_flow(self.rates, LATENT, UpdateKernel(0.01, 2.0), seed=5)
        b = simulate_flow(self.rates, LATENT, UpdateKernel(0.01, 2.0), seed=5)
        assert np.array_equal(a.ts_us, b.ts_us) and np.array_equal(a.price, b.price)

    def test_poisson_count(self):
        lam, h = 0.4, 20.0
        cfg = SimulationConfig(x_min=-1e-6, x_max=1e-6, volume_scale=1e7, lot=100)
        _, _, width = cfg.offsets()
        nu = lam / (LATENT.b * width[0] * cfg.volume_scale / cfg.lot)
        rates = RateModel.static(nu, 0.0)
        counts = np.array([np.sum(simulate_flow(rates, LATENT, horizon=h, seed=s, config=cfg).kind == SUBMIT)
                           for s in range(1000)])
        se = np.sqrt(lam * h / 1000)
        assert abs(counts.mean() - lam * h) <= 3 * se
        assert counts.var() == pytest.approx(lam * h, rel=0.15)

    def test_exponential_lifetimes(self):
        nu = 0.5
        cfg = SimulationConfig(x_min=-2e-4, x_max=2e-4, volume_scale=1e9)
        rates = RateModel(lambda x, t: np.where(np.asarray(t) < 200, 0.05, 0.0) + 0 * np.asarray(x),
                          lambda x, t: np.full(np.broadcast(x, t).shape, nu), vectorized=True)
        lifetimes = []
        for s in range(20):
            st_ = simulate_flow(rates, LATENT, seed=s, config=cfg)
            sub = {o: t for o, t, k in zip(st_.order_id, st_.t, st_.kind) if k == SUBMIT}
            lifetimes += [t - sub[o] for o, t, k in zip(st_.order_id, st_.t, st_.kind) if k == CANCEL]
        lifetimes = np.array(lifetimes)
        assert len(lifetimes) > 500
        assert abs(lifetimes.mean() - 1 / nu) <= 3 * lifetimes.std() / np.sqrt(len(lifetimes))

    def test_volume_conservation(self):
        s = simulate_flow(self.rates, LATENT, UpdateKernel(0.05, 2.0), seed=2,
                          config=SimulationConfig(volume_scale=1e8))
        for t in (50.0, 150.0, 290.0):
            book = replay(s, t)
            m = s.ts_us <= t * 1e6
            submitted = s.qty[m & (s.kind == SUBMIT)].sum()
            cancelled = s.qty[m & (s.kind == CANCEL)].sum()
            assert book.volume("SELL") == submitted - cancelled

    def test_update_invariants(self):
        s = simulate_flow(self.rates, LATENT, UpdateKernel(0.05, 2.0), seed=2,
                          config=SimulationConfig(volume_scale=1e8))
        up = s.kind == UPDATE
        assert up.sum() > 0
        assert np.all(s.new_price[up] != s.price[up])
        replay(s)  # every cancel/update refers to a resting order

    def test_conserved_mode_runs(self):
        cfg = SimulationConfig(latent_mode="conserved", x_min=-0.005, x_max=0.005, volume_scale=1e8)
        s = simulate_flow(self.rates, LATENT, seed=3, config=cfg)
        assert s.is_sorted() and np.sum(s.kind == SUBMIT) > 0
        replay(s)

    def test_two_sided_moves_price(self):
        cfg = SimulationConfig(two_sided=True, ref_price=10.0, volume_scale=1e8)
        s = simulate_flow(self.rates, LATENT, UpdateKernel(0.002), seed=4, config=cfg)
        path = indicative_series(s, np.arange(0.0, 301.0))
        assert len(np.unique(path)) > 3
        assert clear_stream(s) == brute_force_clearing(replay(s, s.clearing_time))

    def test_clearing_time_window(self):
        s = simulate_flow(self.rates, LATENT, seed=9)
        assert 300.0 <= s.clearing_time <= 330.0
        assert s.t.max() <= s.clearing_time


class TestStreamIO:
    def test_round_trip(self, tmp_path):
        rates = RateModel.from_params(REF_SUBMIT, CancellationRateParams.constant(0.023))
        s = simulate_flow(rates, LATENT, UpdateKernel(0.05, 2.0), seed=2, config=SimulationConfig(volume_scale=1e8))
        path = tmp_path / "ticks.tsv"
        s.write(path)
        first = path.read_text().splitlines()[0]
        assert first == "ts_us,kind,side,price_ticks,qty,new_price_ticks,agent_class,order_id"
        back = TickStream.read(path)
        for c in TickStream._COLUMNS:
            assert np.array_equal(getattr(back, c), getattr(s, c))
        assert back.clearing_time == pytest.approx(s.clearing_time, rel=1e-15)
        assert clear_stream(back) == clear_stream(s)


class TestSnapshots:
    def test_empty_before_events(self):
        s = TickStream.from_events([TickEvent(5_000_000, "SUBMIT", "SELL", 20000, 100)], ref_price=20000,
                                   mirror_buy=True)
        tab = snapshot_stream(s, [1.0], Q_a=100)
        assert np.all(tab.density == 0)

    def test_single_order_scaling(self):
        s = TickStream.from_events([TickEvent(0, "SUBMIT", "SELL", 20000, 100)], ref_price=20000, mirror_buy=True)
        tab = snapshot_stream(s, [1.0], bucket=2e-4, Q_a=100)
        assert tab.density[np.argmin(np.abs(tab.x))] == pytest.approx(5000.0)
        assert tab.density.sum() == pytest.approx(5000.0)

    def test_unknown_q(self):
        s = TickStream.from_events([TickEvent(0, "SUBMIT", "SELL", 20000, 100)], ref_price=20000)
        with pytest.raises(ConfigurationError):
            snapshot_stream(s, [1.0])

    def test_matches_brute_force_replay(self):
        rates = RateModel.from_params(REF_SUBMIT, CancellationRateParams.constant(0.023))
        s = simulate_flow(rates, LATENT, UpdateKernel(0.05, 2.0), seed=8, config=SimulationConfig(volume_scale=1e8))
        times = [30.0, 150.0, 299.0]
        tab = snapshot_stream(s, times, bucket=2e-4, Q_a=1e6)
        ts, xs, dens = tab.grid()
        for i, t in enumerate(times):
            book = replay(s, t)
            expected = {}
            for p, lvl in book.levels.items():
                k = int(np.floor(np.log(p / s.ref_price) / 2e-4 + 0.5))
                expected[k] = expected.get(k, 0) + lvl.sell
            got = {int(round(x / 2e-4)): d for x, d in zip(xs, dens[i]) if d}
            assert got.keys() == {k for k, v in expected.items() if v and abs(k) <= 250}
            for k, v in got.items():
                assert v == pytest.approx(expected[k] / (2e-4 * 1e6))
