"""Synthetic call-auction order flow, order-book replay and clearing.

Prices are integer ticks.  Log-prices ``x`` are measured against the running
indicative price, so ``x = log(p / p_I)`` for sell orders and the mirror image
``x = -log(p / p_I)`` for buy orders.

Two simulation modes are available:

* sell-only (default): only sell orders are generated; the buy side is the
  mirror image of the sell side, which pins the indicative price at the
  reference price and makes the frame exact.  Fully vectorized.
* two-sided: buy and sell flows are mirror-symmetric in law but independent;
  the indicative price is recomputed after every event and ``x`` follows it.

Latent liquidity is either a fixed reservoir (Poisson submissions with
intensity ``nu_r * rho_l * dx`` per tick) or conserved (each latent lot flips
between latent and revealed at the reveal/unreveal rates, which is the
particle picture of the coupled equations).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ConfigurationError, NoClearing
from .io import fmt, read_params, read_table, write_params
from .model_core import LatentBookParams, eval_latent_initial
from .pde_solver import RateModel

SUBMIT, CANCEL, UPDATE = 0, 1, 2
BUY, SELL = 0, 1
HFT, MIX, NON = 0, 1, 2
KIND_NAMES = ("SUBMIT", "CANCEL", "UPDATE")
SIDE_NAMES = ("BUY", "SELL")
CLASS_NAMES = ("HFT", "MIX", "NON")
STREAM_HEADER = ["ts_us", "kind", "side", "price_ticks", "qty", "new_price_ticks", "agent_class", "order_id"]


@dataclass(frozen=True)
class TickEvent:
    ts: int
    kind: str
    side: str
    price: int
    qty: int
    new_price: Optional[int] = None
    agent_class: str = "NON"
    order_id: int = 0

    def __post_init__(self):
        if self.kind not in KIND_NAMES or self.side not in SIDE_NAMES or self.agent_class not in CLASS_NAMES:
            raise ConfigurationError(f"invalid event labels in {self}")
        if self.qty <= 0:
            raise ConfigurationError("event quantity must be > 0")
        if self.kind == "UPDATE" and (self.new_price is None or self.new_price == self.price):
            raise ConfigurationError("UPDATE needs a new_price different from price")


def bucket_index(x, dx):
    """Bucket ``k`` holds log-prices in ``[(k - 1/2) dx, (k + 1/2) dx)``."""
    return np.floor(np.asarray(x) / dx + 0.5).astype(np.int64)


@dataclass
class TickStream:
    """Columnar event stream plus the metadata needed to replay it."""

    ts_us: np.ndarray
    kind: np.ndarray
    side: np.ndarray
    price: np.ndarray
    qty: np.ndarray
    new_price: np.ndarray
    agent: np.ndarray
    order_id: np.ndarray
    tick_size: float = 0.005
    ref_price: int = 20000
    T: float = 300.0
    clearing_time: Optional[float] = None
    mirror_buy: bool = False
    seed: Optional[int] = None

    _COLUMNS = ("ts_us", "kind", "side", "price", "qty", "new_price", "agent", "order_id")
    _DTYPES = (np.int64, np.int8, np.int8, np.int64, np.int64, np.int64, np.int8, np.int64)

    def __post_init__(self):
        for name, dt in zip(self._COLUMNS, self._DTYPES):
            setattr(self, name, np.asarray(getattr(self, name), dtype=dt))

    @classmethod
    def empty(cls, **meta) -> "TickStream":
        return cls(*[np.zeros(0, dtype=dt) for dt in cls._DTYPES], **meta)

    @classmethod
    def from_events(cls, events: Sequence[TickEvent], **meta) -> "TickStream":
        if not events:
            return cls.empty(**meta)
        cols = [
            [e.ts for e in events],
            [KIND_NAMES.index(e.kind) for e in events],
            [SIDE_NAMES.index(e.side) for e in events],
            [e.price for e in events],
            [e.qty for e in events],
            [-1 if e.new_price is None else e.new_price for e in events],
            [CLASS_NAMES.index(e.agent_class) for e in events],
            [e.order_id for e in events],
        ]
        return cls(*cols, **meta)

    def meta(self) -> dict:
        return dict(tick_size=self.tick_size, ref_price=self.ref_price, T=self.T,
                    clearing_time=self.clearing_time, mirror_buy=self.mirror_buy, seed=self.seed)

    def __len__(self) -> int:
        return len(self.ts_us)

    def __getitem__(self, i: int) -> TickEvent:
        return TickEvent(int(self.ts_us[i]), KIND_NAMES[self.kind[i]], SIDE_NAMES[self.side[i]],
                         int(self.price[i]), int(self.qty[i]),
                         None if self.kind[i] != UPDATE else int(self.new_price[i]),
                         CLASS_NAMES[self.agent[i]], int(self.order_id[i]))

    def __iter__(self) -> Iterator[TickEvent]:
        return (self[i] for i in range(len(self)))

    @property
    def t(self) -> np.ndarray:
        return self.ts_us / 1e6

    def select(self, mask) -> "TickStream":
        return TickStream(*[getattr(self, c)[mask] for c in self._COLUMNS], **self.meta())

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.ts_us) >= 0))

    def x(self, indicative=None) -> np.ndarray:
        """Log-price of each event in the (mirrored for buys) indicative frame."""
        ref = self.ref_price if indicative is None else indicative
        x = np.log(self.price / ref)
        return np.where(self.side == SELL, x, -x)

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            fh.write(",".join(STREAM_HEADER) + "\n")
            for i in range(len(self)):
                newp = str(int(self.new_price[i])) if self.kind[i] == UPDATE else ""
                fh.write(f"{self.ts_us[i]},{KIND_NAMES[self.kind[i]]},{SIDE_NAMES[self.side[i]]},"
                         f"{self.price[i]},{self.qty[i]},{newp},{CLASS_NAMES[self.agent[i]]},"
                         f"{self.order_id[i]}\n")
        meta = {k: ("" if v is None else v) for k, v in self.meta().items()}
        meta = {k: v for k, v in meta.items() if v != ""}
        write_params(_meta_path(path), meta)

    @classmethod
    def read(cls, path) -> "TickStream":
        path = Path(path)
        cols = read_table(path)
        missing = [h for h in STREAM_HEADER if h not in cols]
        if missing:
            raise ConfigurationError(f"{path}: missing columns {missing}")
        meta = {}
        if _meta_path(path).exists():
            raw = read_params(_meta_path(path))
            meta = dict(tick_size=float(raw.get("tick_size", 0.005)), ref_price=int(raw.get("ref_price", 20000)),
                        T=float(raw.get("T", 300.0)), mirror_buy=bool(raw.get("mirror_buy", False)))
            if "clearing_time" in raw:
                meta["clearing_time"] = float(raw["clearing_time"])
            if "seed" in raw:
                meta["seed"] = int(raw["seed"])
        n = len(cols["ts_us"])
        try:
            return cls(
                np.array([int(v) for v in cols["ts_us"]]),
                np.array([KIND_NAMES.index(v) for v in cols["kind"]]),
                np.array([SIDE_NAMES.index(v) for v in cols["side"]]),
                np.array([int(v) for v in cols["price_ticks"]]),
                np.array([int(v) for v in cols["qty"]]),
                np.array([int(v) if v != "" else -1 for v in cols["new_price_ticks"]]),
                np.array([CLASS_NAMES.index(v) for v in cols["agent_class"]]),
                np.array([int(v) for v in cols["order_id"]]),
                **meta,
            ) if n else cls.empty(**meta)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: malformed event row ({exc})") from exc


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta")


def concatenate(streams: Sequence[TickStream]) -> TickStream:
    """Join streams that cover disjoint time ranges (metadata from the first)."""
    cols = [np.concatenate([getattr(s, c) for s in streams]) for c in TickStream._COLUMNS]
    return TickStream(*cols, **streams[0].meta())


# ---------------------------------------------------------------- order book


@dataclass
class Level:
    sell: int = 0
    buy: int = 0
    orders: Dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ClearingResult:
    price: int
    matched_volume: int
    surplus: int
    surplus_side: str


class OrderBookState:
    """Resting limit orders by price level plus market-order volumes."""

    def __init__(self, tick_size: float = 0.005, ref_price: int = 20000, mo_buy: int = 0, mo_sell: int = 0):
        self.tick_size = tick_size
        self.ref_price = ref_price
        self.mo_buy = mo_buy
        self.mo_sell = mo_sell
        self.levels: Dict[int, Level] = {}
        self.orders: Dict[int, Tuple[int, int, int]] = {}

    def add(self, order_id: int, side, price: int, qty: int) -> None:
        side = SIDE_NAMES.index(side) if isinstance(side, str) else side
        if qty <= 0:
            raise ConfigurationError("order quantity must be > 0")
        if order_id in self.orders:
            raise ConfigurationError(f"duplicate order id {order_id}")
        lvl = self.levels.setdefault(price, Level())
        lvl.orders[order_id] = qty
        if side == SELL:
            lvl.sell += qty
        else:
            lvl.buy += qty
        self.orders[order_id] = (side, price, qty)

    def cancel(self, order_id: int, qty: Optional[int] = None) -> None:
        side, price, rest = self.orders[order_id]
        q = rest if qty is None else qty
        if q > rest:
            raise ConfigurationError(f"cancel of {q} exceeds resting {rest} on order {order_id}")
        lvl = self.levels[price]
        if side == SELL:
            lvl.sell -= q
        else:
            lvl.buy -= q
        if q == rest:
            del lvl.orders[order_id]
            del self.orders[order_id]
        else:
            lvl.orders[order_id] = rest - q
            self.orders[order_id] = (side, price, rest - q)
        if not lvl.orders:
            del self.levels[price]

    def move(self, order_id: int, new_price: int) -> None:
        side, price, qty = self.orders[order_id]
        self.cancel(order_id)
        self.add(order_id, side, new_price, qty)

    def apply(self, ev: TickEvent) -> None:
        if ev.kind == "SUBMIT":
            self.add(ev.order_id, ev.side, ev.price, ev.qty)
        elif ev.kind == "CANCEL":
            self.cancel(ev.order_id, ev.qty)
        else:
            self.move(ev.order_id, ev.new_price)

    def volume(self, side) -> int:
        side = SIDE_NAMES.index(side) if isinstance(side, str) else side
        return sum(l.sell if side == SELL else l.buy for l in self.levels.values())

    def mirrored(self) -> "OrderBookState":
        """Sell side unchanged, buy side replaced by the reflection of the sells
        about the reference price."""
        out = OrderBookState(self.tick_size, self.ref_price, self.mo_buy, self.mo_sell)
        for p, lvl in self.levels.items():
            if lvl.sell:
                out.levels.setdefault(p, Level()).sell += lvl.sell
                q = 2 * self.ref_price - p
                out.levels.setdefault(q, Level()).buy += lvl.sell
        for lvl in out.levels.values():
            lvl.orders[-1] = lvl.sell + lvl.buy
        return out

    def dense(self):
        """``(lo, sell, buy)`` volume arrays over the occupied price range."""
        prices = [p for p, l in self.levels.items() if l.sell or l.buy]
        if not prices:
            return 0, np.zeros(0, np.int64), np.zeros(0, np.int64)
        lo, hi = min(prices), max(prices)
        sell = np.zeros(hi - lo + 1, np.int64)
        buy = np.zeros(hi - lo + 1, np.int64)
        for p in prices:
            sell[p - lo] = self.levels[p].sell
            buy[p - lo] = self.levels[p].buy
        return lo, sell, buy


def supply(book: OrderBookState, p: int) -> int:
    """Resting sell volume at limits at or below ``p``."""
    return sum(l.sell for q, l in book.levels.items() if q <= p)


def demand(book: OrderBookState, p: int) -> int:
    """Resting buy volume at limits at or above ``p``."""
    return sum(l.buy for q, l in book.levels.items() if q >= p)


_SIDE_OF_SIGN = {1: "SELL", -1: "BUY", 0: "NONE"}


def indicative_price(book: OrderBookState) -> ClearingResult:
    """Clearing price: maximal matched volume, then minimal surplus, then
    closest to the reference price, then the lower price."""
    lo, sell, buy = book.dense()
    if len(sell) == 0:
        raise NoClearing("empty book")
    idx, matched, surplus, sign = kernels.clearing_scan(sell, buy, book.mo_buy, book.mo_sell,
                                                        book.ref_price - lo)
    if idx < 0:
        raise NoClearing("no price with positive matched volume")
    return ClearingResult(lo + int(idx), int(matched), int(surplus), _SIDE_OF_SIGN[int(sign)])


def brute_force_clearing(book: OrderBookState) -> ClearingResult:
    """Exhaustive search over every tick in the occupied range (reference oracle)."""
    prices = [p for p, l in book.levels.items() if l.sell or l.buy]
    if not prices:
        raise NoClearing("empty book")
    best = None
    for p in range(min(prices), max(prices) + 1):
        lvl = book.levels.get(p)
        if lvl is None or not (lvl.sell or lvl.buy):
            continue
        s = supply(book, p) + book.mo_sell
        d = demand(book, p) + book.mo_buy
        m = min(s, d)
        if m <= 0:
            continue
        key = (-m, abs(s - d), abs(p - book.ref_price), p)
        if best is None or key < best[0]:
            best = (key, p, m, s - d)
    if best is None:
        raise NoClearing("no price with positive matched volume")
    _, p, m, diff = best
    return ClearingResult(p, m, abs(diff), _SIDE_OF_SIGN[(diff > 0) - (diff < 0)])


def replay(stream: TickStream, until: Optional[float] = None) -> OrderBookState:
    """Book after applying every event with timestamp at or before ``until`` seconds."""
    if not stream.is_sorted():
        raise ConfigurationError("stream is not sorted by timestamp")
    book = OrderBookState(stream.tick_size, stream.ref_price)
    stop = len(stream) if until is None else int(np.searchsorted(stream.ts_us, int(round(until * 1e6)), "right"))
    for i in range(stop):
        book.apply(stream[i])
    return book


def clear_stream(stream: TickStream) -> ClearingResult:
    """Auction outcome at the stream's clearing time."""
    book = replay(stream, stream.clearing_time)
    if stream.mirror_buy:
        book = book.mirrored()
    return indicative_price(book)


# ---------------------------------------------------------------- fast replay


class _DenseReplay:
    """Incremental volume-per-tick replay over a fixed price range."""

    def __init__(self, stream: TickStream, pad: int = 0):
        if not stream.is_sorted():
            raise ConfigurationError("stream is not sorted by timestamp")
        self.s = stream
        prices = np.concatenate([stream.price, stream.new_price[stream.kind == UPDATE], [stream.ref_price]])
        self.lo = int(prices.min()) - pad
        n = int(prices.max()) + pad - self.lo + 1
        self.vol = np.zeros((2, n), np.int64)
        self.pos = 0
        # signed volume changes: (side, tick index, delta)
        k = stream.kind
        q = stream.qty
        self._d_price = stream.price - self.lo
        self._d_delta = np.where(k == SUBMIT, q, -q)
        self._u_price = np.where(k == UPDATE, stream.new_price - self.lo, 0)
        self._u_delta = np.where(k == UPDATE, q, 0)

    def advance(self, t: float) -> None:
        stop = int(np.searchsorted(self.s.ts_us, int(round(t * 1e6)), "right"))
        if stop <= self.pos:
            return
        sl = slice(self.pos, stop)
        n = self.vol.shape[1]
        side = self.s.side[sl]
        for sd in (BUY, SELL):
            m = side == sd
            self.vol[sd] += np.bincount(self._d_price[sl][m], self._d_delta[sl][m], n).astype(np.int64)
            self.vol[sd] += np.bincount(self._u_price[sl][m], self._u_delta[sl][m], n).astype(np.int64)
        self.pos = stop

    def indicative(self) -> int:
        sell, buy = self.vol[SELL], self.vol[BUY]
        if self.s.mirror_buy:
            r = self.s.ref_price - self.lo
            # reflected sells about the reference tick, clipped to the array
            buy = np.zeros_like(sell)
            src = np.flatnonzero(sell)
            dst = 2 * r - src
            ok = (dst >= 0) & (dst < len(sell))
            buy[dst[ok]] = sell[src[ok]]
        idx, matched, _, _ = kernels.clearing_scan(sell, buy, 0, 0, self.s.ref_price - self.lo)
        return self.s.ref_price if idx < 0 else self.lo + int(idx)


def indicative_series(stream: TickStream, times: Sequence[float]) -> np.ndarray:
    """Indicative price (ticks) of the book at each time; the reference price
    stands in when nothing crosses."""
    rep = _DenseReplay(stream)
    out = np.empty(len(times), np.int64)
    for i, t in enumerate(times):
        rep.advance(t)
        out[i] = stream.ref_price if stream.mirror_buy else rep.indicative()
    return out


@dataclass
class SnapshotTable:
    t: np.ndarray
    x: np.ndarray
    density: np.ndarray
    indicative: np.ndarray

    def grid(self):
        """``(times, bucket centers, density[time, bucket])``."""
        ts = np.unique(self.t)
        xs = np.unique(self.x)
        return ts, xs, self.density.reshape(len(ts), len(xs))


def snapshot_stream(ticks: TickStream, times: Sequence[float], bucket: float = 2e-4,
                    Q_a: Optional[float] = None, side: int = SELL,
                    x_window: Tuple[float, float] = (-0.05, 0.05)) -> SnapshotTable:
    """Revealed density per log-price bucket around the running indicative price.

    Density is resting volume divided by ``bucket * Q_a``; ``Q_a`` defaults to
    the matched volume at the stream's clearing time.
    """
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])):
        raise ConfigurationError("snapshot times must be sorted")
    if Q_a is None:
        if ticks.clearing_time is None:
            raise ConfigurationError("Q_a unknown: stream has no clearing time; pass Q_a")
        Q_a = clear_stream(ticks).matched_volume
    if not Q_a > 0:
        raise ConfigurationError("Q_a must be > 0")
    k_lo = int(bucket_index(x_window[0], bucket))
    k_hi = int(bucket_index(x_window[1], bucket))
    nb = k_hi - k_lo + 1
    centers = np.arange(k_lo, k_hi + 1) * bucket
    rep = _DenseReplay(ticks)
    prices = rep.lo + np.arange(rep.vol.shape[1])
    ts, xs, dens, ind = [], [], [], []
    for t in times:
        rep.advance(t)
        I = ticks.ref_price if ticks.mirror_buy else rep.indicative()
        x = np.log(prices / I)
        if side == BUY:
            x = -x
        k = bucket_index(x, bucket) - k_lo
        ok = (k >= 0) & (k < nb)
        vol = np.bincount(k[ok], rep.vol[side][ok], nb)
        ts.append(np.full(nb, t))
        xs.append(centers)
        dens.append(vol / (bucket * Q_a))
        ind.append(np.full(nb, I))
    return SnapshotTable(np.concatenate(ts), np.concatenate(xs), np.concatenate(dens), np.concatenate(ind))


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class UpdateKernel:
    """Pure price updates: each resting order jumps at ``rate`` per second by
    ``round(N(0, jump_std_ticks^2))`` ticks, conditioned on a non-zero jump."""

    rate: float = 0.0
    jump_std_ticks: float = 1.0

    def __post_init__(self):
        if self.rate < 0 or self.jump_std_ticks <= 0:
            raise ConfigurationError("update kernel needs rate >= 0 and jump_std_ticks > 0")

    def _pmf(self):
        from scipy.stats import norm
        jmax = int(10 * self.jump_std_ticks) + 5
        j = np.arange(-jmax, jmax + 1)
        p = norm.cdf((j + 0.5) / self.jump_std_ticks) - norm.cdf((j - 0.5) / self.jump_std_ticks)
        p[j == 0] = 0.0
        return j, p / p.sum()

    def second_moment_ticks(self) -> float:
        j, p = self._pmf()
        return float(np.sum(j**2 * p))

    def diffusivity(self, dx_tick: float) -> float:
        """``(1/2) * rate * E[jump^2]`` in log-price units."""
        return 0.5 * self.rate * self.second_moment_ticks() * dx_tick**2

    def draw(self, rng, n: int) -> np.ndarray:
        out = np.rint(rng.normal(0.0, self.jump_std_ticks, n)).astype(np.int64)
        bad = out == 0
        while bad.any():
            out[bad] = np.rint(rng.normal(0.0, self.jump_std_ticks, int(bad.sum()))).astype(np.int64)
            bad = out == 0
        return out


@dataclass(frozen=True)
class SimulationConfig:
    tick_size: float = 0.005
    ref_price: float = 100.0
    volume_scale: float = 1e7
    lot: int = 100
    x_min: float = -0.05
    x_max: float = 0.05
    latent_mode: str = "reservoir"
    two_sided: bool = False
    clearing_window: float = 30.0
    thinning_window: float = 10.0
    class_probs: Tuple[float, float, float] = (0.25, 0.25, 0.5)

    def __post_init__(self):
        if self.latent_mode not in ("reservoir", "conserved"):
            raise ConfigurationError(f"unknown latent_mode {self.latent_mode!r}")
        if self.two_sided and self.latent_mode != "reservoir":
            raise ConfigurationError("two-sided simulation supports the reservoir latent mode only")
        if not (self.tick_size > 0 and self.ref_price > 0 and self.volume_scale > 0 and self.lot > 0):
            raise ConfigurationError("tick_size, ref_price, volume_scale and lot must be > 0")
        if not self.x_min < 0 < self.x_max:
            raise ConfigurationError("price window must straddle 0")
        if self.clearing_window < 0 or self.thinning_window <= 0:
            raise ConfigurationError("invalid clearing or thinning window")
        if abs(sum(self.class_probs) - 1) > 1e-9 or min(self.class_probs) < 0:
            raise ConfigurationError("class_probs must be a probability vector")

    @property
    def ref_ticks(self) -> int:
        return int(round(self.ref_price / self.tick_size))

    def offsets(self):
        """Tick offsets ``j`` inside the window, their log-prices and log widths."""
        r = self.ref_ticks
        j = np.arange(int(math.floor(r * math.expm1(self.x_min))), int(math.ceil(r * math.expm1(self.x_max))) + 1)
        x = np.log1p(j / r)
        keep = (x >= self.x_min) & (x <= self.x_max)
        j, x = j[keep], x[keep]
        width = np.log((r + j + 0.5) / (r + j - 0.5))
        return j, x, width


class _Events:
    """Accumulates event columns; ``rank`` orders same-timestamp events."""

    def __init__(self):
        self.cols = {k: [] for k in ("t", "kind", "side", "price", "new_price", "episode", "rank")}

    def add(self, t, kind, side, price, new_price, episode, rank):
        n = len(t)
        for k, v in (("t", t), ("kind", np.full(n, kind)), ("side", side), ("price", price),
                     ("new_price", new_price), ("episode", episode), ("rank", np.full(n, rank))):
            self.cols[k].append(np.broadcast_to(np.asarray(v), (n,)).copy())

    def build(self, cfg: SimulationConfig, rng, meta) -> TickStream:
        if not self.cols["t"]:
            return TickStream.empty(**meta)
        c = {k: np.concatenate(v) for k, v in self.cols.items()}
        ts = np.floor(c["t"] * 1e6).astype(np.int64)
        order = np.lexsort((c["rank"], ts))
        c = {k: v[order] for k, v in c.items()}
        ts = ts[order]
        # order ids in order of first appearance
        _, first = np.unique(c["episode"], return_index=True)
        ranks = np.empty(len(first), np.int64)
        ranks[np.argsort(first)] = np.arange(len(first))
        ep_ids = np.unique(c["episode"])
        oid = ranks[np.searchsorted(ep_ids, c["episode"])] + 1
        agent = rng.choice(3, size=len(first), p=cfg.class_probs)[oid - 1]
        new_price = np.where(c["kind"] == UPDATE, c["new_price"], -1)
        return TickStream(ts, c["kind"], c["side"], c["price"], np.full(len(ts), cfg.lot), new_price,
                          agent, oid, **meta)


def _check_seed(seed):
    if isinstance(seed, (bool, float)) or seed is None:
        raise ConfigurationError(f"seed must be a non-negative integer, got {seed!r}")
    try:
        seed = int(seed)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid seed {seed!r}") from exc
    if seed < 0:
        raise ConfigurationError("seed must be >= 0")
    return seed


def simulate_flow(rates: RateModel, latent: LatentBookParams, update_kernel: Optional[UpdateKernel] = None,
                  horizon: Optional[float] = None, seed: int = 0,
                  config: Optional[SimulationConfig] = None) -> TickStream:
    """Simulate one auction day of order flow.

    Events stop at the clearing time, drawn uniformly in
    ``[T, T + clearing_window]`` (rates frozen at their ``T`` values in
    between), or at ``horizon`` if that comes first.
    """
    cfg = config or SimulationConfig()
    seed = _check_seed(seed)
    T = rates.T
    if horizon is not None and not (0 < horizon <= T + cfg.clearing_window):
        raise ConfigurationError(f"horizon must lie in (0, T + {cfg.clearing_window}]")
    kernel = update_kernel or UpdateKernel(0.0)
    rng = np.random.default_rng(seed)
    t_clear = T + rng.uniform(0.0, cfg.clearing_window)
    t_stop = t_clear if horizon is None else min(horizon, t_clear)
    meta = dict(tick_size=cfg.tick_size, ref_price=cfg.ref_ticks, T=T, clearing_time=t_clear,
                mirror_buy=not cfg.two_sided, seed=seed)
    if cfg.two_sided:
        return _simulate_two_sided(rates, latent, kernel, t_stop, rng, cfg, meta)
    ev = _Events()
    if cfg.latent_mode == "reservoir":
        _sell_reservoir(rates, latent, kernel, t_stop, rng, cfg, ev)
    else:
        _sell_conserved(rates, latent, kernel, t_stop, rng, cfg, ev)
    return ev.build(cfg, rng, meta)


def _window_end(t, W, t_stop):
    return np.minimum((np.floor(t / W) + 1.0) * W, t_stop)


def _submission_intensity(rates, latent, cfg, x, width, t):
    """Expected orders per second at tick log-price ``x`` (paired with ``t``)."""
    dens = np.asarray(eval_latent_initial(x, latent)) * width * cfg.volume_scale / cfg.lot
    return rates.submit_at(x, t) * dens


def _sell_reservoir(rates, latent, kernel, t_stop, rng, cfg, ev):
    j, x, width = cfg.offsets()
    W = cfg.thinning_window
    edges = np.append(np.arange(0.0, t_stop, W), t_stop)
    ta, tb = edges[:-1], edges[1:]
    # rates are non-decreasing in time within a window, so the larger endpoint bounds them
    lam_a = _submission_intensity(rates, latent, cfg, x[None, :], width[None, :], ta[:, None])
    lam_b = _submission_intensity(rates, latent, cfg, x[None, :], width[None, :], tb[:, None])
    lam_m = _submission_intensity(rates, latent, cfg, x[None, :], width[None, :], (0.5 * (ta + tb))[:, None])
    bound = np.maximum(np.maximum(lam_a, lam_b), lam_m) * (1 + 1e-12)
    counts = rng.poisson(bound * (tb - ta)[:, None])
    win, tick = np.nonzero(counts)
    reps = counts[win, tick]
    win = np.repeat(win, reps)
    tick = np.repeat(tick, reps)
    t = ta[win] + rng.uniform(size=len(win)) * (tb - ta)[win]
    accept = rng.uniform(size=len(t)) * bound[win, tick] < _submission_intensity(
        rates, latent, cfg, x[tick], width[tick], t)
    t, tick = t[accept], tick[accept]
    n = len(t)
    price = cfg.ref_ticks + j[tick]
    episode = np.arange(n)
    ev.add(t, SUBMIT, SELL, price, -1, episode, 0)
    _resting_lifetimes(rates, kernel, t_stop, rng, cfg, ev, t, price, episode, rank0=1)


def _resting_lifetimes(rates, kernel, t_stop, rng, cfg, ev, t, price, episode, rank0):
    """Cancellation and price updates of resting sell orders until they leave."""
    W = cfg.thinning_window
    r = cfg.ref_ticks
    t = t.copy()
    price = price.copy()
    rank = rank0
    active = np.arange(len(t))
    while len(active):
        ta = t[active]
        p = price[active]
        x = np.log(p / r)
        tb = _window_end(ta, W, t_stop)
        cb = np.maximum(rates.cancel_at(x, ta), rates.cancel_at(x, tb)) * (1 + 1e-12)
        total = cb + kernel.rate
        with np.errstate(divide="ignore"):
            cand = ta + rng.exponential(size=len(ta)) / total
        u = rng.uniform(size=len(ta)) * total
        beyond = cand >= tb
        is_update = ~beyond & (u < kernel.rate)
        is_cand = ~beyond & ~is_update
        accept = np.zeros(len(ta), bool)
        if is_cand.any():
            accept[is_cand] = (u[is_cand] - kernel.rate) < rates.cancel_at(x[is_cand], cand[is_cand])
        # cancellations
        c = active[accept]
        if len(c):
            ev.add(cand[accept], CANCEL, SELL, price[c], -1, episode[c], rank)
        # updates
        uidx = active[is_update]
        if len(uidx):
            newp = price[uidx] + kernel.draw(rng, len(uidx))
            newp = np.maximum(newp, 1)
            same = newp == price[uidx]
            newp[same] += 1
            ev.add(cand[is_update], UPDATE, SELL, price[uidx], newp, episode[uidx], rank)
            price[uidx] = newp
        t[active] = np.where(beyond, tb, cand)
        done = accept | (beyond & (tb >= t_stop))
        active = active[~done]
        rank += 1


def _sell_conserved(rates, latent, kernel, t_stop, rng, cfg, ev):
    j, x, width = cfg.offsets()
    mean = np.asarray(eval_latent_initial(x, latent)) * width * cfg.volume_scale / cfg.lot
    n = np.floor(mean).astype(np.int64)
    n += rng.uniform(size=len(mean)) < (mean - n)
    price = np.repeat(cfg.ref_ticks + j, n)
    lots = len(price)
    W = cfg.thinning_window
    r = cfg.ref_ticks
    t = np.zeros(lots)
    revealed = np.zeros(lots, bool)
    episode = np.full(lots, -1, np.int64)
    next_episode = 0
    rank = 0
    active = np.arange(lots)
    while len(active):
        ta = t[active]
        p = price[active]
        rev = revealed[active]
        x = np.log(p / r)
        tb = _window_end(ta, W, t_stop)
        hz_a = np.where(rev, rates.cancel_at(x, ta), rates.submit_at(x, ta))
        hz_b = np.where(rev, rates.cancel_at(x, tb), rates.submit_at(x, tb))
        hb = np.maximum(hz_a, hz_b) * (1 + 1e-12)
        upd = np.where(rev, kernel.rate, 0.0)
        total = hb + upd
        with np.errstate(divide="ignore"):
            cand = ta + rng.exponential(size=len(ta)) / total
        u = rng.uniform(size=len(ta)) * total
        beyond = cand >= tb
        is_update = ~beyond & (u < upd)
        is_cand = ~beyond & ~is_update
        accept = np.zeros(len(ta), bool)
        if is_cand.any():
            hz = np.where(rev[is_cand], rates.cancel_at(x[is_cand], cand[is_cand]),
                          rates.submit_at(x[is_cand], cand[is_cand]))
            accept[is_cand] = (u[is_cand] - upd[is_cand]) < hz
        reveal = accept & ~rev
        unreveal = accept & rev
        if reveal.any():
            idx = active[reveal]
            episode[idx] = next_episode + np.arange(len(idx))
            next_episode += len(idx)
            ev.add(cand[reveal], SUBMIT, SELL, price[idx], -1, episode[idx], rank)
        if unreveal.any():
            idx = active[unreveal]
            ev.add(cand[unreveal], CANCEL, SELL, price[idx], -1, episode[idx], rank)
        if is_update.any():
            idx = active[is_update]
            newp = np.maximum(price[idx] + kernel.draw(rng, len(idx)), 1)
            newp[newp == price[idx]] += 1
            ev.add(cand[is_update], UPDATE, SELL, price[idx], newp, episode[idx], rank)
            price[idx] = newp
        revealed[active[reveal]] = True
        revealed[active[unreveal]] = False
        t[active] = np.where(beyond, tb, cand)
        done = beyond & (tb >= t_stop)
        active = active[~done]
        rank += 1


def _simulate_two_sided(rates, latent, kernel, t_stop, rng, cfg, meta):
    """Event-by-event simulation with the indicative price recomputed after
    each event; buy intensities mirror the sell intensities."""
    j, x, width = cfg.offsets()
    r = cfg.ref_ticks
    span = int(max(abs(j.min()), j.max())) * 3 + 10
    lo = max(1, r - span)
    n = r + span - lo + 1
    vol = np.zeros((2, n), np.int64)
    W = min(cfg.thinning_window, 1.0)
    I = r
    ids: List[int] = []
    where: Dict[int, int] = {}
    o_side: Dict[int, int] = {}
    o_price: Dict[int, int] = {}
    rec_t, rec_kind, rec_side, rec_price, rec_new, rec_id = [], [], [], [], [], []
    next_id = 1
    t = 0.0
    lot = cfg.lot

    def remove(oid):
        k = where.pop(oid)
        last = ids.pop()
        if last != oid:
            ids[k] = last
            where[last] = k

    while t < t_stop:
        tb = min((math.floor(t / W) + 1.0) * W, t_stop)
        lam = np.maximum(_submission_intensity(rates, latent, cfg, x, width, t),
                         _submission_intensity(rates, latent, cfg, x, width, tb)) * (1 + 1e-12)
        cum = np.cumsum(lam)
        sub_total = 2.0 * cum[-1]
        cb = float(np.max(np.maximum(rates.cancel_at(x, t), rates.cancel_at(x, tb)))) * (1 + 1e-12)
        while True:
            total = sub_total + len(ids) * (cb + kernel.rate)
            if total <= 0:
                t = tb
                break
            cand = t + rng.exponential() / total
            if cand >= tb:
                t = tb
                break
            t = cand
            u = rng.uniform() * total
            changed = False
            if u < sub_total:
                side = SELL if u < cum[-1] else BUY
                k = int(np.searchsorted(cum, rng.uniform() * cum[-1], "right"))
                k = min(k, len(cum) - 1)
                if rng.uniform() * lam[k] < float(_submission_intensity(rates, latent, cfg, x[k], width[k], t)):
                    p = I + j[k] if side == SELL else I - j[k]
                    if 0 <= p - lo < n:
                        oid = next_id
                        next_id += 1
                        where[oid] = len(ids)
                        ids.append(oid)
                        o_side[oid], o_price[oid] = side, p
                        vol[side, p - lo] += lot
                        rec_t.append(t); rec_kind.append(SUBMIT); rec_side.append(side)
                        rec_price.append(p); rec_new.append(-1); rec_id.append(oid)
                        changed = True
            else:
                oid = ids[int(rng.integers(len(ids)))]
                side, p = o_side[oid], o_price[oid]
                if u - sub_total < len(ids) * cb:
                    xo = math.log(p / I) * (1 if side == SELL else -1)
                    if rng.uniform() * cb < float(rates.cancel_at(xo, t)):
                        vol[side, p - lo] -= lot
                        remove(oid)
                        rec_t.append(t); rec_kind.append(CANCEL); rec_side.append(side)
                        rec_price.append(p); rec_new.append(-1); rec_id.append(oid)
                        changed = True
                else:
                    q = int(p + kernel.draw(rng, 1)[0])
                    if 0 <= q - lo < n:
                        vol[side, p - lo] -= lot
                        vol[side, q - lo] += lot
                        o_price[oid] = q
                        rec_t.append(t); rec_kind.append(UPDATE); rec_side.append(side)
                        rec_price.append(p); rec_new.append(q); rec_id.append(oid)
                        changed = True
            if changed:
                idx = kernels.clearing_scan(vol[SELL], vol[BUY], 0, 0, r - lo)[0]
                I = r if idx < 0 else lo + int(idx)
    if not rec_t:
        return TickStream.empty(**meta)
    ts = np.floor(np.array(rec_t) * 1e6).astype(np.int64)
    m = len(ts)
    ids_arr = np.array(rec_id)
    agent = rng.choice(3, size=next_id, p=cfg.class_probs)[ids_arr - 1]
    return TickStream(ts, rec_kind, rec_side, rec_price, np.full(m, lot), rec_new, agent, ids_arr, **meta)
