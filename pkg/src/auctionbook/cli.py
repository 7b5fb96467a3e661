"""Command-line interface: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.  Every
run writes a JSON manifest with the resolved configuration; ``--from-manifest``
replays it.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__, kernels
from .auction_engine import (
    SimulationConfig,
    TickStream,
    UpdateKernel,
    brute_force_clearing,
    clear_stream,
    indicative_series,
    replay,
    simulate_flow,
    snapshot_stream,
)
from .calibration import DynamicConfig, Snapshots, fit_dynamic, fit_static, read_fit_params
from .errors import (
    ConfigurationError,
    DomainError,
    FitError,
    NoClearing,
    NumericalFailure,
    ParamFileError,
)
from .estimators import (
    EstimatorConfig,
    combine,
    estimate_cancel_rate,
    estimate_diffusion,
    estimate_submit_flux,
    estimate_update_rate,
    infer_submission_rate,
    nu_ratio,
    realized_volatility,
)
from .io import float_column, format_params, read_params, read_table, write_params, write_table
from .model_core import (
    DEFAULT_T,
    CancellationRateParams,
    DiffusionSchedule,
    LatentBookParams,
    StationaryFitParams,
    SubmissionRateParams,
    eval_deadline_solution,
    eval_stationary_revealed,
    eval_time_independent_dynamic,
)
from .pde_solver import DensityField, PriceGrid, RateModel, integrate, write_snapshots
from .scaling import DEFAULT_BOUNDARIES, PriceEnsemble, RegimeSegmentation, scaling_report, write_report

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- parameter helpers


def _get(d: Dict, key: str, default=None, cast=float):
    if key in d:
        try:
            return cast(d[key])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"parameter {key!r}: cannot convert {d[key]!r}") from exc
    if default is None:
        raise ConfigurationError(f"missing parameter {key!r}")
    return default


def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def latent_from(d) -> LatentBookParams:
    return LatentBookParams(_get(d, "a"), _get(d, "b"))


def rates_from(d) -> RateModel:
    """Submission (two-exponential when ``x_r`` is present, else constant ``nu_r``) and
    cancellation (constant ``nu_l`` or deadline ``C_l, gamma_l, t_l0``) from a parameter dict."""
    T = _get(d, "T", DEFAULT_T)
    if "C_l" in d:
        canc = CancellationRateParams.deadline(_get(d, "C_l"), _get(d, "gamma_l"), _get(d, "t_l0"), T)
    else:
        canc = CancellationRateParams.constant(_get(d, "nu_l"), T)
    if "x_r" in d:
        sub = SubmissionRateParams(C_r=_get(d, "C_r"), x_r=_get(d, "x_r"), k=_get(d, "k"), w=_get(d, "w"),
                                   gamma_r=_get(d, "gamma_r"), t_r0=_get(d, "t_r0"), x_0=_get(d, "x_0"),
                                   m=_get(d, "m"), T=T)
        return RateModel.from_params(sub, canc)
    if canc.kind != "constant":
        raise ConfigurationError("constant submission needs a constant cancellation rate")
    return RateModel.static(_get(d, "nu_r"), canc.nu_l)


def diffusion_from(d) -> DiffusionSchedule:
    kind = str(d.get("diffusion", "zero"))
    if kind == "zero":
        return DiffusionSchedule.zero()
    if kind == "constant":
        return DiffusionSchedule.constant(_get(d, "D_r", 0.0), _get(d, "D_l", 0.0))
    if kind == "time":
        return DiffusionSchedule.time_varying(_get(d, "D_0"), _get(d, "D_T"), _get(d, "T_s", 180.0),
                                              _get(d, "D_l", 0.0))
    raise ConfigurationError(f"unknown diffusion kind {kind!r}")


def grid_from(d) -> PriceGrid:
    return PriceGrid(_get(d, "x_min", -0.05), _get(d, "x_max", 0.05), _get(d, "n", 1001, int))


def sim_config_from(d) -> SimulationConfig:
    base = SimulationConfig()
    return SimulationConfig(
        tick_size=_get(d, "tick_size", base.tick_size), ref_price=_get(d, "ref_price", base.ref_price),
        volume_scale=_get(d, "volume_scale", base.volume_scale), lot=_get(d, "lot", base.lot, int),
        x_min=_get(d, "x_min", base.x_min), x_max=_get(d, "x_max", base.x_max),
        latent_mode=str(d.get("latent_mode", base.latent_mode)), two_sided=bool(d.get("two_sided", False)),
        clearing_window=_get(d, "clearing_window", base.clearing_window),
    )


def _stream_files(path) -> List[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.suffix in (".tsv", ".csv") and f.is_file())
        if not files:
            raise ConfigurationError(f"{p}: no .tsv/.csv files")
        return files
    if not p.exists():
        raise ConfigurationError(f"{p}: no such file or directory")
    return [p]


def _streams(path) -> List[TickStream]:
    return [TickStream.read(f) for f in _stream_files(path)]


def _est_config(args) -> EstimatorConfig:
    agents = tuple(args.agents.split(",")) if getattr(args, "agents", None) else None
    return EstimatorConfig(dx=args.dx, dt=args.dt, x_min=args.x_min, x_max=args.x_max, agent_classes=agents,
                           normalize=args.normalize)


def _out(text: str, path: Optional[str]):
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def cmd_solve_closed(args) -> dict:
    p = read_params(args.params)
    grid = grid_from(read_params(args.grid)) if args.grid else PriceGrid()
    x = grid.x
    if args.eq == "stationary":
        f = StationaryFitParams(_get(p, "scaled_a"), _get(p, "scaled_b"), _get(p, "x_r"), _get(p, "k"),
                                _get(p, "w"))
        write_table(args.out, ["x", "rho_r"], [x, eval_stationary_revealed(x, f)])
        return {"rows": x.size}
    times = _floats(args.times if args.times else p.get("times", "300"))
    latent = latent_from(p)
    ts, xs, vals = [], [], []
    for t in times:
        if args.eq == "time-independent":
            v = eval_time_independent_dynamic(x, t, _get(p, "nu_r"), _get(p, "nu_l"), latent)
        else:
            v = eval_deadline_solution(x, t, _get(p, "C_r"), _get(p, "C_l"), _get(p, "gamma"), _get(p, "t0"),
                                       latent)
        ts.append(np.full(x.size, t))
        xs.append(x)
        vals.append(v)
    write_table(args.out, ["t", "x", "rho_r"], [np.concatenate(ts), np.concatenate(xs), np.concatenate(vals)])
    return {"rows": x.size * len(times)}


def cmd_solve_pde(args) -> dict:
    p = read_params(args.params)
    grid = grid_from(read_params(args.grid)) if args.grid else PriceGrid()
    latent = latent_from(p)
    times = _floats(args.times if args.times else p.get("times", "300"))
    fields = integrate(DensityField.initial(grid, latent), rates_from(p), diffusion_from(p), max(times),
                       args.dt, times, latent=latent, scheme=args.scheme)
    write_snapshots(fields, args.out)
    return {"snapshots": len(fields)}


def cmd_simulate(args) -> dict:
    p = read_params(args.params)
    cfg = sim_config_from(p)
    kernel = UpdateKernel(_get(p, "update_rate", 0.0), _get(p, "jump_std_ticks", 1.0))
    rates = rates_from(p)
    latent = latent_from(p)
    horizon = float(p["horizon"]) if "horizon" in p else None
    if args.days == 1:
        s = simulate_flow(rates, latent, kernel, horizon, args.seed, cfg)
        s.write(args.out)
        return {"events": len(s)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    total = 0
    for i in range(args.days):
        s = simulate_flow(rates, latent, kernel, horizon, args.seed + i, cfg)
        s.write(out / f"day_{i:04d}.tsv")
        total += len(s)
    return {"events": total, "days": args.days}


def cmd_clear(args) -> dict:
    s = TickStream.read(args.input)
    res = clear_stream(s)
    vals = {"price_ticks": res.price, "price": res.price * s.tick_size, "matched_volume": res.matched_volume,
            "surplus": res.surplus, "surplus_side": res.surplus_side}
    if args.check:
        book = replay(s, s.clearing_time)
        if s.mirror_buy:
            book = book.mirrored()
        brute = brute_force_clearing(book)
        vals["brute_force_agrees"] = brute == res
    _out(format_params(vals), args.out)
    return vals


def cmd_snapshot(args) -> dict:
    s = TickStream.read(args.input)
    times = _floats(args.times)
    tab = snapshot_stream(s, times, args.bucket, args.q_a, x_window=(args.x_min, args.x_max))
    write_table(args.out, ["t", "x", "density", "indicative_ticks"], [tab.t, tab.x, tab.density, tab.indicative])
    return {"rows": tab.t.size}


def cmd_estimate_rates(args) -> dict:
    cfg = _est_config(args)
    streams = _streams(args.input)
    cancel = combine([estimate_cancel_rate(s, cfg) for s in streams])
    cancel.write(args.out_cancel)
    info = {"days": len(streams)}
    if args.out_flux or args.out_submit:
        if not args.q_a:
            raise ConfigurationError("--q-a is required for submission flux")
        flux = combine([estimate_submit_flux(s, cfg, args.q_a) for s in streams])
        if args.out_flux:
            flux.write(args.out_flux)
        if args.out_submit:
            if not args.latent:
                raise ConfigurationError("--latent parameter file (a, b) is required for --out-submit")
            infer_submission_rate(flux, latent_from(read_params(args.latent))).write(args.out_submit)
    return info


def cmd_estimate_diffusion(args) -> dict:
    cfg = _est_config(args)
    streams = _streams(args.input)
    sigmas, nums, expo = [], 0.0, 0.0
    for s in streams:
        end = int(np.floor(min(s.clearing_time or s.T, s.T)))
        prices = indicative_series(s, np.arange(0, end + 1, dtype=float))
        sigmas.append(realized_volatility(prices.astype(float)))
        u = estimate_update_rate(s, cfg)
        nums = nums + u.update_term * u.exposure
        expo = expo + u.exposure
    with np.errstate(invalid="ignore", divide="ignore"):
        term = np.where(expo > 0, nums / np.where(expo > 0, expo, 1.0), 0.0)
    u.update_term = term
    est = estimate_diffusion(float(np.median(sigmas)), u, args.var_beta)
    _out(est.report(), args.out)
    return est.summary()


def cmd_fit_static(args) -> dict:
    cols = read_table(args.input)
    if "x" not in cols or "density" not in cols:
        raise ConfigurationError(f"{args.input}: need columns x and density")
    fit = fit_static(float_column(cols["x"]), float_column(cols["density"]), args.window, args.starts, args.seed,
                     maxfev=args.maxfev, threads=args.threads)
    fit.write(args.out)
    return {"objective": fit.objective}


def _read_snapshots(path) -> Snapshots:
    cols = read_table(path)
    key = "rho_r" if "rho_r" in cols else "density"
    if "t" not in cols or "x" not in cols or key not in cols:
        raise ConfigurationError(f"{path}: need columns t, x and rho_r (or density)")
    t, x, v = float_column(cols["t"]), float_column(cols["x"]), float_column(cols[key])
    ts, xs = np.unique(t), np.unique(x)
    if ts.size * xs.size != t.size:
        raise ConfigurationError(f"{path}: snapshot rows do not form a full (t, x) grid")
    order = np.lexsort((x, t))
    return Snapshots(ts, xs, v[order].reshape(ts.size, xs.size))


def cmd_fit_dynamic(args) -> dict:
    p = read_params(args.params)
    cfg = DynamicConfig(latent=latent_from(p), gamma_r=_get(p, "gamma_r"), t_r0=_get(p, "t_r0"),
                        T=_get(p, "T", DEFAULT_T), dt=args.dt)
    frozen = read_fit_params(args.frozen) if args.frozen else None
    fit = fit_dynamic(_read_snapshots(args.input), cfg, args.variant, frozen, args.starts, args.seed,
                      maxfev=args.maxfev, threads=args.threads)
    fit.write(args.out)
    return {"objective": fit.objective}


def _regimes(text) -> RegimeSegmentation:
    if text in (None, "default"):
        return RegimeSegmentation(DEFAULT_BOUNDARIES)
    return RegimeSegmentation(tuple(int(float(v)) for v in text.split(",")))


def _load_ensemble(path, T: float) -> PriceEnsemble:
    rows = []
    for f in _stream_files(path):
        cols = read_table(f)
        if "price" in cols:
            rows.append(float_column(cols["price"]))
        else:
            s = TickStream.read(f)
            rows.append(indicative_series(s, np.arange(0, int(T) + 1, dtype=float)) * s.tick_size)
    n = min(len(r) for r in rows)
    return PriceEnsemble.from_prices(np.array([r[:n] for r in rows]))


def cmd_scaling(args) -> dict:
    seg = _regimes(args.regimes)
    ens = _load_ensemble(args.input, seg.boundaries[-1])
    rows = scaling_report(ens, args.stock, seg, args.boot, args.seed, args.force)
    write_report(rows, args.out)
    return {"regimes": len(rows), "days": ens.n_days}


def cmd_ratio(args) -> dict:
    ratios = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for s in _streams(args.input):
            ratios.append(nu_ratio(s, args.window, args.band))
    r = np.array(ratios)
    vals = {"days": r.size, "median": float(np.median(r)), "mean_finite": float(np.mean(r[np.isfinite(r)]))
            if np.isfinite(r).any() else float("nan")}
    _out(format_params(vals), args.out)
    return vals


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="auctionbook", description="Latent/revealed order-book model for call auctions.")
    ap.add_argument("--version", action="version", version=f"auctionbook {__version__}")
    ap.add_argument("--from-manifest", help="re-run the command recorded in a manifest")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (results do not depend on it)")
        p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
        if out_required is not None:
            p.add_argument("--out", required=out_required)
        return p

    def est(p):
        p.add_argument("--dx", type=float, default=2e-4)
        p.add_argument("--dt", type=float, default=2.0)
        p.add_argument("--x-min", type=float, default=-0.05)
        p.add_argument("--x-max", type=float, default=0.05)
        p.add_argument("--agents", help="comma list of HFT,MIX,NON")
        p.add_argument("--normalize", choices=("exposure", "bin"), default="exposure")

    p = common(sub.add_parser("solve-closed", help="closed-form revealed densities"))
    p.add_argument("--eq", choices=("time-independent", "deadline", "stationary"), required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--grid")
    p.add_argument("--times", help="comma list of times")
    p.set_defaults(func=cmd_solve_closed)

    p = common(sub.add_parser("solve-pde", help="numerical solution of the revealed/latent system"))
    p.add_argument("--params", required=True)
    p.add_argument("--grid")
    p.add_argument("--times")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--scheme", choices=("cn", "explicit"), default="cn")
    p.set_defaults(func=cmd_solve_pde)

    p = common(sub.add_parser("simulate", help="synthetic auction order flow"))
    p.add_argument("--params", required=True)
    p.add_argument("--days", type=int, default=1, help="with N > 1, --out is a directory")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("clear", help="clearing price of a tick stream"), out_required=False)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--check", action="store_true", help="compare with exhaustive search")
    p.set_defaults(func=cmd_clear)

    p = common(sub.add_parser("snapshot", help="revealed density snapshots from ticks"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--times", required=True)
    p.add_argument("--bucket", type=float, default=2e-4)
    p.add_argument("--q-a", type=float)
    p.add_argument("--x-min", type=float, default=-0.05)
    p.add_argument("--x-max", type=float, default=0.05)
    p.set_defaults(func=cmd_snapshot)

    p = common(sub.add_parser("estimate-rates", help="cancellation and submission rates"), out_required=None)
    p.add_argument("--in", dest="input", required=True, help="tick file or directory of days")
    p.add_argument("--out-cancel", required=True)
    p.add_argument("--out-flux")
    p.add_argument("--out-submit")
    p.add_argument("--q-a", type=float)
    p.add_argument("--latent", help="parameter file with a, b")
    est(p)
    p.set_defaults(func=cmd_estimate_rates)

    p = common(sub.add_parser("estimate-diffusion", help="volatility and price-update terms"),
               out_required=False)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--var-beta", type=float, default=1.0)
    est(p)
    p.set_defaults(func=cmd_estimate_diffusion)

    p = common(sub.add_parser("fit-static", help="fit the stationary ansatz to a book"))
    p.add_argument("--in", dest="input", required=True, help="table with columns x, density")
    p.add_argument("--window", type=float, default=0.05)
    p.add_argument("--starts", type=int, default=18)
    p.add_argument("--maxfev", type=int, default=2000, help="evaluation budget per start")
    p.set_defaults(func=cmd_fit_static)

    p = common(sub.add_parser("fit-dynamic", help="fit the dynamic model to snapshots"))
    p.add_argument("--in", dest="input", required=True, help="table with columns t, x, rho_r")
    p.add_argument("--params", required=True, help="fixed inputs: a, b, gamma_r, t_r0")
    p.add_argument("--variant", choices=("zero", "constant-diffusion", "time-diffusion"), default="zero")
    p.add_argument("--frozen", help="zero-diffusion fit file (diffusion variants)")
    p.add_argument("--starts", type=int, default=18)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--maxfev", type=int, default=1500, help="evaluation budget per start")
    p.set_defaults(func=cmd_fit_dynamic)

    p = common(sub.add_parser("scaling", help="H, J, L, M exponents per regime"))
    p.add_argument("--in", dest="input", required=True, help="directory of price series or tick files")
    p.add_argument("--regimes", default="default")
    p.add_argument("--stock", default="SYN")
    p.add_argument("--boot", type=int, default=200)
    p.add_argument("--force", action="store_true", help="report H in regime 1 and J in the last regime")
    p.set_defaults(func=cmd_scaling)

    p = common(sub.add_parser("ratio", help="submissions over cancellations near x=0"), out_required=False)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", type=float, default=30.0)
    p.add_argument("--band", type=float, default=1e-3)
    p.set_defaults(func=cmd_ratio)
    return ap


# ---------------------------------------------------------------- entry points


def _manifest_path(args) -> Optional[Path]:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    out = getattr(args, "out", None) or getattr(args, "out_cancel", None)
    return Path(str(out) + ".manifest.json") if out else None


def _write_manifest(args, argv, result):
    path = _manifest_path(args)
    if path is None:
        return
    config = {k: v for k, v in vars(args).items() if k not in ("func", "from_manifest")}
    doc = {"command": args.command, "argv": list(argv), "config": config, "version": __version__,
           "backend": kernels.BACKEND, "result": result, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.from_manifest:
            doc = json.loads(Path(args.from_manifest).read_text())
            argv = list(doc["argv"])
            args = parser.parse_args(argv)
            if args.from_manifest:
                raise UsageError("manifest argv must not itself use --from-manifest")
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        result = args.func(args)
        _write_manifest(args, argv, result)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParamFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, DomainError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, FitError, NoClearing, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
