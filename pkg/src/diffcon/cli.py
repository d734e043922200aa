"""Command-line entry point: ``simulate``, ``fit``, ``summarize``, ``basis-dump``.

Settings come from defaults, then an optional JSON ``--config`` file, then
flags. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import logging
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisSpec, build_basis, default_time_spec, equally_spaced_spec
from .data import DataError, build_covariates, ingest_csv, parse_window, read_series_csv, write_events_csv, write_series_csv
from .distributions import DecayKernel
from .model import ModelParams, NumericOverflowError
from .sampler import ChainConfig, PosteriorDraws, SamplerError, run_chain
from .simulate import (
    ExplosiveRegimeError,
    FatalitySampler,
    SimConfig,
    branching_ratio,
    simulate_branching,
    simulate_hierarchical,
)
from .storage import fmt, params_from_array, read_draws_csv, read_json, write_band_csv, write_draws_csv, write_json
from .summary import SummaryError, attribution_summary, ess_and_diagnostics, summarize

log = logging.getLogger("diffcon")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every setting of every command, with defaults."""

    # shared
    seed: int = 0
    outdir: str = "out"
    # fit
    input: str | None = None
    country: str | None = None
    window: str | None = None
    iters: int = 20_000
    burnin: int = 5_000
    thin: int = 5
    chains: int = 4
    jobs: int = 1
    adapt_window: int = 50
    hyperprior_a: float = 1.0
    hyperprior_b: float = 0.005
    include_prior_in_resample: bool = False
    store_latents: bool = True
    knot_spacing: int = 91
    fatality_knots: int = 7
    # simulate
    days: int = 1000
    mode: str = "hierarchical"
    baseline: float = 0.3
    delta: float = 0.5
    eta: list[float] | None = None
    fatality_max: float = 1000.0
    delay_mean: float = 2.0
    kernel_scale: float = 1.5
    sigma2: float = 2.0
    start_date: str = "2000-01-01"
    sim_country: str = "SIM"
    p_zero: float = 0.4
    mean_fatalities: float = 4.0
    record_truth: bool = True
    allow_explosive: bool = False

    @classmethod
    def from_sources(cls, path: str | None, overrides: dict) -> "RunConfig":
        values = {}
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                values.update(read_json(p))
            except ValueError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def chain_config(self, chain: int) -> ChainConfig:
        try:
            return ChainConfig(
                n_iterations=self.iters,
                n_burnin=self.burnin,
                thin_every=self.thin,
                rng_seed=self.seed + chain,
                adapt_window=self.adapt_window,
                hyperprior_a=self.hyperprior_a,
                hyperprior_b=self.hyperprior_b,
                include_prior_in_resample=self.include_prior_in_resample,
                store_latents=self.store_latents,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _metadata(cfg: RunConfig, command: str, **extra) -> dict:
    return {"command": command, "version": __version__, "config": asdict(cfg), **extra}


def _commit(tmp: Path, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for f in sorted(tmp.iterdir()):
        shutil.move(str(f), outdir / f.name)
    tmp.rmdir()


def _staging(outdir: Path) -> Path:
    outdir.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{outdir.name}-", dir=outdir.parent))


# --- simulate --------------------------------------------------------------------


def sim_config(cfg: RunConfig) -> SimConfig:
    try:
        start = dt.date.fromisoformat(cfg.start_date)
        if cfg.eta:
            eta = np.asarray(cfg.eta, dtype=float)
            if eta.size < 4:
                raise ConfigError("a fatality-dependent eta needs at least 4 cubic coefficients")
            fat_spec = equally_spaced_spec(0.0, float(np.log1p(cfg.fatality_max)), eta.size - 4)
        else:
            if cfg.delta <= 0:
                raise ConfigError("delta must be positive")
            eta = np.array([np.log(cfg.delta)])
            fat_spec = None
        if cfg.baseline <= 0:
            raise ConfigError("baseline must be positive")
        params = ModelParams([np.log(cfg.baseline)], eta, DecayKernel(cfg.delay_mean, cfg.kernel_scale), cfg.sigma2)
        return SimConfig(
            cfg.days,
            params,
            fatality_spec=fat_spec,
            fatality_sampler=FatalitySampler(cfg.p_zero, cfg.mean_fatalities),
            rng_seed=cfg.seed,
            record_truth=cfg.record_truth,
            start_date=start,
            allow_explosive=cfg.allow_explosive,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(cfg: RunConfig) -> int:
    sc = sim_config(cfg)
    if cfg.mode not in ("hierarchical", "branching"):
        raise ConfigError(f"unknown simulation mode {cfg.mode!r}")
    if cfg.mode == "hierarchical" and not cfg.allow_explosive:
        ratio = branching_ratio(sc.params, sc.fatality_sampler, sc.fatality_spec)
        if ratio >= 1.0:
            raise ExplosiveRegimeError(f"explosive regime: mean offspring per event is {ratio:.4g} >= 1")
    simulate = simulate_hierarchical if cfg.mode == "hierarchical" else simulate_branching
    series, truth = simulate(sc)
    outdir = Path(cfg.outdir)
    tmp = _staging(outdir)
    try:
        dates = [series.start_date + dt.timedelta(days=int(i)) for i in truth.event_day]
        write_events_csv(tmp / "events.csv", dates, truth.event_fatalities, cfg.sim_country)
        if cfg.record_truth:
            _write_truth(tmp / "truth.csv", series, truth)
        write_json(tmp / "metadata.json", _metadata(cfg, "simulate", events=int(series.counts.sum())))
        _commit(tmp, outdir)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    log.info("wrote %d events over %d days to %s", series.counts.sum(), len(series), outdir)
    return EXIT_OK


def _write_truth(path, series, truth) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "count", "fatalities", "diffusion", "contagion", "lam_c"])
        lam_c = truth.lam_c if truth.lam_c is not None else np.full(len(series), np.nan)
        for d, c, f, yd, yc, lc in zip(series.dates, series.counts, series.fatalities, truth.Yd, truth.Yc, lam_c):
            w.writerow([d.isoformat(), int(c), int(f), int(yd), int(yc), fmt(lc)])


# --- fit ---------------------------------------------------------------------------


def _run_one(args):
    series, X, W, chain_cfg = args
    return run_chain(series, X, W, chain_cfg)


def run_chains(series, X, W, cfg: RunConfig) -> list[PosteriorDraws]:
    jobs = [(series, X, W, cfg.chain_config(i)) for i in range(cfg.chains)]
    if cfg.jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, cfg.chains)) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def _write_summaries(tmp: Path, summary) -> None:
    write_band_csv(tmp / "diffusion_rate.csv", summary.diffusion, "day")
    write_band_csv(tmp / "excitation.csv", summary.excitation, "fatalities")
    write_band_csv(tmp / "decay.csv", summary.decay, "delay")
    with (tmp / "decay_summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "lower", "median", "upper"])
        b = summary.expected_delay
        w.writerow(["expected_delay", fmt(b.lower[0]), fmt(b.median[0]), fmt(b.upper[0])])
        for k, b in sorted(summary.tail_probs.items()):
            w.writerow([f"tail_prob_gt_{k}", fmt(b.lower[0]), fmt(b.median[0]), fmt(b.upper[0])])
        w.writerow(["explosive", "", str(int(summary.explosive)), ""])


def cmd_fit(cfg: RunConfig) -> int:
    if cfg.chains < 1:
        raise ConfigError("need at least one chain")
    if not cfg.input:
        raise ConfigError("fit needs --input")
    for i in range(cfg.chains):
        cfg.chain_config(i)  # validate before any work
    series = ingest_csv(cfg.input, cfg.country, parse_window(cfg.window))
    X, W = build_covariates(series, knot_spacing=cfg.knot_spacing, fatality_knots=cfg.fatality_knots)
    draws = run_chains(series, X, W, cfg)
    diag = ess_and_diagnostics(draws)
    outdir = Path(cfg.outdir)
    tmp = _staging(outdir)
    try:
        write_series_csv(tmp / "series.csv", series)
        for i, d in enumerate(draws):
            write_draws_csv(tmp / f"draws_chain{i}.csv", d)
        (tmp / "diagnostics.txt").write_text(diag.report())
        meta = _metadata(
            cfg,
            "fit",
            seeds=[d.seed for d in draws],
            time_basis=X.spec.to_dict(),
            fatality_basis=W.spec.to_dict(),
            fatality_domain="observed range of ln(fatalities + 1)",
            presample_history="zero (cold start)",
            ingest=series.notes,
            acceptance={i: d.accept_stats for i, d in enumerate(draws)},
        )
        write_json(tmp / "metadata.json", meta)
        if sum(len(d) for d in draws) >= 100:
            _write_summaries(tmp, summarize(draws, series, X, W))
        else:
            log.warning("fewer than 100 stored draws; summaries skipped")
        if cfg.store_latents:
            frac = attribution_summary(draws)
            with (tmp / "attribution.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["date", "count", "contagion_share"])
                for d, c, f in zip(series.dates, series.counts, frac):
                    w.writerow([d.isoformat(), int(c), fmt(f)])
        _commit(tmp, outdir)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return EXIT_OK


# --- summarize ------------------------------------------------------------------------


def load_fit(outdir: Path):
    meta_path = outdir / "metadata.json"
    if not meta_path.is_file():
        raise DataError(f"no fit metadata in {outdir}")
    meta = read_json(meta_path)
    series = read_series_csv(outdir / "series.csv")
    chain_files = sorted(outdir.glob("draws_chain*.csv"))
    if not chain_files:
        raise DataError(f"no draws in {outdir}")
    params = []
    for f in chain_files:
        names, values = read_draws_csv(f)
        params.extend(params_from_array(names, values))
    X = build_basis(BasisSpec.from_dict(meta["time_basis"]), np.arange(len(series), dtype=float))
    fspec = BasisSpec.from_dict(meta["fatality_basis"])
    lo, hi = fspec.domain
    W = build_basis(fspec, np.clip(series.log_fatalities, lo, hi))
    return meta, series, params, X, W


def cmd_summarize(cfg: RunConfig) -> int:
    outdir = Path(cfg.outdir)
    src = Path(cfg.input) if cfg.input else outdir
    meta, series, params, X, W = load_fit(src)
    summary = summarize(params, series, X, W)
    tmp = _staging(outdir)
    try:
        _write_summaries(tmp, summary)
        _commit(tmp, outdir)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return EXIT_OK


# --- basis-dump --------------------------------------------------------------------------


def cmd_basis_dump(cfg: RunConfig) -> int:
    if cfg.input:
        series = ingest_csv(cfg.input, cfg.country, parse_window(cfg.window))
        X, W = build_covariates(series, knot_spacing=cfg.knot_spacing, fatality_knots=cfg.fatality_knots)
        mats = {"time_basis.csv": X, "fatality_basis.csv": W}
    else:
        spec = default_time_spec(cfg.days, cfg.knot_spacing)
        mats = {"time_basis.csv": build_basis(spec, np.arange(cfg.days, dtype=float))}
    outdir = Path(cfg.outdir)
    tmp = _staging(outdir)
    try:
        for name, M in mats.items():
            with (tmp / name).open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([str(j) for j in range(M.shape[1])])
                for row in M.values:
                    w.writerow([fmt(v) for v in row])
        _commit(tmp, outdir)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "summarize": cmd_summarize,
    "basis-dump": cmd_basis_dump,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffcon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings (flags override it)")
    common.add_argument("--seed", type=int, help="base RNG seed; chain k uses seed + k")
    common.add_argument("--outdir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", help="event CSV (date,nkill,country or GTD columns)")
    data.add_argument("--country", help="keep only events from this country")
    data.add_argument("--window", help="analysis window START:END (ISO dates)")

    p = sub.add_parser("simulate", parents=[common], help="simulate an event CSV from known parameters")
    p.add_argument("--days", type=int, help="number of days")
    p.add_argument("--mode", choices=["hierarchical", "branching"])
    p.add_argument("--baseline", type=float, help="constant diffusion rate per day")
    p.add_argument("--delta", type=float, help="constant excitation (mean children per event)")
    p.add_argument("--delay-mean", dest="delay_mean", type=float, help="expected child delay in days (> 1)")
    p.add_argument("--kernel-scale", dest="kernel_scale", type=float, help="decay kernel scale")
    p.add_argument("--sigma2", type=float, help="negative binomial scale of the contagion layer")
    p.add_argument("--allow-explosive", dest="allow_explosive", action="store_true", default=None)

    p = sub.add_parser("fit", parents=[common, data], help="run the MCMC and write draws and summaries")
    p.add_argument("--iters", type=int, help="iterations per chain")
    p.add_argument("--burnin", type=int, help="burn-in iterations per chain")
    p.add_argument("--thin", type=int, help="keep every n-th post-burn-in draw")
    p.add_argument("--chains", type=int, help="number of chains")
    p.add_argument("--jobs", type=int, help="worker processes for chains")

    p = sub.add_parser("summarize", parents=[common], help="summary curves from an existing fit")
    p.add_argument("--input", help="fit directory (defaults to --outdir)")

    p = sub.add_parser("basis-dump", parents=[common, data], help="write evaluated design matrices as CSV")
    p.add_argument("--days", type=int, help="days for the time basis when no --input is given")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ExplosiveRegimeError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SummaryError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, NumericOverflowError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
