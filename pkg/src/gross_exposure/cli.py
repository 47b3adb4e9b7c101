"""Command-line interface.

Every subcommand writes its CSV outputs and a ``manifest.json`` into the
directory given by ``--out``. Exit codes: 0 success, 2 usage error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import BacktestConfig, BacktestError, run
from .core import AllocationVector, DimensionError
from .covariance import ESTIMATORS, estimate
from .experiments import (DEFAULT_C_GRID, DEFAULT_D_GRID, SOLVERS, improve_portfolio,
                          replicate, risk_sweep)
from .io import (DataFormatError, read_covariance, read_matrix, read_panel, read_weights,
                 write_covariance, write_manifest, write_panel, write_path, write_table,
                 write_weights)
from .lars import lars_path, transform_regression
from .qp import IterationLimit, InfeasibleProblem, SingularCovariance, solve, solve_gmv
from .simulation import FactorSimConfig, draw_panel, draw_universe
from .validation import NotPositiveSemiDefinite

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("gross_exposure")


class UsageError(ValueError):
    pass


def parse_grid(text: str) -> list[float]:
    """``"1,1.5,2"`` or ``"start:stop:step"`` (stop included)."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            k = int(np.floor((stop - start) / step + 1e-9))
            return [round(start + i * step, 12) for i in range(k + 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sim_config(args) -> FactorSimConfig:
    cfg = FactorSimConfig.from_file(args.config) if args.config else FactorSimConfig()
    changes = {k: getattr(args, k) for k in ("p", "n", "seed") if getattr(args, k) is not None}
    return cfg.replace(**changes) if changes else cfg


def _manifest(out: Path, args, outputs, parameters, seed=None, inputs=()):
    write_manifest(out / "manifest.json", args.command,
                   {k: getattr(args, k) for k in inputs if getattr(args, k, None)},
                   parameters, outputs, seed)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    out = _out_dir(args)
    universe = draw_universe(cfg)
    panel, factors = draw_panel(universe, cfg, args.replicate, return_factors=True)
    files = [out / "panel.csv", out / "factors.csv", out / "true_sigma.csv", out / "config.txt"]
    write_panel(panel, files[0])
    write_panel(factors, files[1])
    write_covariance(universe.true_sigma, files[2])
    files[3].write_text(cfg.to_text())
    _manifest(out, args, files, {"p": cfg.p, "n": cfg.n, "units": cfg.units,
                                 "replicate": args.replicate}, cfg.seed, ("config",))
    return EXIT_OK


def cmd_estimate(args) -> int:
    panel = read_panel(args.panel, args.periods_per_year)
    factors = read_panel(args.factors, args.periods_per_year) if args.factors else None
    if args.window:
        t = panel.n_periods
        panel = panel.window(t - args.window, t)
        factors = factors.window(t - args.window, t) if factors is not None else None
    sigma = estimate(args.estimator, panel, factors, args.lam)
    out = _out_dir(args)
    f = out / "covariance.csv"
    write_covariance(sigma, f)
    _manifest(out, args, [f], {"estimator": args.estimator, "window": args.window,
                               "lam": args.lam}, inputs=("panel", "factors"))
    return EXIT_OK


def cmd_optimize(args) -> int:
    sigma = read_covariance(args.cov)
    A = a = None
    if args.constraints:
        A, a = read_matrix(args.constraints)
        if A.shape[1] != sigma.n_assets:
            raise DimensionError(f"{args.constraints}: {A.shape[1]} coefficients per row, "
                                 f"covariance has {sigma.n_assets} assets")
    if not args.gmv and not args.no_short and args.c < 1:
        raise UsageError(f"--c must be at least 1, got {args.c}")
    if args.gmv:
        res, c = solve_gmv(sigma), None
    else:
        c = 1.0 if args.no_short else args.c
        res = solve(sigma, c, A, a)
    out = _out_dir(args)
    f = out / "weights.csv"
    write_weights(res.allocation, f, [f"variance={res.variance!r}",
                                      f"c={'gmv' if c is None else repr(c)}"])
    _manifest(out, args, [f], {"c": c, "gmv": args.gmv, "no_short": args.no_short},
              inputs=("cov", "constraints"))
    return EXIT_OK


def _target(args, sigma):
    if args.target == "no_short":
        return solve(sigma, 1.0).allocation
    if args.target == "equal":
        return AllocationVector.equal(sigma.n_assets, sigma.asset_ids)
    if args.target in sigma.asset_ids:
        return sigma.asset_ids.index(args.target)
    if Path(args.target).is_file():
        return read_weights(args.target).weights
    raise UsageError(f"--target {args.target!r} is not 'no_short', 'equal', an asset id "
                     "or a weights file")


def cmd_path(args) -> int:
    sigma = read_covariance(args.cov)
    problem = transform_regression(sigma, _target(args, sigma))
    path = lars_path(problem, max_d=args.d_max if args.d_max is not None else np.inf)
    out = _out_dir(args)
    files = [out / "path.csv"]
    write_path(path, files[0])
    if args.grid:
        rows = []
        for d in parse_grid(args.grid):
            alloc = path.allocation_at(d)
            rows.append({"d": d, "implied_c": path.implied_c_at(d),
                         "empirical_variance": problem.residual_variance(path.w_at(d)),
                         "gross_exposure": alloc.gross_exposure})
        files.append(out / "path_grid.csv")
        write_table(rows, files[1])
    _manifest(out, args, files, {"target": args.target, "d_max": args.d_max,
                                 "grid": args.grid}, inputs=("cov",))
    return EXIT_OK


def cmd_improve(args) -> int:
    panel = read_panel(args.panel, args.periods_per_year)
    if args.base:
        base = read_weights(args.base)
    else:
        base = AllocationVector.equal(panel.n_assets, panel.asset_ids)
    true = read_covariance(args.cov) if args.cov else None
    grid = parse_grid(args.grid) if args.grid else list(DEFAULT_D_GRID)
    if args.d_max is not None:
        grid = [d for d in grid if d <= args.d_max]
    rows = improve_portfolio(panel, base, true, grid)
    out = _out_dir(args)
    f = out / "improve.csv"
    write_table([r.as_row() for r in rows], f)
    _manifest(out, args, [f], {"grid": grid}, inputs=("panel", "base", "cov"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = parse_grid(args.grid) if args.grid else list(DEFAULT_C_GRID)
    out = _out_dir(args)
    cols = ["c", "oracle", "actual", "empirical", "a_n", "slack_actual_oracle",
            "slack_actual_empirical", "slack_oracle_empirical", "bounds_ok"]
    if args.cov:
        true = read_covariance(args.cov)
        if args.est_cov:
            est = read_covariance(args.est_cov)
        elif args.panel:
            panel = read_panel(args.panel, args.periods_per_year)
            factors = read_panel(args.factors, args.periods_per_year) if args.factors else None
            est = estimate(args.estimator[0], panel, factors)
        else:
            est = true
        triples = risk_sweep(true, est, grid, args.solver, args.periods_per_year)
        f = out / "sweep.csv"
        write_table([t.as_row() for t in triples], f, cols)
        _manifest(out, args, [f], {"grid": grid, "solver": args.solver,
                                   "estimator": args.estimator},
                  inputs=("cov", "est_cov", "panel", "factors"))
        return EXIT_OK
    cfg = _sim_config(args)
    res = replicate(cfg, args.reps, grid, args.estimator, args.solver)
    files = [out / "replicates.csv", out / "summary.csv"]
    write_table(res.rows, files[0], ["replicate", "estimator", *cols])
    write_table(res.summary, files[1])
    _manifest(out, args, files, {"grid": grid, "solver": args.solver, "reps": args.reps,
                                 "estimator": args.estimator, "p": cfg.p, "n": cfg.n},
              cfg.seed, ("config",))
    return EXIT_OK


def parse_strategies(text: str) -> list[tuple[str, float]]:
    """``"no_short,exact_qp:2,lars_approx:1.5,gmv,equal_weight"``."""
    out = []
    for item in text.split(","):
        name, _, c = item.strip().partition(":")
        try:
            out.append((name, float(c) if c else 2.0))
        except ValueError:
            raise UsageError(f"bad strategy {item!r}") from None
    return out


def cmd_backtest(args) -> int:
    panel = read_panel(args.panel, args.periods_per_year)
    factors = read_panel(args.factors, args.periods_per_year) if args.factors else None
    rows, summaries = [], []
    for name, c in parse_strategies(args.strategy):
        cfg = BacktestConfig(args.window, args.rebalance, args.estimator, name, c, args.y)
        rep = run(panel, cfg, factors)
        summaries.append(rep.summary())
        rows.extend({"strategy": rep.label, **r} for r in rep.rebalance_rows())
    out = _out_dir(args)
    files = [out / "rebalances.csv", out / "aggregate.csv"]
    write_table(rows, files[0])
    write_table(summaries, files[1])
    _manifest(out, args, files, {"window": args.window, "rebalance": args.rebalance,
                                 "estimator": args.estimator, "strategy": args.strategy,
                                 "y": args.y}, inputs=("panel", "factors"))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gross-exposure",
                                 description="Gross-exposure constrained portfolio tools.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        p.add_argument("--out", required=True, help="output directory")
        if "panel" in flags or "panel!" in flags:
            p.add_argument("--panel", required="panel!" in flags, help="return panel CSV")
            p.add_argument("--periods-per-year", type=int, default=252)
        if "factors" in flags:
            p.add_argument("--factors", help="factor panel CSV aligned with --panel")
        if "sim" in flags:
            p.add_argument("--config", help="simulation config (key = value lines)")
            p.add_argument("--p", type=int)
            p.add_argument("--n", type=int)
            p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("simulate", help="draw a factor-model panel"), "sim")
    p.add_argument("--replicate", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("estimate", help="estimate a covariance matrix"),
               "panel!", "factors")
    p.add_argument("--estimator", choices=sorted(ESTIMATORS), default="sample")
    p.add_argument("--window", type=int, help="use only the trailing WINDOW periods")
    p.add_argument("--lam", type=float, default=0.97)
    p.set_defaults(func=cmd_estimate)

    p = common(sub.add_parser("optimize", help="exact constrained minimum variance"))
    p.add_argument("--cov", required=True)
    p.add_argument("--c", type=float, default=1.0)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--no-short", action="store_true")
    mode.add_argument("--gmv", action="store_true")
    p.add_argument("--constraints", help="CSV rows 'a_1,...,a_p,rhs' for A w = a")
    p.set_defaults(func=cmd_optimize)

    p = common(sub.add_parser("path", help="LARS tracking solution path"))
    p.add_argument("--cov", required=True)
    p.add_argument("--target", default="no_short",
                   help="no_short, equal, an asset id, or a weights CSV")
    p.add_argument("--d-max", type=float)
    p.add_argument("--grid", help="d values to evaluate on the path")
    p.set_defaults(func=cmd_path)

    p = common(sub.add_parser("improve", help="improve a portfolio along the path"), "panel!")
    p.add_argument("--base", help="weights CSV (default: equal weights)")
    p.add_argument("--cov", help="true covariance for actual risks")
    p.add_argument("--grid", help="d grid (default 0:5:1)")
    p.add_argument("--d-max", type=float)
    p.set_defaults(func=cmd_improve)

    p = common(sub.add_parser("sweep", help="oracle / actual / empirical risk across c"),
               "panel", "factors", "sim")
    p.add_argument("--cov", help="true covariance; without it a simulation is run")
    p.add_argument("--est-cov", help="estimated covariance (default: from --panel, else --cov)")
    p.add_argument("--grid", help="c grid (default 1,1.5,2,3,4,5)")
    p.add_argument("--solver", choices=SOLVERS, default="exact")
    p.add_argument("--estimator", type=lambda s: tuple(s.split(",")), default=("sample",))
    p.add_argument("--reps", type=int, default=101)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("backtest", help="rolling-window backtest"), "panel!", "factors")
    p.add_argument("--estimator", choices=("sample", "factor", "ewma"), default="sample")
    p.add_argument("--window", type=int, default=252)
    p.add_argument("--rebalance", type=int, default=21)
    p.add_argument("--strategy", default="no_short,exact_qp:2,equal_weight",
                   help="comma list of no_short, exact_qp:C, lars_approx:C, gmv, equal_weight")
    p.add_argument("--y", default="no_short", help="tracked portfolio for lars_approx")
    p.set_defaults(func=cmd_backtest)
    return ap


def _classify(exc: BaseException) -> int:
    if isinstance(exc, BacktestError):
        return _classify(exc.cause)
    if isinstance(exc, (SingularCovariance, IterationLimit, InfeasibleProblem,
                        np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataFormatError, DimensionError, NotPositiveSemiDefinite, OSError)):
        return EXIT_DATA
    if isinstance(exc, (UsageError, ValueError)):
        return EXIT_USAGE
    return EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to the exit-code contract
        code = _classify(exc)
        print(f"gross-exposure {args.command}: {exc}", file=sys.stderr)
        if args.verbose:
            logger.exception("details")
        return code


if __name__ == "__main__":
    sys.exit(main())
