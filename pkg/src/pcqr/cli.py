"""Command-line entry point: ``pcqr fit | search-gamma | simulate | export-curve``.

Exit codes: 0 success, 2 bad input, 3 solver failure, 4 no non-crossing
gamma on the grid.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .artifacts import (InputError, fit_artifact, load_quantiles, parse_grid, read_dataset,
                        write_curve, write_json)
from .estimator import (FitError, GammaSearchError, fit_cqr, fit_pcqr, fit_scqr, search_gamma)
from .simulate import ScenarioError, load_scenarios, override, resolve_workers, simulate
from .solver import SolverSettings

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_NO_GAMMA = 0, 2, 3, 4

log = logging.getLogger("pcqr")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _settings(args) -> SolverSettings:
    try:
        return SolverSettings(abs_tol=args.tol, rel_tol=args.tol)
    except ValueError as exc:
        raise _Fail(EXIT_INPUT, str(exc)) from None


def _taus(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_fit(args) -> int:
    data = read_dataset(args.csv)
    settings = _settings(args)
    gamma = None
    try:
        if args.estimator == "cqr":
            model = fit_cqr(data, args.tau, settings)
        elif args.estimator == "pcqr":
            gamma = args.gamma if args.gamma is not None else 0.0
            model = fit_pcqr(data, args.tau, gamma, settings)
        else:
            taus = args.taus if args.taus else None
            if not taus:
                raise _Fail(EXIT_INPUT, "scqr needs --taus, e.g. --taus 0.1,0.5,0.9")
            model = fit_scqr(data, taus, args.C, settings)
    except FitError as exc:
        raise _Fail(EXIT_SOLVER, f"fit failed: {exc}") from None
    except ValueError as exc:
        raise _Fail(EXIT_INPUT, str(exc)) from None
    write_json(fit_artifact(model, args.estimator, data, gamma), args.out)
    return EXIT_OK


def cmd_search_gamma(args) -> int:
    data = read_dataset(args.csv)
    settings = _settings(args)
    try:
        res = search_gamma(data, args.tau1, args.tau2, args.step, args.gamma_max, settings)
    except GammaSearchError as exc:
        raise _Fail(EXIT_NO_GAMMA, f"no non-crossing gamma found: {exc}") from None
    except FitError as exc:
        raise _Fail(EXIT_SOLVER, f"fit failed during gamma search: {exc}") from None
    except ValueError as exc:
        raise _Fail(EXIT_INPUT, str(exc)) from None
    low = fit_artifact(res.model_low, "pcqr", data, res.gamma_star)
    high = fit_artifact(res.model_high, "pcqr", data, res.gamma_star)
    report = {
        "format_version": 1,
        "kind": "gamma_search",
        "tau1": args.tau1,
        "tau2": args.tau2,
        "step": args.step,
        "gamma_max": args.gamma_max,
        "gamma_star": res.gamma_star,
        "grid": [k * args.step for k in range(len(res.crossing_counts))],
        "crossing_counts": res.crossing_counts,
        "fits": {"low": low, "high": high},
    }
    write_json(report, args.out)
    if args.out not in (None, "-"):
        out = Path(args.out)
        write_json(low, out.with_name(out.stem + ".low.json"))
        write_json(high, out.with_name(out.stem + ".high.json"))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        scenarios = load_scenarios(args.scenarios)
        scenarios = override(scenarios, seed=args.seed, estimators=args.estimators,
                             step=args.step, gamma_max=args.gamma_max)
        workers = resolve_workers(args.workers)
    except ScenarioError as exc:
        raise _Fail(EXIT_INPUT, str(exc)) from None
    settings = _settings(args)
    command = {"name": "simulate", "scenario_file": Path(args.scenarios).name,
               "seed": args.seed, "estimators": args.estimators, "step": args.step,
               "gamma_max": args.gamma_max, "tol": args.tol}
    manifest = simulate(scenarios, args.out, workers, settings, command)
    log.info("wrote %d replications to %s (%d with failures)", manifest["replications_total"],
             args.out, manifest["replications_failed"])
    return EXIT_OK


def cmd_export_curve(args) -> int:
    quantiles = []
    for path in args.artifacts:
        quantiles.extend(load_quantiles(path))
    dims = {lq.inputs.shape[1] for lq in quantiles}
    if len(dims) != 1:
        raise _Fail(EXIT_INPUT, f"artifacts have mismatched input dimensions {sorted(dims)}")
    points = parse_grid(args.grid, quantiles[0].inputs)
    write_curve(args.out, points, quantiles)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcqr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pcqr {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--tol", type=float, default=1e-8,
                        help="solver absolute and relative tolerance (default 1e-8)")
        sp.add_argument("--out", required=out_required, default=None,
                        help="output path" + ("" if out_required else " (default stdout)"))

    f = sub.add_parser("fit", help="fit CQR, pCQR or sCQR on a CSV file")
    f.add_argument("csv")
    f.add_argument("--estimator", choices=["cqr", "pcqr", "scqr"], default="cqr")
    f.add_argument("--tau", type=float, default=0.5)
    f.add_argument("--gamma", type=float, default=None, help="pCQR penalty (default 0)")
    f.add_argument("--taus", type=_taus, default=None, help="sCQR quantiles, comma-separated")
    f.add_argument("--C", type=float, default=0.0, help="sCQR non-crossing margin (default 0)")
    common(f)
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("search-gamma", help="smallest grid gamma removing quantile crossing")
    g.add_argument("csv")
    g.add_argument("--tau1", type=float, required=True)
    g.add_argument("--tau2", type=float, required=True)
    g.add_argument("--step", type=float, default=0.01)
    g.add_argument("--gamma-max", type=float, default=10.0)
    common(g)
    g.set_defaults(func=cmd_search_gamma)

    s = sub.add_parser("simulate", help="run Monte Carlo scenarios from a JSON file")
    s.add_argument("scenarios")
    s.add_argument("--estimators", type=_csv_list, default=None,
                   help="override the scenario estimators (pcqr,scqr)")
    s.add_argument("--seed", type=int, default=None, help="override every scenario seed")
    s.add_argument("--workers", type=int, default=None,
                   help="worker processes (default $PCQR_WORKERS or CPU count)")
    s.add_argument("--step", type=float, default=None, help="override the gamma grid step")
    s.add_argument("--gamma-max", type=float, default=None, help="override the gamma limit")
    common(s, out_required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("export-curve", help="evaluate fitted quantiles on a grid")
    e.add_argument("artifacts", nargs="+", help="fit artifacts or gamma-search reports")
    e.add_argument("--grid", default="100", help="N, lo:hi:N or data (default 100)")
    common(e, out_required=True)
    e.set_defaults(func=cmd_export_curve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"pcqr {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except InputError as exc:
        print(f"pcqr {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
