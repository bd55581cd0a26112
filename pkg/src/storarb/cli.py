"""Command-line front end: solve, verify, sensitivity, simulate, oracle, genprices.

File formats
------------
Prices are CSV with a header, either ``t,price`` or ``t,buy_price,sell_price``,
with t running 1..T without gaps.  The store is a JSON object with keys
``capacity``, ``input_rate``, ``output_rate``, ``leakage``, ``initial_level``,
``terminal_level``, ``efficiency``, ``impact_lambda`` and ``cost_model``
("price_taker" or "quadratic_impact"; the impact slope is impact_lambda
times the wholesale price).  Solutions are written as JSON (lossless floats)
or as per-step CSV rows ``t,level,control,mu,lookahead`` for plotting the
level and look-ahead traces.

Exit codes: 0 success, 1 domain error (infeasible instance, failed
certificate, bad data), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import pricegen
from .costs import (
    PriceImpactParams,
    PriceOrder,
    piecewise_linear_cost,
    quadratic_impact_cost,
)
from .model import BadSpec, Infeasible, Instance, Schedule, StoreSpec, validate_instance
from .oracle import BudgetExceeded, GridSpec, compare, dp_solve
from .rolling import (
    Backcast,
    ConditionalExpectation,
    PerfectForesight,
    generate_martingale_paths,
    rolling_intrinsic,
)
from .sensitivity import finite_difference_check, sensitivity_report
from .solver import (
    BracketFailure,
    NoConvergence,
    Solution,
    SolverOptions,
    horizon_profile,
    solve,
)
from .verify import check_kkt

__all__ = ["run", "main", "load_prices", "write_solution", "read_solution",
           "ParseError", "GapError", "PriceTable", "StoreConfig"]

_FMT = ".12g"


class ParseError(ValueError):
    """Malformed price file; the message carries the offending line number."""


class GapError(ParseError):
    """Time indices in a price file are not consecutive from 1."""


@dataclass(frozen=True)
class PriceTable:
    price: np.ndarray | None
    buy: np.ndarray | None
    sell: np.ndarray | None

    @property
    def T(self) -> int:
        return len(self.price) if self.price is not None else len(self.buy)


@dataclass(frozen=True)
class StoreConfig:
    capacity: float
    input_rate: float
    output_rate: float
    leakage: float = 1.0
    initial_level: float = 0.0
    terminal_level: float = 0.0
    efficiency: float = 1.0
    impact_lambda: float = 0.0
    cost_model: str = "price_taker"

    def spec(self) -> StoreSpec:
        return StoreSpec(
            capacity=self.capacity,
            input_rate=self.input_rate,
            output_rate=self.output_rate,
            leakage=self.leakage,
            initial_level=self.initial_level,
            terminal_level=self.terminal_level,
        )


def load_config(path: str) -> StoreConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = {f for f in StoreConfig.__dataclass_fields__}
    extra = set(raw) - known
    if extra:
        raise ParseError(f"unknown config keys: {sorted(extra)}")
    cfg = StoreConfig(**raw)
    if cfg.cost_model not in ("price_taker", "quadratic_impact"):
        raise ParseError(f"cost_model must be price_taker or quadratic_impact, got {cfg.cost_model!r}")
    if not 0.0 < cfg.efficiency <= 1.0:
        raise ParseError(f"efficiency must be in (0, 1], got {cfg.efficiency}")
    if cfg.impact_lambda < 0.0:
        raise ParseError(f"impact_lambda must be >= 0, got {cfg.impact_lambda}")
    return cfg


def load_prices(path: str) -> PriceTable:
    """Parse a price CSV; see the module docstring for the accepted schemas."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header == ["t", "price"]:
            two_sided = False
        elif header == ["t", "buy_price", "sell_price"]:
            two_sided = True
        else:
            raise ParseError(
                f"{path}: line 1: header must be 't,price' or "
                f"'t,buy_price,sell_price', got {','.join(header)!r}"
            )
        ts: list[int] = []
        col1: list[float] = []
        col2: list[float] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            want = 3 if two_sided else 2
            if len(row) != want:
                raise ParseError(f"{path}: line {lineno}: expected {want} fields")
            try:
                t = int(row[0])
                v1 = float(row[1])
                v2 = float(row[2]) if two_sided else 0.0
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            expected = len(ts) + 1
            if t != expected:
                raise GapError(f"{path}: line {lineno}: expected t={expected}, got t={t}")
            if two_sided and v1 < v2:
                raise PriceOrder(
                    f"{path}: line {lineno}: buy price {v1} below sell price {v2}"
                )
            ts.append(t)
            col1.append(v1)
            col2.append(v2)
    if not ts:
        raise ParseError(f"{path}: no data rows")
    if two_sided:
        return PriceTable(price=None, buy=np.array(col1), sell=np.array(col2))
    return PriceTable(price=np.array(col1), buy=None, sell=None)


def build_instance(cfg: StoreConfig, prices: PriceTable) -> Instance:
    spec = cfg.spec()
    eta = cfg.efficiency
    costs = []
    if cfg.cost_model == "quadratic_impact":
        if prices.price is None:
            raise ParseError("quadratic_impact requires the single-price schema")
        for p in prices.price:
            costs.append(
                quadratic_impact_cost(
                    PriceImpactParams(
                        wholesale_price=float(p),
                        impact_slope=cfg.impact_lambda * float(p),
                        efficiency=eta,
                    )
                )
            )
    else:
        if prices.price is not None:
            for p in prices.price:
                costs.append(piecewise_linear_cost(float(p), eta * float(p)))
        else:
            for b, s in zip(prices.buy, prices.sell):
                costs.append(piecewise_linear_cost(float(b), eta * float(s)))
    return Instance(spec=spec, costs=tuple(costs))


def _solution_dict(solution: Solution, cfg: StoreConfig) -> dict:
    return {
        "levels": [float(v) for v in solution.schedule.levels],
        "controls": [float(v) for v in solution.schedule.controls],
        "multipliers": [float(v) for v in solution.multipliers],
        "segment_ends": list(solution.segment_ends),
        "horizons": list(solution.horizons),
        "objective": float(solution.objective),
        "boundary_band": float(solution.boundary_band),
        "spec": {
            "capacity": cfg.capacity,
            "input_rate": cfg.input_rate,
            "output_rate": cfg.output_rate,
            "leakage": cfg.leakage,
            "initial_level": cfg.initial_level,
            "terminal_level": cfg.terminal_level,
            "efficiency": cfg.efficiency,
            "impact_lambda": cfg.impact_lambda,
            "cost_model": cfg.cost_model,
        },
    }


def write_solution(solution: Solution, path: str, fmt: str = "json", cfg: StoreConfig | None = None) -> None:
    """Serialise a solution; JSON keeps full float precision, CSV emits the
    per-step plotting rows."""
    if fmt == "json":
        if cfg is None:
            raise ValueError("JSON output needs the store config for the spec block")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_solution_dict(solution, cfg), fh, indent=2)
            fh.write("\n")
    elif fmt == "csv":
        lookahead = dict(horizon_profile(solution))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "level", "control", "mu", "lookahead"])
            for t in range(1, solution.schedule.T + 1):
                w.writerow(
                    [
                        t,
                        format(solution.schedule.levels[t], _FMT),
                        format(solution.schedule.controls[t - 1], _FMT),
                        format(solution.multipliers[t - 1], _FMT),
                        lookahead[t],
                    ]
                )
    else:
        raise ValueError(f"format must be json or csv, got {fmt!r}")


def read_solution(path: str) -> tuple[Solution, StoreConfig]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    cfg = StoreConfig(**raw["spec"])
    schedule = Schedule(levels=np.array(raw["levels"], dtype=float), rho=cfg.leakage)
    sol = Solution(
        schedule=schedule,
        multipliers=np.array(raw["multipliers"], dtype=float),
        segment_ends=tuple(raw["segment_ends"]),
        horizons=tuple(raw["horizons"]),
        objective=float(raw["objective"]),
        boundary_band=float(raw["boundary_band"]),
        segment_mu=tuple(
            raw["multipliers"][end - 1] for end in raw["segment_ends"]
        ),
    )
    return sol, cfg


def _solver_options(args) -> SolverOptions:
    return SolverOptions(
        mu_tolerance=args.mu_tol,
        regularization=args.reg_delta,
    )


def _add_common(p: argparse.ArgumentParser, prices_required=True):
    p.add_argument("--prices", required=prices_required, help="price CSV file")
    p.add_argument("--config", required=True, help="store JSON file")
    p.add_argument("--mu-tol", type=float, default=None, help="bisection tolerance")
    p.add_argument("--reg-delta", type=float, default=None,
                   help="regularization curvature (0 disables)")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="storarb",
                                 description="optimal storage arbitrage control")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve an instance and write the plan")
    _add_common(p)
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("verify", help="certify a solution file")
    p.add_argument("--solution", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--tol", type=float, default=1e-6)

    p = sub.add_parser("sensitivity", help="constraint sensitivities of the optimum")
    _add_common(p)
    p.add_argument("--fd", choices=("E", "Pi", "Po"), default=None,
                   help="also run a central finite-difference cross-check")
    p.add_argument("--fd-step", type=float, default=1e-4)

    p = sub.add_parser("simulate", help="rolling-intrinsic Monte Carlo")
    _add_common(p)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--paths", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forecaster", choices=("perfect", "expectation", "backcast"),
                   default="expectation")
    p.add_argument("--backcast-window", type=int, default=48)
    p.add_argument("--out", default=None, help="optional JSON output path")

    p = sub.add_parser("oracle", help="grid dynamic-programming cross-check")
    _add_common(p)
    p.add_argument("--grid", type=int, default=201, help="level grid points")

    p = sub.add_parser("genprices", help="generate a synthetic price CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=336)
    p.add_argument("--mean", type=float, default=pricegen.DEFAULT_PROFILE.mean)
    p.add_argument("--harmonic", action="append", default=None, metavar="PERIOD:AMP:PHASE",
                   help="repeatable; default 48:15:0 and 336:5:0")
    p.add_argument("--noise", type=float, default=pricegen.DEFAULT_PROFILE.noise_sigma)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--allow-negative", action="store_true")
    return ap


def _cmd_solve(args) -> int:
    cfg = load_config(args.config)
    inst = build_instance(cfg, load_prices(args.prices))
    sol = solve(validate_instance(inst), _solver_options(args))
    write_solution(sol, args.out, fmt=args.format, cfg=cfg)
    print(f"objective {format(sol.objective, _FMT)} "
          f"segments {len(sol.segment_ends)}")
    return 0


def _cmd_verify(args) -> int:
    sol, cfg = read_solution(args.solution)
    inst = build_instance(cfg, load_prices(args.prices))
    cert = check_kkt(inst, sol.schedule, sol.multipliers, tol=args.tol,
                     boundary_band=sol.boundary_band)
    print(
        f"feasibility {format(cert.worst_feasibility_violation, _FMT)} "
        f"response_slack {format(cert.worst_response_slack, _FMT)} "
        f"slackness {format(cert.worst_slackness_violation, _FMT)} "
        f"passed {cert.passed}"
    )
    for w in cert.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not cert.passed:
        print("certificate failed", file=sys.stderr)
        return 1
    return 0


def _cmd_sensitivity(args) -> int:
    cfg = load_config(args.config)
    inst = build_instance(cfg, load_prices(args.prices))
    sol = solve(validate_instance(inst), _solver_options(args))
    rep = sensitivity_report(inst, sol)
    print(f"dV_dE {format(rep.dV_dE, _FMT)}")
    print(f"dV_dPi {format(rep.dV_dPi, _FMT)}")
    print(f"dV_dPo {format(rep.dV_dPo, _FMT)}")
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.fd:
        fd = finite_difference_check(inst, args.fd_step, args.fd, _solver_options(args))
        print(f"fd_{args.fd} {format(fd.central_difference, _FMT)} "
              f"gap {format(fd.abs_gap, _FMT)}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    prices = load_prices(args.prices)
    inst = build_instance(cfg, prices)
    opts = _solver_options(args)
    scenarios = generate_martingale_paths(inst.costs, args.sigma, args.paths, args.seed)
    if args.forecaster == "perfect":
        fc = PerfectForesight()
    elif args.forecaster == "expectation":
        fc = ConditionalExpectation()
    else:
        window = min(args.backcast_window, inst.T)
        fc = Backcast(window=window, prehistory=inst.costs[:window])
    realized = []
    perfect = []
    for sc in scenarios:
        realized.append(rolling_intrinsic(cfg.spec(), sc, fc, opts).realized_cost)
        perfect.append(rolling_intrinsic(cfg.spec(), sc, PerfectForesight(), opts).realized_cost)
    summary = {
        "forecaster": args.forecaster,
        "sigma": args.sigma,
        "paths": args.paths,
        "seed": args.seed,
        "realized_costs": realized,
        "perfect_foresight_costs": perfect,
        "mean_realized": float(np.mean(realized)),
        "mean_perfect": float(np.mean(perfect)),
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    print(f"mean_realized {format(summary['mean_realized'], _FMT)} "
          f"mean_perfect {format(summary['mean_perfect'], _FMT)}")
    return 0


def _cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    inst = build_instance(cfg, load_prices(args.prices))
    vinst = validate_instance(inst)
    sol = solve(vinst, _solver_options(args))
    dp = dp_solve(vinst, GridSpec(level_points=args.grid))
    rep = compare(sol, dp, tol=dp.error_bound)
    print(f"solver {format(sol.objective, _FMT)} dp {format(dp.objective, _FMT)} "
          f"bound {format(dp.error_bound, _FMT)} agree {rep.passed}")
    return 0 if rep.passed else 1


def _cmd_genprices(args) -> int:
    if args.harmonic is None:
        harmonics = pricegen.DEFAULT_PROFILE.harmonics
    else:
        harmonics = []
        for spec_str in args.harmonic:
            parts = spec_str.split(":")
            if len(parts) != 3:
                raise ParseError(f"harmonic must be PERIOD:AMP:PHASE, got {spec_str!r}")
            harmonics.append((float(parts[0]), float(parts[1]), float(parts[2])))
        harmonics = tuple(harmonics)
    spec = pricegen.CycleSpec(
        mean=args.mean,
        harmonics=harmonics,
        noise_sigma=args.noise,
        seed=args.seed,
        allow_negative=args.allow_negative,
    )
    prices = pricegen.generate(spec, args.steps)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "price"])
        for t, p in enumerate(prices, start=1):
            w.writerow([t, format(p, _FMT)])
    print(f"wrote {args.steps} steps to {args.out}")
    return 0


_DOMAIN_ERRORS = (
    Infeasible,
    BadSpec,
    PriceOrder,
    ParseError,
    BracketFailure,
    NoConvergence,
    BudgetExceeded,
    pricegen.NegativePrice,
    FileNotFoundError,
)

_COMMANDS = {
    "solve": _cmd_solve,
    "verify": _cmd_verify,
    "sensitivity": _cmd_sensitivity,
    "simulate": _cmd_simulate,
    "oracle": _cmd_oracle,
    "genprices": _cmd_genprices,
}


def run(argv=None) -> int:
    """Dispatch a subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
