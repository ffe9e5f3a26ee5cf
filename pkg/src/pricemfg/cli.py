"""Experiment driver: configuration, solve/sweep/check runs, CSV and JSON output.

Exit codes: 0 success, 2 configuration error, 3 non-convergence,
4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .grid import Grid
from .model import ModelError, SupplySpec, make_quadratic_model, make_quartic_model, normalize_initial_density
from .operator_checks import (Triplet, apply_discrete_operator, consistency_probe, minimizer_bound,
                              monotonicity_pairing, random_triplet, scheme_operator)
from .reference import error_report, reference_for
from .solver import (InvariantViolation, SolverConfig, fixed_point_solve, hj_backward_sweep,
                     transport_forward)

log = logging.getLogger("pricemfg")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_INVARIANT = 0, 2, 3, 4

TABLE_PAIRS = [(2.0e-2, 4.0e-2), (1.0e-2, 2.0e-2), (5.0e-3, 1.0e-2), (2.5e-3, 5.0e-3)]

_DEFAULTS = {
    "test1": {"family": "quadratic", "eps": 0.004, "c": 1.0, "eta": 1.0, "tau": 0.25},
    "test2": {"family": "quartic", "eps": 2e-4, "eta": 1.0, "tau": 0.0, "a0_bar": 0.0, "a1_bar": 0.0},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    test: str = "test1"
    family: str = "quadratic"
    domain: tuple = (-1.0, 1.0)
    T: float = 1.0
    rho: float = 5e-3
    h: float = 1e-2
    eps: float = 0.004
    max_iterations: int = 50
    c: float = 1.0
    eta: float = 1.0
    tau: float = 0.25
    a0_bar: float = 0.0
    a1_bar: float = 0.0
    xi: float = 4.0
    q0: float = -0.5
    amplitude: float = 5.0
    frequency: float = 3.0
    output_dir: str = "out"
    emit: list = field(default_factory=lambda: ["fields", "errors", "summary"])
    seed: int = 0

    def __post_init__(self):
        self.domain = tuple(float(v) for v in self.domain)
        if self.test not in ("test1", "test2", "custom"):
            raise ConfigError(f"unknown test {self.test!r}")
        if self.family not in ("quadratic", "quartic"):
            raise ConfigError(f"unknown model family {self.family!r}")
        if len(self.domain) != 2 or not self.domain[1] > self.domain[0]:
            raise ConfigError("domain must be (a, b) with b > a")
        for name in ("rho", "h", "eps", "T"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        unknown = set(self.emit) - {"fields", "errors", "summary"}
        if unknown:
            raise ConfigError(f"unknown emit targets {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        test = data.get("test", "test1")
        merged = dict(_DEFAULTS.get(test, {}))
        merged.update(data)
        names = {f.name for f in fields(cls)}
        unknown = set(merged) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def grid(self) -> Grid:
        a, b = self.domain
        try:
            return Grid.from_steps(a, b, self.T, self.rho, self.h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model(self):
        if self.family == "quadratic":
            return make_quadratic_model(self.c, self.eta, self.tau, domain=self.domain)
        return make_quartic_model(self.eta, self.tau, self.a0_bar, self.a1_bar, domain=self.domain)

    def supply(self) -> SupplySpec:
        return SupplySpec(xi=self.xi, q0=self.q0, amplitude=self.amplitude,
                          frequency=self.frequency, T=self.T)


@dataclass
class RunSummary:
    iterations: int
    converged: bool
    err_price: float
    err_u: float
    err_m: float
    wall_time_seconds: float
    grid: dict
    config: dict
    price_changes: list
    max_mass_drift: float

    def to_json(self) -> dict:
        # wall time is kept out so identical configs give identical files
        d = asdict(self)
        d.pop("wall_time_seconds")
        d["schema_version"] = SCHEMA_VERSION
        return d


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in zip(*columns):
            wr.writerow([_fmt(v) for v in row])


def _write_matrix(path: Path, mat):
    # one row per time index
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k"] + [f"x{i}" for i in range(mat.shape[0])])
        for k in range(mat.shape[1]):
            wr.writerow([str(k)] + [_fmt(v) for v in mat[:, k]])


ERRORS_HEADER = ["rho", "h", "eps", "iterations", "err_price", "err_u", "err_m"]


def run_experiment(config: RunConfig) -> RunSummary:
    """Solve, compare with the analytic reference and write the outputs."""
    t0 = time.perf_counter()
    grid = config.grid()
    try:
        model = config.model()
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    supply = config.supply()
    cfg = SolverConfig(eps=config.eps, max_iterations=config.max_iterations)
    Q = supply.Q(grid.t[:grid.N])
    sol = fixed_point_solve(model, grid, Q, cfg)
    ref = reference_for(model, supply)
    errs = error_report(sol, ref, grid)
    drift = float(np.max(np.abs(sol.m.sum(axis=0) * grid.rho - 1.0)))
    wall = time.perf_counter() - t0

    summary = RunSummary(
        iterations=sol.iterations, converged=sol.converged,
        err_price=errs.err_price, err_u=errs.err_u, err_m=errs.err_m,
        wall_time_seconds=wall,
        grid={"a": grid.a, "b": grid.b, "T": grid.T, "rho": grid.rho, "h": grid.h,
              "M": grid.M, "N": grid.N},
        config=asdict(config), price_changes=list(sol.history), max_mass_drift=drift,
    )

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "errors" in config.emit:
        tk = grid.t[:grid.N]
        w_ex = ref.price(tk)
        _write_csv(out / "price.csv", ["t", "varpi", "varpi_exact", "abs_err"],
                   [tk, sol.varpi, w_ex, np.abs(sol.varpi - w_ex)])
        u_ex = ref.value(grid.x, 0.0)
        _write_csv(out / "u_t0.csv", ["x", "u", "u_exact", "abs_err"],
                   [grid.x, sol.u[:, 0], u_ex, np.abs(sol.u[:, 0] - u_ex)])
        m_ex = ref.density(grid.x, grid.T)
        _write_csv(out / "m_tT.csv", ["x", "m", "m_exact", "abs_err"],
                   [grid.x, sol.m[:, -1], m_ex, np.abs(sol.m[:, -1] - m_ex)])
        _write_csv(out / "errors.csv", ERRORS_HEADER,
                   [[grid.rho], [grid.h], [config.eps], [sol.iterations],
                    [errs.err_price], [errs.err_u], [errs.err_m]])
    if "fields" in config.emit:
        _write_matrix(out / "field_u.csv", sol.u)
        _write_matrix(out / "field_m.csv", sol.m)
    if "summary" in config.emit:
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "timing.json", "w", encoding="utf-8") as fh:
            json.dump({"wall_time_seconds": wall}, fh)
            fh.write("\n")
    return summary


def _sweep_row(args):
    base, rho, h, subdir = args
    cfg = RunConfig.from_dict({**base, "rho": rho, "h": h, "output_dir": subdir})
    return run_experiment(cfg)


def run_sweep(config: RunConfig, pairs, threads: int = 1) -> list[RunSummary]:
    """One run per ``(rho, h)`` pair plus an aggregated ``errors.csv``."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = asdict(config)
    jobs = [(base, float(rho), float(h), str(out / f"run_{j:02d}")) for j, (rho, h) in enumerate(pairs)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_row, jobs))
    else:
        results = [_sweep_row(job) for job in jobs]
    _write_csv(out / "errors.csv", ERRORS_HEADER,
               [[r.grid["rho"] for r in results], [r.grid["h"] for r in results],
                [config.eps] * len(results), [r.iterations for r in results],
                [r.err_price for r in results], [r.err_u for r in results],
                [r.err_m for r in results]])
    return results


# ---------------------------------------------------------------------------
# property suites
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def run_checks(seed: int = 0, M: int = 10, N: int = 10, n_pairs: int = 200,
               transport: Callable = transport_forward) -> list[CheckResult]:
    """Scheme invariants on a small grid with the quadratic benchmark.

    ``transport`` is injectable so tests can feed a mutated scheme.
    """
    rng = np.random.default_rng(seed)
    model = make_quadratic_model()
    supply = SupplySpec()
    grid = Grid.uniform(-1.0, 1.0, 1.0, M, N)
    cfg = SolverConfig(eps=1e-10, max_iterations=50)
    Q = supply.Q(grid.t[:N])
    m_bar = normalize_initial_density(model, grid)
    u_bar = model.u_bar(grid.x)
    results = []

    def record(name, ok, detail):
        results.append(CheckResult(name, bool(ok), detail))

    sol = fixed_point_solve(model, grid, Q, cfg)
    m = transport(grid, sol.alpha_star, m_bar, cfg)
    drift = float(np.max(np.abs(m.sum(axis=0) * grid.rho - 1.0)))
    record("mass-conservation", drift <= 1e-12, f"max drift {drift:.2e}")
    record("positivity", np.all(m >= 0), f"min m {m.min():.2e}")

    lip = float(np.max(np.abs(np.diff(sol.u, axis=0)))) / grid.rho
    bound = model.lipschitz_u_bar + grid.T * model.lipschitz_V
    record("space-lipschitz", lip <= bound + 1e-9, f"{lip:.4f} <= {bound:.4f}")

    u0, _ = hj_backward_sweep(model, grid, sol.varpi_used, cfg)
    u5, _ = hj_backward_sweep(model, grid, sol.varpi_used, cfg, u_terminal=u_bar + 5.0)
    ti = float(np.max(np.abs(u5 - u0 - 5.0)))
    record("translation-invariance", ti <= 1e-13, f"sup diff {ti:.2e}")

    cstar = minimizer_bound(model, bound, float(np.max(np.abs(sol.varpi_used))))
    amax = float(np.max(np.abs(sol.alpha_star)))
    record("minimizer-bound", amax <= cstar, f"|alpha*| {amax:.4f} <= {cstar:.4f}")

    worst_mono = np.inf
    for _ in range(n_pairs):
        u_lo = np.cumsum(rng.uniform(-0.2, 0.2, M + 1))
        u_hi = u_lo + rng.uniform(0.0, 1.0, M + 1)
        p = rng.uniform(-2, 2)
        diff = scheme_operator(u_hi, p, model, grid, cfg) - scheme_operator(u_lo, p, model, grid, cfg)
        worst_mono = min(worst_mono, float(diff.min()))
    record("scheme-monotone", worst_mono >= -1e-12, f"min S(v)-S(u) {worst_mono:.2e}")

    worst = np.inf
    for _ in range(n_pairs):
        w = random_triplet(grid, rng, m_bar, u_bar)
        wt = random_triplet(grid, rng, m_bar, u_bar)
        worst = min(worst, monotonicity_pairing(w, wt, model, grid, Q, cfg))
    record("monotonicity-pairing", worst >= -1e-9, f"min pairing {worst:.3e}")

    res, _ = apply_discrete_operator(Triplet.from_solution(sol), model, grid, Q, cfg)
    hj, tr, bal = res.sup_norms()
    record("solution-residual", hj <= 1e-10 and tr <= 1e-10 and bal <= grid.h * cfg.eps,
           f"hj {hj:.1e} transport {tr:.1e} balance {bal:.1e}")

    f = lambda x, t: x * x + t
    grids = [Grid.from_steps(-1.0, 1.0, 1.0, hh / 2, hh) for hh in (0.04, 0.02, 0.01)]
    rows = consistency_probe(f, lambda x, t: np.ones_like(x), lambda x, t: 2 * x, 0.0, model, grids, cfg)
    ratios = [rows[j].error / rows[j + 1].error for j in range(len(rows) - 1)]
    record("consistency-probe", min(ratios) >= 1.5, "ratios " + ", ".join(f"{r:.2f}" for r in ratios))
    rows = consistency_probe(lambda x, t: x, lambda x, t: 0 * x, lambda x, t: 1 + 0 * x, 0.0,
                             model, grids, cfg)
    lin = max(r.error for r in rows)
    record("consistency-affine", lin <= 1e-12, f"max error {lin:.1e}")
    return results


def format_checks(results) -> str:
    width = max(len(r.name) for r in results)
    return "\n".join(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}" for r in results)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pricemfg",
                                 description="Semi-Lagrangian solver for price-formation MFGs")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--test", choices=["test1", "test2", "custom"])
        p.add_argument("--rho", type=float)
        p.add_argument("--h", type=float)
        p.add_argument("--eps", type=float)
        p.add_argument("--max-iterations", type=int)
        p.add_argument("--out-dir")
        p.add_argument("-v", "--verbose", action="store_true")

    run_flags(sub.add_parser("solve", help="single run with error report"))
    sw = sub.add_parser("sweep", help="runs over a list of (rho, h) pairs")
    run_flags(sw)
    sw.add_argument("--sweep", help="JSON file with a list of [rho, h] pairs (default: table grids)")
    ck = sub.add_parser("check", help="property suites")
    ck.add_argument("--seed", type=int, default=0)
    ck.add_argument("--grid-size", type=int, default=11, help="nodes per axis")
    ck.add_argument("-v", "--verbose", action="store_true")
    return ap


def _load_config(args) -> RunConfig:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {"test": args.test, "rho": args.rho, "h": args.h, "eps": args.eps,
                 "max_iterations": args.max_iterations, "output_dir": args.out_dir}
    if args.test and args.test != data.get("test"):
        # switching test resets the test's own defaults
        data = {k: v for k, v in data.items() if k not in _DEFAULTS.get(data.get("test", ""), {})}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)


def _print_summary(s: RunSummary):
    print(f"iterations={s.iterations} converged={s.converged} "
          f"err_price={s.err_price:.3e} err_u={s.err_u:.3e} err_m={s.err_m:.3e} "
          f"time={s.wall_time_seconds:.2f}s")


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check":
            n = args.grid_size
            if n < 3:
                raise ConfigError("grid size must be at least 3")
            results = run_checks(seed=args.seed, M=n - 1, N=n - 1)
            print(format_checks(results))
            return EXIT_OK if all(r.passed for r in results) else 1
        config = _load_config(args)
        if args.command == "solve":
            summary = run_experiment(config)
            _print_summary(summary)
            return EXIT_OK if summary.converged else EXIT_NOT_CONVERGED
        pairs = TABLE_PAIRS
        if args.sweep:
            with open(args.sweep, encoding="utf-8") as fh:
                pairs = [tuple(p) for p in json.load(fh)]
            if not pairs or any(len(p) != 2 for p in pairs):
                raise ConfigError("sweep file must list [rho, h] pairs")
        threads = max(1, int(os.environ.get("MFG_THREADS", "1")))
        results = run_sweep(config, pairs, threads)
        for s in results:
            _print_summary(s)
        return EXIT_OK if all(s.converged for s in results) else EXIT_NOT_CONVERGED
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
