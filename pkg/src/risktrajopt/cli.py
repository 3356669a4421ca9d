"""Batch front end: run (scenario x method x alpha) sweeps from a config file.

Config format is INI with sections [run], [scenario], [solver], [validation];
see the README for the full schema. Each sweep cell writes controls.csv,
rollout.csv, report.json, validation.json, histogram.csv, and timing.json
into its own subdirectory; summary.csv at the output root aggregates
(method, alpha, violation rate, risk, cost) per cell. All artifacts except
timing.json are byte-identical across reruns of the same config.

Exit codes: 0 success, 1 config error, 2 solver failure in any cell.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import solve_deterministic, solve_gaussian_boole
from .errors import ConfigurationError
from .ocp import rollout_to_csv
from .risk import RiskLevel
from .sampling import RandomSeed
from .scenarios import SCENARIO_BUILDERS
from .solver import SCPConfig, controls_to_csv, solve_report_to_json, solve_socp
from .validation import histogram_to_csv, monte_carlo_validate, validation_to_json

METHODS = ("saa", "deterministic", "gaussian_boole")

# streams keeping optimization and validation draws independent
_OPT_STREAM = 0
_VAL_STREAM = 1


@dataclass
class RunConfig:
    scenario: str
    methods: tuple = ("saa",)
    alphas: tuple = (0.1,)
    samples: int = 50
    optimization_seed: int = 0
    validation_seed: int = 0
    n_val: int = 10000
    output_dir: str = "out"
    parallel: bool = False
    allocation_mode: str = "uniform"
    scenario_overrides: dict = field(default_factory=dict)
    solver_overrides: dict = field(default_factory=dict)

    def validate(self):
        if self.scenario not in SCENARIO_BUILDERS:
            raise ConfigurationError(
                f"[run] scenario: unknown scenario {self.scenario!r}; "
                f"choose from {sorted(SCENARIO_BUILDERS)}"
            )
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"[run] methods: unknown method {m!r}")
        if not self.alphas:
            raise ConfigurationError("[run] alphas: need at least one risk level")
        for a in self.alphas:
            if not (0.0 < a < 1.0):
                raise ConfigurationError(f"[run] alphas: risk level {a} outside (0, 1)")
        if self.samples < 1:
            raise ConfigurationError("[run] samples: must be >= 1")
        if self.n_val < 1:
            raise ConfigurationError("[validation] n_val: must be >= 1")
        if self.allocation_mode not in ("uniform", "adaptive"):
            raise ConfigurationError("[run] allocation_mode: must be uniform or adaptive")


def _parse_list(raw: str) -> list:
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


def _coerce(raw: str):
    low = raw.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw.strip()


def load_run_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"config file not found: {path}")
    if "run" not in parser:
        raise ConfigurationError("config must contain a [run] section")
    run = parser["run"]
    if "scenario" not in run:
        raise ConfigurationError("[run] scenario: required field missing")

    try:
        alphas = tuple(float(a) for a in _parse_list(run.get("alphas", "0.1")))
    except ValueError as err:
        raise ConfigurationError(f"[run] alphas: {err}") from err

    cfg = RunConfig(
        scenario=run.get("scenario"),
        methods=tuple(_parse_list(run.get("methods", "saa"))),
        alphas=alphas,
        samples=run.getint("samples", fallback=50),
        optimization_seed=run.getint("optimization_seed", fallback=0),
        validation_seed=run.getint("validation_seed", fallback=0),
        n_val=parser.getint("validation", "n_val", fallback=run.getint("n_val", fallback=10000)),
        output_dir=run.get("output_dir", "out"),
        parallel=run.getboolean("parallel", fallback=False),
        allocation_mode=run.get("allocation_mode", "uniform"),
        scenario_overrides={k: _coerce(v) for k, v in parser.items("scenario")}
        if "scenario" in parser
        else {},
        solver_overrides={k: _coerce(v) for k, v in parser.items("solver")}
        if "solver" in parser
        else {},
    )
    cfg.validate()
    return cfg


def _build_scenario(cfg: RunConfig):
    config_cls, builder = SCENARIO_BUILDERS[cfg.scenario]
    valid = {f.name for f in dataclasses.fields(config_cls)}
    unknown = set(cfg.scenario_overrides) - valid
    if unknown:
        raise ConfigurationError(f"[scenario] unknown fields: {sorted(unknown)}")
    return builder(config_cls(**cfg.scenario_overrides))


def _solver_config(cfg: RunConfig, scenario) -> SCPConfig:
    kwargs = dict(scenario.solver_overrides)
    valid = {f.name for f in dataclasses.fields(SCPConfig)}
    unknown = set(cfg.solver_overrides) - valid
    if unknown:
        raise ConfigurationError(f"[solver] unknown fields: {sorted(unknown)}")
    kwargs.update(cfg.solver_overrides)
    return SCPConfig(**kwargs)


def cell_name(method: str, alpha) -> str:
    return method if alpha is None else f"{method}_alpha{alpha:g}"


def _execute_cell(cfg: RunConfig, method: str, alpha) -> dict:
    """Solve one (method, alpha) cell and write its artifacts."""
    scenario = _build_scenario(cfg)
    solver_cfg = _solver_config(cfg, scenario)
    level = RiskLevel(alpha if alpha is not None else cfg.alphas[0])
    opt_seed = RandomSeed(cfg.optimization_seed, _OPT_STREAM)
    val_seed = RandomSeed(cfg.validation_seed, _VAL_STREAM)

    if method == "saa":
        samples = scenario.sample(opt_seed, cfg.samples)
        report = solve_socp(scenario.problem, samples, level, solver_cfg)
    elif method == "deterministic":
        report = solve_deterministic(scenario, solver_cfg)
    else:
        report = solve_gaussian_boole(scenario, level, solver_cfg, cfg.allocation_mode)

    out = Path(cfg.output_dir) / cell_name(method, alpha)
    out.mkdir(parents=True, exist_ok=True)
    solve_report_to_json(report, out / "report.json")
    with open(out / "timing.json", "w") as fh:
        json.dump({"iteration_wall_times": report.iteration_times()}, fh, indent=2)
        fh.write("\n")

    row = {
        "scenario": cfg.scenario,
        "method": method,
        "alpha": "" if alpha is None else repr(alpha),
        "converged": report.converged,
        "objective": repr(report.objective),
        "violation_rate": "",
        "empirical_var": "",
        "empirical_avar": "",
        "mean_cost": "",
        "failure": report.failure or "",
    }
    if report.controls is not None:
        controls_to_csv(report.controls, out / "controls.csv")
        rollout_to_csv(report.final_rollout, out / "rollout.csv")
        validation = monte_carlo_validate(
            scenario, report.controls, val_seed, cfg.n_val, level
        )
        validation_to_json(validation, out / "validation.json")
        histogram_to_csv(validation, out / "histogram.csv")
        row.update(
            violation_rate=repr(validation.violation_rate),
            empirical_var=repr(validation.empirical_var),
            empirical_avar=repr(validation.empirical_avar),
            mean_cost=repr(validation.mean_cost),
        )
    return row


def _cell_worker(args):
    cfg_dict, method, alpha = args
    cfg = RunConfig(**cfg_dict)
    try:
        return _execute_cell(cfg, method, alpha), None
    except Exception as err:  # recorded per cell; the sweep continues
        return {
            "scenario": cfg.scenario,
            "method": method,
            "alpha": "" if alpha is None else repr(alpha),
            "converged": False,
            "objective": "",
            "violation_rate": "",
            "empirical_var": "",
            "empirical_avar": "",
            "mean_cost": "",
            "failure": str(err),
        }, str(err)


SUMMARY_COLUMNS = [
    "scenario",
    "method",
    "alpha",
    "converged",
    "objective",
    "violation_rate",
    "empirical_var",
    "empirical_avar",
    "mean_cost",
    "failure",
]


def run(cfg: RunConfig, verbose: bool = False) -> int:
    """Execute the sweep; returns the process exit code."""
    cfg.validate()
    probe = _build_scenario(cfg)  # fail on bad scenario/solver fields before any output
    _solver_config(cfg, probe)
    cells = []
    for method in cfg.methods:
        if method == "deterministic":
            cells.append((method, None))
        else:
            cells.extend((method, a) for a in cfg.alphas)

    cfg_dict = dataclasses.asdict(cfg)
    jobs = [(cfg_dict, m, a) for m, a in cells]
    if cfg.parallel and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(len(jobs), 8)) as pool:
            results = list(pool.map(_cell_worker, jobs))
    else:
        results = [_cell_worker(job) for job in jobs]

    failures = 0
    rows = []
    for (method, alpha), (row, err) in zip(cells, results):
        rows.append(row)
        failed = err is not None or row["failure"]
        if failed:
            failures += 1
        if verbose:
            tag = f"{cell_name(method, alpha):24s}"
            status = row["failure"] or ("converged" if row["converged"] else "not converged")
            print(f"{tag} {status}", file=sys.stderr)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return 2 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="risktrajopt",
        description="Risk-averse trajectory optimization sweeps",
    )
    parser.add_argument("config", help="path to the INI run configuration")
    parser.add_argument("--output-dir", help="override [run] output_dir")
    parser.add_argument("--seed", type=int, help="override optimization seed")
    parser.add_argument("--validation-seed", type=int, help="override validation seed")
    parser.add_argument("--parallel", action="store_true", help="run sweep cells in parallel")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_run_config(args.config)
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.seed is not None:
            cfg.optimization_seed = args.seed
        if args.validation_seed is not None:
            cfg.validation_seed = args.validation_seed
        if args.parallel:
            cfg.parallel = True
        cfg.validate()
    except ConfigurationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1

    try:
        return run(cfg, verbose=args.verbose)
    except ConfigurationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
