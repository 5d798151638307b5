"""Subcommands of the tweezer-readout command line."""
import argparse
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import constants
from adaptive_simulator import (AdaptiveProtocol, ShotBatch, detection_loss, readout_infidelity,
                                run_batch, state_seed, wait_time_histogram)
from atomic_data import TrapConfig, TrapPolarization, depth_freq_to_temp, rabi_squared_from_depth, table_lookup
from config_manager import ScenarioConfig
from count_statistics import (PreparedState, distribution_table, error_report, fixed_time_mean_for_bright_prob,
                              optimal_threshold, optimal_time, r_from_eps_bright)
from depump_models import (RAMAN_LEGS, RateKind, normalized_rate, probe_depump_rate, raman_effective_rabi,
                           raman_leg_probability, raman_population_ratio, t1_lifetime)
from errors import ConfigError, DomainError
from inference import CountHistogram, fit_depump, wilson_z
from output_manager import OutputManager

MAX_GRID_POINTS = 1_000_000
SWEEP_AXES = ("t_d", "threshold", "depth", "background")
DEFAULT_REPORT_SHOTS = 20_000


@dataclass
class CommandOutput:
    """JSON payload of a subcommand and its tabular form for --format csv."""
    data: Dict[str, Any]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    columns: Sequence[str] = ()


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: Tuple[float, ...]


def parse_axis(text: str) -> SweepAxis:
    """Parse NAME=START:STOP:NUM or NAME=V1,V2,..."""
    if '=' not in text:
        raise ConfigError(f"expected NAME=VALUES, got '{text}'", "sweep.axis")
    name, spec = (part.strip() for part in text.split('=', 1))
    if name not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis '{name}', choose from {', '.join(SWEEP_AXES)}", "sweep.axis")
    try:
        if ':' in spec:
            start, stop, num = spec.split(':')
            if int(num) < 1 or int(num) != float(num):
                raise ValueError(num)
            values = tuple(float(v) for v in np.linspace(float(start), float(stop), int(num)))
        else:
            values = tuple(float(v) for v in spec.split(','))
    except ValueError:
        raise ConfigError(f"cannot parse values '{spec}'", f"sweep.{name}") from None
    if name == "threshold" and any(v != int(v) for v in values):
        raise ConfigError("threshold values must be integers", "sweep.threshold")
    return SweepAxis(name, values)


def apply_axis(config: ScenarioConfig, name: str, value: float) -> ScenarioConfig:
    if name == "t_d":
        scenario = config.with_detection(t_d=value)
        return replace(scenario, protocol=replace(scenario.protocol, max_total_time=value))
    if name == "threshold":
        return config.with_detection(threshold=int(value))
    if name == "depth":
        return config.with_depth(value)
    if name == "background":
        return config.with_detection(r_background=value)
    raise ConfigError(f"unknown sweep axis '{name}'", "sweep.axis")


def run_pair(config: ScenarioConfig, n_per_state: int, seed, workers: Optional[int] = None,
             confidence: float = 0.6827) -> Tuple[ShotBatch, ShotBatch, Any, Any]:
    """Bright and dark batches of `n_per_state` shots from independent seed streams."""
    results = {
        prepared: run_batch(config.detection, config.protocol, config.heating, prepared, n_per_state,
                            state_seed(seed, prepared), workers, confidence)
        for prepared in PreparedState.ALL
    }
    bright, dark = results[PreparedState.BRIGHT], results[PreparedState.DARK]
    return bright.batch, dark.batch, bright.summary, dark.summary


class CliManager:
    """Runs one subcommand against a validated scenario."""

    def __init__(self, config: ScenarioConfig, seed: int = 0, out: Optional[str] = None, fmt: str = "json",
                 workers: Optional[int] = None):
        self.config = config
        self.seed = seed
        self.out = out
        self.format = fmt
        self.workers = workers

    def emit(self, output: CommandOutput) -> None:
        if self.format == "csv":
            if not output.columns:
                raise ConfigError("this subcommand has no CSV form", "format")
            OutputManager.write_csv(output.rows, output.columns, self.out)
        else:
            OutputManager.write_json(output.data, self.out)

    def cmd_rates(self) -> CommandOutput:
        config = self.config
        budget = config.budget()
        dline = config.dline()
        data = {
            "preset_name": config.preset_name,
            "depth_freq": config.trap.depth_freq,
            "depth_temp": config.trap.depth_temp,
            "t1": t1_lifetime(config.trap.depth_freq),
            "budget": budget.to_dict(),
            "raman_legs": {
                f"{f}_{m}": raman_leg_probability(config.trap, dline, (f, m)) for f, m in RAMAN_LEGS
            },
        }
        rows = [{"channel": "trap", "rate": budget.trap_rate, "r": budget.r_trap},
                {"channel": "probe", "rate": budget.probe_rate, "r": budget.r_probe},
                {"channel": "raman", "rate": budget.raman_prob_per_scatter * config.detection.scatter_rate,
                 "r": budget.r_raman},
                {"channel": "total", "rate": math.nan, "r": budget.total_r}]
        logging.info(f"Total normalized depump rate {budget.total_r:.4g}")
        return CommandOutput(data, rows, OutputManager.schema_columns("rates"))

    def cmd_distribution(self, n_max: Optional[int] = None) -> CommandOutput:
        params = self.config.detection
        rows = distribution_table(params, n_max)
        report = error_report(params)
        data = {
            "detection": self.config.to_dict()["detection"],
            "error_report": report.to_dict(),
            "optimal_threshold": optimal_threshold(params),
            "rows": rows,
        }
        return CommandOutput(data, rows, OutputManager.schema_columns("distribution"))

    def cmd_sweep(self, axes: Sequence[str], mc_shots: int = 0) -> CommandOutput:
        parsed = [parse_axis(a) for a in axes]
        if not 1 <= len(parsed) <= 2:
            raise ConfigError("sweep takes one or two axes", "sweep.axis")
        if len(parsed) == 2 and parsed[0].name == parsed[1].name:
            raise ConfigError("sweep axes must differ", "sweep.axis")
        size = math.prod(len(a.values) for a in parsed)
        if size > MAX_GRID_POINTS:
            raise ConfigError(f"sweep grid has {size} points, limit is {MAX_GRID_POINTS}", "sweep")
        if mc_shots < 0:
            raise DomainError(f"Monte Carlo shot count must be nonnegative, got {mc_shots}")
        logging.info(f"Sweeping {size} points over {', '.join(a.name for a in parsed)}")

        columns = [a.name for a in parsed] + OutputManager.schema_columns("sweep")
        if mc_shots:
            columns += ["loss", "loss_sigma"]
        rows = []
        for index, point in enumerate(itertools.product(*(a.values for a in parsed))):
            scenario = self.config
            for axis, value in zip(parsed, point):
                scenario = apply_axis(scenario, axis.name, value)
            row = {axis.name: value for axis, value in zip(parsed, point)}
            row.update(error_report(scenario.detection).to_dict())
            if mc_shots:
                root = np.random.SeedSequence(self.seed, spawn_key=(index,))
                bright, dark, _, _ = run_pair(scenario, mc_shots, root, self.workers)
                loss = detection_loss(bright, dark)
                row.update({"loss": loss.loss, "loss_sigma": loss.sigma})
            rows.append(row)
        return CommandOutput({"axes": [a.name for a in parsed], "rows": rows}, rows, columns)

    def cmd_simulate(self, n_shots: int, confidence: float = 0.6827, shots_csv: Optional[str] = None,
                     histogram_csv: Optional[str] = None, wait_csv: Optional[str] = None) -> CommandOutput:
        if n_shots < 2:
            raise DomainError(f"need at least 2 shots (split bright/dark), got {n_shots}")
        n_bright = n_shots // 2
        bright, dark, bright_summary, dark_summary = run_pair(self.config, n_bright, self.seed, self.workers,
                                                              confidence)
        if n_shots - n_bright != n_bright:
            logging.info(f"Odd shot count, simulating {n_bright} shots per state")
        infidelity, interval = readout_infidelity(bright, dark, confidence)
        loss = detection_loss(bright, dark, wilson_z(confidence))
        data = {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "shots_per_state": n_bright,
            "confidence": confidence,
            "bright": bright_summary.to_dict(),
            "dark": dark_summary.to_dict(),
            "infidelity": infidelity,
            "infidelity_interval": list(interval),
            "fidelity": 1.0 - infidelity,
            "loss": {"loss": loss.loss, "sigma": loss.sigma, "interval": list(loss.interval)},
            "analytic": error_report(self.config.detection).to_dict(),
        }
        if shots_csv:
            OutputManager.write_csv(self._shot_rows(bright, dark), OutputManager.schema_columns("shots"), shots_csv)
        if histogram_csv:
            self._write_count_histogram(bright, dark, histogram_csv)
        if wait_csv:
            self._write_wait_times(bright, wait_csv)
        logging.info(f"Infidelity {infidelity:.4%} [{interval[0]:.4%}, {interval[1]:.4%}]")
        rows = [{"prepared": s.prepared, "n_shots": s.n_shots, "bright_fraction": s.bright_fraction,
                 "error_fraction": s.error_fraction, "loss_fraction": s.loss_fraction,
                 "mean_scattered": s.mean_scattered, "mean_energy_temp": s.mean_energy_temp,
                 "mean_wait_time": s.mean_wait_time}
                for s in (bright_summary, dark_summary)]
        return CommandOutput(data, rows, OutputManager.schema_columns("simulate"))

    @staticmethod
    def _shot_rows(*batches: ShotBatch):
        for batch in batches:
            for record in batch.records():
                row = asdict(record)
                row["prepared"] = batch.prepared
                yield row

    @staticmethod
    def _write_count_histogram(bright: ShotBatch, dark: ShotBatch, path: str) -> None:
        b, d = bright.count_histogram(), dark.count_histogram()
        rows = [{"n": n, "bright": b.get(n, 0), "dark": d.get(n, 0)} for n in range(max(max(b), max(d)) + 1)]
        OutputManager.write_csv(rows, OutputManager.schema_columns("count_histogram"), path)

    @staticmethod
    def _write_wait_times(bright: ShotBatch, path: str) -> None:
        histogram = wait_time_histogram(bright)
        rows = [{"wait_time": t, "empirical": e, "erlang": r}
                for t, e, r in zip(histogram.wait_times, histogram.empirical, histogram.erlang_reference)]
        OutputManager.write_csv(rows, OutputManager.schema_columns("wait_times"), path)
        logging.info(f"Wait-time KS distance to Erlang {histogram.ks_distance:.3g}")

    def cmd_fit(self, histogram_path: str, fix_bright_rate: bool = False) -> CommandOutput:
        try:
            hist = CountHistogram.read_csv(histogram_path)
        except OSError as e:
            raise ConfigError(f"cannot read histogram: {e.strerror}", histogram_path) from None
        fit = fit_depump(hist, self.config.detection, self.config.detection.ce, fix_bright_rate)
        data = fit.to_dict()
        data["histogram"] = {"path": histogram_path, **hist.sidecar()}
        row = {"depump_prob_per_scatter": fit.depump_prob_per_scatter, "low": fit.interval[0],
               "high": fit.interval[1], "sigma": fit.sigma, "r_p": fit.fitted_rates[0],
               "r_np": fit.fitted_rates[1], "log_likelihood": fit.log_likelihood, "converged": fit.converged}
        return CommandOutput(data, [row], OutputManager.schema_columns("fit"))

    def cmd_report(self, n_shots: int = DEFAULT_REPORT_SHOTS) -> CommandOutput:
        """Model values next to the published numbers."""
        if n_shots < 1:
            raise DomainError(f"report needs at least one shot per batch, got {n_shots}")
        published = constants.PUBLISHED
        config = self.config
        params = config.detection
        dline = config.dline()
        rows: List[Dict[str, Any]] = []

        def add(quantity: str, model: float, reference: Optional[float]):
            rows.append({"quantity": quantity, "model": model, "published": reference})

        depth = config.trap.depth_freq
        add("t1", t1_lifetime(depth), published["t1"])
        add("depth_temp", depth_freq_to_temp(depth), published["depth_temp"])
        add("r_trap", normalized_rate(1.0 / t1_lifetime(depth), constants.DEFAULT_BRIGHT_RATE, params.ce),
            published["r_trap"])
        probe_rate = probe_depump_rate(config.probe, gamma=dline.gamma)
        add("probe_rate", probe_rate, published["probe_rate_max"])
        add("r_probe", normalized_rate(probe_rate, constants.DEFAULT_BRIGHT_RATE, params.ce),
            published["r_probe_max"])

        sigma_trap = TrapConfig.from_depth_freq(depth, TrapPolarization.SIGMA_PM, config.trap.wavelength)
        add("rabi_sq_per_depth", rabi_squared_from_depth(dline, 1.0), published["rabi_sq_per_depth"])
        omega_eff = raman_effective_rabi(rabi_squared_from_depth(dline, depth), dline.delta_d2_hz, (4, 3))
        add("raman_population_ratio", raman_population_ratio(omega_eff, table_lookup((4, 3)).detuning_hz),
            published["raman_population_ratio"])
        p43 = raman_leg_probability(sigma_trap, dline, (4, 3))
        p33 = raman_leg_probability(sigma_trap, dline, (3, 3))
        add("p_depump_43", p43, published["p_depump_43"])
        add("p_depump_33", p33, published["p_depump_33"])
        add("p_depump_sigma", p43 + p33, published["p_depump_sigma"])
        add("r_sigma", normalized_rate(p43 + p33, params.r_bright, params.ce, RateKind.PER_SCATTER),
            published["r_sigma"])

        eps_b = published["bright_errors"] / published["shots_per_state"]
        eps_d = published["dark_errors"] / published["shots_per_state"]
        add("r_total", r_from_eps_bright(eps_b, params.threshold), published["r_total"])
        add("infidelity_from_counts", 0.5 * (eps_b + eps_d), published["infidelity"])
        add("infidelity_model", error_report(params).infidelity, published["infidelity"])
        ideal = params.with_(r_dep_bright=0.0, r_dep_dark=0.0)
        add("optimal_time_depump_free", optimal_time(ideal, (1e-4, 2e-3)).t_opt, published["optimal_time"])
        mean_999 = fixed_time_mean_for_bright_prob(0.999, params.threshold)
        add("bright_mean_for_999", mean_999, published["bright_mean_for_999"])

        heating = replace(config.heating, loss_enabled=False)
        quiet = params.with_(r_background=0.0, r_dep_bright=0.0, r_dep_dark=0.0)
        fixed = AdaptiveProtocol.fixed_time(mean_999 / quiet.r_bright, quiet.threshold)
        root = np.random.SeedSequence(self.seed, spawn_key=(0,))
        fixed_run = run_batch(quiet, fixed, heating, PreparedState.BRIGHT, n_shots, root, self.workers)
        add("fixed_mean_scattered", fixed_run.summary.mean_scattered, published["fixed_scattered"])
        add("fixed_mean_energy", fixed_run.summary.mean_energy_temp, published["fixed_energy"])
        root = np.random.SeedSequence(self.seed, spawn_key=(1,))
        adaptive_run = run_batch(quiet, config.protocol, heating, PreparedState.BRIGHT, n_shots, root, self.workers)
        add("adaptive_mean_scattered", adaptive_run.summary.mean_scattered, published["adaptive_scattered"])
        add("adaptive_mean_energy", adaptive_run.summary.mean_energy_temp, None)

        low_depth = config.with_depth(constants.LOW_DEPTH_FREQ)
        for key, (label, scenario) in enumerate((("loss_full_depth", config), ("loss_low_depth", low_depth)), 2):
            root = np.random.SeedSequence(self.seed, spawn_key=(key,))
            bright, dark, _, _ = run_pair(scenario, n_shots, root, self.workers)
            add(label, detection_loss(bright, dark).loss, published[label])
        add("fidelity_low_depth", error_report(low_depth.detection).fidelity, published["fidelity_low_depth"])

        data = {"preset_name": config.preset_name, "shots": n_shots, "rows": rows}
        return CommandOutput(data, rows, OutputManager.schema_columns("report"))


def add_global_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Path to a scenario JSON file.")
    parser.add_argument("--preset", choices=constants.Preset.ALL,
                        help="Built-in scenario (base for --config when both are given).")
    parser.add_argument("--seed", type=int, default=0, help="Root seed for Monte Carlo runs.")
    parser.add_argument("--out", help="Output path; stdout when omitted.")
    parser.add_argument("--format", choices=("json", "csv"), default="json", help="Output format.")
    parser.add_argument("--threads", type=int, default=None,
                        help="Worker threads for batch simulation (overrides TWEEZER_READOUT_THREADS).")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug output.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only.")


def create_cli_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tweezer-readout",
        description="Single-atom fluorescence readout: depump budgets, count statistics, "
                    "adaptive-detection Monte Carlo and histogram fits.")
    add_global_arguments(parser)
    subparsers = parser.add_subparsers(dest="command", required=True)

    subparsers.add_parser("rates", help="Depump rate budget of the scenario.")

    distribution = subparsers.add_parser("distribution", help="Bright/dark count distributions and errors.")
    distribution.add_argument("--n-max", type=int, default=None, help="Largest count to tabulate.")

    sweep = subparsers.add_parser("sweep", help="Error reports over a grid of one or two axes.")
    sweep.add_argument("--axis", action="append", required=True, metavar="NAME=START:STOP:NUM|V1,V2",
                       help=f"Sweep axis, one of {', '.join(SWEEP_AXES)}. Repeat for a 2D grid.")
    sweep.add_argument("--mc-shots", type=int, default=0, help="Shots per state for Monte Carlo loss per point.")

    simulate = subparsers.add_parser("simulate", help="Monte Carlo of bright/dark readout shots.")
    simulate.add_argument("--shots", type=int, required=True, help="Total shots, split evenly bright/dark.")
    simulate.add_argument("--confidence", type=float, default=0.6827, help="Wilson interval confidence.")
    simulate.add_argument("--shots-csv", help="Per-shot records CSV.")
    simulate.add_argument("--histogram-csv", help="Count histogram CSV.")
    simulate.add_argument("--wait-csv", help="Wait-time histogram CSV with Erlang reference.")

    fit = subparsers.add_parser("fit", help="Fit the depump probability per scatter to a count histogram.")
    fit.add_argument("histogram", help="CSV with header n,count (JSON sidecar optional).")
    fit.add_argument("--fix-bright-rate", action="store_true", help="Hold R_p at the configured bright rate.")

    report = subparsers.add_parser("report", help="Model values next to the published numbers.")
    report.add_argument("--shots", type=int, default=DEFAULT_REPORT_SHOTS, help="Shots per Monte Carlo batch.")
    return parser


def run_command(cli: CliManager, args: argparse.Namespace) -> CommandOutput:
    if args.command == "rates":
        return cli.cmd_rates()
    if args.command == "distribution":
        return cli.cmd_distribution(args.n_max)
    if args.command == "sweep":
        return cli.cmd_sweep(args.axis, args.mc_shots)
    if args.command == "simulate":
        return cli.cmd_simulate(args.shots, args.confidence, args.shots_csv, args.histogram_csv, args.wait_csv)
    if args.command == "fit":
        return cli.cmd_fit(args.histogram, args.fix_bright_rate)
    if args.command == "report":
        return cli.cmd_report(args.shots)
    raise ConfigError(f"unknown command '{args.command}'", "command")
