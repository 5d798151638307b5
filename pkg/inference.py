"""Wilson score intervals and maximum-likelihood fits of count histograms.

The fit maximizes sum_n tally(n) log P(n) with P the single-change count
distribution. R_np is fixed to the background rate; the depump probability per
resonant scatter p = R_dep ce / (R_p - R_np) is profiled with R_p either
floating or fixed, and the 1 sigma interval is read off where the profile
rises by 0.5.
"""
import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize, stats

from count_statistics import (DetectionParams, PmfMethod, PreparedState, count_distribution,
                              marginal_count_pmf, normalization_cutoff)
from errors import ConfigError, DomainError, FitError
from output_manager import OutputManager

ONE_SIGMA = 0.6827
REL_TOL = 1e-4
MAX_DEPUMPS_PER_WINDOW = 20.0
HISTOGRAM_SCHEMA = OutputManager.load_schema("histogram")
HISTOGRAM_COLUMNS = tuple(HISTOGRAM_SCHEMA["columns"])
SIDECAR_KEYS = frozenset(HISTOGRAM_SCHEMA["properties"])


def wilson_z(confidence: float = ONE_SIGMA) -> float:
    """Two-sided standard-normal quantile for a confidence level."""
    if not 0 < confidence < 1:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence}")
    return float(stats.norm.ppf(0.5 + 0.5 * confidence))


def wilson_interval(successes: int, trials: int, z: float) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise DomainError(f"need at least one trial, got {trials}")
    if not 0 <= successes <= trials:
        raise DomainError(f"successes must lie in [0, {trials}], got {successes}")
    if not z > 0:
        raise DomainError(f"z must be positive, got {z}")
    p_hat = successes / trials
    z2 = z * z
    denominator = 1.0 + z2 / trials
    center = (p_hat + z2 / (2.0 * trials)) / denominator
    margin = (z / denominator) * math.sqrt(p_hat * (1.0 - p_hat) / trials + z2 / (4.0 * trials * trials))
    low = 0.0 if successes == 0 else max(0.0, min(p_hat, center - margin))
    high = 1.0 if successes == trials else min(1.0, max(p_hat, center + margin))
    return low, high


@dataclass(frozen=True)
class CountHistogram:
    """Photon-count tallies of one prepared state."""
    bins: Dict[int, int]
    n_shots: int
    prepared: str = PreparedState.BRIGHT
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.prepared not in PreparedState.ALL:
            raise ConfigError(f"prepared state must be 'bright' or 'dark', got '{self.prepared}'", "prepared")
        for n, tally in self.bins.items():
            if int(n) != n or n < 0:
                raise ConfigError(f"count bin must be a nonnegative integer, got {n}", "bins")
            if int(tally) != tally or tally < 0:
                raise ConfigError(f"tally for n={n} must be a nonnegative integer, got {tally}", "bins")
        total = sum(self.bins.values())
        if total != self.n_shots:
            raise ConfigError(f"tallies sum to {total} but n_shots is {self.n_shots}", "n_shots")

    @classmethod
    def from_counts(cls, counts, prepared: str = PreparedState.BRIGHT,
                    metadata: Optional[Dict[str, Any]] = None) -> 'CountHistogram':
        values, tallies = np.unique(np.asarray(counts, dtype=np.int64), return_counts=True)
        bins = {int(v): int(t) for v, t in zip(values, tallies)}
        return cls(bins, int(tallies.sum()), prepared, dict(metadata or {}))

    @property
    def max_count(self) -> int:
        return max(self.bins) if self.bins else 0

    @property
    def mean(self) -> float:
        if self.n_shots == 0:
            return math.nan
        return sum(n * t for n, t in self.bins.items()) / self.n_shots

    def dense(self, n_max: Optional[int] = None) -> np.ndarray:
        """Tallies for n = 0..n_max as an array."""
        n_max = self.max_count if n_max is None else n_max
        tallies = np.zeros(n_max + 1, dtype=np.int64)
        for n, t in self.bins.items():
            if n <= n_max:
                tallies[n] = t
        return tallies

    def sidecar(self) -> Dict[str, Any]:
        return {"n_shots": self.n_shots, "prepared": self.prepared, "metadata": dict(self.metadata)}

    def write_csv(self, path: str) -> None:
        """Write `n,count` rows to `path` and the metadata sidecar next to it."""
        rows = [{"n": n, "count": self.bins[n]} for n in sorted(self.bins)]
        OutputManager.write_csv(rows, HISTOGRAM_COLUMNS, path)
        OutputManager.write_json(self.sidecar(), sidecar_path(path))

    @classmethod
    def read_csv(cls, path: str) -> 'CountHistogram':
        bins = _read_histogram_rows(path)
        n_shots = sum(bins.values())
        prepared, metadata = PreparedState.BRIGHT, {}
        meta_path = sidecar_path(path)
        if os.path.exists(meta_path):
            try:
                with open(meta_path, 'r', encoding='utf-8') as f:
                    meta = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON: {e.msg}", meta_path, line=e.lineno) from e
            except UnicodeDecodeError as e:
                raise ConfigError(f"not UTF-8 text: {e.reason} at byte {e.start}", meta_path) from None
            if not isinstance(meta, dict):
                raise ConfigError("sidecar must be a JSON object", meta_path)
            unknown = sorted(set(meta) - SIDECAR_KEYS)
            if unknown:
                raise ConfigError(f"unknown keys {unknown}", meta_path)
            if "n_shots" in meta and meta["n_shots"] != n_shots:
                raise ConfigError(f"sidecar n_shots={meta['n_shots']} but tallies sum to {n_shots}",
                                  f"{meta_path}: n_shots")
            prepared = meta.get("prepared", prepared)
            metadata = dict(meta.get("metadata", {}))
        else:
            logging.warning(f"No sidecar for {path}, assuming a bright-prepared histogram")
        logging.info(f"Loaded histogram {path}: {n_shots} {prepared} shots over {len(bins)} bins")
        return cls(bins, n_shots, prepared, metadata)


def sidecar_path(csv_path: str) -> str:
    return os.path.splitext(csv_path)[0] + '.json'


def _read_histogram_rows(path: str) -> Dict[int, int]:
    try:
        return _parse_histogram_rows(path)
    except UnicodeDecodeError as e:
        raise ConfigError(f"not UTF-8 text: {e.reason} at byte {e.start}", path) from None


def _parse_histogram_rows(path: str) -> Dict[int, int]:
    bins: Dict[int, int] = {}
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(HISTOGRAM_COLUMNS):
            raise ConfigError(f"expected header '{','.join(HISTOGRAM_COLUMNS)}', got {header}", path, line=1)
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ConfigError(f"expected 2 columns, got {len(row)}", path, line=reader.line_num)
            try:
                n, tally = int(row[0]), int(row[1])
            except ValueError:
                raise ConfigError(f"non-integer entry {row}", path, line=reader.line_num) from None
            if n < 0 or tally < 0:
                raise ConfigError(f"negative entry {row}", path, line=reader.line_num)
            if n in bins:
                raise ConfigError(f"duplicate bin n={n}", path, line=reader.line_num)
            bins[n] = tally
    return bins


@dataclass(frozen=True)
class FitResult:
    depump_prob_per_scatter: float
    interval: Tuple[float, float]
    sigma: float
    fitted_rates: Tuple[float, float]
    log_likelihood: float
    converged: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "depump_prob_per_scatter": self.depump_prob_per_scatter,
            "interval": list(self.interval),
            "sigma": self.sigma,
            "fitted_rates": {"r_p": self.fitted_rates[0], "r_np": self.fitted_rates[1]},
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
        }


class _ProfileLikelihood:
    """Negative log-likelihood of a histogram profiled over the bright rate."""

    def __init__(self, hist: CountHistogram, params: DetectionParams, ce: float, fix_bright_rate: bool):
        self.counts = np.array(sorted(hist.bins), dtype=np.int64)
        self.tallies = np.array([hist.bins[n] for n in self.counts], dtype=float)
        self.t_d = params.t_d
        self.ce = ce
        self.rate_np = params.r_background
        self.fix_bright_rate = fix_bright_rate
        self.evaluations = 0
        mean_rate = hist.mean / params.t_d
        if fix_bright_rate:
            self.rate_p_bounds = (params.r_bright + params.r_background,) * 2
        else:
            low = max(0.5 * mean_rate, self.rate_np * (1.0 + 1e-6))
            high = max(2.0 * mean_rate, (hist.max_count + 1.0) / params.t_d, 1.5 * low)
            self.rate_p_bounds = (low, high)
        self.ok = True

    def nll(self, prob: float, rate_p: float) -> float:
        self.evaluations += 1
        rate_dep = prob * (rate_p - self.rate_np) / self.ce
        pmf = marginal_count_pmf(self.counts, rate_p, self.rate_np, rate_dep, self.t_d, PmfMethod.CLOSED_FORM)
        return float(-np.sum(self.tallies * np.log(np.maximum(pmf, 1e-300))))

    def best_rate(self, prob: float) -> Tuple[float, float]:
        low, high = self.rate_p_bounds
        if low == high:
            return low, self.nll(prob, low)
        result = optimize.minimize_scalar(lambda r: self.nll(prob, r), bounds=(low, high), method='bounded',
                                          options={'xatol': REL_TOL * 1e-2 * low})
        self.ok = self.ok and bool(result.success)
        return float(result.x), float(result.fun)

    def __call__(self, prob: float) -> float:
        return self.best_rate(prob)[1]


def fit_depump(hist: CountHistogram, params_init: DetectionParams, ce: Optional[float] = None,
               fix_bright_rate: bool = False, confidence: float = ONE_SIGMA) -> FitResult:
    """Maximum-likelihood depump probability per resonant scatter with a profile-likelihood interval."""
    ce = params_init.ce if ce is None else ce
    if not 0 < ce <= 1:
        raise DomainError(f"collection efficiency must lie in (0, 1], got {ce}")
    if hist.n_shots == 0:
        raise FitError("histogram is empty", {"n_shots": 0})
    if len(hist.bins) < 2:
        raise FitError("all shots fall in one bin; likelihood is degenerate",
                       {"n_shots": hist.n_shots, "bin": hist.max_count})
    if hist.prepared != PreparedState.BRIGHT:
        logging.warning("Fitting a dark-prepared histogram with the bright-state model")

    profile = _ProfileLikelihood(hist, params_init, ce, fix_bright_rate)
    # Probability that makes one depump per window at the mean rate.
    scale = ce / max(hist.mean, 1.0)
    prob_max = MAX_DEPUMPS_PER_WINDOW * scale

    result = optimize.minimize_scalar(profile, bounds=(0.0, prob_max), method='bounded',
                                      options={'xatol': REL_TOL * scale * 1e-2})
    prob_hat, nll_min = float(result.x), float(result.fun)
    nll_zero = profile(0.0)
    if nll_zero <= nll_min:
        prob_hat, nll_min = 0.0, nll_zero
    converged = bool(result.success) and prob_hat < prob_max * (1.0 - 1e-6)

    delta = 0.5 * float(stats.chi2.ppf(confidence, 1))

    def excess(prob: float) -> float:
        return profile(prob) - nll_min - delta

    if prob_hat == 0.0 or excess(0.0) <= 0:
        low = 0.0
    else:
        low = optimize.brentq(excess, 0.0, prob_hat, rtol=REL_TOL)

    high_guess = max(2.0 * prob_hat, 0.05 * scale)
    while excess(high_guess) <= 0 and high_guess < prob_max:
        high_guess = min(2.0 * high_guess, prob_max)
    if excess(high_guess) <= 0:
        logging.warning("profile likelihood does not cross the interval level below the search bound")
        high, converged = prob_max, False
    else:
        high = optimize.brentq(excess, prob_hat, high_guess, rtol=REL_TOL)

    rate_p, _ = profile.best_rate(prob_hat)
    converged = converged and profile.ok
    fit = FitResult(
        depump_prob_per_scatter=prob_hat,
        interval=(float(low), float(high)),
        sigma=0.5 * (float(high) - float(low)),
        fitted_rates=(rate_p, profile.rate_np),
        log_likelihood=-nll_min,
        converged=converged,
    )
    if converged:
        logging.info(f"Fit converged: p = {prob_hat:.4g} [{low:.4g}, {high:.4g}] after "
                     f"{profile.evaluations} likelihood evaluations")
    else:
        logging.warning(f"Fit did not converge cleanly: p = {prob_hat:.4g}")
    return fit


@dataclass(frozen=True)
class ResidualRow:
    n: int
    observed: float
    observed_low: float
    observed_high: float
    model: float
    poisson_observed: float
    poisson_model: float
    residual: float
    residual_low: float
    residual_high: float
    model_difference: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def histogram_residuals(hist: CountHistogram, params: DetectionParams,
                        confidence: float = ONE_SIGMA) -> List[ResidualRow]:
    """Per-bin differences from a Poisson distribution of the same mean.

    `residual` is observed minus Poisson(observed mean) with Wilson error bars;
    `model_difference` is P(n) minus Poisson(model mean).
    """
    if hist.n_shots == 0:
        raise DomainError("histogram is empty")
    n_max = max(hist.max_count, normalization_cutoff(params))
    counts = np.arange(n_max + 1)
    model = count_distribution(counts, params, hist.prepared)
    model_mean = float(np.sum(counts * model))
    poisson_model = stats.poisson.pmf(counts, model_mean)
    poisson_observed = stats.poisson.pmf(counts, hist.mean)
    tallies = hist.dense(n_max)
    z = wilson_z(confidence)
    rows = []
    for n in counts:
        observed = tallies[n] / hist.n_shots
        low, high = wilson_interval(int(tallies[n]), hist.n_shots, z)
        rows.append(ResidualRow(
            n=int(n),
            observed=float(observed),
            observed_low=low,
            observed_high=high,
            model=float(model[n]),
            poisson_observed=float(poisson_observed[n]),
            poisson_model=float(poisson_model[n]),
            residual=float(observed - poisson_observed[n]),
            residual_low=float(low - poisson_observed[n]),
            residual_high=float(high - poisson_observed[n]),
            model_difference=float(model[n] - poisson_model[n]),
        ))
    return rows
