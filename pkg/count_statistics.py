"""Photon-count distribution of a single-shot readout with at most one state change.

A prepared atom fluoresces at R_p until a state change at rate R_dep, after
which it fluoresces at R_np. Marginalizing over the change time gives

    P(n) = exp(-t_d R_dep) Pois(n, R_p t_d)
           + int_0^t_d Pois(n, R_p t + R_np (t_d - t)) R_dep exp(-t R_dep) dt

Thresholding P(n) at m counts gives the bright/dark readout errors.
"""
import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special, stats

import constants
from errors import ConfigError, DomainError, NumericalError

QUAD_EPSREL = 1e-9

ArrayLike = Union[int, Sequence[int], np.ndarray]


class PreparedState:
    BRIGHT = "bright"
    DARK = "dark"

    ALL = (BRIGHT, DARK)


class PmfMethod:
    AUTO = "auto"
    QUADRATURE = "quadrature"
    CLOSED_FORM = "closed_form"


@dataclass(frozen=True)
class DetectionParams:
    """Collection rates, depump rates, detection window and threshold of one readout."""
    t_d: float = constants.DEFAULT_MAX_TOTAL_TIME
    r_bright: float = constants.DEFAULT_BRIGHT_RATE
    r_background: float = constants.DEFAULT_BACKGROUND_RATE
    r_dep_bright: float = 0.0
    r_dep_dark: float = 0.0
    threshold: int = constants.DEFAULT_THRESHOLD
    ce: float = constants.DEFAULT_COLLECTION_EFFICIENCY

    def __post_init__(self):
        for name in ("r_bright", "r_background", "r_dep_bright", "r_dep_dark"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"rate must be finite and nonnegative, got {value}", f"detection.{name}")
        if not (math.isfinite(self.t_d) and self.t_d > 0):
            raise ConfigError(f"detection time must be positive, got {self.t_d}", "detection.t_d")
        if isinstance(self.threshold, bool) or int(self.threshold) != self.threshold or self.threshold < 1:
            raise ConfigError(f"threshold must be an integer >= 1, got {self.threshold}", "detection.threshold")
        if not 0 < self.ce <= 1:
            raise ConfigError(f"collection efficiency must lie in (0, 1], got {self.ce}", "detection.ce")
        if not self.r_bright > self.r_background:
            raise ConfigError("bright rate must exceed the background rate", "detection.r_bright")

    @property
    def scatter_rate(self) -> float:
        """Resonant scattering rate of a bright atom (photons/s)."""
        return self.r_bright / self.ce

    def rates_for(self, prepared: str) -> Tuple[float, float, float]:
        """(R_p, R_np, R_dep) for the prepared state."""
        bright_total = self.r_bright + self.r_background
        if prepared == PreparedState.BRIGHT:
            return bright_total, self.r_background, self.r_dep_bright
        if prepared == PreparedState.DARK:
            return self.r_background, bright_total, self.r_dep_dark
        raise DomainError(f"prepared state must be 'bright' or 'dark', got '{prepared}'")

    def with_(self, **changes) -> 'DetectionParams':
        return replace(self, **changes)


@dataclass(frozen=True)
class ErrorReport:
    eps_bright: float
    eps_dark: float
    infidelity: float
    fidelity: float

    @classmethod
    def from_errors(cls, eps_bright: float, eps_dark: float) -> 'ErrorReport':
        for name, value in (("eps_bright", eps_bright), ("eps_dark", eps_dark)):
            if not 0 <= value <= 1:
                raise DomainError(f"{name} must lie in [0, 1], got {value}")
        infidelity = 0.5 * (eps_bright + eps_dark)
        return cls(eps_bright, eps_dark, infidelity, 1.0 - infidelity)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class OptimalTimeResult:
    t_opt: float
    report: ErrorReport
    used_grid_fallback: bool


def poisson_pmf(n: ArrayLike, mean: float):
    """Probability of n events for a Poisson distribution of the given mean."""
    if not mean >= 0:
        raise DomainError(f"Poisson mean must be nonnegative, got {mean}")
    return stats.poisson.pmf(n, mean)


def _pmf_vec(ns: np.ndarray, mean: float) -> np.ndarray:
    return np.exp(special.xlogy(ns, mean) - mean - special.gammaln(ns + 1.0))


def _as_counts(n: ArrayLike) -> np.ndarray:
    ns = np.atleast_1d(np.asarray(n))
    if ns.size and (np.any(ns < 0) or np.any(ns != np.floor(ns))):
        raise DomainError("photon counts must be nonnegative integers")
    return ns.astype(float)


def _closed_form_integral(ns: np.ndarray, rate_p: float, rate_np: float, rate_dep: float, t_d: float) -> np.ndarray:
    # Substituting x = R_np t_d + (R_p - R_np) t turns the integral into a
    # difference of regularized incomplete gamma functions. Requires R_p > R_np.
    k = rate_p - rate_np
    beta = 1.0 + rate_dep / k
    x_lo = beta * rate_np * t_d
    x_hi = beta * rate_p * t_d
    order = ns + 1.0
    upper = x_lo > order
    diff = np.where(upper,
                    special.gammaincc(order, x_lo) - special.gammaincc(order, x_hi),
                    special.gammainc(order, x_hi) - special.gammainc(order, x_lo))
    log_prefactor = math.log(rate_dep / k) + rate_dep * rate_np * t_d / k - order * math.log(beta)
    return np.exp(log_prefactor) * np.clip(diff, 0.0, None)


def _quadrature_integral(ns: np.ndarray, rate_p: float, rate_np: float, rate_dep: float, t_d: float,
                         epsrel: float) -> np.ndarray:
    # Integrate over u = 1 - exp(-R_dep t) so the exponential weight becomes uniform.
    q = -math.expm1(-rate_dep * t_d)

    def integrand(u: float) -> np.ndarray:
        t = min(-math.log1p(-u) / rate_dep, t_d)
        return _pmf_vec(ns, rate_p * t + rate_np * (t_d - t))

    result, error, info = integrate.quad_vec(integrand, 0.0, q, epsrel=epsrel, epsabs=1e-15 * q,
                                             norm='max', full_output=True)
    if not info.success:
        raise NumericalError("count distribution quadrature did not converge", {
            "status": info.status, "neval": info.neval, "error": float(np.max(error)),
            "rate_p": rate_p, "rate_np": rate_np, "rate_dep": rate_dep, "t_d": t_d,
        })
    logging.debug(f"quad_vec: {info.neval} evaluations, error estimate {float(np.max(error)):.3g}")
    return np.clip(result, 0.0, None)


def marginal_count_pmf(n: ArrayLike, rate_p: float, rate_np: float, rate_dep: float, t_d: float,
                       method: str = PmfMethod.AUTO, epsrel: float = QUAD_EPSREL):
    """P(n) for explicit rates; the shared kernel of count_distribution and histogram fits."""
    for name, value in (("rate_p", rate_p), ("rate_np", rate_np), ("rate_dep", rate_dep)):
        if not (math.isfinite(value) and value >= 0):
            raise DomainError(f"{name} must be finite and nonnegative, got {value}")
    if not t_d > 0:
        raise DomainError(f"detection time must be positive, got {t_d}")
    scalar = np.ndim(n) == 0
    ns = _as_counts(n)
    probs = math.exp(-rate_dep * t_d) * _pmf_vec(ns, rate_p * t_d)
    if rate_dep > 0:
        if rate_p == rate_np:
            probs = probs - math.expm1(-rate_dep * t_d) * _pmf_vec(ns, rate_p * t_d)
        else:
            closed_form_ok = rate_p > rate_np
            use_closed = closed_form_ok and (method == PmfMethod.CLOSED_FORM
                                             or (method == PmfMethod.AUTO and rate_np == 0))
            if method == PmfMethod.CLOSED_FORM and not closed_form_ok:
                logging.debug("closed form needs R_p > R_np, using quadrature")
            if use_closed:
                probs = probs + _closed_form_integral(ns, rate_p, rate_np, rate_dep, t_d)
            else:
                probs = probs + _quadrature_integral(ns, rate_p, rate_np, rate_dep, t_d, epsrel)
    return float(probs[0]) if scalar else probs


def count_distribution(n: ArrayLike, params: DetectionParams, prepared: str, method: str = PmfMethod.AUTO):
    """P(n | prepared) for the readout described by `params`."""
    rate_p, rate_np, rate_dep = params.rates_for(prepared)
    return marginal_count_pmf(n, rate_p, rate_np, rate_dep, params.t_d, method)


def normalization_cutoff(params: DetectionParams) -> int:
    """Count beyond which the distribution carries negligible mass."""
    mean = (params.r_bright + params.r_background) * params.t_d
    return int(math.ceil(20 + mean + 10 * math.sqrt(mean)))


def bright_label_prob(params: DetectionParams, prepared: str, method: str = PmfMethod.AUTO) -> float:
    """Probability that a shot of the prepared state collects at least `threshold` counts."""
    below = count_distribution(np.arange(params.threshold), params, prepared, method)
    return float(min(1.0, max(0.0, 1.0 - float(np.sum(below)))))


def error_report(params: DetectionParams, method: str = PmfMethod.AUTO) -> ErrorReport:
    eps_bright = 1.0 - bright_label_prob(params, PreparedState.BRIGHT, method)
    eps_dark = bright_label_prob(params, PreparedState.DARK, method)
    return ErrorReport.from_errors(eps_bright, eps_dark)


def _threshold_candidates(m_range: Union[Tuple[int, int], Iterable[int]]) -> List[int]:
    if isinstance(m_range, tuple) and len(m_range) == 2:
        candidates = list(range(int(m_range[0]), int(m_range[1]) + 1))
    else:
        candidates = sorted(int(m) for m in m_range)
    if not candidates:
        raise DomainError("threshold range is empty")
    if candidates[0] < 1:
        raise DomainError("thresholds must be >= 1")
    return candidates


def optimal_threshold(params: DetectionParams, m_range: Union[Tuple[int, int], Iterable[int]] = (1, 6)) -> int:
    """Threshold minimizing the infidelity; ties go to the smaller threshold."""
    candidates = _threshold_candidates(m_range)
    counts = np.arange(candidates[-1])
    cdf_bright = np.concatenate(([0.0], np.cumsum(count_distribution(counts, params, PreparedState.BRIGHT))))
    cdf_dark = np.concatenate(([0.0], np.cumsum(count_distribution(counts, params, PreparedState.DARK))))
    best_m, best_infidelity = candidates[0], math.inf
    for m in candidates:
        infidelity = 0.5 * (cdf_bright[m] + (1.0 - cdf_dark[m]))
        logging.debug(f"threshold {m}: infidelity {infidelity:.6g}")
        if infidelity < best_infidelity:
            best_m, best_infidelity = m, infidelity
    return best_m


def _is_unimodal(values: np.ndarray, rtol: float = 1e-12) -> bool:
    i_min = int(np.argmin(values))
    slack = rtol * float(np.max(np.abs(values)))
    falling = np.all(np.diff(values[:i_min + 1]) <= slack)
    rising = np.all(np.diff(values[i_min:]) >= -slack)
    return bool(falling and rising)


def optimal_time(params: DetectionParams, t_range: Tuple[float, float], grid_points: int = 64,
                 fallback_points: int = 2001) -> OptimalTimeResult:
    """Detection time minimizing the infidelity at fixed threshold."""
    t_lo, t_hi = float(t_range[0]), float(t_range[1])
    if not 0 < t_lo < t_hi:
        raise DomainError(f"time range must be a positive interval, got {t_range}")

    def infidelity(t: float) -> float:
        return error_report(params.with_(t_d=t)).infidelity

    grid = np.linspace(t_lo, t_hi, grid_points)
    values = np.array([infidelity(t) for t in grid])
    if not _is_unimodal(values):
        logging.warning("infidelity is not unimodal over the time range, falling back to a grid scan")
        dense = np.linspace(t_lo, t_hi, fallback_points)
        dense_values = np.array([infidelity(t) for t in dense])
        t_opt = float(dense[int(np.argmin(dense_values))])
        return OptimalTimeResult(t_opt, error_report(params.with_(t_d=t_opt)), True)

    i_min = int(np.argmin(values))
    bracket = (grid[max(i_min - 1, 0)], grid[min(i_min + 1, grid_points - 1)])
    result = optimize.minimize_scalar(infidelity, bounds=bracket, method='bounded',
                                      options={'xatol': (t_hi - t_lo) * 1e-9})
    t_opt = float(result.x)
    if infidelity(t_opt) > values[i_min]:
        t_opt = float(grid[i_min])
    logging.debug(f"optimal detection time {t_opt:.6g} s after {result.nfev} evaluations")
    return OptimalTimeResult(t_opt, error_report(params.with_(t_d=t_opt)), False)


def r_from_eps_bright(eps_bright: float, threshold: int = constants.DEFAULT_THRESHOLD) -> float:
    """Total depump probability per collected photon implied by a bright error."""
    if not 0 <= eps_bright < 1:
        raise DomainError(f"bright error must lie in [0, 1), got {eps_bright}")
    if threshold < 1:
        raise DomainError(f"threshold must be >= 1, got {threshold}")
    return 1.0 - (1.0 - eps_bright) ** (1.0 / threshold)


def first_order_bright_error(r_norm: float, threshold: int = constants.DEFAULT_THRESHOLD) -> float:
    """Probability of a depump before `threshold` photons are collected."""
    return 1.0 - (1.0 - r_norm) ** threshold


def fixed_time_mean_for_bright_prob(target: float = 0.999, threshold: int = constants.DEFAULT_THRESHOLD) -> float:
    """Smallest Poisson mean whose probability of >= threshold counts reaches `target`."""
    if not 0 < target < 1:
        raise DomainError(f"target probability must lie in (0, 1), got {target}")
    return optimize.brentq(lambda mean: stats.poisson.sf(threshold - 1, mean) - target, 1e-9, 1e4, xtol=1e-12)


def distribution_table(params: DetectionParams, n_max: Optional[int] = None) -> List[Dict[str, float]]:
    """Rows of n, P(n|bright), P(n|dark) and their cumulative sums."""
    n_max = normalization_cutoff(params) if n_max is None else n_max
    counts = np.arange(n_max + 1)
    p_bright = count_distribution(counts, params, PreparedState.BRIGHT)
    p_dark = count_distribution(counts, params, PreparedState.DARK)
    cdf_bright, cdf_dark = np.cumsum(p_bright), np.cumsum(p_dark)
    return [
        {"n": int(n), "p_bright": float(pb), "p_dark": float(pd),
         "cdf_bright": float(cb), "cdf_dark": float(cd)}
        for n, pb, pd, cb, cd in zip(counts, p_bright, p_dark, cdf_bright, cdf_dark)
    ]


def infidelity_curve(params: DetectionParams, times: Sequence[float]) -> List[Tuple[float, ErrorReport]]:
    """Error report at each detection time at fixed threshold and rates."""
    return [(float(t), error_report(params.with_(t_d=float(t)))) for t in times]
