"""Shot-level Monte Carlo of pulsed, adaptively terminated fluorescence readout.

Each shot applies probe pulses until `threshold` counts are collected or the
pulse budget is exhausted. Within a pulse a single state change may occur;
scattered photons heat the atom by a fixed recoil energy each, and an atom
whose accumulated energy exceeds the trap depth is flagged lost.

Shots are simulated column-wise in chunks. Chunk k of a run seeded with
`seed` draws from SeedSequence(seed, spawn_key=(..., k)), so results do not
depend on the number of worker threads.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from scipy import stats

import constants
from atomic_data import depth_freq_to_temp
from count_statistics import DetectionParams, PreparedState
from errors import ConfigError, DomainError, NumericalError
from inference import wilson_interval, wilson_z

CHUNK_SIZE = 50_000
THREADS_ENV = 'TWEEZER_READOUT_THREADS'
MAX_SCATTER_PER_PULSE = 1e10

Seed = Union[int, np.random.SeedSequence]


@dataclass(frozen=True)
class AdaptiveProtocol:
    pulse_duration: float = constants.DEFAULT_PULSE_DURATION
    max_total_time: float = constants.DEFAULT_MAX_TOTAL_TIME
    threshold: int = constants.DEFAULT_THRESHOLD
    adaptive: bool = True

    def __post_init__(self):
        if not self.pulse_duration > 0:
            raise ConfigError(f"pulse duration must be positive, got {self.pulse_duration}", "protocol.pulse_duration")
        if not self.max_total_time >= self.pulse_duration:
            raise ConfigError("maximum detection time is shorter than one pulse", "protocol.max_total_time")
        if isinstance(self.threshold, bool) or int(self.threshold) != self.threshold or self.threshold < 1:
            raise ConfigError(f"threshold must be an integer >= 1, got {self.threshold}", "protocol.threshold")

    @property
    def max_pulses(self) -> int:
        return int(math.floor(self.max_total_time / self.pulse_duration * (1 + 1e-12)))

    @property
    def max_time(self) -> float:
        """Integrated probe time of a shot that uses every pulse."""
        return self.max_pulses * self.pulse_duration

    @classmethod
    def fixed_time(cls, duration: float, threshold: int = constants.DEFAULT_THRESHOLD) -> 'AdaptiveProtocol':
        """Single-pulse detection of the given duration."""
        return cls(duration, duration, threshold, adaptive=False)


@dataclass(frozen=True)
class HeatingModel:
    """Free-atom recoil heating: each scattered photon adds 2 T_rec of energy."""
    recoil_temp: float = constants.CS_RECOIL_TEMPERATURE
    trap_depth_temp: float = depth_freq_to_temp(constants.DEFAULT_DEPTH_FREQ)
    loss_enabled: bool = True
    escape_halts_fluorescence: bool = False

    def __post_init__(self):
        if not self.recoil_temp >= 0:
            raise ConfigError(f"recoil temperature must be nonnegative, got {self.recoil_temp}", "heating.recoil_temp")
        if not self.trap_depth_temp > 0:
            raise ConfigError(f"trap depth must be positive, got {self.trap_depth_temp}", "heating.trap_depth_temp")

    @property
    def energy_per_scatter(self) -> float:
        return 2.0 * self.recoil_temp

    def escape_photon_count(self) -> int:
        """Smallest number of scattered photons whose energy exceeds the trap depth."""
        if self.energy_per_scatter == 0:
            return np.iinfo(np.int64).max
        count = int(math.floor(self.trap_depth_temp / self.energy_per_scatter)) + 1
        while count > 1 and (count - 1) * self.energy_per_scatter > self.trap_depth_temp:
            count -= 1
        while count * self.energy_per_scatter <= self.trap_depth_temp:
            count += 1
        return count


@dataclass(frozen=True)
class ShotRecord:
    collected_counts: int
    pulses_used: int
    wait_time: float
    scattered_photons: int
    depump_time: Optional[float]
    final_energy_temp: float
    lost: bool
    label: str


@dataclass
class ShotBatch:
    """Column-wise outcomes of a run of shots of one prepared state."""
    prepared: str
    params: DetectionParams
    protocol: AdaptiveProtocol
    heating: HeatingModel
    collected: np.ndarray
    pulses: np.ndarray
    scattered: np.ndarray
    depump_time: np.ndarray
    lost: np.ndarray

    def __len__(self) -> int:
        return int(self.collected.size)

    @property
    def energy(self) -> np.ndarray:
        return self.scattered * self.heating.energy_per_scatter

    @property
    def wait_time(self) -> np.ndarray:
        return self.pulses * self.protocol.pulse_duration

    @property
    def labeled_bright(self) -> np.ndarray:
        return self.collected >= self.protocol.threshold

    def record(self, i: int) -> ShotRecord:
        depump = float(self.depump_time[i])
        return ShotRecord(
            collected_counts=int(self.collected[i]),
            pulses_used=int(self.pulses[i]),
            wait_time=float(self.pulses[i] * self.protocol.pulse_duration),
            scattered_photons=int(self.scattered[i]),
            depump_time=None if math.isnan(depump) else depump,
            final_energy_temp=float(self.scattered[i] * self.heating.energy_per_scatter),
            lost=bool(self.lost[i]),
            label=PreparedState.BRIGHT if self.collected[i] >= self.protocol.threshold else PreparedState.DARK,
        )

    def records(self) -> Iterator[ShotRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def count_histogram(self) -> Dict[int, int]:
        values, tallies = np.unique(self.collected, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, tallies)}

    @classmethod
    def concatenate(cls, parts: List['ShotBatch']) -> 'ShotBatch':
        first = parts[0]
        return cls(first.prepared, first.params, first.protocol, first.heating,
                   *(np.concatenate([getattr(p, name) for p in parts])
                     for name in ("collected", "pulses", "scattered", "depump_time", "lost")))


@dataclass(frozen=True)
class BatchSummary:
    prepared: str
    n_shots: int
    bright_fraction: float
    bright_interval: Tuple[float, float]
    error_fraction: float
    error_interval: Tuple[float, float]
    loss_fraction: float
    loss_interval: Tuple[float, float]
    mean_scattered: float
    mean_energy_temp: float
    mean_wait_time: float
    count_histogram: Dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "prepared": self.prepared,
            "n_shots": self.n_shots,
            "bright_fraction": self.bright_fraction,
            "bright_interval": list(self.bright_interval),
            "error_fraction": self.error_fraction,
            "error_interval": list(self.error_interval),
            "loss_fraction": self.loss_fraction,
            "loss_interval": list(self.loss_interval),
            "mean_scattered": self.mean_scattered,
            "mean_energy_temp": self.mean_energy_temp,
            "mean_wait_time": self.mean_wait_time,
            "count_histogram": {str(k): v for k, v in sorted(self.count_histogram.items())},
        }


@dataclass(frozen=True)
class BatchResult:
    batch: ShotBatch
    summary: BatchSummary


@dataclass(frozen=True)
class WaitTimeHistogram:
    pulse_duration: float
    wait_times: np.ndarray      # bin centres are the stop times k * pulse_duration
    empirical: np.ndarray
    erlang_reference: np.ndarray
    max_time_fraction: float
    ks_distance: float


@dataclass(frozen=True)
class LossEstimate:
    loss: float
    sigma: float
    interval: Tuple[float, float]


def chunk_sequence(seed: Seed, index: int) -> np.random.SeedSequence:
    """Seed sequence of chunk `index` under a root seed."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (index,),
                                      pool_size=seed.pool_size)
    return np.random.SeedSequence(int(seed), spawn_key=(index,))


def state_seed(seed: Seed, prepared: str) -> np.random.SeedSequence:
    """Independent root sequence per prepared state for paired bright/dark runs."""
    return chunk_sequence(seed, PreparedState.ALL.index(prepared))


def thread_count(workers: Optional[int] = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        logging.warning(f"Ignoring invalid {THREADS_ENV}={value!r}")
        return 1


class AdaptiveDetectionSimulator:
    """Simulates shots of one readout configuration."""

    def __init__(self, params: DetectionParams, protocol: AdaptiveProtocol, heating: HeatingModel):
        if protocol.threshold != params.threshold:
            raise ConfigError("protocol threshold differs from detection threshold", "protocol.threshold")
        self.params = params
        self.protocol = protocol
        self.heating = heating
        expected = params.scatter_rate * protocol.pulse_duration
        if not expected < MAX_SCATTER_PER_PULSE:
            raise NumericalError("expected scattered photons per pulse overflow", {
                "scatter_rate": params.scatter_rate, "pulse_duration": protocol.pulse_duration})

    def _simulate_chunk(self, prepared: str, n: int, rng: np.random.Generator) -> ShotBatch:
        params, protocol, heating = self.params, self.protocol, self.heating
        if prepared not in PreparedState.ALL:
            raise DomainError(f"prepared state must be 'bright' or 'dark', got '{prepared}'")
        dt = protocol.pulse_duration
        change_rate = params.r_dep_bright if prepared == PreparedState.BRIGHT else params.r_dep_dark
        background_mean = params.r_background * dt
        escape_count = heating.escape_photon_count()
        halt = heating.loss_enabled and heating.escape_halts_fluorescence

        fluorescing = np.full(n, prepared == PreparedState.BRIGHT)
        changed = np.zeros(n, dtype=bool)
        depump_time = np.full(n, np.nan)
        collected = np.zeros(n, dtype=np.int64)
        scattered = np.zeros(n, dtype=np.int64)
        pulses = np.zeros(n, dtype=np.int64)
        lost = np.zeros(n, dtype=bool)
        active = np.ones(n, dtype=bool)

        for k in range(protocol.max_pulses):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            glowing = fluorescing[idx]
            bright_time = np.where(glowing, dt, 0.0)
            if change_rate > 0:
                wait = rng.exponential(1.0 / change_rate, size=idx.size)
                event = ~changed[idx] & (wait < dt)
                bright_time = np.where(event, np.where(glowing, wait, dt - wait), bright_time)
                hit = idx[event]
                depump_time[hit] = k * dt + wait[event]
                fluorescing[hit] = ~fluorescing[hit]
                changed[hit] = True
            if halt:
                bright_time = np.where(lost[idx], 0.0, bright_time)
            n_scattered = rng.poisson(params.scatter_rate * bright_time)
            if halt:
                n_scattered = np.minimum(n_scattered, np.maximum(escape_count - scattered[idx], 0))
            n_atom = rng.binomial(n_scattered, params.ce)
            n_background = rng.poisson(background_mean, size=idx.size)

            scattered[idx] += n_scattered
            collected[idx] += n_atom + n_background
            pulses[idx] += 1
            if heating.loss_enabled:
                lost[idx] |= scattered[idx] >= escape_count
            if protocol.adaptive:
                active[idx] = collected[idx] < protocol.threshold

        return ShotBatch(prepared, params, protocol, heating, collected, pulses, scattered, depump_time, lost)

    def simulate_shot(self, prepared: str, rng_seed: Seed) -> ShotRecord:
        rng = np.random.default_rng(chunk_sequence(rng_seed, 0))
        return self._simulate_chunk(prepared, 1, rng).record(0)

    def run_batch(self, prepared: str, n_shots: int, rng_seed: Seed, workers: Optional[int] = None,
                  confidence: float = 0.6827) -> BatchResult:
        if n_shots < 1:
            raise DomainError(f"number of shots must be >= 1, got {n_shots}")
        sizes = [min(CHUNK_SIZE, n_shots - start) for start in range(0, n_shots, CHUNK_SIZE)]

        def run(index: int) -> ShotBatch:
            rng = np.random.default_rng(chunk_sequence(rng_seed, index))
            logging.debug(f"chunk {index}: {sizes[index]} {prepared} shots")
            return self._simulate_chunk(prepared, sizes[index], rng)

        n_workers = min(thread_count(workers), len(sizes))
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                parts = list(pool.map(run, range(len(sizes))))
        else:
            parts = [run(i) for i in range(len(sizes))]
        batch = ShotBatch.concatenate(parts)
        summary = summarize(batch, confidence)
        logging.info(f"Simulated {n_shots} {prepared} shots: bright fraction {summary.bright_fraction:.6f}, "
                     f"loss {summary.loss_fraction:.4f}")
        return BatchResult(batch, summary)


def simulate_shot(params: DetectionParams, protocol: AdaptiveProtocol, heating: HeatingModel,
                  prepared: str, rng_seed: Seed) -> ShotRecord:
    return AdaptiveDetectionSimulator(params, protocol, heating).simulate_shot(prepared, rng_seed)


def run_batch(params: DetectionParams, protocol: AdaptiveProtocol, heating: HeatingModel, prepared: str,
              n_shots: int, rng_seed: Seed, workers: Optional[int] = None, confidence: float = 0.6827) -> BatchResult:
    simulator = AdaptiveDetectionSimulator(params, protocol, heating)
    return simulator.run_batch(prepared, n_shots, rng_seed, workers, confidence)


def summarize(batch: ShotBatch, confidence: float = 0.6827) -> BatchSummary:
    z = wilson_z(confidence)
    n = len(batch)
    n_bright = int(np.count_nonzero(batch.labeled_bright))
    n_errors = n - n_bright if batch.prepared == PreparedState.BRIGHT else n_bright
    n_lost = int(np.count_nonzero(batch.lost))
    return BatchSummary(
        prepared=batch.prepared,
        n_shots=n,
        bright_fraction=n_bright / n,
        bright_interval=wilson_interval(n_bright, n, z),
        error_fraction=n_errors / n,
        error_interval=wilson_interval(n_errors, n, z),
        loss_fraction=n_lost / n,
        loss_interval=wilson_interval(n_lost, n, z),
        mean_scattered=float(np.mean(batch.scattered)),
        mean_energy_temp=float(np.mean(batch.energy)),
        mean_wait_time=float(np.mean(batch.wait_time)),
        count_histogram=batch.count_histogram(),
    )


def readout_infidelity(bright: ShotBatch, dark: ShotBatch, confidence: float = 0.95) -> Tuple[float, Tuple[float, float]]:
    """Infidelity of paired bright/dark runs with a Wilson interval on the pooled error count."""
    if bright.prepared != PreparedState.BRIGHT or dark.prepared != PreparedState.DARK:
        raise DomainError("expected one bright and one dark batch")
    eps_bright = 1.0 - float(np.mean(bright.labeled_bright))
    eps_dark = float(np.mean(dark.labeled_bright))
    infidelity = 0.5 * (eps_bright + eps_dark)
    errors = int(np.count_nonzero(~bright.labeled_bright)) + int(np.count_nonzero(dark.labeled_bright))
    # Equal-size batches make the pooled fraction the infidelity itself.
    trials = len(bright) + len(dark)
    return infidelity, wilson_interval(errors, trials, wilson_z(confidence))


def wait_time_histogram(batch: ShotBatch, rate: Optional[float] = None) -> WaitTimeHistogram:
    """Stop-time distribution per pulse bin and the discretized Erlang reference.

    The reference rate defaults to the total bright collection rate, bright plus background.
    """
    if len(batch) == 0:
        raise DomainError("no shots to histogram")
    protocol = batch.protocol
    dt, n_bins = protocol.pulse_duration, protocol.max_pulses
    rate = batch.params.r_bright + batch.params.r_background if rate is None else rate
    tallies = np.bincount(batch.pulses, minlength=n_bins + 1)[1:n_bins + 1]
    empirical = tallies / len(batch)
    edges = dt * np.arange(n_bins + 1)
    cdf = stats.erlang.cdf(edges, protocol.threshold, scale=1.0 / rate)
    reference = np.diff(cdf)
    reference[-1] = 1.0 - cdf[-2]
    ks = float(np.max(np.abs(np.cumsum(empirical) - np.cumsum(reference))))
    return WaitTimeHistogram(
        pulse_duration=dt,
        wait_times=edges[1:],
        empirical=empirical,
        erlang_reference=reference,
        max_time_fraction=float(empirical[-1]),
        ks_distance=ks,
    )


def detection_loss(bright: ShotBatch, dark: ShotBatch, z: float = 1.0) -> LossEstimate:
    """Detection-driven loss: one minus the bright-to-dark survival ratio."""
    if len(bright) == 0 or len(dark) == 0:
        raise DomainError("both batches must contain shots")
    n_b, n_d = len(bright), len(dark)
    survive_b = 1.0 - np.count_nonzero(bright.lost) / n_b
    survive_d = 1.0 - np.count_nonzero(dark.lost) / n_d
    if survive_d == 0:
        raise DomainError("no dark-prepared atom survived; loss ratio undefined")
    ratio = survive_b / survive_d
    rel_var = 0.0
    if survive_b > 0:
        rel_var += (1.0 - survive_b) / (n_b * survive_b)
    rel_var += (1.0 - survive_d) / (n_d * survive_d)
    sigma = ratio * math.sqrt(rel_var)
    loss = 1.0 - ratio
    return LossEstimate(loss, sigma, (loss - z * sigma, loss + z * sigma))
