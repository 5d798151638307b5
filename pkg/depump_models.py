"""State-information loss channels during bright-state detection.

Three mechanisms move an atom out of the cycling transition while it is probed:
off-resonant scatter of trap light, off-resonant probe scatter through
polarization impurities, and trap-driven V-type Raman coupling between
excited-state hyperfine levels. Each is reported both as a raw rate and as the
normalized figure of merit R (depump probability per collected photon).
"""
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import constants
from atomic_data import (DLineConstants, Polarization, TransitionEntry, TrapConfig, TrapPolarization,
                         default_rows, rabi_squared_from_depth, table_lookup)
from errors import ConfigError, DomainError, NotFoundError


class RateKind:
    PER_SECOND = "per_second"
    PER_SCATTER = "per_scatter"


@dataclass(frozen=True)
class ProbeConfig:
    """Probe saturation parameter and intensity fractions per polarization component."""
    intensity_sat: float = constants.PROBE_SATURATION
    pol_fraction_sigma_plus: float = 1.0 - 2 * constants.PROBE_IMPURITY_FRACTION
    pol_fraction_sigma_minus: float = constants.PROBE_IMPURITY_FRACTION
    pol_fraction_pi: float = constants.PROBE_IMPURITY_FRACTION

    def __post_init__(self):
        if not (math.isfinite(self.intensity_sat) and self.intensity_sat >= 0):
            raise ConfigError(f"saturation parameter must be nonnegative, got {self.intensity_sat}",
                              "probe.intensity_sat")
        fractions = {
            "pol_fraction_sigma_plus": self.pol_fraction_sigma_plus,
            "pol_fraction_sigma_minus": self.pol_fraction_sigma_minus,
            "pol_fraction_pi": self.pol_fraction_pi,
        }
        for name, value in fractions.items():
            if not value >= 0:
                raise ConfigError(f"polarization fraction must be nonnegative, got {value}", f"probe.{name}")
        total = sum(fractions.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"polarization fractions sum to {total}, expected 1", "probe")

    @property
    def polarization_purity(self) -> float:
        """Fraction of probe intensity in the nominal sigma+ component."""
        return self.pol_fraction_sigma_plus

    def fraction_for(self, polarization: str) -> float:
        if polarization == Polarization.SIGMA_PLUS:
            return self.pol_fraction_sigma_plus
        if polarization == Polarization.SIGMA_MINUS:
            return self.pol_fraction_sigma_minus
        if polarization == Polarization.PI:
            return self.pol_fraction_pi
        raise NotFoundError(f"unknown polarization '{polarization}'")

    @classmethod
    def pure(cls, intensity_sat: float = constants.PROBE_SATURATION) -> 'ProbeConfig':
        return cls(intensity_sat, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class RamanLeg:
    """Transition-strength factors for the two legs of one V-type Raman path out of |F'=5, m_F'=5>."""
    target: Tuple[int, int]
    omega_plus_factor: float
    omega_minus_factor: float


# Relative strengths of the sigma+ leg |4,4> -> |5',5'> and the sigma- leg |4,4> -> |F',3'>
RAMAN_LEGS: Dict[Tuple[int, int], RamanLeg] = {
    (4, 3): RamanLeg((4, 3), 3.0 / 2.0, 7.0 / 40.0),
    (3, 3): RamanLeg((3, 3), 3.0 / 2.0, 7.0 / 24.0),
}


@dataclass(frozen=True)
class DepumpBudget:
    trap_rate: float
    probe_rate: float
    raman_prob_per_scatter: float
    r_trap: float
    r_probe: float
    r_raman: float
    total_r: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def trap_depump_rate(depth_freq: float) -> float:
    """Depump rate (1/s) from off-resonant scatter of trap light at depth U0/h = depth_freq."""
    if depth_freq < 0:
        raise DomainError(f"trap depth must be nonnegative, got {depth_freq}")
    return constants.TRAP_DEPUMP_COEFFICIENT * depth_freq


def t1_lifetime(depth_freq: float) -> float:
    rate = trap_depump_rate(depth_freq)
    return math.inf if rate == 0 else 1.0 / rate


def probe_depump_rate(probe: ProbeConfig, rows: Optional[Sequence[TransitionEntry]] = None,
                      gamma: Optional[float] = None) -> float:
    """Sum of off-resonant probe scattering rates weighted by branching to F=3 (1/s)."""
    rows = default_rows() if rows is None else rows
    if not rows:
        raise DomainError("no transition rows given")
    if gamma is None:
        gamma = 1.0 / constants.CS_D2_LIFETIME
    if not gamma > 0:
        raise DomainError(f"linewidth must be positive, got {gamma}")
    rate = 0.0
    for row in rows:
        s_alpha = probe.fraction_for(row.polarization) * probe.intensity_sat / row.sat_intensity_ratio
        if s_alpha < 0:
            raise DomainError(f"negative saturation parameter for row {row.final_state}")
        detuning_term = (2.0 * row.detuning / gamma) ** 2
        rate += row.branching_ratio * (gamma / 2.0) * s_alpha / (1.0 + s_alpha + detuning_term)
    return rate


def raman_effective_rabi(rabi_sq: float, delta_d2: float, target: Tuple[int, int],
                         polarization_mode: str = TrapPolarization.SIGMA_PM) -> float:
    """Two-photon Rabi rate (Hz) between |5',5'> and `target` through |4,4>.

    `rabi_sq` is (Omega_i/2pi)^2 in Hz^2 and `delta_d2` the D2 detuning in Hz.
    A pi-aligned trap has no dipole-allowed sigma coupling, giving zero.
    """
    key = tuple(target)
    if key not in RAMAN_LEGS:
        raise NotFoundError(f"no Raman leg to |F'={key[0]}, m_F'={key[1]}>")
    if polarization_mode == TrapPolarization.PI_ALIGNED:
        return 0.0
    if polarization_mode != TrapPolarization.SIGMA_PM:
        raise DomainError(f"unknown trap polarization mode '{polarization_mode}'")
    if rabi_sq < 0:
        raise DomainError(f"squared Rabi rate must be nonnegative, got {rabi_sq}")
    if delta_d2 == 0:
        raise DomainError("D2 detuning is zero")
    leg = RAMAN_LEGS[key]
    return leg.omega_plus_factor * leg.omega_minus_factor * rabi_sq / (2.0 * abs(delta_d2))


def raman_population_ratio(omega_eff: float, delta_raman: float) -> float:
    """Steady-state population of the Raman target relative to |5',5'>; at most 1/2."""
    if omega_eff == 0 and delta_raman == 0:
        raise DomainError("Raman Rabi rate and detuning are both zero")
    omega_sq = omega_eff ** 2
    return omega_sq / (2.0 * (delta_raman ** 2 + omega_sq))


def raman_leg_probability(trap: TrapConfig, dline: DLineConstants, target: Tuple[int, int],
                          rows: Optional[Sequence[TransitionEntry]] = None) -> float:
    """Per-resonant-scatter depump probability through one Raman target."""
    row = table_lookup(target, rows)
    rabi_sq = rabi_squared_from_depth(dline, trap.depth_freq)
    omega_eff = raman_effective_rabi(rabi_sq, dline.delta_d2_hz, target, trap.polarization_mode)
    if omega_eff == 0:
        return 0.0
    return row.branching_ratio * raman_population_ratio(omega_eff, row.detuning_hz)


def raman_depump_probability(trap: TrapConfig, dline: DLineConstants,
                             rows: Optional[Sequence[TransitionEntry]] = None) -> float:
    """Per-resonant-scatter depump probability summed over all Raman targets."""
    if trap.polarization_mode == TrapPolarization.PI_ALIGNED:
        return 0.0
    return sum(raman_leg_probability(trap, dline, target, rows) for target in RAMAN_LEGS)


def normalized_rate(value: float, bright_rate: float, collection_efficiency: float,
                    kind: str = RateKind.PER_SECOND) -> float:
    """Depump probability per collected bright photon."""
    if not bright_rate > 0:
        raise DomainError(f"bright collection rate must be positive, got {bright_rate}")
    if not 0 < collection_efficiency <= 1:
        raise DomainError(f"collection efficiency must lie in (0, 1], got {collection_efficiency}")
    if kind == RateKind.PER_SECOND:
        return value / bright_rate
    if kind == RateKind.PER_SCATTER:
        return value / collection_efficiency
    raise DomainError(f"unknown rate kind '{kind}'")


def depump_budget(trap: TrapConfig, probe: ProbeConfig, dline: DLineConstants, bright_rate: float,
                  collection_efficiency: float, rows: Optional[Sequence[TransitionEntry]] = None) -> DepumpBudget:
    trap_rate = trap_depump_rate(trap.depth_freq)
    probe_rate = probe_depump_rate(probe, rows, dline.gamma)
    raman_prob = raman_depump_probability(trap, dline, rows)
    r_trap = normalized_rate(trap_rate, bright_rate, collection_efficiency, RateKind.PER_SECOND)
    r_probe = normalized_rate(probe_rate, bright_rate, collection_efficiency, RateKind.PER_SECOND)
    r_raman = normalized_rate(raman_prob, bright_rate, collection_efficiency, RateKind.PER_SCATTER)
    return DepumpBudget(
        trap_rate=trap_rate,
        probe_rate=probe_rate,
        raman_prob_per_scatter=raman_prob,
        r_trap=r_trap,
        r_probe=r_probe,
        r_raman=r_raman,
        total_r=r_trap + r_probe + r_raman,
    )
