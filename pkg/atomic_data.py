"""Cesium D-line constants, probe off-resonant transition table and trap light shifts."""
import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Optional, Sequence, Tuple

import constants
from errors import ConfigError, DomainError, NotFoundError
from resource_manager import ResourceManager

SPECIES_FILE = 'cs_d_line.json'
TWO_PI = 2.0 * math.pi


class Polarization:
    """Polarization labels in the atom's angular momentum basis."""
    SIGMA_PLUS = "sigma+"
    SIGMA_MINUS = "sigma-"
    PI = "pi"

    ALL = (SIGMA_PLUS, SIGMA_MINUS, PI)


class TrapPolarization:
    """Orientation of the linear trap polarization relative to the B-field axis."""
    PI_ALIGNED = "pi_aligned"
    SIGMA_PM = "sigma_pm"

    ALL = (PI_ALIGNED, SIGMA_PM)


@dataclass(frozen=True)
class DLineConstants:
    """Natural linewidth, resonance and trap detunings. All angular quantities in rad/s."""
    gamma: float
    omega0: float
    delta_d1: float
    delta_d2: float
    hyperfine_ground_splitting: float  # Hz
    excited_splitting_45: float        # Hz

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not self.omega0 > 0:
            raise DomainError(f"omega0 must be positive, got {self.omega0}")

    @property
    def delta_d1_hz(self) -> float:
        return self.delta_d1 / TWO_PI

    @property
    def delta_d2_hz(self) -> float:
        return self.delta_d2 / TWO_PI

    @property
    def gamma_hz(self) -> float:
        return self.gamma / TWO_PI

    @property
    def red_detuned(self) -> bool:
        return self.delta_d1 < 0 and self.delta_d2 < 0

    @classmethod
    def from_wavelength(cls, wavelength: float = constants.TRAP_WAVELENGTH,
                        data: Optional[Dict[str, float]] = None) -> 'DLineConstants':
        """Build constants for a trap at `wavelength` (m) from species data."""
        if not wavelength > 0:
            raise DomainError(f"wavelength must be positive, got {wavelength}")
        data = data or load_species_data()["constants"]
        trap_freq = constants.C / wavelength
        return cls(
            gamma=1.0 / data["d2_lifetime_s"],
            omega0=TWO_PI * data["d2_frequency_hz"],
            delta_d1=TWO_PI * (trap_freq - data["d1_frequency_hz"]),
            delta_d2=TWO_PI * (trap_freq - data["d2_frequency_hz"]),
            hyperfine_ground_splitting=data["hyperfine_ground_splitting_hz"],
            excited_splitting_45=data["excited_splitting_45_hz"],
        )


@dataclass(frozen=True)
class TransitionEntry:
    """One probe-driven off-resonant coupling out of |F=4, m_F=4>."""
    final_state: Tuple[int, int]
    polarization: str
    detuning: float            # rad/s
    branching_ratio: float
    sat_intensity_ratio: float

    @property
    def detuning_hz(self) -> float:
        return self.detuning / TWO_PI


@dataclass(frozen=True)
class TrapConfig:
    """Tweezer depth (frequency and temperature units), wavelength and polarization geometry."""
    depth_freq: float   # Hz, U0/h
    depth_temp: float   # K, U0/k_b
    wavelength: float = constants.TRAP_WAVELENGTH
    polarization_mode: str = TrapPolarization.PI_ALIGNED

    def __post_init__(self):
        if not (math.isfinite(self.depth_freq) and self.depth_freq >= 0):
            raise ConfigError(f"depth must be a nonnegative frequency, got {self.depth_freq}", "trap.depth_freq")
        if not math.isclose(self.depth_freq, depth_temp_to_freq(self.depth_temp), rel_tol=1e-12, abs_tol=1e-300):
            raise ConfigError(
                f"depth_freq={self.depth_freq} Hz and depth_temp={self.depth_temp} K disagree", "trap.depth_temp")
        if not self.wavelength > 0:
            raise ConfigError(f"wavelength must be positive, got {self.wavelength}", "trap.wavelength")
        if self.polarization_mode not in TrapPolarization.ALL:
            raise ConfigError(f"unknown polarization mode '{self.polarization_mode}'", "trap.polarization_mode")

    @classmethod
    def from_depth_freq(cls, depth_freq: float, polarization_mode: str = TrapPolarization.PI_ALIGNED,
                        wavelength: float = constants.TRAP_WAVELENGTH) -> 'TrapConfig':
        return cls(depth_freq, depth_freq_to_temp(depth_freq), wavelength, polarization_mode)

    @classmethod
    def from_depth_temp(cls, depth_temp: float, polarization_mode: str = TrapPolarization.PI_ALIGNED,
                        wavelength: float = constants.TRAP_WAVELENGTH) -> 'TrapConfig':
        return cls(depth_temp_to_freq(depth_temp), depth_temp, wavelength, polarization_mode)


def depth_temp_to_freq(depth_temp: float) -> float:
    """U0/k_b in K to U0/h in Hz."""
    return depth_temp * constants.K_B / constants.H


def depth_freq_to_temp(depth_freq: float) -> float:
    """U0/h in Hz to U0/k_b in K."""
    return depth_freq * constants.H / constants.K_B


def peak_intensity(power: float, waist: float) -> float:
    """Peak intensity (W/m^2) of a Gaussian beam with 1/e^2 waist radius `waist`."""
    if power < 0 or not waist > 0:
        raise DomainError(f"need power >= 0 and waist > 0, got power={power}, waist={waist}")
    return 2.0 * power / (math.pi * waist ** 2)


def stark_shift(dline: DLineConstants, intensity: float) -> float:
    """Ground-state AC Stark shift in J of a far-detuned trap at `intensity` (W/m^2).

    Uses angular frequencies throughout. Negative for a red-detuned trap.
    """
    if intensity < 0:
        raise DomainError(f"intensity must be nonnegative, got {intensity}")
    if dline.delta_d1 == 0 or dline.delta_d2 == 0:
        raise DomainError("trap detuning from D1 or D2 is zero")
    prefactor = math.pi * constants.C ** 2 * dline.gamma / (2.0 * dline.omega0 ** 3)
    return prefactor * (2.0 / dline.delta_d2 + 1.0 / dline.delta_d1) * intensity


def intensity_for_depth(dline: DLineConstants, depth_freq: float) -> float:
    """Intensity whose Stark shift has magnitude h * depth_freq."""
    per_unit = abs(stark_shift(dline, 1.0))
    if per_unit == 0:
        raise DomainError("trap produces no light shift")
    return depth_freq * constants.H / per_unit


def rabi_squared_from_depth(dline: DLineConstants, depth_freq: float) -> float:
    """Squared single-component Rabi rate (Omega_i/2pi)^2 in Hz^2 for an equal sigma+/sigma- trap.

    Evaluated in ordinary-frequency units: 2 U0/h * |D1 D2 / (2 D1 + D2)|.
    """
    if depth_freq < 0:
        raise DomainError(f"trap depth must be nonnegative, got {depth_freq}")
    d1, d2 = dline.delta_d1_hz, dline.delta_d2_hz
    denominator = 2.0 * d1 + d2
    if denominator == 0:
        raise DomainError("degenerate detunings: 2*delta_D1 + delta_D2 = 0")
    return 2.0 * depth_freq * abs(d1 * d2 / denominator)


def _parse_row(row: Dict[str, Any], index: int) -> TransitionEntry:
    path = f"transitions[{index}]"
    required = ("f_prime", "m_f_prime", "polarization", "detuning_mhz",
                "branching_num", "branching_den", "sat_ratio")
    missing = [key for key in required if key not in row]
    if missing:
        raise ConfigError(f"missing keys {missing}", path)
    unknown = sorted(set(row) - set(required))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", path)
    if row["polarization"] not in Polarization.ALL:
        raise ConfigError(f"unknown polarization '{row['polarization']}'", f"{path}.polarization")
    if row["branching_den"] <= 0 or not 0 <= row["branching_num"] <= row["branching_den"]:
        raise ConfigError("branching ratio must lie in [0, 1]", f"{path}.branching_num")
    if not row["sat_ratio"] > 0:
        raise ConfigError("saturation intensity ratio must be positive", f"{path}.sat_ratio")
    return TransitionEntry(
        final_state=(int(row["f_prime"]), int(row["m_f_prime"])),
        polarization=row["polarization"],
        detuning=TWO_PI * float(row["detuning_mhz"]) * 1e6,
        branching_ratio=row["branching_num"] / row["branching_den"],
        sat_intensity_ratio=float(row["sat_ratio"]),
    )


def load_species_data(path: Optional[str] = None) -> Dict[str, Any]:
    """Load species constants and transition rows from a JSON data file.

    Returns a dict with keys `species`, `constants` and `rows` (tuple of TransitionEntry).
    """
    if path is None:
        return _bundled_species_data()
    return _read_species_file(path)


@lru_cache(maxsize=1)
def _bundled_species_data() -> Dict[str, Any]:
    return _read_species_file(ResourceManager.get_resource_path(SPECIES_FILE))


def _read_species_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", path, line=e.lineno) from e
    except UnicodeDecodeError as e:
        raise ConfigError(f"not UTF-8 text: {e.reason} at byte {e.start}", path) from None
    for key in ("constants", "transitions"):
        if key not in raw:
            raise ConfigError("missing section", key)
    rows = tuple(_parse_row(row, i) for i, row in enumerate(raw["transitions"]))
    logging.debug(f"Loaded {len(rows)} transition rows for {raw.get('species', '?')} from {path}")
    return {"species": raw.get("species", ""), "constants": dict(raw["constants"]), "rows": rows}


def default_constants() -> DLineConstants:
    return DLineConstants.from_wavelength(constants.TRAP_WAVELENGTH)


def default_rows() -> Tuple[TransitionEntry, ...]:
    return load_species_data()["rows"]


def table_lookup(final_state: Tuple[int, int], rows: Optional[Sequence[TransitionEntry]] = None) -> TransitionEntry:
    """Return the stored row for excited state (F', m_F')."""
    rows = default_rows() if rows is None else rows
    key = tuple(final_state)
    for row in rows:
        if row.final_state == key:
            return row
    raise NotFoundError(f"no off-resonant transition row for |F'={key[0]}, m_F'={key[1]}>")
