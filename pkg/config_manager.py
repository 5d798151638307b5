import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Optional

import constants
from adaptive_simulator import AdaptiveProtocol, HeatingModel
from atomic_data import DLineConstants, TrapConfig, TrapPolarization
from constants import Preset
from count_statistics import DetectionParams, r_from_eps_bright
from depump_models import DepumpBudget, ProbeConfig, depump_budget, raman_depump_probability, trap_depump_rate
from errors import ConfigError, NotFoundError
from output_manager import OutputManager
from resource_manager import ResourceManager

SCHEMA_VERSION = 1
DEFAULT_CONFIG_FILE = 'config.json'
CONFIG_SCHEMA = OutputManager.load_schema("config")


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete readout scenario: trap, probe, detection, pulse protocol and heating."""
    trap: TrapConfig
    probe: ProbeConfig
    detection: DetectionParams
    protocol: AdaptiveProtocol
    heating: HeatingModel
    preset_name: Optional[str] = None

    def __post_init__(self):
        if self.protocol.threshold != self.detection.threshold:
            raise ConfigError("protocol threshold differs from detection threshold", "protocol.threshold")
        if abs(self.heating.trap_depth_temp - self.trap.depth_temp) > 1e-12 * max(self.trap.depth_temp, 1e-30):
            raise ConfigError("heating depth differs from trap depth", "heating.trap_depth_temp")

    def dline(self) -> DLineConstants:
        return DLineConstants.from_wavelength(self.trap.wavelength)

    def budget(self) -> DepumpBudget:
        return depump_budget(self.trap, self.probe, self.dline(), self.detection.r_bright, self.detection.ce)

    def with_detection(self, **changes) -> 'ScenarioConfig':
        detection = self.detection.with_(**changes)
        protocol = replace(self.protocol, threshold=detection.threshold)
        return replace(self, detection=detection, protocol=protocol)

    def with_depth(self, depth_freq: float) -> 'ScenarioConfig':
        """Move to another trap depth, shifting the depump rates by the modeled trap-light change."""
        trap = TrapConfig.from_depth_freq(depth_freq, self.trap.polarization_mode, self.trap.wavelength)
        dline = self.dline()
        d_trap = trap_depump_rate(trap.depth_freq) - trap_depump_rate(self.trap.depth_freq)
        d_raman = (raman_depump_probability(trap, dline) - raman_depump_probability(self.trap, dline)) \
            * self.detection.scatter_rate
        detection = self.detection.with_(
            r_dep_bright=max(0.0, self.detection.r_dep_bright + d_trap + d_raman),
            r_dep_dark=max(0.0, self.detection.r_dep_dark + d_trap),
        )
        heating = replace(self.heating, trap_depth_temp=trap.depth_temp)
        return replace(self, trap=trap, detection=detection, heating=heating)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "preset_name": self.preset_name,
            "trap": {
                "depth_freq": self.trap.depth_freq,
                "wavelength": self.trap.wavelength,
                "polarization_mode": self.trap.polarization_mode,
            },
            "probe": {
                "intensity_sat": self.probe.intensity_sat,
                "pol_fraction_sigma_plus": self.probe.pol_fraction_sigma_plus,
                "pol_fraction_sigma_minus": self.probe.pol_fraction_sigma_minus,
                "pol_fraction_pi": self.probe.pol_fraction_pi,
            },
            "detection": {
                "t_d": self.detection.t_d,
                "r_bright": self.detection.r_bright,
                "r_background": self.detection.r_background,
                "r_dep_bright": self.detection.r_dep_bright,
                "r_dep_dark": self.detection.r_dep_dark,
                "threshold": self.detection.threshold,
                "ce": self.detection.ce,
            },
            "protocol": {
                "pulse_duration": self.protocol.pulse_duration,
                "max_total_time": self.protocol.max_total_time,
                "adaptive": self.protocol.adaptive,
            },
            "heating": {
                "recoil_temp": self.heating.recoil_temp,
                "loss_enabled": self.heating.loss_enabled,
                "escape_halts_fluorescence": self.heating.escape_halts_fluorescence,
            },
        }

    def to_json(self) -> str:
        return OutputManager.canonical_json(self.to_dict())


def build_scenario(trap: TrapConfig, detection: DetectionParams, probe: Optional[ProbeConfig] = None,
                   protocol: Optional[AdaptiveProtocol] = None, heating: Optional[HeatingModel] = None,
                   preset_name: Optional[str] = None) -> ScenarioConfig:
    """Assemble a scenario whose protocol threshold and heating depth follow `detection` and `trap`."""
    protocol = protocol or AdaptiveProtocol()
    heating = heating or HeatingModel()
    return ScenarioConfig(
        trap=trap,
        probe=probe or ProbeConfig(),
        detection=detection,
        protocol=replace(protocol, threshold=detection.threshold),
        heating=replace(heating, trap_depth_temp=trap.depth_temp),
        preset_name=preset_name,
    )


def _fit_scenario(name: str, polarization_mode: str, prob_per_scatter: float) -> ScenarioConfig:
    trap = TrapConfig.from_depth_freq(constants.DEFAULT_DEPTH_FREQ, polarization_mode)
    detection = DetectionParams(t_d=constants.FIT_PROBE_DURATION)
    detection = detection.with_(r_dep_bright=prob_per_scatter * detection.scatter_rate,
                                r_dep_dark=trap_depump_rate(trap.depth_freq))
    return build_scenario(trap, detection, preset_name=name)


def _sigma_preset() -> ScenarioConfig:
    return _fit_scenario(Preset.SIGMA, TrapPolarization.SIGMA_PM, constants.PUBLISHED["fit_sigma"])


def _pi_preset() -> ScenarioConfig:
    return _fit_scenario(Preset.PI, TrapPolarization.PI_ALIGNED, constants.PUBLISHED["fit_pi"])


def _final_preset(name: str = Preset.FINAL) -> ScenarioConfig:
    trap = TrapConfig.from_depth_freq(constants.DEFAULT_DEPTH_FREQ, TrapPolarization.PI_ALIGNED)
    eps_bright = constants.PUBLISHED["bright_errors"] / constants.PUBLISHED["shots_per_state"]
    r_bright = constants.PROBE_IMPLIED_BRIGHT_RATE
    detection = DetectionParams(
        t_d=constants.DEFAULT_MAX_TOTAL_TIME,
        r_bright=r_bright,
        r_dep_bright=r_from_eps_bright(eps_bright, constants.DEFAULT_THRESHOLD) * r_bright,
        r_dep_dark=trap_depump_rate(trap.depth_freq),
    )
    return build_scenario(trap, detection, preset_name=name)


def _low_depth_preset() -> ScenarioConfig:
    return replace(_final_preset().with_depth(constants.LOW_DEPTH_FREQ), preset_name=Preset.LOW_DEPTH)


PRESETS: Dict[str, Callable[[], ScenarioConfig]] = {
    Preset.SIGMA: _sigma_preset,
    Preset.PI: _pi_preset,
    Preset.FINAL: _final_preset,
    Preset.LOW_DEPTH: _low_depth_preset,
    Preset.DEFAULT: lambda: _final_preset(Preset.DEFAULT),
}


def preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise NotFoundError(f"unknown preset '{name}', choose from {', '.join(Preset.ALL)}")
    return PRESETS[name]()


def _number(section: Dict[str, Any], key: str, path: str) -> float:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", f"{path}.{key}")
    return float(value)


def _integer(section: Dict[str, Any], key: str, path: str) -> int:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"expected an integer, got {value!r}", f"{path}.{key}")
    return int(value)


def _flag(section: Dict[str, Any], key: str, path: str) -> bool:
    value = section[key]
    if not isinstance(value, bool):
        raise ConfigError(f"expected true or false, got {value!r}", f"{path}.{key}")
    return value


def _text(section: Dict[str, Any], key: str, path: str) -> str:
    value = section[key]
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", f"{path}.{key}")
    return value


class ConfigManager:
    DEFAULT_CONFIG = _final_preset(Preset.DEFAULT).to_dict()

    def __init__(self, config_file: Optional[str] = None, preset_name: Optional[str] = None):
        self.config_file = config_file
        self.preset_name = preset_name
        self.config = self.load_config()

    def _section(self, data: Dict[str, Any], name: str, base: Dict[str, Any]) -> Dict[str, Any]:
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError("expected an object", name)
        unknown = sorted(set(section) - set(base))
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", f"{name}.{unknown[0]}")
        merged = dict(base)
        for key in base:
            if key in section:
                merged[key] = section[key]
            else:
                logging.info(f"Config {name}.{key} not set, using default {base[key]!r}")
        return merged

    def validate_config(self, config_data: Dict[str, Any], base: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
        """Strictly validate a config dict, filling missing fields from `base` (default scenario)."""
        if not isinstance(config_data, dict):
            raise ConfigError("config must be a JSON object")
        base = base or self.DEFAULT_CONFIG
        top_level = set(CONFIG_SCHEMA["properties"])
        unknown = sorted(set(config_data) - top_level)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", unknown[0])
        version = config_data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {version!r}, expected {SCHEMA_VERSION}", "schema_version")
        name = config_data.get("preset_name", base.get("preset_name"))
        if name is not None and not isinstance(name, str):
            raise ConfigError(f"expected a string or null, got {name!r}", "preset_name")

        trap = self._section(config_data, "trap", base["trap"])
        probe = self._section(config_data, "probe", base["probe"])
        detection = self._section(config_data, "detection", base["detection"])
        protocol = self._section(config_data, "protocol", base["protocol"])
        heating = self._section(config_data, "heating", base["heating"])

        trap_config = TrapConfig.from_depth_freq(
            _number(trap, "depth_freq", "trap"),
            _text(trap, "polarization_mode", "trap"),
            _number(trap, "wavelength", "trap"),
        )
        detection_params = DetectionParams(
            t_d=_number(detection, "t_d", "detection"),
            r_bright=_number(detection, "r_bright", "detection"),
            r_background=_number(detection, "r_background", "detection"),
            r_dep_bright=_number(detection, "r_dep_bright", "detection"),
            r_dep_dark=_number(detection, "r_dep_dark", "detection"),
            threshold=_integer(detection, "threshold", "detection"),
            ce=_number(detection, "ce", "detection"),
        )
        return ScenarioConfig(
            trap=trap_config,
            probe=ProbeConfig(
                intensity_sat=_number(probe, "intensity_sat", "probe"),
                pol_fraction_sigma_plus=_number(probe, "pol_fraction_sigma_plus", "probe"),
                pol_fraction_sigma_minus=_number(probe, "pol_fraction_sigma_minus", "probe"),
                pol_fraction_pi=_number(probe, "pol_fraction_pi", "probe"),
            ),
            detection=detection_params,
            protocol=AdaptiveProtocol(
                pulse_duration=_number(protocol, "pulse_duration", "protocol"),
                max_total_time=_number(protocol, "max_total_time", "protocol"),
                threshold=detection_params.threshold,
                adaptive=_flag(protocol, "adaptive", "protocol"),
            ),
            heating=HeatingModel(
                recoil_temp=_number(heating, "recoil_temp", "heating"),
                trap_depth_temp=trap_config.depth_temp,
                loss_enabled=_flag(heating, "loss_enabled", "heating"),
                escape_halts_fluorescence=_flag(heating, "escape_halts_fluorescence", "heating"),
            ),
            preset_name=name,
        )

    def load_config(self) -> ScenarioConfig:
        base = preset(self.preset_name).to_dict() if self.preset_name else None
        if self.config_file is not None:
            config = self.validate_config(self._read_file(self.config_file), base)
            logging.info(f"Loaded config {self.config_file}")
            return config
        if self.preset_name is None:
            bundled = ResourceManager.get_resource_path(DEFAULT_CONFIG_FILE)
            if os.path.exists(bundled):
                config = self.validate_config(self._read_file(bundled))
                logging.info(f"Loaded bundled config {DEFAULT_CONFIG_FILE}")
                return config
            logging.warning(f"Bundled {DEFAULT_CONFIG_FILE} missing, using the default preset")
        config = preset(self.preset_name or Preset.DEFAULT)
        logging.info(f"Using preset '{config.preset_name}'")
        return config

    @staticmethod
    def _read_file(path: str) -> Dict[str, Any]:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except FileNotFoundError:
            raise ConfigError("config file not found", path) from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", path, line=e.lineno) from e
        except UnicodeDecodeError as e:
            raise ConfigError(f"not UTF-8 text: {e.reason} at byte {e.start}", path) from None

    def save_config(self, path: Optional[str] = None) -> None:
        OutputManager.write_json(self.config.to_dict(), path or self.config_file)

    def reset_to_default(self) -> None:
        self.config = preset(Preset.DEFAULT)
        if self.config_file:
            self.save_config()
