"""Physical constants, cesium D-line numbers and published anchor values."""
from scipy.constants import physical_constants

C = physical_constants['speed of light in vacuum'][0]
H = physical_constants['Planck constant'][0]
K_B = physical_constants['Boltzmann constant'][0]

# Cs D2 (6S1/2 -> 6P3/2) and D1 (6S1/2 -> 6P1/2), Steck "Cesium D Line Data" v2.2
CS_D2_FREQUENCY = 351.72571850e12    # Hz
CS_D1_FREQUENCY = 335.116048807e12   # Hz
CS_D2_LIFETIME = 30.473e-9           # s
CS_RECOIL_TEMPERATURE = 198.34e-9    # K
CS_GROUND_HYPERFINE_SPLITTING = 9.192631770e9  # Hz
CS_EXCITED_SPLITTING_45 = 251.0e6    # Hz, F'=4 <-> F'=5
CS_EXCITED_SPLITTING_35 = 452.0e6    # Hz, F'=3 <-> F'=5

TRAP_WAVELENGTH = 937e-9             # m

# Off-resonant trap depump coefficient (events/s per Hz of trap depth)
TRAP_DEPUMP_COEFFICIENT = 2.5e-7

# Canonical operating point
DEFAULT_DEPTH_FREQ = 11.9e6          # Hz, U0/h
LOW_DEPTH_FREQ = 5.9e6               # Hz
DEFAULT_COLLECTION_EFFICIENCY = 0.0037
DEFAULT_BRIGHT_RATE = 1.96e4         # collected counts/s, from R_trap and T1
PROBE_IMPLIED_BRIGHT_RATE = 2.5e4    # collected counts/s, from R_probe and the probe bound
DEFAULT_BACKGROUND_RATE = 60.0       # counts/s, places the depump-free optimum at 0.59 ms
DEFAULT_THRESHOLD = 2
DEFAULT_PULSE_DURATION = 5e-6        # s
DEFAULT_MAX_TOTAL_TIME = 500e-6      # s
FIT_PROBE_DURATION = 300e-6          # s, fixed-duration bright histograms
PROBE_SATURATION = 0.07              # effective s for the off-resonant probe channel
PROBE_IMPURITY_FRACTION = 0.10       # per sigma-/pi component

# Values printed in the published measurement, used by `report` and the tests
PUBLISHED = {
    "t1": 0.34,
    "depth_temp": 0.57e-3,
    "r_trap": 1.5e-4,
    "r_probe_max": 2e-4,
    "probe_rate_max": 5.0,
    "rabi_sq_per_depth": 15.5e12,
    "raman_population_ratio": 5.6e-6,
    "p_depump_43": 2.3e-6,
    "p_depump_33": 3.6e-6,
    "p_depump_sigma": 6e-6,
    "r_sigma": 1.6e-3,
    "fit_sigma": 50e-6,
    "fit_sigma_unc": 5e-6,
    "fit_pi": 7e-6,
    "fit_pi_unc": 4e-6,
    "bright_errors": 152,
    "dark_errors": 159,
    "shots_per_state": 100000,
    "infidelity": 0.0016,
    "r_total": 7.5e-4,
    "optimal_time": 0.59e-3,
    "bright_mean_for_999": 9.23,
    "fixed_scattered": 2500,
    "fixed_energy": 1.0e-3,
    "adaptive_scattered": 540,
    "loss_full_depth": 0.026,
    "loss_low_depth": 0.141,
    "fidelity_low_depth": 0.9989,
}


class Preset:
    """Names of the built-in scenario presets."""
    SIGMA = "paper-sigma"
    PI = "paper-pi"
    FINAL = "paper-final"
    LOW_DEPTH = "paper-lowdepth"
    DEFAULT = "default"

    ALL = (SIGMA, PI, FINAL, LOW_DEPTH, DEFAULT)
