"""Twin-beam photodetection simulator and absolute QE calibration estimators."""

from .counts import CountsSummary
from .detection import (
    ArmConfig,
    PulseRecord,
    TimingConfig,
    accidental_rate,
    coincide,
    detect_pulse,
    effective_qe,
    run_pulses,
    simulate_records,
)
from .estimators import (
    CalibrationResult,
    DifferenceSignalCalibrator,
    KlyshkoCalibrator,
    klyshko_qe,
    measured_ratio,
    nrf_empirical,
    nrf_model,
    solve_qe_from_nrf,
    standard_errors,
    subtract_background,
)
from .harness import Scenario, emit_csv, load_scenario, run_scenario
from .oracle import TruncationSpec, exact_click_prob, exact_joint_moments
from .source import PhotonPair, SourceConfig, aperture_overlap, sample_pulse

__version__ = "0.1.0"
