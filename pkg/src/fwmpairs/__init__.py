"""Warm-vapor four-wave-mixing photon-pair source toolkit.

Three pipeline stages, one module each: :mod:`fwmpairs.atomic`
(velocity-resolved steady states and Doppler-weighted scattering profiles),
:mod:`fwmpairs.streams` / :mod:`fwmpairs.correlations` (synthetic detector
time tags and coincidence / cross-correlation statistics), and
:mod:`fwmpairs.tomography` (two-qubit polarization-state reconstruction).
:mod:`fwmpairs.cli` is the batch front end; the commonly used types and
operations are re-exported here.
"""

from .atomic import (
    NoUniqueSteadyState,
    ScatteringProfile,
    ThreeLevelParams,
    VaporParams,
    build_hamiltonian,
    build_liouvillian,
    default_velocity_grid,
    doppler_shifted_detunings,
    mb_weight,
    profile_mb_overlap,
    resonant_velocity,
    scattering_probability,
    steady_state,
    velocity_scan,
)
from .correlations import (
    CoincidenceHistogram,
    GsiCurve,
    biphoton_linewidth,
    coincidence_histogram,
    dead_time_observed_rate,
    dead_time_true_rate,
    fit_gsi_vs_rate,
    fit_power_scaling,
    gsi_from_histogram,
    heralding_efficiency,
)
from .streams import (
    PairStreamParams,
    TimeTagStream,
    read_time_tags_binary,
    read_time_tags_csv,
    synthesize_time_tags,
    write_time_tags_binary,
    write_time_tags_csv,
)
from .tomography import (
    DEFAULT_SETTINGS,
    PolarizationSetting,
    TomographyResult,
    apply_phase_retarder,
    bell_phi_plus,
    fidelity,
    ml_reconstruct,
    projector,
    purity,
    simulate_counts,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # atomic
    "NoUniqueSteadyState", "ScatteringProfile", "ThreeLevelParams", "VaporParams",
    "build_hamiltonian", "build_liouvillian", "default_velocity_grid",
    "doppler_shifted_detunings", "mb_weight", "profile_mb_overlap",
    "resonant_velocity", "scattering_probability", "steady_state", "velocity_scan",
    # streams
    "PairStreamParams", "TimeTagStream", "read_time_tags_binary",
    "read_time_tags_csv", "synthesize_time_tags", "write_time_tags_binary",
    "write_time_tags_csv",
    # correlations
    "CoincidenceHistogram", "GsiCurve", "biphoton_linewidth",
    "coincidence_histogram", "dead_time_observed_rate", "dead_time_true_rate",
    "fit_gsi_vs_rate", "fit_power_scaling", "gsi_from_histogram",
    "heralding_efficiency",
    # tomography
    "DEFAULT_SETTINGS", "PolarizationSetting", "TomographyResult",
    "apply_phase_retarder", "bell_phi_plus", "fidelity", "ml_reconstruct",
    "projector", "purity", "simulate_counts",
]
