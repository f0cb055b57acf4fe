"""Simulation and inference toolkit for heralded single-photon
superradiance in cold-atom ensembles."""

__version__ = "0.1.0"

from .physics import (
    AtomSpec,
    EnsembleSpec,
    ReadoutSpec,
    beta_theory,
    chi_from_n,
    chi_from_od,
    rabi_frequency,
    superradiant_decay_time,
    wavepacket_cumulative,
    wavepacket_density,
    wavepacket_gradient,
    wavepacket_nodes,
)
from .source import (
    DetectionEvent,
    EmissionSampler,
    SourceModel,
    TrialTiming,
    delay_scan,
    sample_emission_time,
    simulate,
)
from .stats import (
    CoincidenceStats,
    Estimate,
    EventStream,
    Wavepacket,
    accumulate,
    histogram_wavepacket,
    merge,
)
from .inference import (
    FitConvergenceError,
    ScalingFit,
    WavepacketFit,
    fit_cooperativity,
    fit_threshold_slope,
    fit_wavepacket,
)
from .odprobe import (
    ODEstimate,
    ProbePulse,
    od_log_ratio,
    od_lorentzian_scan,
    od_pulse_shape,
    propagate,
)
