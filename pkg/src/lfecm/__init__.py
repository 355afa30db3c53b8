"""Identification of low-frequency battery ECM parameters from BMS data."""

from .ladder import (
    CpeTriple,
    DecompositionConfig,
    LadderNetwork,
    ReducedTheta,
    branch_count,
    decompose,
    ladder_from_cpe,
    omega_avg,
    phi_from_ratio,
    ratios,
    reconstruct,
    ripple_coefficient,
    z_cpe,
    z_ladder,
)
from .model import (
    CellConfig,
    DiscreteModel,
    OcvSegment,
    SimulationDivergedError,
    SimulationResult,
    TimeSeries,
    build_continuous,
    build_discrete,
    default_cell,
    discretize,
    ocv_eval,
    read_timeseries,
    simulate,
    stability_margin,
    write_timeseries,
)
from .estimation import (
    EstimatorConfig,
    FitReport,
    FitResult,
    PhysicalBounds,
    derive_bounds,
    estimate,
    fit,
    init_r_sigma,
    init_theta,
    objective,
)
from .excitation import (
    FcrConfig,
    FrequencySeries,
    GeneratedDataset,
    NoiseConfig,
    fcr_power,
    generate,
    power_to_current,
    read_frequency,
    synth_frequency,
)

__version__ = "0.1.0"
