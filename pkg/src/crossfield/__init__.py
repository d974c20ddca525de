"""Channel synthesis and cross-field path loss modeling for uniform planar arrays."""

from .fitting import DegenerateGrid, FitConfig, FitReport, fit, model_observations, objective
from .geometry import CASES, ScenarioGeometry, UpaGeometry, build_case, build_upa, element_distance
from .models import (
    CENTER_WAVELENGTH,
    REFERENCE_PARAMS,
    SPEED_OF_LIGHT,
    CrossFieldParams,
    RayleighAssessment,
    SaturationWarning,
    classify_region,
    cross_field_factor,
    cross_field_pl,
    friis_fspl,
    max_phase_error,
    rayleigh_distance,
)
from .propagation import (
    ISOTROPIC,
    AperturePattern,
    CtfGrid,
    SweepPlan,
    SynthPath,
    apply_position_jitter,
    synth_ctf,
)
from .spectral import (
    CirGrid,
    NoPathFound,
    PathObservation,
    PathObservations,
    ctf_to_cir,
    extract_dominant_path,
    unwrap_phase_grid,
)

__version__ = "0.1.0"

__all__ = [
    "AperturePattern",
    "apply_position_jitter",
    "build_case",
    "build_upa",
    "CASES",
    "CENTER_WAVELENGTH",
    "CirGrid",
    "classify_region",
    "cross_field_factor",
    "cross_field_pl",
    "CrossFieldParams",
    "ctf_to_cir",
    "CtfGrid",
    "DegenerateGrid",
    "element_distance",
    "extract_dominant_path",
    "fit",
    "FitConfig",
    "FitReport",
    "friis_fspl",
    "ISOTROPIC",
    "max_phase_error",
    "model_observations",
    "NoPathFound",
    "objective",
    "REFERENCE_PARAMS",
    "PathObservation",
    "PathObservations",
    "rayleigh_distance",
    "RayleighAssessment",
    "SaturationWarning",
    "ScenarioGeometry",
    "SPEED_OF_LIGHT",
    "SweepPlan",
    "synth_ctf",
    "SynthPath",
    "unwrap_phase_grid",
    "UpaGeometry",
]
