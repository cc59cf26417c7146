"""Reduced-order switching predictor for reticle heating, with a synthetic plant and lot experiments."""

from ._accel import backend_name
from .config import ConfigError, ScenarioConfig
from .harness import (
    LotPlan,
    MetricsTable,
    ScenarioTrace,
    compare_strategies,
    emit_results,
    run_scenario,
    throughput_report,
)
from .layout import Mark, MarkLayout, SampledLayout, standard_layout
from .norms import hinf_norm
from .plant import (
    FullOrderPlant,
    ImageArea,
    PlantConfig,
    RegimeSpec,
    build_plant,
    full_field_area,
    plant_outputs,
    plant_step,
    small_field_area,
)
from .predictor import (
    Event,
    HistoryLog,
    PredictorState,
    Scheduler,
    classify_regime,
    design_feedback_gain,
    gamma_map,
    handoff,
    predictor_step,
)
from .reduction import ModelFamily, ReducedModel, center_models, compute_moments, krylov_reduce
from .stability import (
    AssumptionViolated,
    GeneralizedPlant,
    StabilityCertificate,
    UncertaintyRealization,
    assemble_lft,
    certify_guas,
    empirical_ultimate_bound,
)
from .systems import StateSpaceModel

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
