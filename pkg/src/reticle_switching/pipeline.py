"""End-to-end assembly from a :class:`ScenarioConfig`: plant, family, certificate, scenario."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .harness import LotPlan, MetricsTable, ScenarioTrace, compare_strategies, run_scenario, throughput_report
from .layout import MarkLayout, standard_layout
from .plant import FullOrderPlant, ImageArea, build_plant, default_regimes, full_field_area, small_field_area
from .predictor import Scheduler, attach_gain, design_feedback_gain
from .reduction import ModelFamily, center_models, krylov_reduce, moment_report
from .stability import (
    GeneralizedPlant,
    StabilityCertificate,
    UncertaintyRealization,
    assemble_lft,
    certify_guas,
    family_uncertainty,
)
from .systems import StateSpaceModel

PREDICTOR_LAYOUT_GROUPS = ("top", "bottom")


def image_area_from_config(cfg: ScenarioConfig) -> ImageArea:
    ia = cfg.image_area
    side = cfg.plant.reticle_side
    if ia.preset == "full":
        return full_field_area(side, ia.exposure_power)
    if ia.preset == "small":
        return small_field_area(side, ia.exposure_power)
    return ImageArea(ia.x_min, ia.x_max, ia.y_min, ia.y_max, ia.exposure_power)


def layout_for(cfg: ScenarioConfig, area: ImageArea) -> MarkLayout:
    return standard_layout(
        area.x_min, area.x_max, area.y_min, area.y_max, cfg.layout.n_per_row, cfg.layout.n_per_edge
    )


def plant_from_config(cfg: ScenarioConfig) -> FullOrderPlant:
    specs = default_regimes(cfg.uncertainty.reclamp_factor, cfg.uncertainty.reclamp_pellicle)
    unknown = [r for r in cfg.regimes if r not in specs]
    if unknown:
        raise ValueError(f"no physical definition for regimes {unknown} (known: {sorted(specs)})")
    return build_plant(cfg.plant, image_area_from_config(cfg), list(cfg.regimes), specs)


def lotplan_from_config(cfg: ScenarioConfig, area: ImageArea | None = None) -> LotPlan:
    area = area or image_area_from_config(cfg)
    lp = cfg.lotplan
    return LotPlan(
        image_area=area,
        layout=layout_for(cfg, area),
        n_lots=lp.n_lots,
        wafers_per_lot=lp.wafers_per_lot,
        wafer_expose_time=lp.wafer_expose_time,
        wafer_swap_time=lp.wafer_swap_time,
        lot_swap_time=lp.lot_swap_time,
        edge_mark_time=lp.edge_mark_time,
        pellicle_on_reclamp=cfg.uncertainty.reclamp_pellicle,
    )


def predictor_layout(cfg: ScenarioConfig, plant: FullOrderPlant):
    full = layout_for(cfg, plant.image_area)
    return plant.sampled(full.with_groups(PREDICTOR_LAYOUT_GROUPS, "top-bottom"))


def build_family(cfg: ScenarioConfig, plant: FullOrderPlant) -> tuple[ModelFamily, list[dict]]:
    """Reduce every regime, attach feedback gains, center. Returns the family and moment reports."""
    sampled = predictor_layout(cfg, plant)
    seed = plant.B_by_regime[0]
    members = {}
    reports = []
    for r in cfg.regimes:
        full = plant.state_space(r)
        try:
            red = krylov_reduce(full, cfg.reduction.s0, cfg.reduction.k, start=seed, regime=r)
        except ValueError as exc:
            raise ValueError(f"reduction of regime {r} failed: {exc}") from exc
        seed_for_report = None if np.any(full.B_e) else seed
        reports.append(moment_report(full, red, seed=seed_for_report))
        L = design_feedback_gain(red, sampled, cfg.feedback.rho, cfg.feedback.lam)
        members[r] = attach_gain(red, L)
    family = center_models(members)
    family.metadata.update(
        {
            "rho": cfg.feedback.rho,
            "lam": cfg.feedback.lam,
            "layout": sampled.layout_id,
            "n_marks": sampled.n_active,
            "model_hash": cfg.model_hash(),
        }
    )
    return family, reports


def plant_surrogate(cfg: ScenarioConfig, plant: FullOrderPlant) -> StateSpaceModel:
    """Higher-order reduction of the nominal plant used as the certificate's plant block."""
    return krylov_reduce(plant.state_space(0), cfg.reduction.s0, cfg.reduction.surrogate_k, regime=0).ssm


@dataclass
class CertificationResult:
    certificate: StabilityCertificate
    gp: GeneralizedPlant
    delta: UncertaintyRealization


def certify_family(cfg: ScenarioConfig, plant: FullOrderPlant, family: ModelFamily) -> CertificationResult:
    sampled = predictor_layout(cfg, plant)
    gp = assemble_lft(plant_surrogate(cfg, plant), family, sampled.S)
    delta = family_uncertainty(family)
    if cfg.uncertainty.delta_inflation != 1.0:
        delta = delta.inflated(cfg.uncertainty.delta_inflation)
    return CertificationResult(certify_guas(gp, delta), gp, delta)


def scheduler_from_config(cfg: ScenarioConfig, family: ModelFamily | None = None) -> Scheduler:
    return Scheduler.from_config(cfg.scheduler.rules, cfg.scheduler.dwell_min, family)


def simulate(
    cfg: ScenarioConfig,
    plant: FullOrderPlant,
    family: ModelFamily,
    strategies=None,
    keep_fields: bool = False,
    noise_std: float | None = None,
) -> tuple[ScenarioTrace, MetricsTable]:
    lotplan = lotplan_from_config(cfg, plant.image_area)
    trace = run_scenario(
        plant,
        family,
        scheduler_from_config(cfg, family),
        lotplan,
        strategies=strategies or cfg.strategies,
        noise_std=cfg.noise_std if noise_std is None else noise_std,
        seed=cfg.seed,
        dt=cfg.lotplan.dt,
        keep_fields=keep_fields,
    )
    metrics = compare_strategies(trace)
    for skip in (False, True):
        f = throughput_report(lotplan, skip)
        metrics.throughput.append(
            {"variant": f.variant, "cycle_s": f.cycle_s, "wph": f.wph, "gain_wph": f.gain_wph}
        )
    return trace, metrics
