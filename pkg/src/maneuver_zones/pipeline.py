"""End-to-end zone computations driven by a :class:`ScenarioConfig`."""

from __future__ import annotations

import logging

from .config import ScenarioConfig
from .errors import ConfigError
from .zones import (
    ZoneArtifact,
    baseline_zone,
    collision_boundary,
    ego_completion,
    plan_mesh,
    temporal_convolution_single_pass,
    temporal_convolution_sweep,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("single-pass", "sweep")


def compute_zone(cfg: ScenarioConfig, algorithm: str = "single-pass", workers: int = 1) -> ZoneArtifact:
    """Ego completion, lifting and temporal convolution on the scenario grid."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}", "algorithm")
    if cfg.maneuver is None:
        raise ConfigError("scenario defines no maneuver", "maneuver")
    n, dt = plan_mesh(cfg.model, cfg.grid, cfg.horizon, cfg.solver)
    log.info("%s: %d joint nodes, %d steps of %.4g s", cfg.name, cfg.grid.size, n, dt)
    ego = ego_completion(cfg.ego_model, cfg.maneuver, cfg.ego_grid, cfg.solver, n_steps=n)
    g_col = collision_boundary(cfg.collision, cfg.grid, cfg.model.identifier)
    scenario = cfg.descriptor()
    if algorithm == "sweep":
        return temporal_convolution_sweep(cfg.model, ego, g_col, cfg.solver, cfg.projection, scenario, workers,
                                          cfg.maneuver.completion_scale)
    return temporal_convolution_single_pass(cfg.model, ego, g_col, cfg.solver, cfg.projection, scenario,
                                            cfg.maneuver.completion_scale)


def compute_baseline(cfg: ScenarioConfig) -> ZoneArtifact:
    """Maneuver-free zone on the same time mesh as :func:`compute_zone`."""
    n, dt = plan_mesh(cfg.model, cfg.grid, cfg.horizon, cfg.solver)
    log.info("%s baseline: %d nodes, %d steps of %.4g s", cfg.name, cfg.grid.size, n, dt)
    g_col = collision_boundary(cfg.collision, cfg.grid, cfg.model.identifier)
    return baseline_zone(cfg.model, g_col, cfg.horizon, cfg.solver, n_steps=n, scenario=cfg.descriptor())

