"""Maneuver-aware safety zones.

Pipeline::

    G_E  --tube solve-->  V_E(z_E, t_k)            ego can finish by T
    G_k = max(lift V_E(., t_k), G_col)           collide at t_k, then finish
    V   = min_k  [exact-time solve of G_k over [0, t_k]](., 0)

The last line is computed either literally (:func:`temporal_convolution_sweep`,
``O(N^2)`` steps) or as one backward solve that re-injects ``G_k`` at every
mesh time (:func:`temporal_convolution_single_pass`, ``O(N)`` steps).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DOUBLE_INTEGRATOR, DUBINS, LANE_CHANGE_JOINT, TURN_JOINT, DynamicsModel, EgoProjection
from .errors import ConfigError, ShapeError, UndefinedRatioError
from .grid import GridSpec, TimeIndexedField, ValueField, volume_below
from .solver import SolveMode, SolverConfig, TimeVaryingTarget, cfl_dt_max, march, solve_backward, time_mesh

log = logging.getLogger(__name__)

LANE_CHANGE = "lane_change"
RAIL_TURN = "rail_turn"


@dataclass(frozen=True)
class ManeuverSpec:
    kind: str
    horizon: float = 5.0
    y_des: float = 3.6
    delta_y_bar: float = 0.8
    psi_des: float = math.pi / 2
    # weight of the ego completion value against the collision distance when
    # the two are combined; any positive value yields the same exact zone, it
    # only keeps the combined target from being too shallow for the grid
    completion_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (LANE_CHANGE, RAIL_TURN):
            raise ConfigError(f"unknown maneuver kind {self.kind!r}", "maneuver.kind")
        if not self.horizon > 0:
            raise ConfigError("must be positive", "maneuver.horizon")
        if self.kind == LANE_CHANGE and not self.delta_y_bar > 0:
            raise ConfigError("must be positive", "maneuver.delta_y_bar")
        if self.kind == RAIL_TURN and self.psi_des == 0:
            raise ConfigError("must be nonzero", "maneuver.psi_des")
        if not self.completion_scale > 0:
            raise ConfigError("must be positive", "maneuver.completion_scale")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "horizon": self.horizon, "completion_scale": self.completion_scale}
        if self.kind == LANE_CHANGE:
            d.update(y_des=self.y_des, delta_y_bar=self.delta_y_bar)
        else:
            d.update(psi_des=self.psi_des)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManeuverSpec":
        return cls(**d)


@dataclass(frozen=True)
class CollisionBoundary:
    radius: float = 2.5

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("must be positive", "collision_radius")


@dataclass
class ZoneArtifact:
    value: ValueField
    scenario: dict
    metadata: dict = field(default_factory=dict)

    @property
    def spec(self) -> GridSpec:
        return self.value.spec

    def volume(self) -> float:
        return volume_below(self.value, 0.0)


def config_hash(scenario: dict) -> str:
    blob = json.dumps(scenario, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _heading_dim(spec: GridSpec) -> int:
    for name in ("psi_E", "psi"):
        if name in spec.names:
            return spec.index(name)
    raise ShapeError(f"rail turn needs a heading dimension psi_E, grid has {spec.names}")


def maneuver_boundary(spec: ManeuverSpec, ego_grid: GridSpec) -> ValueField:
    """``G_E`` with ``C_E = {G_E <= 0}``."""
    if spec.kind == LANE_CHANGE:
        if "y_E" not in ego_grid.names:
            raise ShapeError(f"lane change needs a y_E dimension, grid has {ego_grid.names}")
        y = ego_grid.mesh("y_E")
        g = np.abs(y - spec.y_des) - spec.delta_y_bar
    else:
        d = _heading_dim(ego_grid)
        psi = ego_grid.mesh(ego_grid.names[d])
        g = math.copysign(1.0, spec.psi_des) * (spec.psi_des - psi)
    return ValueField(ego_grid, np.broadcast_to(g, ego_grid.shape))


def collision_boundary(cb: CollisionBoundary, joint_grid: GridSpec, model_kind: str) -> ValueField:
    """Disc collision function: centre distance minus ``radius``."""
    if model_kind == LANE_CHANGE_JOINT:
        dx, dy = joint_grid.mesh("x_rel"), joint_grid.mesh("y_C") - joint_grid.mesh("y_E")
    elif model_kind == TURN_JOINT:
        dx, dy = joint_grid.mesh("x_rel"), joint_grid.mesh("y_rel")
    elif model_kind == DUBINS:
        dx, dy = joint_grid.mesh("x"), joint_grid.mesh("y")
    elif model_kind == DOUBLE_INTEGRATOR:
        # 1D toy: the "collision set" is the interval |x| <= radius
        dx, dy = joint_grid.mesh("x"), 0.0
    else:
        raise ConfigError(f"no collision geometry for model {model_kind!r}", "model")
    g = np.sqrt(dx * dx + dy * dy) - cb.radius
    return ValueField(joint_grid, np.broadcast_to(g, joint_grid.shape))


def plan_mesh(joint_model: DynamicsModel, joint_grid: GridSpec, horizon: float,
              config: SolverConfig = SolverConfig()) -> tuple[int, float]:
    """Shared time mesh: the joint CFL limit is the binding one."""
    return time_mesh(horizon, cfl_dt_max(joint_model, joint_grid, config))


def ego_completion_from_boundary(ego_model: DynamicsModel, boundary: ValueField, horizon: float,
                                 config: SolverConfig = SolverConfig(),
                                 n_steps: int | None = None) -> TimeIndexedField:
    cfg = dataclasses.replace(config, frame_stride=1)
    return solve_backward(ego_model, boundary, horizon, SolveMode.TUBE, cfg, n_steps=n_steps)


def ego_completion(ego_model: DynamicsModel, spec: ManeuverSpec, ego_grid: GridSpec,
                   config: SolverConfig = SolverConfig(), n_steps: int | None = None) -> TimeIndexedField:
    """``V_E(., t)`` for every mesh time: negative iff ``C_E`` is reachable within ``[t, T]``."""
    return ego_completion_from_boundary(ego_model, maneuver_boundary(spec, ego_grid), spec.horizon,
                                        config, n_steps)


def _lift_view(ego_values: np.ndarray, ego_spec: GridSpec, projection: EgoProjection,
               joint_grid: GridSpec) -> np.ndarray:
    for name, j in zip(projection.ego_names, projection.indices):
        if ego_spec.axes[ego_spec.index(name)] != joint_grid.axes[j]:
            raise ConfigError(f"ego axis {name} differs from joint axis {joint_grid.axes[j].name}",
                              f"grid.{name}")
    if tuple(projection.ego_names) != ego_spec.names:
        raise ShapeError(f"projection ego dims {projection.ego_names} do not match ego grid {ego_spec.names}")
    order = np.argsort(projection.indices)
    arr = np.transpose(ego_values.reshape(ego_spec.shape), order)
    shape = [1] * joint_grid.ndim
    for j in sorted(projection.indices):
        shape[j] = joint_grid.shape[j]
    return np.broadcast_to(arr.reshape(shape), joint_grid.shape)


def lift_ego_values(ego_frame: ValueField, projection: EgoProjection, joint_grid: GridSpec) -> ValueField:
    """``V_E(project(z))`` broadcast along the non-ego dimensions."""
    return ValueField(joint_grid, _lift_view(ego_frame.values, ego_frame.spec, projection, joint_grid))


def _check_mesh(ego: TimeIndexedField) -> tuple[int, float, float]:
    times = ego.times
    n = len(times) - 1
    if n < 1:
        raise ConfigError("ego completion needs at least two frames", "ego_completion")
    horizon = float(times[0])
    dt = horizon / n
    expected = dt * np.arange(n, -1, -1)
    if times[-1] != 0.0 or not np.allclose(times, expected, rtol=0, atol=1e-9 * max(1.0, horizon)):
        raise ConfigError("ego completion frames must cover a uniform mesh from T down to 0 with stride 1",
                          "ego_completion")
    return n, dt, horizon


def _targets(ego: TimeIndexedField, projection: EgoProjection, g_col: ValueField, completion_scale: float):
    if not completion_scale > 0:
        raise ConfigError("must be positive", "maneuver.completion_scale")
    n = len(ego.times) - 1

    def target(k: int) -> np.ndarray:
        # frames are stored from t = T (index 0) to t = 0 (index n)
        lifted = _lift_view(ego.frames[n - k], ego.spec, projection, g_col.spec)
        if completion_scale != 1.0:
            lifted = completion_scale * lifted
        return np.maximum(lifted, g_col.values)

    return target


def _scenario_with(scenario: dict | None, **extra) -> dict:
    out = dict(scenario or {})
    out.update(extra)
    return out


def temporal_convolution_sweep(joint_model: DynamicsModel, ego: TimeIndexedField, g_col: ValueField,
                               config: SolverConfig = SolverConfig(), projection: EgoProjection | None = None,
                               scenario: dict | None = None, workers: int = 1,
                               completion_scale: float = 1.0) -> ZoneArtifact:
    """Reference algorithm: one exact-time solve per candidate collision time."""
    t0 = time.perf_counter()
    projection = projection or EgoProjection.for_model(joint_model)
    n, dt, horizon = _check_mesh(ego)
    target = _targets(ego, projection, g_col, completion_scale)
    spec = g_col.spec

    def solve_k(k: int) -> np.ndarray:
        g_k = target(k)
        if k == 0:
            return g_k.ravel().copy()
        vals = None
        for _, _, vals in march(joint_model, g_k, spec, k * dt, SolveMode.EXACT_TIME, config, n_steps=k):
            pass
        return vals

    result = np.full(spec.size, np.inf)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            for vals in pool.map(solve_k, range(n + 1)):
                np.minimum(result, vals, out=result)
    else:
        for k in range(n + 1):
            np.minimum(result, solve_k(k), out=result)
            log.debug("sweep: collision time %d/%d done", k, n)
    meta = {"algorithm": "sweep", "dt": dt, "n_steps": n, "horizon": horizon,
            "wall_time": time.perf_counter() - t0}
    sc = _scenario_with(scenario, solver=config.to_dict())
    meta["config_hash"] = config_hash(sc)
    return ZoneArtifact(ValueField(spec, result), sc, meta)


def temporal_convolution_single_pass(joint_model: DynamicsModel, ego: TimeIndexedField, g_col: ValueField,
                                     config: SolverConfig = SolverConfig(), projection: EgoProjection | None = None,
                                     scenario: dict | None = None, completion_scale: float = 1.0) -> ZoneArtifact:
    """One backward solve with the collide-then-finish target re-applied at every mesh time."""
    t0 = time.perf_counter()
    projection = projection or EgoProjection.for_model(joint_model)
    n, dt, horizon = _check_mesh(ego)
    target = _targets(ego, projection, g_col, completion_scale)
    mode = TimeVaryingTarget(lambda t: target(int(round(t / dt))))
    vals = None
    for _, _, vals in march(joint_model, target(n), g_col.spec, horizon, mode, config, n_steps=n):
        pass
    meta = {"algorithm": "single-pass", "dt": dt, "n_steps": n, "horizon": horizon,
            "wall_time": time.perf_counter() - t0}
    sc = _scenario_with(scenario, solver=config.to_dict())
    meta["config_hash"] = config_hash(sc)
    return ZoneArtifact(ValueField(g_col.spec, vals), sc, meta)


def baseline_zone(joint_model: DynamicsModel, g_col: ValueField, horizon: float,
                  config: SolverConfig = SolverConfig(), n_steps: int | None = None,
                  scenario: dict | None = None) -> ZoneArtifact:
    """Unconstrained zone: reach the collision set at any time within the horizon."""
    t0 = time.perf_counter()
    vals, n = None, None
    for k, _, vals in march(joint_model, g_col, g_col.spec, horizon, SolveMode.TUBE, config, n_steps=n_steps):
        n = k if n is None else n
    meta = {"algorithm": "baseline", "dt": horizon / n, "n_steps": n, "horizon": horizon,
            "wall_time": time.perf_counter() - t0}
    sc = _scenario_with(scenario, solver=config.to_dict())
    meta["config_hash"] = config_hash(sc)
    return ZoneArtifact(ValueField(g_col.spec, vals), sc, meta)


def volume_ratio(zone: ZoneArtifact | ValueField, baseline: ZoneArtifact | ValueField) -> float:
    zf = zone.value if isinstance(zone, ZoneArtifact) else zone
    bf = baseline.value if isinstance(baseline, ZoneArtifact) else baseline
    if zf.spec != bf.spec:
        raise ShapeError("zone and baseline live on different grids")
    vb = volume_below(bf, 0.0)
    if vb == 0:
        raise UndefinedRatioError("baseline zone is empty")
    return volume_below(zf, 0.0) / vb
