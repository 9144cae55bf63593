"""Scenario configuration: one JSON document describing a full run.

Layout::

    {
      "name": "lane_change",
      "model": {"identifier": "lane_change_joint_7d", ...DynamicsModel fields},
      "maneuver": {"kind": "lane_change", "y_des": 3.6, "delta_y_bar": 0.8},
      "horizon": 5.0,
      "collision_radius": 2.5,
      "grid": [{"name": "x_rel", "min": -40, "max": 40, "points": 15}, ...],
      "solver": {"cfl_factor": 0.8, ...},
      "mpc": {"horizon_steps": 10, "dt_sim": 0.05, ...},
      "sweep": {"counts": {"x_rel": 12, ...}, "margin_max": 1.5}
    }

``maneuver`` may be omitted for models without an ego sub-model (the double
integrator preset only supports baseline solves).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import EGO_OF, DynamicsModel, EgoProjection
from .errors import ConfigError, ZoneFileError
from .grid import GridSpec
from .simulation import MpcConfig
from .solver import SolverConfig
from .zones import CollisionBoundary, ManeuverSpec


@dataclass(frozen=True)
class SweepConfig:
    counts: dict = field(default_factory=dict)
    # optional per-dimension [lo, hi] overriding the grid extent
    ranges: dict = field(default_factory=dict)
    margin_max: float = 1.5
    # the lane-change reference completes at this fraction of the horizon
    completion_fraction: float = 0.8

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "ranges": {k: list(v) for k, v in self.ranges.items()},
                "margin_max": self.margin_max, "completion_fraction": self.completion_fraction}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: DynamicsModel
    grid: GridSpec
    horizon: float
    collision: CollisionBoundary
    maneuver: ManeuverSpec | None = None
    solver: SolverConfig = SolverConfig()
    mpc: MpcConfig = MpcConfig()
    sweep: SweepConfig = SweepConfig()

    @property
    def ego_model(self) -> DynamicsModel:
        return self.model.ego_model()

    @property
    def projection(self) -> EgoProjection:
        return EgoProjection.for_model(self.model)

    @property
    def ego_grid(self) -> GridSpec:
        return self.grid.sub(self.ego_model.state_names)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "model": self.model.to_dict(),
            "horizon": self.horizon,
            "collision_radius": self.collision.radius,
            "grid": self.grid.to_dict(),
            "solver": self.solver.to_dict(),
            "mpc": self.mpc.to_dict(),
            "sweep": self.sweep.to_dict(),
        }
        if self.maneuver is not None:
            m = self.maneuver.to_dict()
            m.pop("horizon")
            d["maneuver"] = m
        return d

    def descriptor(self) -> dict:
        """Scenario description stored with zone artifacts (no MPC / sweep settings)."""
        d = self.to_dict()
        d.pop("mpc")
        d.pop("sweep")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("scenario must be a JSON object")
        known = {"name", "model", "maneuver", "horizon", "collision_radius", "grid", "solver", "mpc", "sweep"}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown keys {extra}", extra[0])
        for key in ("model", "horizon", "grid"):
            if key not in d:
                raise ConfigError("required field missing", key)
        horizon = _number(d["horizon"], "horizon")
        if not horizon > 0:
            raise ConfigError("must be positive", "horizon")
        model = _section(DynamicsModel.from_dict, d["model"], "model")
        grid = _grid(d["grid"])
        if grid.names != model.state_names:
            raise ConfigError(f"grid dims {list(grid.names)} must equal model dims {list(model.state_names)}", "grid")
        radius = _number(d.get("collision_radius", 2.5), "collision_radius")
        collision = _section(lambda r: CollisionBoundary(r), radius, "collision_radius")
        maneuver = None
        if d.get("maneuver") is not None:
            m = d["maneuver"]
            if not isinstance(m, dict):
                raise ConfigError("must be an object", "maneuver")
            if model.identifier not in EGO_OF:
                raise ConfigError(f"model {model.identifier} has no ego sub-model", "maneuver")
            maneuver = _section(lambda x: ManeuverSpec.from_dict({**x, "horizon": horizon}), m, "maneuver")
        solver = _section(SolverConfig.from_dict, d.get("solver", {}), "solver")
        mpc_d = d.get("mpc", {})
        if not isinstance(mpc_d, dict):
            raise ConfigError("must be an object", "mpc")
        if "radius" in mpc_d and mpc_d["radius"] != radius:
            raise ConfigError("must equal collision_radius", "mpc.radius")
        mpc = _section(MpcConfig.from_dict, {**mpc_d, "radius": radius}, "mpc")
        sweep = _sweep(d.get("sweep", {}), grid)
        return cls(str(d.get("name", "scenario")), model, grid, horizon, collision, maneuver, solver, mpc, sweep)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ZoneFileError(f"cannot read scenario {path}: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
        return cls.from_dict(d)


def _number(x, path: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"expected a finite number, got {x!r}", path)
    return float(x)


def _section(build, payload, path: str):
    """Run a constructor and prefix any configuration error with ``path``."""
    try:
        return build(payload)
    except ConfigError as exc:
        inner = exc.path
        msg = str(exc)
        if inner:
            msg = msg[len(inner) + 2:]
            full = inner if inner.startswith(path) else f"{path}.{inner}"
        else:
            full = path
        raise ConfigError(msg, full) from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc), path) from exc


def _grid(dims) -> GridSpec:
    if not isinstance(dims, list) or not dims:
        raise ConfigError("must be a non-empty list of dimensions", "grid")
    axes = []
    for i, dim in enumerate(dims):
        where = f"grid[{i}]"
        if not isinstance(dim, dict):
            raise ConfigError("must be an object", where)
        for key in ("name", "min", "max", "points"):
            if key not in dim:
                raise ConfigError("required field missing", f"{where}.{key}")
        if isinstance(dim["points"], bool) or not isinstance(dim["points"], int):
            raise ConfigError("must be an integer", f"{where}.points")
        axes.append(_section(GridSpec.from_dict, [dim], where).axes[0])
    return _section(GridSpec, tuple(axes), "grid")


def _sweep(d, grid: GridSpec) -> SweepConfig:
    if not isinstance(d, dict):
        raise ConfigError("must be an object", "sweep")
    counts = d.get("counts", {})
    if not isinstance(counts, dict):
        raise ConfigError("must be an object mapping dimension to count", "sweep.counts")
    for name, c in counts.items():
        if name not in grid.names:
            raise ConfigError(f"unknown dimension {name!r}", f"sweep.counts.{name}")
        if isinstance(c, bool) or not isinstance(c, int) or c < 1:
            raise ConfigError("count must be an integer >= 1", f"sweep.counts.{name}")
    ranges = d.get("ranges", {})
    if not isinstance(ranges, dict):
        raise ConfigError("must be an object mapping dimension to [lo, hi]", "sweep.ranges")
    for name, r in ranges.items():
        where = f"sweep.ranges.{name}"
        if name not in grid.names:
            raise ConfigError(f"unknown dimension {name!r}", where)
        if not isinstance(r, list) or len(r) != 2:
            raise ConfigError("must be [lo, hi]", where)
        lo, hi = _number(r[0], where), _number(r[1], where)
        ax = grid.axes[grid.index(name)]
        if not ax.lower <= lo <= hi <= ax.upper:
            raise ConfigError(f"must satisfy {ax.lower} <= lo <= hi <= {ax.upper}", where)
    margin = _number(d.get("margin_max", 1.5), "sweep.margin_max")
    frac = _number(d.get("completion_fraction", 0.8), "sweep.completion_fraction")
    if not 0 < frac <= 1:
        raise ConfigError("must lie in (0, 1]", "sweep.completion_fraction")
    extra = sorted(set(d) - {"counts", "ranges", "margin_max", "completion_fraction"})
    if extra:
        raise ConfigError("unknown key", f"sweep.{extra[0]}")
    return SweepConfig(dict(counts), {k: tuple(float(x) for x in v) for k, v in ranges.items()}, margin, frac)
