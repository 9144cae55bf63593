"""Completeness check by simulation.

The ego follows a fixed, dynamically feasible maneuver trajectory; the
contender pursues it with a receding-horizon search over constant controls
that assumes the ego keeps its current velocity vector. Each trial is then
classified against the zone value at its initial joint state.

World-frame agent states are ``(x, y, psi, v)``. Joint states use the zone
grid's coordinates: ``x_rel = x_C - x_E`` (and ``y_rel = y_C - y_E`` for the
turn scenario).
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit, prange

from .dynamics import LANE_CHANGE_EGO, LANE_CHANGE_JOINT, TURN_EGO, TURN_JOINT, DynamicsModel
from .errors import ConfigError, FeasibilityError, OutOfDomainError
from .grid import GridSpec, interpolate

log = logging.getLogger(__name__)

OUTCOMES = ("TP", "TN", "FP", "FN", "skipped")

# lateral profile y_des * q(t / T_man), q(s) = 10 s^3 - 15 s^4 + 6 s^5
_Q_DOT_MAX = 1.875


@dataclass(frozen=True)
class MpcConfig:
    horizon_steps: int = 10
    dt_sim: float = 0.05
    accel_candidates: int = 5
    steer_candidates: int = 5
    radius: float = 2.5

    def __post_init__(self):
        if int(self.horizon_steps) < 1:
            raise ConfigError("must be >= 1", "mpc.horizon_steps")
        if not self.dt_sim > 0:
            raise ConfigError("must be positive", "mpc.dt_sim")
        if self.accel_candidates < 2:
            raise ConfigError("must be >= 2", "mpc.accel_candidates")
        if self.steer_candidates < 2:
            raise ConfigError("must be >= 2", "mpc.steer_candidates")
        if not self.radius > 0:
            raise ConfigError("must be positive", "mpc.radius")

    def to_dict(self) -> dict:
        return {"horizon_steps": self.horizon_steps, "dt_sim": self.dt_sim,
                "accel_candidates": self.accel_candidates, "steer_candidates": self.steer_candidates,
                "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        return cls(**d)


@dataclass
class EgoReference:
    """Ego trajectory sampled every ``dt_sim``.

    ``world`` rows are ``(x, y, psi, v)``; ``controls`` rows follow the ego
    model's control names and hold the input applied from each sample on.
    """

    kind: str
    times: np.ndarray
    world: np.ndarray
    controls: np.ndarray
    model: DynamicsModel
    completion_time: float

    @property
    def model_states(self) -> np.ndarray:
        """Trajectory in the ego model's own coordinates."""
        x, y, psi, v = self.world.T
        if self.model.identifier == LANE_CHANGE_EGO:
            return np.stack([y, psi, v], axis=1)
        return np.stack([psi, v], axis=1)

    @property
    def velocity(self) -> np.ndarray:
        psi, v = self.world[:, 2], self.world[:, 3]
        return np.stack([v * np.cos(psi), v * np.sin(psi)], axis=1)


def _lane_change_reference(spec, model: DynamicsModel, horizon: float, dt_sim: float, speed: float,
                           t_man: float) -> EgoReference:
    y_des = spec.y_des
    if speed <= 0 or abs(y_des) * _Q_DOT_MAX / t_man >= speed:
        raise FeasibilityError(f"lateral rate {abs(y_des) * _Q_DOT_MAX / t_man:.3g} m/s needs more than "
                               f"speed {speed:.3g} m/s", "v_E")
    n = int(round(horizon / dt_sim))
    times = dt_sim * np.arange(n + 1)
    # heading, steering and x are evaluated on a fine mesh; x needs quadrature
    fine = 16
    tf = np.linspace(0.0, n * dt_sim, fine * n + 1)
    s = np.clip(tf / t_man, 0.0, 1.0)
    inside = tf < t_man
    y = y_des * (10 * s**3 - 15 * s**4 + 6 * s**5)
    yd = np.where(inside, y_des * 30 * s**2 * (1 - s) ** 2 / t_man, 0.0)
    ydd = np.where(inside, y_des * 60 * s * (1 - s) * (1 - 2 * s) / t_man**2, 0.0)
    psi = np.arcsin(yd / speed)
    psi_dot = ydd / np.sqrt(speed**2 - yd**2)
    delta = np.arctan(model.wheelbase_ego * psi_dot / speed)
    if np.max(np.abs(delta)) > model.steer_ego:
        raise FeasibilityError(f"steering {np.max(np.abs(delta)):.3g} rad exceeds {model.steer_ego:.3g} rad",
                               "delta_E")
    xd = speed * np.cos(psi)
    x = np.concatenate([[0.0], np.cumsum(0.5 * (xd[1:] + xd[:-1]) * np.diff(tf))])
    take = slice(None, None, fine)
    world = np.stack([x[take], y[take], psi[take], np.full(n + 1, speed)], axis=1)
    controls = np.stack([np.zeros(n + 1), delta[take]], axis=1)
    return EgoReference(spec.kind, times, world, controls, model, t_man)


def _turn_reference(spec, model: DynamicsModel, horizon: float, dt_sim: float, speed: float) -> EgoReference:
    n = int(round(horizon / dt_sim))
    times = dt_sim * np.arange(n + 1)
    kpsi, kval = model.kappa_table
    world = _rail_rollout(speed, dt_sim, n, 8, kpsi, kval)
    hit = np.nonzero(math.copysign(1.0, spec.psi_des) * (world[:, 2] - spec.psi_des) >= -1e-12)[0]
    if len(hit) == 0:
        reach = abs(spec.psi_des) / max(float(np.max(np.abs(kval))), 1e-300)
        raise FeasibilityError(f"speed {speed:.3g} m/s covers the {reach:.3g} m rail arc only after the horizon",
                               "v_E")
    return EgoReference(spec.kind, times, world, np.zeros((n + 1, 1)), model, float(times[hit[0]]))


@njit(cache=True)
def _rail_rhs(state, speed, kpsi, kval, out):
    psi = state[2]
    out[0] = speed * math.cos(psi)
    out[1] = speed * math.sin(psi)
    out[2] = speed * np.interp(psi, kpsi, kval)
    out[3] = 0.0


@njit(cache=True)
def _rail_rollout(speed, dt, n, sub, kpsi, kval):
    out = np.zeros((n + 1, 4))
    s = np.zeros(4)
    s[3] = speed
    out[0] = s
    k1, k2, k3, k4, tmp = np.empty(4), np.empty(4), np.empty(4), np.empty(4), np.empty(4)
    h = dt / sub
    for i in range(n):
        for _ in range(sub):
            _rail_rhs(s, speed, kpsi, kval, k1)
            tmp[:] = s + 0.5 * h * k1
            _rail_rhs(tmp, speed, kpsi, kval, k2)
            tmp[:] = s + 0.5 * h * k2
            _rail_rhs(tmp, speed, kpsi, kval, k3)
            tmp[:] = s + h * k3
            _rail_rhs(tmp, speed, kpsi, kval, k4)
            s[:] = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = s
    return out


def build_ego_reference(spec, model: DynamicsModel, horizon: float, dt_sim: float, speed: float,
                        completion_fraction: float = 0.8) -> EgoReference:
    """Constant-speed maneuver trajectory starting at the origin with zero heading.

    Lane change: quintic lateral profile completed at
    ``completion_fraction * horizon``. Turn: follow the rail curvature.
    Raises :class:`FeasibilityError` naming the violated bound.
    """
    if not 0 < completion_fraction <= 1:
        raise ConfigError("must lie in (0, 1]", "sweep.completion_fraction")
    if model.identifier == LANE_CHANGE_EGO:
        if spec.kind != "lane_change":
            raise ConfigError("lane-change ego model needs a lane_change maneuver", "maneuver.kind")
        return _lane_change_reference(spec, model, horizon, dt_sim, speed, completion_fraction * horizon)
    if model.identifier == TURN_EGO:
        if spec.kind != "rail_turn":
            raise ConfigError("turn ego model needs a rail_turn maneuver", "maneuver.kind")
        return _turn_reference(spec, model, horizon, dt_sim, speed)
    raise ConfigError(f"no reference trajectory for {model.identifier}", "model")


# --------------------------------------------------------------------------
# contender


@njit(cache=True)
def _bicycle(s, a, tan_d, L, vmin, vmax, dt):
    """RK4 step of the kinematic bicycle with constant controls; speed saturates."""
    x, y, psi, v = s[0], s[1], s[2], s[3]

    def rhs(psi_, v_):
        return v_ * math.cos(psi_), v_ * math.sin(psi_), v_ * tan_d / L

    k1x, k1y, k1p = rhs(psi, v)
    v2 = min(max(v + 0.5 * dt * a, vmin), vmax)
    k2x, k2y, k2p = rhs(psi + 0.5 * dt * k1p, v2)
    k3x, k3y, k3p = rhs(psi + 0.5 * dt * k2p, v2)
    v4 = min(max(v + dt * a, vmin), vmax)
    k4x, k4y, k4p = rhs(psi + dt * k3p, v4)
    out = np.empty(4)
    out[0] = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    out[1] = y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
    out[2] = psi + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    out[3] = v4
    return out


@njit(cache=True)
def _mpc_choice(cont, ego_xy, ego_vel, accels, steers, order_a, order_d, L, vmin, vmax, dt, n_p):
    """Index pair minimising the smallest predicted separation over the preview."""
    best = np.inf
    best_a = order_a[0]
    best_d = order_d[0]
    # order_* enumerate candidates in tie-break priority: |delta| first, then |a|
    for jd in range(order_d.shape[0]):
        idd = order_d[jd]
        td = math.tan(steers[idd])
        for ja in range(order_a.shape[0]):
            ia = order_a[ja]
            s = cont.copy()
            dmin = np.inf
            for k in range(1, n_p + 1):
                s = _bicycle(s, accels[ia], td, L, vmin, vmax, dt)
                ex = ego_xy[0] + ego_vel[0] * k * dt
                ey = ego_xy[1] + ego_vel[1] * k * dt
                dmin = min(dmin, math.hypot(s[0] - ex, s[1] - ey))
            if dmin < best:
                best = dmin
                best_a = ia
                best_d = idd
    return best_a, best_d


def _candidates(model: DynamicsModel, cfg: MpcConfig):
    accels = np.linspace(model.accel_contender[0], model.accel_contender[1], cfg.accel_candidates)
    steers = np.linspace(-model.steer_contender, model.steer_contender, cfg.steer_candidates)
    # stable sort keeps the negative side first among equal magnitudes
    order_a = np.argsort(np.abs(accels), kind="stable").astype(np.int64)
    order_d = np.argsort(np.abs(steers), kind="stable").astype(np.int64)
    return accels, steers, order_a, order_d


def contender_mpc_step(contender_state, ego_state, ego_velocity, cfg: MpcConfig,
                       model: DynamicsModel) -> tuple[float, float]:
    """Contender control ``(a_C, delta_C)`` for the current sample.

    The ego is predicted to keep ``ego_velocity``; each constant candidate
    pair is rolled out for ``horizon_steps`` and scored by the smallest
    predicted separation over the preview samples ``1..horizon_steps``. Ties go to the
    smaller ``|delta_C|``, then the smaller ``|a_C|``.
    """
    cont = np.asarray(contender_state, dtype=np.float64)
    ego = np.asarray(ego_state, dtype=np.float64)
    vel = np.asarray(ego_velocity, dtype=np.float64)
    if not (np.all(np.isfinite(cont)) and np.all(np.isfinite(ego)) and np.all(np.isfinite(vel))):
        raise ConfigError("states must be finite", "state")
    accels, steers, oa, od = _candidates(model, cfg)
    vmin, vmax = model.velocity_range
    ia, idd = _mpc_choice(cont, ego[:2].copy(), vel, accels, steers, oa, od, model.wheelbase_contender,
                          vmin, vmax, cfg.dt_sim, cfg.horizon_steps)
    return float(accels[ia]), float(steers[idd])


@njit(cache=True, parallel=True)
def _run_batch(contenders, ego_world, ego_vel, ok, accels, steers, oa, od, L, vmin, vmax, dt, n_p, radius,
               min_sep, hit_step):
    n_trials = contenders.shape[0]
    n_samples = ego_world.shape[1]
    for i in prange(n_trials):
        min_sep[i] = np.inf
        hit_step[i] = -1
        if not ok[i]:
            continue
        s = contenders[i].copy()
        for k in range(n_samples):
            ex = ego_world[i, k, 0]
            ey = ego_world[i, k, 1]
            d = math.hypot(s[0] - ex, s[1] - ey)
            if d < min_sep[i]:
                min_sep[i] = d
            if d <= radius and hit_step[i] < 0:
                hit_step[i] = k
            if k == n_samples - 1:
                break
            ia, idd = _mpc_choice(s, ego_world[i, k, :2].copy(), ego_vel[i, k], accels, steers, oa, od, L,
                                  vmin, vmax, dt, n_p)
            s = _bicycle(s, accels[ia], math.tan(steers[idd]), L, vmin, vmax, dt)


# --------------------------------------------------------------------------
# trials


@dataclass
class TrialRecord:
    state: tuple[float, ...]
    zone_value: float
    collided: bool
    min_separation: float
    collision_time: float | None
    outcome: str
    reason: str = ""

    def __post_init__(self):
        if self.outcome != "skipped" and self.outcome != classify(self.zone_value, self.collided):
            raise ValueError(f"outcome {self.outcome} inconsistent with value {self.zone_value} / {self.collided}")


def classify(zone_value: float, collided: bool) -> str:
    inside = zone_value < 0
    if collided:
        return "TP" if inside else "FN"
    return "FP" if inside else "TN"


@dataclass
class ConfusionMatrix:
    counts: dict = field(default_factory=lambda: dict.fromkeys(OUTCOMES, 0))
    fn_values: list = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[TrialRecord]) -> "ConfusionMatrix":
        c = Counter(r.outcome for r in records)
        counts = {k: int(c.get(k, 0)) for k in OUTCOMES}
        return cls(counts, [r.zone_value for r in records if r.outcome == "FN"])

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        counts = {k: self.counts[k] + other.counts[k] for k in OUTCOMES}
        return ConfusionMatrix(counts, sorted(self.fn_values + other.fn_values))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def classified(self) -> int:
        return self.total - self.counts["skipped"]

    def percentages(self) -> dict:
        """Share of all trials (skipped included), in percent."""
        n = self.total
        return {k: (100.0 * v / n if n else 0.0) for k, v in self.counts.items()}

    def rate(self, outcome: str) -> float:
        """Share of classified trials with ``outcome``, as a fraction."""
        n = self.classified
        return self.counts[outcome] / n if n else 0.0

    @property
    def fn_mean(self) -> float | None:
        return float(np.mean(self.fn_values)) if self.fn_values else None

    @property
    def fn_max(self) -> float | None:
        return float(np.max(self.fn_values)) if self.fn_values else None

    def summary(self) -> str:
        pct = self.percentages()
        lines = [f"trials: {self.total} (classified {self.classified})"]
        lines += [f"{k:>7}: {self.counts[k]:6d}  {pct[k]:6.2f}%" for k in OUTCOMES]
        if self.fn_values:
            lines.append(f"FN zone value: mean {self.fn_mean:.3f}, max {self.fn_max:.3f}")
        else:
            lines.append("FN zone value: mean n/a, max n/a (no false negatives)")
        return "\n".join(lines)


def _joint_state(model: DynamicsModel, ego0: np.ndarray, cont0: np.ndarray) -> np.ndarray:
    xE, yE, psiE, vE = ego0
    xC, yC, psiC, vC = cont0
    if model.identifier == LANE_CHANGE_JOINT:
        return np.array([xC - xE, yE, yC, psiE, psiC, vE, vC])
    return np.array([xC - xE, yC - yE, psiE, psiC, vE, vC])


def _contender_from_joint(model: DynamicsModel, z: np.ndarray) -> np.ndarray:
    """World-frame contender state for an ego starting at the origin."""
    names = model.state_names
    g = dict(zip(names, z))
    if model.identifier == LANE_CHANGE_JOINT:
        return np.array([g["x_rel"], g["y_C"], g["psi_C"], g["v_C"]])
    return np.array([g["x_rel"], g["y_rel"], g["psi_C"], g["v_C"]])


def run_trials(states: np.ndarray, spec, model: DynamicsModel, horizon: float, cfg: MpcConfig, zone,
               completion_fraction: float = 0.8) -> list[TrialRecord]:
    """Simulate a batch of initial joint states (rows of ``states``)."""
    if model.identifier not in (LANE_CHANGE_JOINT, TURN_JOINT):
        raise ConfigError(f"no simulation for model {model.identifier}", "model")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    ego_model = model.ego_model()
    names = model.state_names
    n = len(states)
    n_samples = int(round(horizon / cfg.dt_sim)) + 1
    ego_world = np.zeros((n, n_samples, 4))
    ego_vel = np.zeros((n, n_samples, 2))
    contenders = np.zeros((n, 4))
    ok = np.ones(n, dtype=np.bool_)
    reasons = [""] * n
    refs = {}
    for i, z in enumerate(states):
        # the sweep fixes y_E and psi_E at zero; honour other values by shifting the reference
        y0 = z[names.index("y_E")] if "y_E" in names else 0.0
        psi0 = z[names.index("psi_E")]
        v0 = float(z[names.index("v_E")])
        if psi0 != 0.0 or y0 != 0.0:
            ok[i], reasons[i] = False, "reference trajectories start at y_E = psi_E = 0"
            continue
        if v0 not in refs:
            try:
                refs[v0] = build_ego_reference(spec, ego_model, horizon, cfg.dt_sim, v0, completion_fraction)
            except FeasibilityError as exc:
                refs[v0] = exc
        ref = refs[v0]
        if isinstance(ref, FeasibilityError):
            ok[i], reasons[i] = False, f"reference infeasible ({ref.bound}): {ref}"
            continue
        ego_world[i] = ref.world
        ego_vel[i] = ref.velocity
        contenders[i] = _contender_from_joint(model, z)
    values = np.full(n, np.nan)
    try:
        values[:] = interpolate(zone, states)
    except OutOfDomainError:
        for i, z in enumerate(states):
            try:
                values[i] = interpolate(zone, z)
            except OutOfDomainError as exc:
                ok[i], reasons[i] = False, f"out of domain: {exc}"
    accels, steers, oa, od = _candidates(model, cfg)
    vmin, vmax = model.velocity_range
    min_sep = np.empty(n)
    hit = np.empty(n, dtype=np.int64)
    _run_batch(contenders, ego_world, ego_vel, ok, accels, steers, oa, od, model.wheelbase_contender,
               vmin, vmax, cfg.dt_sim, cfg.horizon_steps, cfg.radius, min_sep, hit)
    records = []
    for i in range(n):
        st = tuple(float(x) for x in states[i])
        if not ok[i]:
            records.append(TrialRecord(st, float(values[i]), False, math.nan, None, "skipped", reasons[i]))
            continue
        collided = bool(hit[i] >= 0)
        t_hit = float(hit[i] * cfg.dt_sim) if collided else None
        records.append(TrialRecord(st, float(values[i]), collided, float(min_sep[i]), t_hit,
                                   classify(values[i], collided)))
    return records


def run_trial(state, spec, model: DynamicsModel, horizon: float, cfg: MpcConfig, zone,
              completion_fraction: float = 0.8) -> TrialRecord:
    return run_trials(np.asarray(state, dtype=np.float64)[None, :], spec, model, horizon, cfg, zone,
                      completion_fraction)[0]


def geometric_nodes(lower: float, upper: float, count: int, start: float = 2.0) -> np.ndarray:
    """Sample positions denser near 0.

    Magnitudes form a geometric progression from ``start`` to the domain edge
    on each side of 0; odd counts add 0 itself. Domains not straddling 0
    fall back to uniform spacing.
    """
    if count == 1:
        return np.array([0.0 if lower <= 0 <= upper else 0.5 * (lower + upper)])
    if not lower < 0 < upper:
        return np.linspace(lower, upper, count)
    half = count // 2

    def side(edge):
        if half == 0:
            return np.array([])
        if edge <= start:
            return np.linspace(edge / half, edge, half)
        return np.geomspace(start, edge, half)

    mid = [np.array([0.0])] if count % 2 else []
    return np.concatenate([-side(-lower)[::-1], *mid, side(upper)])


def sweep_states(grid: GridSpec, counts: dict, ranges: dict | None = None) -> np.ndarray:
    """Product grid of initial joint states.

    ``y_E`` and ``psi_E`` are pinned at 0; positional dims use
    :func:`geometric_nodes`, other swept dims are uniform. Dims missing
    from ``counts`` sit at 0 if that is inside the domain, else mid-range.
    """
    ranges = ranges or {}
    axes = []
    for ax in grid.axes:
        lo, hi = ranges.get(ax.name, (ax.lower, ax.upper))
        c = counts.get(ax.name)
        if ax.name in ("y_E", "psi_E"):
            if c not in (None, 1):
                raise ConfigError("the ego starts at y_E = psi_E = 0; sweep count must be 1", f"sweep.counts.{ax.name}")
            axes.append(np.array([0.0]))
        elif c is None:
            axes.append(np.array([0.0 if lo <= 0 <= hi else 0.5 * (lo + hi)]))
        elif ax.name in ("x_rel", "y_rel", "y_C"):
            axes.append(geometric_nodes(lo, hi, c))
        elif ax.periodic:
            axes.append(lo + (hi - lo) * np.arange(c) / c)
        else:
            axes.append(np.linspace(lo, hi, c) if c > 1 else np.array([0.5 * (lo + hi)]))
    return np.array(list(product(*axes)), dtype=np.float64)


def sweep_trials(spec, model: DynamicsModel, grid: GridSpec, horizon: float, cfg: MpcConfig, counts: dict, zone,
                 ranges: dict | None = None, completion_fraction: float = 0.8):
    """Run the product sweep; returns ``(ConfusionMatrix, records)``."""
    states = sweep_states(grid, counts, ranges)
    log.info("running %d trials", len(states))
    records = run_trials(states, spec, model, horizon, cfg, zone, completion_fraction)
    return ConfusionMatrix.from_records(records), records


def export_trials_csv(records: Sequence[TrialRecord], names: Sequence[str], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "zone_value", "collided", "class", "min_separation", "collision_time", "reason"])
        for r in records:
            w.writerow([*(repr(x) for x in r.state), repr(r.zone_value), int(r.collided), r.outcome,
                        repr(r.min_separation), "" if r.collision_time is None else repr(r.collision_time),
                        r.reason])
