"""Vehicle and oracle dynamics with analytic min-Hamiltonians.

Every control channel in these models drives exactly one state component
through a bounded monotone term (acceleration linearly, steering through
``tan`` on a symmetric interval, turn rate linearly). The contribution of
each state component to the Hamiltonian is therefore

    p_i * drift_i(z) + min(p_i * lo_i(z), p_i * hi_i(z))

where ``[lo_i, hi_i]`` is the range the controls can add to ``dz_i/dt``.
:func:`affine_terms` returns these three vectors; the PDE kernel and
:func:`hamiltonian` both use it, while :func:`flow` is written directly from
the vehicle equations so the two can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit

from .errors import BoundsError, ConfigError, ShapeError
from .grid import GridSpec

LANE_CHANGE_EGO = "lane_change_ego_3d"
LANE_CHANGE_JOINT = "lane_change_joint_7d"
TURN_EGO = "turn_ego_2d"
TURN_JOINT = "turn_joint_6d"
DOUBLE_INTEGRATOR = "double_integrator_2d"
DUBINS = "dubins_3d"
ADVECTION = "advection_1d"

MODEL_IDS = {
    LANE_CHANGE_EGO: 0,
    LANE_CHANGE_JOINT: 1,
    TURN_EGO: 2,
    TURN_JOINT: 3,
    DOUBLE_INTEGRATOR: 4,
    DUBINS: 5,
    ADVECTION: 6,
}

STATE_NAMES = {
    LANE_CHANGE_EGO: ("y_E", "psi_E", "v_E"),
    LANE_CHANGE_JOINT: ("x_rel", "y_E", "y_C", "psi_E", "psi_C", "v_E", "v_C"),
    TURN_EGO: ("psi_E", "v_E"),
    TURN_JOINT: ("x_rel", "y_rel", "psi_E", "psi_C", "v_E", "v_C"),
    DOUBLE_INTEGRATOR: ("x", "v"),
    DUBINS: ("x", "y", "psi"),
    ADVECTION: ("x",),
}

CONTROL_NAMES = {
    LANE_CHANGE_EGO: ("a_E", "delta_E"),
    LANE_CHANGE_JOINT: ("a_E", "delta_E", "a_C", "delta_C"),
    TURN_EGO: ("a_E",),
    TURN_JOINT: ("a_E", "a_C", "delta_C"),
    DOUBLE_INTEGRATOR: ("a",),
    DUBINS: ("omega",),
    ADVECTION: (),
}

EGO_OF = {LANE_CHANGE_JOINT: LANE_CHANGE_EGO, TURN_JOINT: TURN_EGO, DUBINS: DUBINS}

# Layout of the packed parameter vector handed to the kernel.
_P_LE, _P_LC, _P_AE0, _P_AE1, _P_TE, _P_AC0, _P_AC1, _P_TC, _P_SPEED, _P_OMEGA, _P_ADV = range(11)


@dataclass(frozen=True)
class ControlBounds:
    name: str
    min: float
    max: float

    def __post_init__(self):
        if self.min > self.max:
            raise ConfigError(f"min ({self.min}) > max ({self.max})", self.name)
        if self.name.startswith("delta"):
            if not math.isclose(self.min, -self.max, abs_tol=1e-12):
                raise ConfigError("steering bounds must be symmetric about 0", self.name)
            if self.max >= math.pi / 2:
                raise ConfigError("steering bound must stay below pi/2", self.name)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.min + self.max)


@dataclass(frozen=True)
class DynamicsModel:
    """One of the supported systems plus its parameters.

    Defaults follow the scenario assumptions: 3 m wheelbases, a in [-4, 3],
    steering in [-0.5, 0.5] rad, a 20 m rail radius.
    """

    identifier: str
    wheelbase_ego: float = 3.0
    wheelbase_contender: float = 3.0
    accel_ego: tuple[float, float] = (-4.0, 3.0)
    steer_ego: float = 0.5
    accel_contender: tuple[float, float] = (-4.0, 3.0)
    steer_contender: float = 0.5
    turn_radius: float = 20.0
    # piecewise-linear kappa(psi) table; empty -> constant 1/turn_radius
    curvature_psi: tuple[float, ...] = ()
    curvature_values: tuple[float, ...] = ()
    velocity_range: tuple[float, float] = (0.0, 15.0)
    speed: float = 1.0  # dubins forward speed
    turn_rate: float = 1.0  # dubins |omega| bound
    advection_speed: float = 1.0
    _params: np.ndarray = field(init=False, repr=False, compare=False)
    _kappa: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.identifier not in MODEL_IDS:
            raise ConfigError(f"unknown model {self.identifier!r}; expected one of {sorted(MODEL_IDS)}", "identifier")
        if self.wheelbase_ego <= 0 or self.wheelbase_contender <= 0:
            raise ConfigError("wheelbases must be positive", "wheelbase")
        if self.velocity_range[0] < 0 or self.velocity_range[0] > self.velocity_range[1]:
            raise ConfigError("velocity range must satisfy 0 <= v_min <= v_max", "velocity_range")
        if self.turn_radius <= 0:
            raise ConfigError("turn radius must be positive", "turn_radius")
        bounds = [
            ControlBounds("a_E", *self.accel_ego),
            ControlBounds("delta_E", -self.steer_ego, self.steer_ego),
            ControlBounds("a_C", *self.accel_contender),
            ControlBounds("delta_C", -self.steer_contender, self.steer_contender),
            ControlBounds("omega", -self.turn_rate, self.turn_rate),
        ]
        if self.identifier == DOUBLE_INTEGRATOR:
            bounds.append(ControlBounds("a", *self.accel_ego))
        if len(self.curvature_psi) != len(self.curvature_values):
            raise ConfigError("curvature table columns differ in length", "curvature")
        if self.curvature_psi and np.any(np.diff(self.curvature_psi) <= 0):
            raise ConfigError("curvature table psi values must increase", "curvature")
        object.__setattr__(self, "_all_bounds", {b.name: b for b in bounds})
        p = np.zeros(11)
        p[_P_LE], p[_P_LC] = self.wheelbase_ego, self.wheelbase_contender
        p[_P_AE0], p[_P_AE1] = self.accel_ego
        p[_P_TE] = math.tan(self.steer_ego)
        p[_P_AC0], p[_P_AC1] = self.accel_contender
        p[_P_TC] = math.tan(self.steer_contender)
        p[_P_SPEED], p[_P_OMEGA], p[_P_ADV] = self.speed, self.turn_rate, self.advection_speed
        p.flags.writeable = False
        object.__setattr__(self, "_params", p)
        if self.curvature_psi:
            kpsi = np.array(self.curvature_psi, dtype=np.float64)
            kval = np.array(self.curvature_values, dtype=np.float64)
        else:
            kpsi = np.array([0.0, 1.0])
            kval = np.full(2, 1.0 / self.turn_radius)
        object.__setattr__(self, "_kappa", (kpsi, kval))

    @property
    def model_id(self) -> int:
        return MODEL_IDS[self.identifier]

    @property
    def state_names(self) -> tuple[str, ...]:
        return STATE_NAMES[self.identifier]

    @property
    def ndim(self) -> int:
        return len(self.state_names)

    @property
    def control_names(self) -> tuple[str, ...]:
        return CONTROL_NAMES[self.identifier]

    @property
    def control_bounds(self) -> tuple[ControlBounds, ...]:
        return tuple(self._all_bounds[n] for n in self.control_names)

    @property
    def params(self) -> np.ndarray:
        return self._params

    @property
    def kappa_table(self) -> tuple[np.ndarray, np.ndarray]:
        return self._kappa

    def curvature(self, psi):
        return np.interp(psi, *self._kappa)

    def ego_model(self) -> "DynamicsModel":
        if self.identifier not in EGO_OF:
            raise ConfigError(f"{self.identifier} has no ego sub-model")
        return replace(self, identifier=EGO_OF[self.identifier])

    def to_dict(self) -> dict:
        d = {
            "identifier": self.identifier,
            "wheelbase_ego": self.wheelbase_ego,
            "wheelbase_contender": self.wheelbase_contender,
            "accel_ego": list(self.accel_ego),
            "steer_ego": self.steer_ego,
            "accel_contender": list(self.accel_contender),
            "steer_contender": self.steer_contender,
            "turn_radius": self.turn_radius,
            "velocity_range": list(self.velocity_range),
            "speed": self.speed,
            "turn_rate": self.turn_rate,
            "advection_speed": self.advection_speed,
        }
        if self.curvature_psi:
            d["curvature_psi"] = list(self.curvature_psi)
            d["curvature_values"] = list(self.curvature_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsModel":
        kw = dict(d)
        for key in ("accel_ego", "accel_contender", "velocity_range", "curvature_psi", "curvature_values"):
            if key in kw:
                kw[key] = tuple(float(x) for x in kw[key])
        unknown = set(kw) - set(cls.__dataclass_fields__) | {k for k in kw if k.startswith("_")}
        if unknown:
            raise ConfigError(f"unknown dynamics fields {sorted(unknown)}", "dynamics")
        return cls(**kw)


@njit(cache=True)
def _terms(mid, prm, z, cz, sz, kz, drift, lo, hi):
    """Fill drift / control-range vectors at state ``z`` for model ``mid``.

    ``cz``, ``sz``, ``kz`` hold cos, sin and rail curvature of each state
    component (only the heading entries are read).
    """
    for i in range(z.shape[0]):
        drift[i] = 0.0
        lo[i] = 0.0
        hi[i] = 0.0
    if mid == 0:  # y_E, psi_E, v_E
        v = z[2]
        drift[0] = v * sz[1]
        c = abs(v) * prm[4] / prm[0]
        lo[1] = -c
        hi[1] = c
        lo[2] = prm[2]
        hi[2] = prm[3]
    elif mid == 1:  # x_rel, y_E, y_C, psi_E, psi_C, v_E, v_C
        vE = z[5]
        vC = z[6]
        drift[0] = vC * cz[4] - vE * cz[3]
        drift[1] = vE * sz[3]
        drift[2] = vC * sz[4]
        cE = abs(vE) * prm[4] / prm[0]
        cC = abs(vC) * prm[7] / prm[1]
        lo[3] = -cE
        hi[3] = cE
        lo[4] = -cC
        hi[4] = cC
        lo[5] = prm[2]
        hi[5] = prm[3]
        lo[6] = prm[5]
        hi[6] = prm[6]
    elif mid == 2:  # psi_E, v_E
        drift[0] = z[1] * kz[0]
        lo[1] = prm[2]
        hi[1] = prm[3]
    elif mid == 3:  # x_rel, y_rel, psi_E, psi_C, v_E, v_C
        vE = z[4]
        vC = z[5]
        drift[0] = vC * cz[3] - vE * cz[2]
        drift[1] = vC * sz[3] - vE * sz[2]
        drift[2] = vE * kz[2]
        cC = abs(vC) * prm[7] / prm[1]
        lo[3] = -cC
        hi[3] = cC
        lo[4] = prm[2]
        hi[4] = prm[3]
        lo[5] = prm[5]
        hi[5] = prm[6]
    elif mid == 4:  # x, v
        drift[0] = z[1]
        lo[1] = prm[2]
        hi[1] = prm[3]
    elif mid == 5:  # x, y, psi
        drift[0] = prm[8] * cz[2]
        drift[1] = prm[8] * sz[2]
        lo[2] = -prm[9]
        hi[2] = prm[9]
    elif mid == 6:  # x
        drift[0] = prm[10]


@njit(cache=True)
def _hamiltonian_from_terms(p, drift, lo, hi):
    h = 0.0
    for i in range(p.shape[0]):
        h += p[i] * drift[i] + min(p[i] * lo[i], p[i] * hi[i])
    return h


def _check_state(model: DynamicsModel, state) -> np.ndarray:
    z = np.asarray(state, dtype=np.float64)
    if z.shape != (model.ndim,):
        raise ShapeError(f"{model.identifier} expects a state of length {model.ndim}, got shape {z.shape}")
    return z


def affine_terms(model: DynamicsModel, state) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = _check_state(model, state)
    drift, lo, hi = np.empty(model.ndim), np.empty(model.ndim), np.empty(model.ndim)
    _terms(model.model_id, model.params, z, np.cos(z), np.sin(z), model.curvature(z), drift, lo, hi)
    return drift, lo, hi


def flow(model: DynamicsModel, state, controls) -> np.ndarray:
    """Right-hand side of the model ODE."""
    z = _check_state(model, state)
    u = np.asarray(controls, dtype=np.float64).reshape(-1)
    if u.shape != (len(model.control_names),):
        raise ShapeError(f"{model.identifier} expects controls {model.control_names}, got {u.shape[0]} values")
    for b, val in zip(model.control_bounds, u):
        if not b.min - 1e-12 <= val <= b.max + 1e-12:
            raise BoundsError(f"{val:.6g} outside [{b.min:.6g}, {b.max:.6g}]", b.name)
    LE, LC = model.wheelbase_ego, model.wheelbase_contender
    cos, sin, tan = math.cos, math.sin, math.tan
    ident = model.identifier
    if ident == LANE_CHANGE_EGO:
        y, psi, v = z
        a, delta = u
        return np.array([v * sin(psi), v * tan(delta) / LE, a])
    if ident == LANE_CHANGE_JOINT:
        x_rel, yE, yC, psiE, psiC, vE, vC = z
        aE, dE, aC, dC = u
        return np.array([
            vC * cos(psiC) - vE * cos(psiE),
            vE * sin(psiE),
            vC * sin(psiC),
            vE * tan(dE) / LE,
            vC * tan(dC) / LC,
            aE,
            aC,
        ])
    if ident == TURN_EGO:
        psi, v = z
        (a,) = u
        return np.array([v * float(model.curvature(psi)), a])
    if ident == TURN_JOINT:
        x_rel, y_rel, psiE, psiC, vE, vC = z
        aE, aC, dC = u
        return np.array([
            vC * cos(psiC) - vE * cos(psiE),
            vC * sin(psiC) - vE * sin(psiE),
            vE * float(model.curvature(psiE)),
            vC * tan(dC) / LC,
            aE,
            aC,
        ])
    if ident == DOUBLE_INTEGRATOR:
        return np.array([z[1], u[0]])
    if ident == DUBINS:
        return np.array([model.speed * cos(z[2]), model.speed * sin(z[2]), u[0]])
    return np.array([model.advection_speed])


def hamiltonian(model: DynamicsModel, state, costate) -> float:
    """``min_u <costate, flow(state, u)>`` over all admissible controls."""
    p = np.asarray(costate, dtype=np.float64)
    if p.shape != (model.ndim,):
        raise ShapeError(f"costate must have length {model.ndim}")
    drift, lo, hi = affine_terms(model, state)
    return float(_hamiltonian_from_terms(p, drift, lo, hi))


# (control name, driven state name, sign of d flow / d control, scaled-by-speed state or None)
_CHANNELS = {
    "a_E": ("v_E", None),
    "a_C": ("v_C", None),
    "a": ("v", None),
    "delta_E": ("psi_E", "v_E"),
    "delta_C": ("psi_C", "v_C"),
    "omega": ("psi", None),
}


def optimal_controls(model: DynamicsModel, state, costate) -> np.ndarray:
    """Per-channel minimiser of the Hamiltonian; zero switching value -> midpoint."""
    z = _check_state(model, state)
    p = np.asarray(costate, dtype=np.float64)
    names = model.state_names
    out = []
    for b in model.control_bounds:
        target, scale = _CHANNELS[b.name]
        s = p[names.index(target)]
        if scale is not None:
            s *= z[names.index(scale)]
        if s > 0:
            out.append(b.min)
        elif s < 0:
            out.append(b.max)
        else:
            out.append(b.midpoint)
    return np.array(out)


def _max_abs_sin(lo: float, hi: float) -> float:
    if hi - lo >= math.pi:
        return 1.0
    # |sin| peaks at odd multiples of pi/2
    k = math.ceil((lo - math.pi / 2) / math.pi)
    if math.pi / 2 + k * math.pi <= hi:
        return 1.0
    return max(abs(math.sin(lo)), abs(math.sin(hi)))


def _max_abs_cos(lo: float, hi: float) -> float:
    return _max_abs_sin(lo + math.pi / 2, hi + math.pi / 2)


def dissipation_bounds(model: DynamicsModel, domain: GridSpec) -> np.ndarray:
    """Upper bounds on ``|f_i|`` over the grid domain and all admissible controls."""
    if domain.names != model.state_names:
        raise ShapeError(f"grid dims {domain.names} do not match {model.identifier} {model.state_names}")
    lo = dict(zip(domain.names, domain.lower))
    hi = dict(zip(domain.names, domain.upper))

    def vmax(name):
        return max(abs(lo[name]), abs(hi[name]))

    def amax(bounds):
        return max(abs(bounds[0]), abs(bounds[1]))

    kmax = float(np.max(np.abs(model.kappa_table[1])))
    tE, tC = math.tan(model.steer_ego), math.tan(model.steer_contender)
    LE, LC = model.wheelbase_ego, model.wheelbase_contender
    ident = model.identifier
    if ident == LANE_CHANGE_EGO:
        a = [vmax("v_E") * _max_abs_sin(lo["psi_E"], hi["psi_E"]), vmax("v_E") * tE / LE, amax(model.accel_ego)]
    elif ident == LANE_CHANGE_JOINT:
        a = [
            vmax("v_C") + vmax("v_E"),
            vmax("v_E") * _max_abs_sin(lo["psi_E"], hi["psi_E"]),
            vmax("v_C") * _max_abs_sin(lo["psi_C"], hi["psi_C"]),
            vmax("v_E") * tE / LE,
            vmax("v_C") * tC / LC,
            amax(model.accel_ego),
            amax(model.accel_contender),
        ]
    elif ident == TURN_EGO:
        a = [vmax("v_E") * kmax, amax(model.accel_ego)]
    elif ident == TURN_JOINT:
        a = [
            vmax("v_C") + vmax("v_E"),
            vmax("v_C") + vmax("v_E"),
            vmax("v_E") * kmax,
            vmax("v_C") * tC / LC,
            amax(model.accel_ego),
            amax(model.accel_contender),
        ]
    elif ident == DOUBLE_INTEGRATOR:
        a = [vmax("v"), amax(model.accel_ego)]
    elif ident == DUBINS:
        a = [model.speed * _max_abs_cos(lo["psi"], hi["psi"]), model.speed * _max_abs_sin(lo["psi"], hi["psi"]),
             model.turn_rate]
    else:
        a = [abs(model.advection_speed)]
    return np.array(a, dtype=np.float64)


@dataclass(frozen=True)
class EgoProjection:
    """Indices of the ego dimensions inside the joint state."""

    joint_names: tuple[str, ...]
    ego_names: tuple[str, ...]
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ConfigError("ego projection must be injective")

    @classmethod
    def between(cls, joint: Sequence[str], ego: Sequence[str]) -> "EgoProjection":
        joint, ego = tuple(joint), tuple(ego)
        missing = [n for n in ego if n not in joint]
        if missing:
            raise ShapeError(f"ego dimensions {missing} absent from joint state {joint}")
        return cls(joint, ego, tuple(joint.index(n) for n in ego))

    @classmethod
    def for_model(cls, joint_model: DynamicsModel) -> "EgoProjection":
        return cls.between(joint_model.state_names, joint_model.ego_model().state_names)

    def project(self, z) -> np.ndarray:
        z = np.asarray(z)
        return z[..., list(self.indices)]
