"""Backward level-set solver for ``dV/dt + min_u grad V . f = 0``.

The value is marched from the horizon ``T`` back to ``0`` as
``V(t - dt) = V(t) + dt * Hnum``. Every supported model has a Hamiltonian
that separates per dimension, ``sum_i min(w_lo_i p_i, w_hi_i p_i)`` with
``w = drift + control extreme``, so the default numerical Hamiltonian is
the exact upwind (Godunov) flux: per dimension it picks ``p-`` or ``p+`` by
the sign of each extreme velocity and takes the smaller term, and zero when
the velocity interval straddles 0. The Lax-Friedrichs alternative,

    Hnum = H(z, (p- + p+)/2) + sum_i alpha_i (p+_i - p-_i) / 2

with ``alpha_i`` bounding ``|dH/dp_i|`` over the domain (``global``) or
over the stencil (``local``), is kept as an option. Both are monotone under
the same CFL bound; Lax-Friedrichs adds more smearing, which lifts shallow
minima of the target.

Periodic axes wrap. Non-periodic edges use
constant ghost nodes by default, which keeps the scheme monotone; linear
extrapolation (``ghost = 2 * edge - interior``) is available through
``SolverConfig.boundary`` but is not monotone where the flow leaves the
domain.

Three modes share the kernel:

* ``EXACT_TIME`` - reach the target exactly at ``T``.
* ``TUBE`` - reach it at any time in ``[t, T]``; after each step the value
  is clipped by the previous frame.
* :class:`TimeVaryingTarget` - after each step the value is clipped by
  ``target(t_k)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator

import numpy as np
import numba
from numba import njit, prange

from .dynamics import DynamicsModel, _hamiltonian_from_terms, _terms, dissipation_bounds
from .errors import CFLError, ConfigError, ShapeError
from .grid import GridSpec, TimeIndexedField, ValueField

log = logging.getLogger(__name__)

SCHEMES = ("first_order_upwind", "second_order_eno")
INTEGRATORS = ("euler", "tvd_rk2")
# ghost-node rule at non-periodic edges
BOUNDARIES = ("linear", "constant")
# numerical Hamiltonian; "upwind" needs the separable per-axis velocity bounds
# every model here provides
HAMILTONIANS = ("upwind", "lax_friedrichs")
# Lax-Friedrichs viscosity: domain-wide bound or per-node bound on |dH/dp|
DISSIPATIONS = ("global", "local")
FLUX_CODES = {("lax_friedrichs", "global"): 0, ("lax_friedrichs", "local"): 1,
              ("upwind", "global"): 2, ("upwind", "local"): 2}


@dataclass(frozen=True)
class SolverConfig:
    cfl_factor: float = 0.8
    scheme: str = "first_order_upwind"
    integrator: str = "euler"
    frame_stride: int = 1
    boundary: str = "constant"
    hamiltonian: str = "upwind"
    dissipation: str = "local"

    def __post_init__(self):
        if not 0 < self.cfl_factor <= 1:
            raise ConfigError(f"must lie in (0, 1], got {self.cfl_factor}", "solver.cfl_factor")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}", "solver.scheme")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"unknown integrator {self.integrator!r}", "solver.integrator")
        if int(self.frame_stride) < 1:
            raise ConfigError("must be >= 1", "solver.frame_stride")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"unknown boundary rule {self.boundary!r}; expected one of {BOUNDARIES}",
                              "solver.boundary")
        if self.hamiltonian not in HAMILTONIANS:
            raise ConfigError(f"unknown hamiltonian {self.hamiltonian!r}; expected one of {HAMILTONIANS}",
                              "solver.hamiltonian")
        if self.dissipation not in DISSIPATIONS:
            raise ConfigError(f"unknown dissipation {self.dissipation!r}; expected one of {DISSIPATIONS}",
                              "solver.dissipation")

    def to_dict(self) -> dict:
        return {"cfl_factor": self.cfl_factor, "scheme": self.scheme,
                "integrator": self.integrator, "frame_stride": self.frame_stride, "boundary": self.boundary,
                "hamiltonian": self.hamiltonian, "dissipation": self.dissipation}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)


class SolveMode(Enum):
    EXACT_TIME = "exact_time"
    TUBE = "tube"


class TimeVaryingTarget:
    """Mode whose target is re-applied at every mesh time.

    ``provider(t)`` returns a :class:`ValueField` (or an array of the grid
    shape) on the solve grid.
    """

    def __init__(self, provider: Callable[[float], "ValueField | np.ndarray"]):
        self.provider = provider

    def __call__(self, t: float, spec: GridSpec) -> np.ndarray:
        tgt = self.provider(t)
        if isinstance(tgt, ValueField):
            if tgt.spec != spec:
                raise ShapeError("target provider returned a field on a different grid")
            return tgt.values
        tgt = np.asarray(tgt, dtype=np.float64)
        if tgt.shape != spec.shape:
            raise ShapeError(f"target provider returned shape {tgt.shape}, expected {spec.shape}")
        return tgt


# --------------------------------------------------------------------------
# kernel


@njit(cache=True, inline="always")
def _neighbor(vals, i, k, idx, n, s, periodic, ext):
    j = idx + k
    if j >= 0 and j < n:
        return vals[i + k * s]
    if periodic:
        jj = j % n
        return vals[i + (jj - idx) * s]
    if j < 0:
        e0 = vals[i - idx * s]
        e1 = vals[i - idx * s + s]
        return e0 + (-j) * ext * (e0 - e1)
    e0 = vals[i + (n - 1 - idx) * s]
    e1 = vals[i + (n - 2 - idx) * s]
    return e0 + (j - n + 1) * ext * (e0 - e1)


@njit(cache=True, inline="always")
def _smaller(a, b):
    return a if abs(a) <= abs(b) else b


@njit(cache=True, inline="always")
def _upwind_term(w, pm, pp):
    return w * pp if w > 0.0 else w * pm


_BLOCK = 4096


def _make_rate_kernel(mid: int, eno: bool, parallel: bool):
    """Compile the rate kernel with model and scheme fixed at compile time."""

    @njit(parallel=parallel)
    def kernel(vals, shape, strides, spacing, periodic, ext, coords, cos_t, sin_t, kap_t, prm, alpha, flux, out):
        nd = shape.shape[0]
        size = vals.shape[0]
        n_blocks = (size + _BLOCK - 1) // _BLOCK
        for b in prange(n_blocks):
            idx = np.empty(nd, np.int64)
            z = np.empty(nd)
            cz = np.empty(nd)
            sz = np.empty(nd)
            kz = np.empty(nd)
            drift = np.empty(nd)
            lo = np.empty(nd)
            hi = np.empty(nd)
            pbar = np.empty(nd)
            start = b * _BLOCK
            stop = min(start + _BLOCK, size)
            rem = start + 0
            for d in range(nd - 1, -1, -1):
                idx[d] = rem % shape[d]
                rem = rem // shape[d]
            for d in range(nd):
                z[d] = coords[d, idx[d]]
                cz[d] = cos_t[d, idx[d]]
                sz[d] = sin_t[d, idx[d]]
                kz[d] = kap_t[d, idx[d]]
            for i in range(start, stop):
                v0 = vals[i]
                diss = 0.0
                _terms(mid, prm, z, cz, sz, kz, drift, lo, hi)
                for d in range(nd):
                    n = shape[d]
                    s = strides[d]
                    h = spacing[d]
                    k = idx[d]
                    if k > 0 and k < n - 1:
                        vm1 = vals[i - s]
                        vp1 = vals[i + s]
                    else:
                        vm1 = _neighbor(vals, i, -1, k, n, s, periodic[d], ext)
                        vp1 = _neighbor(vals, i, 1, k, n, s, periodic[d], ext)
                    pm = (v0 - vm1) / h
                    pp = (vp1 - v0) / h
                    if eno:
                        vm2 = _neighbor(vals, i, -2, k, n, s, periodic[d], ext)
                        vp2 = _neighbor(vals, i, 2, k, n, s, periodic[d], ext)
                        c_m = vm2 - 2.0 * vm1 + v0
                        c_0 = vp1 - 2.0 * v0 + vm1
                        c_p = vp2 - 2.0 * vp1 + v0
                        pm += _smaller(c_m, c_0) / (2.0 * h)
                        pp -= _smaller(c_0, c_p) / (2.0 * h)
                    if flux == 2:
                        # exact upwind: each admissible velocity reads the
                        # difference on the side it moves towards
                        w_lo = drift[d] + lo[d]
                        w_hi = drift[d] + hi[d]
                        g = _upwind_term(w_lo, pm, pp)
                        g2 = _upwind_term(w_hi, pm, pp)
                        if g2 < g:
                            g = g2
                        if w_lo < 0.0 < w_hi and g > 0.0:
                            g = 0.0
                        diss += g
                        continue
                    pbar[d] = 0.5 * (pm + pp)
                    if flux == 1:
                        # bound on |dH/dp_d| at this node only
                        a = max(abs(drift[d] + lo[d]), abs(drift[d] + hi[d]))
                    else:
                        a = alpha[d]
                    diss += 0.5 * a * (pp - pm)
                if flux == 2:
                    out[i] = diss
                else:
                    out[i] = _hamiltonian_from_terms(pbar, drift, lo, hi) + diss
                # odometer increment of the multi-index
                d = nd - 1
                while d >= 0:
                    k = idx[d] + 1
                    if k == shape[d]:
                        k = 0
                    idx[d] = k
                    z[d] = coords[d, k]
                    cz[d] = cos_t[d, k]
                    sz[d] = sin_t[d, k]
                    kz[d] = kap_t[d, k]
                    if k != 0:
                        break
                    d -= 1

    return kernel


_KERNELS = {}


def _rate_kernel(mid: int, eno: bool):
    parallel = numba.config.NUMBA_NUM_THREADS > 1
    key = (mid, eno, parallel)
    if key not in _KERNELS:
        _KERNELS[key] = _make_rate_kernel(mid, eno, parallel)
    return _KERNELS[key]


class _Stencil:
    """Precomputed grid/model arrays for the kernel."""

    def __init__(self, model: DynamicsModel, spec: GridSpec, config: SolverConfig):
        if spec.names != model.state_names:
            raise ShapeError(f"grid dims {spec.names} do not match {model.identifier} dims {model.state_names}")
        self.spec = spec
        self.model = model
        self.config = config
        self.shape = np.array(spec.shape, dtype=np.int64)
        self.strides = np.array([int(np.prod(spec.shape[d + 1:])) for d in range(spec.ndim)], dtype=np.int64)
        self.spacing = spec.spacing.astype(np.float64)
        self.periodic = spec.periodic
        self.ext = 1.0 if config.boundary == "linear" else 0.0
        self.flux = FLUX_CODES[config.hamiltonian, config.dissipation]
        coords = np.zeros((spec.ndim, max(spec.shape)))
        for d, c in enumerate(spec.coordinates()):
            coords[d, : len(c)] = c
        self.coords = coords
        self.cos_t = np.cos(coords)
        self.sin_t = np.sin(coords)
        self.kap_t = model.curvature(coords)
        self.alpha = dissipation_bounds(model, spec)
        self._kernel = _rate_kernel(model.model_id, config.scheme == "second_order_eno")
        self._buf = np.empty(spec.size)

    @property
    def dt_max(self) -> float:
        rate = float(np.sum(self.alpha / self.spacing))
        return math.inf if rate == 0 else self.config.cfl_factor / rate

    def rate(self, flat: np.ndarray) -> np.ndarray:
        self._kernel(flat, self.shape, self.strides, self.spacing, self.periodic, self.ext, self.coords,
                     self.cos_t, self.sin_t, self.kap_t, self.model.params, self.alpha, self.flux, self._buf)
        return self._buf

    def advance(self, flat: np.ndarray, dt: float) -> np.ndarray:
        """One unconstrained backward step of length ``dt`` (flat in, flat out)."""
        if self.config.integrator == "euler":
            return flat + dt * self.rate(flat)
        stage = flat + dt * self.rate(flat)
        stage2 = stage + dt * self.rate(stage)
        return 0.5 * (flat + stage2)


def _mode_of(mode):
    if isinstance(mode, (SolveMode, TimeVaryingTarget)):
        return mode
    try:
        return SolveMode(mode)
    except ValueError:
        raise ConfigError(f"unknown solve mode {mode!r}", "mode") from None


# --------------------------------------------------------------------------
# public API


def upwind_gradients(field: ValueField) -> tuple[np.ndarray, np.ndarray]:
    """First-order one-sided differences, shape ``(ndim, *grid shape)`` each."""
    spec = field.spec
    v = field.values
    left = np.empty((spec.ndim,) + spec.shape)
    right = np.empty((spec.ndim,) + spec.shape)
    for d, ax in enumerate(spec.axes):
        if ax.periodic:
            vm = np.roll(v, 1, axis=d)
            vp = np.roll(v, -1, axis=d)
        else:
            first = np.take(v, [0], axis=d)
            second = np.take(v, [1], axis=d)
            last = np.take(v, [-1], axis=d)
            prev = np.take(v, [-2], axis=d)
            padded = np.concatenate([2 * first - second, v, 2 * last - prev], axis=d)
            n = ax.points
            vm = np.take(padded, range(0, n), axis=d)
            vp = np.take(padded, range(2, n + 2), axis=d)
        left[d] = (v - vm) / ax.spacing
        right[d] = (vp - v) / ax.spacing
    return left, right


def cfl_dt_max(model: DynamicsModel, spec: GridSpec, config: SolverConfig = SolverConfig()) -> float:
    """Largest admissible step ``cfl_factor / sum_i(alpha_i / dx_i)``."""
    alpha = dissipation_bounds(model, spec)
    rate = float(np.sum(alpha / spec.spacing))
    return math.inf if rate == 0 else config.cfl_factor / rate


def time_mesh(horizon: float, dt_max: float) -> tuple[int, float]:
    """Number of steps and the largest ``dt <= dt_max`` dividing ``horizon``."""
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}", "horizon")
    if math.isinf(dt_max):
        return 1, horizon
    n = max(1, math.ceil(horizon / dt_max - 1e-9))
    return n, horizon / n


def lf_step(field: ValueField, model: DynamicsModel, dt: float, mode="exact_time",
            config: SolverConfig = SolverConfig(), target: ValueField | None = None) -> ValueField:
    """One backward step of length ``dt``.

    ``mode`` is ``"exact_time"``, ``"tube"`` (clip by the input frame) or
    ``"target"`` (clip by ``target``).
    """
    st = _Stencil(model, field.spec, config)
    dt_max = st.dt_max
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}", "dt")
    if dt > dt_max * (1 + 1e-12):
        raise CFLError(dt, dt_max)
    flat = field.flat
    new = st.advance(flat, dt)
    if mode == "tube" or mode is SolveMode.TUBE:
        new = np.minimum(new, flat)
    elif mode == "target":
        if target is None or target.spec != field.spec:
            raise ShapeError("target mode needs a target on the same grid")
        new = np.minimum(new, target.flat)
    elif not (mode == "exact_time" or mode is SolveMode.EXACT_TIME):
        raise ConfigError(f"unknown lf_step mode {mode!r}", "mode")
    return ValueField(field.spec, new)


def march(model: DynamicsModel, terminal: np.ndarray | ValueField, spec: GridSpec, horizon: float, mode,
          config: SolverConfig = SolverConfig(), n_steps: int | None = None) -> Iterator[tuple[int, float, np.ndarray]]:
    """Yield ``(k, t_k, values)`` from ``t = horizon`` down to ``0``.

    ``k`` counts mesh intervals from 0, so ``t_k = k * dt``; the first item
    has ``k = n_steps``. Arrays are flat and must not be mutated.
    ``n_steps`` forces the mesh (it must satisfy the CFL bound).
    """
    mode = _mode_of(mode)
    st = _Stencil(model, spec, config)
    if n_steps is None:
        n_steps, dt = time_mesh(horizon, st.dt_max)
    else:
        if n_steps < 1:
            raise ConfigError("n_steps must be >= 1", "n_steps")
        dt = horizon / n_steps
        if dt > st.dt_max * (1 + 1e-12):
            raise CFLError(dt, st.dt_max)
    vals = np.array(terminal.values if isinstance(terminal, ValueField) else terminal, dtype=np.float64).ravel()
    if vals.size != spec.size:
        raise ShapeError("terminal field does not match the grid")
    if isinstance(mode, TimeVaryingTarget):
        vals = np.minimum(vals, mode(horizon, spec).ravel())
    log.debug("march %s on %s nodes: %d steps of dt=%.5g (%s)", model.identifier, spec.size, n_steps, dt,
              mode if isinstance(mode, SolveMode) else "target")
    yield n_steps, horizon, vals
    for k in range(n_steps - 1, -1, -1):
        t = k * dt
        new = st.advance(vals, dt)
        if mode is SolveMode.TUBE:
            np.minimum(new, vals, out=new)
        elif isinstance(mode, TimeVaryingTarget):
            np.minimum(new, mode(t, spec).ravel(), out=new)
        vals = new
        yield k, t, vals


def solve_backward(model: DynamicsModel, terminal: ValueField, horizon: float, mode="tube",
                   config: SolverConfig = SolverConfig(), n_steps: int | None = None) -> TimeIndexedField:
    """Full backward solve; frames every ``config.frame_stride`` steps plus ``t = 0``."""
    spec = terminal.spec
    times, frames = [], []
    stride = int(config.frame_stride)
    total = None
    for k, t, vals in march(model, terminal, spec, horizon, mode, config, n_steps):
        if total is None:
            total = k
        if (total - k) % stride == 0 or k == 0:
            times.append(t)
            frames.append(vals.copy())
    return TimeIndexedField(spec, times, frames)


def solve_final(model: DynamicsModel, terminal: ValueField, horizon: float, mode="tube",
                config: SolverConfig = SolverConfig(), n_steps: int | None = None) -> ValueField:
    """Only the ``t = 0`` frame (no intermediate storage)."""
    vals = None
    for _, _, vals in march(model, terminal, terminal.spec, horizon, mode, config, n_steps):
        pass
    return ValueField(terminal.spec, vals)
