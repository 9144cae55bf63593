"""Rectilinear node-centred grids and scalar fields sampled on them.

Values live on nodes. A non-periodic axis with ``points`` nodes spans
``[lower, upper]`` inclusive; a periodic axis places ``points`` nodes on
``[lower, upper)`` and wraps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, OutOfDomainError, ShapeError

# Relative slack for queries that land on a boundary up to round-off.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class Axis:
    name: str
    lower: float
    upper: float
    points: int
    periodic: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError(f"lower ({self.lower}) must be < upper ({self.upper})", self.name)
        if self.points < 3:
            raise ConfigError(f"need at least 3 points, got {self.points}", self.name)
        if self.periodic and not math.isclose(self.upper - self.lower, 2 * math.pi, rel_tol=1e-9):
            raise ConfigError("periodic axes must span an interval of width 2*pi", self.name)

    @property
    def spacing(self) -> float:
        if self.periodic:
            return (self.upper - self.lower) / self.points
        return (self.upper - self.lower) / (self.points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.lower + self.spacing * np.arange(self.points)

    def to_dict(self) -> dict:
        return {"name": self.name, "min": self.lower, "max": self.upper,
                "points": self.points, "periodic": self.periodic}

    @classmethod
    def from_dict(cls, d: dict) -> "Axis":
        return cls(str(d["name"]), float(d["min"]), float(d["max"]), int(d["points"]), bool(d.get("periodic", False)))


@dataclass(frozen=True)
class GridSpec:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names {names}")

    @classmethod
    def build(cls, *axes: tuple) -> "GridSpec":
        """``GridSpec.build(("x", -1, 1, 21), ("psi", -pi, pi, 16, True))``."""
        return cls(tuple(Axis(*a) for a in axes))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.points for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a.spacing for a in self.axes])

    @property
    def lower(self) -> np.ndarray:
        return np.array([a.lower for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([a.upper for a in self.axes])

    @property
    def periodic(self) -> np.ndarray:
        return np.array([a.periodic for a in self.axes], dtype=bool)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ShapeError(f"grid has no dimension {name!r} (has {self.names})") from None

    def coordinates(self) -> list[np.ndarray]:
        return [a.nodes for a in self.axes]

    def mesh(self, name: str) -> np.ndarray:
        """Coordinate of dimension ``name`` broadcastable against the grid shape."""
        d = self.index(name)
        shape = [1] * self.ndim
        shape[d] = self.shape[d]
        return self.axes[d].nodes.reshape(shape)

    def states(self) -> np.ndarray:
        """All node states, shape ``(size, ndim)``, row-major order."""
        grids = np.meshgrid(*self.coordinates(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def sub(self, names: Sequence[str]) -> "GridSpec":
        return GridSpec(tuple(self.axes[self.index(n)] for n in names))

    def to_dict(self) -> list[dict]:
        return [a.to_dict() for a in self.axes]

    @classmethod
    def from_dict(cls, dims: Iterable[dict]) -> "GridSpec":
        return cls(tuple(Axis.from_dict(d) for d in dims))


class ValueField:
    """Scalar field on a :class:`GridSpec`; values are read-only float64."""

    __slots__ = ("spec", "_values")

    def __init__(self, spec: GridSpec, values):
        arr = np.array(values, dtype=np.float64)
        if arr.size != spec.size:
            raise ShapeError(f"values length {arr.size} does not match grid size {spec.size}")
        arr = arr.reshape(spec.shape)
        if not np.all(np.isfinite(arr)):
            raise ConfigError("field values must be finite")
        arr.flags.writeable = False
        self.spec = spec
        self._values = arr

    @classmethod
    def from_function(cls, spec: GridSpec, fn: Callable[..., np.ndarray]) -> "ValueField":
        """Sample ``fn(*coords)`` where each coordinate is a broadcastable mesh."""
        meshes = [spec.mesh(n) for n in spec.names]
        return cls(spec, np.broadcast_to(fn(*meshes), spec.shape))

    @classmethod
    def constant(cls, spec: GridSpec, c: float) -> "ValueField":
        return cls(spec, np.full(spec.shape, float(c)))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def flat(self) -> np.ndarray:
        return self._values.ravel()

    def __repr__(self):
        return f"ValueField(dims={self.spec.names}, shape={self.spec.shape})"


class TimeIndexedField:
    """Frames of a field at strictly monotone times."""

    def __init__(self, spec: GridSpec, times, frames: Sequence[np.ndarray]):
        times = np.asarray(times, dtype=np.float64)
        if len(times) != len(frames):
            raise ShapeError(f"{len(frames)} frames for {len(times)} times")
        if len(times) > 1:
            d = np.diff(times)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ConfigError("times must be strictly monotone")
        for f in frames:
            if np.size(f) != spec.size:
                raise ShapeError("frame length does not match grid")
        self.spec = spec
        self.times = times
        self.frames = [np.asarray(f, dtype=np.float64).reshape(spec.shape) for f in frames]

    def __len__(self):
        return len(self.times)

    def field(self, k: int) -> ValueField:
        return ValueField(self.spec, self.frames[k])

    def at(self, t: float) -> ValueField:
        """Frame stored at time ``t`` (exact mesh time, up to round-off)."""
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ConfigError(f"no frame stored at t={t}")
        return self.field(k)


def _check_same(a: ValueField, b: ValueField):
    if a.spec != b.spec:
        raise ShapeError("fields live on different grids")


def pointwise_min(a: ValueField, b: ValueField) -> ValueField:
    _check_same(a, b)
    return ValueField(a.spec, np.minimum(a.values, b.values))


def pointwise_max(a: ValueField, b: ValueField) -> ValueField:
    _check_same(a, b)
    return ValueField(a.spec, np.maximum(a.values, b.values))


def cell_coordinates(spec: GridSpec, multi_index: Sequence[int]) -> np.ndarray:
    if len(multi_index) != spec.ndim:
        raise ShapeError(f"expected {spec.ndim} indices, got {len(multi_index)}")
    out = np.empty(spec.ndim)
    for d, (ax, i) in enumerate(zip(spec.axes, multi_index)):
        if not 0 <= int(i) < ax.points:
            raise IndexError(f"index {i} out of range [0, {ax.points - 1}] in dimension {d} ({ax.name})")
        out[d] = ax.lower + int(i) * ax.spacing
    return out


def nearest_node(spec: GridSpec, state: Sequence[float]) -> tuple[int, ...]:
    idx = []
    for ax, x in zip(spec.axes, state):
        u = (x - ax.lower) / ax.spacing
        if ax.periodic:
            idx.append(int(np.rint(u)) % ax.points)
        else:
            idx.append(int(np.clip(np.rint(u), 0, ax.points - 1)))
    return tuple(idx)


def _locate(spec: GridSpec, pts: np.ndarray):
    """Per-dimension lower/upper node indices and weights for multilinear interpolation."""
    lo_idx, hi_idx, weights = [], [], []
    for d, ax in enumerate(spec.axes):
        x = pts[:, d]
        u = (x - ax.lower) / ax.spacing
        if ax.periodic:
            u = np.mod(u, ax.points)
            i0 = np.floor(u).astype(np.int64)
            w = u - i0
            i0 %= ax.points
            i1 = (i0 + 1) % ax.points
        else:
            slack = _EDGE_TOL * (ax.upper - ax.lower)
            bad = (x < ax.lower - slack) | (x > ax.upper + slack) | ~np.isfinite(x)
            if np.any(bad):
                v = float(x[np.argmax(bad)])
                raise OutOfDomainError(d, ax.name, v, ax.lower, ax.upper)
            u = np.clip(u, 0.0, ax.points - 1)
            i0 = np.minimum(np.floor(u).astype(np.int64), ax.points - 2)
            w = u - i0
            i1 = i0 + 1
        lo_idx.append(i0)
        hi_idx.append(i1)
        weights.append(w)
    return lo_idx, hi_idx, weights


def interpolate(field: ValueField, state) -> float | np.ndarray:
    """Multilinear interpolation.

    ``state`` is one state ``(ndim,)`` (returns a float) or a batch
    ``(n, ndim)`` (returns an array of length ``n``).
    """
    spec = field.spec
    pts = np.asarray(state, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != spec.ndim:
        raise ShapeError(f"state has {pts.shape[1]} components, grid has {spec.ndim}")
    lo_idx, hi_idx, weights = _locate(spec, pts)
    vals = field.values
    out = np.zeros(len(pts))
    for corner in product((0, 1), repeat=spec.ndim):
        idx = tuple(hi_idx[d] if c else lo_idx[d] for d, c in enumerate(corner))
        w = np.ones(len(pts))
        for d, c in enumerate(corner):
            w = w * (weights[d] if c else 1.0 - weights[d])
        out += w * vals[idx]
    return float(out[0]) if single else out


def volume_below(field: ValueField, threshold: float = 0.0) -> float:
    """Node count below ``threshold`` times the cell volume."""
    return int(np.count_nonzero(field.values < threshold)) * field.spec.cell_volume
