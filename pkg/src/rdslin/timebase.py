"""Time grids, seeded Wiener paths and the shift group of the driving noise.

Paths are pre-sampled on a fixed two-sided grid so that the shift group acts
exactly on increments and every downstream computation is a pure function of
``(seed, config)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AlignmentError, ConfigurationError, OutOfRangeError

#: tolerance for deciding that a time is a grid node / a multiple of dt
GRID_ATOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 + k*dt`` for ``k = 0..n_steps``.

    ``(t_end - t0) / dt`` must be an integer within ``GRID_ATOL``.
    """

    t0: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not (self.dt > 0.0):
            raise ConfigurationError(f"grid step must be positive, got dt={self.dt}")
        if not (self.t0 < self.t_end):
            raise ConfigurationError(
                f"grid must be nonempty: t0={self.t0} >= t_end={self.t_end}"
            )
        steps = (self.t_end - self.t0) / self.dt
        if abs(steps - round(steps)) > GRID_ATOL * max(1.0, abs(steps)):
            raise ConfigurationError(
                f"(t_end - t0)/dt = {steps} is not an integer within tolerance"
            )

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t0) / self.dt))

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_nodes)

    def index_of(self, t: float) -> int:
        """Exact node index of ``t``; raises if ``t`` is off-grid (tolerance
        ``GRID_ATOL`` relative to the index magnitude)."""
        k = (t - self.t0) / self.dt
        ki = int(round(k))
        if abs(k - ki) > GRID_ATOL * max(1.0, abs(k)) \
                or not (0 <= ki <= self.n_steps):
            raise AlignmentError(f"time {t} is not a node of grid {self}")
        return ki

    def contains(self, t: float) -> bool:
        return self.t0 - GRID_ATOL <= t <= self.t_end + GRID_ATOL

    def subgrid(self, t0: float, t_end: float) -> "TimeGrid":
        self.index_of(t0)
        self.index_of(t_end)
        return TimeGrid(t0, t_end, self.dt)


def _steps_of(amount: float, dt: float) -> int:
    """Number of grid steps in ``amount``; raises if off-grid."""
    k = amount / dt
    ki = int(round(k))
    if abs(k - ki) > GRID_ATOL * max(1.0, abs(k)):
        raise AlignmentError(f"{amount} is not a multiple of dt={dt}")
    return ki


@dataclass(frozen=True)
class NoisePath:
    """A sampled realization of ``dims`` independent Wiener components.

    ``increments[i, j]`` is ``W_i(t_{j+1}) - W_i(t_j) ~ N(0, dt)`` on the
    sampling ``grid``.  Cumulative values are anchored at ``W(grid.t0) = 0``;
    all shift arithmetic uses differences, so the anchor is unobservable.
    """

    seed: int
    dims: int
    grid: TimeGrid
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.dims, self.grid.n_steps)
        if self.increments.shape != expected:
            raise ConfigurationError(
                f"increments shape {self.increments.shape} != {expected}"
            )

    @cached_property
    def cumulative(self) -> np.ndarray:
        """W values on nodes, shape (dims, n_nodes), W(t0) = 0."""
        out = np.zeros((self.dims, self.grid.n_nodes))
        if self.dims:
            np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def value(self, t: float, component: int = 0) -> float:
        """``W_component(t) - W_component(grid.t0)``, linearly interpolated
        between nodes (exact on nodes)."""
        if self.dims == 0:
            return 0.0
        if not self.grid.contains(t):
            raise OutOfRangeError(f"time {t} outside sampled window {self.grid}")
        pos = (t - self.grid.t0) / self.grid.dt
        j = min(int(pos), self.grid.n_steps - 1)
        frac = pos - j
        w = self.cumulative[component]
        return float(w[j] + frac * (w[j + 1] - w[j]))

    def as_shift(self) -> "MdsShift":
        return MdsShift(self, 0.0)

    def save_csv(self, path) -> None:
        """Columns: t, W^1..W^k (values anchored at the window start)."""
        cols = [self.grid.nodes] + [self.cumulative[i] for i in range(self.dims)]
        header = ",".join(["t"] + [f"W{i + 1}" for i in range(self.dims)])
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
                   comments="")


def load_csv(path, seed: int = -1) -> NoisePath:
    """Rebuild a path from ``save_csv`` output.  The seed is not recoverable
    from the file; pass the original one if reproducibility metadata matters."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ts = data[:, 0]
    if len(ts) < 2:
        raise ConfigurationError("path file must contain at least two nodes")
    dt = ts[1] - ts[0]
    grid = TimeGrid(float(ts[0]), float(ts[-1]), float(dt))
    values = data[:, 1:].T
    increments = np.diff(values, axis=1)
    return NoisePath(seed=seed, dims=values.shape[0], grid=grid,
                     increments=increments)


@dataclass(frozen=True)
class MdsShift:
    """The driving path seen from time ``offset``: value(u) = W(u+s) - W(s).

    Offsets must be multiples of the sampling step, which makes the group
    law ``shift(shift(p, s), t) == shift(p, s + t)`` exact on increments.
    """

    base: NoisePath
    offset: float

    def __post_init__(self):
        _steps_of(self.offset, self.base.grid.dt)

    @property
    def dims(self) -> int:
        return self.base.dims

    @property
    def window(self) -> tuple[float, float]:
        g = self.base.grid
        return (g.t0 - self.offset, g.t_end - self.offset)

    def value(self, u: float, component: int = 0) -> float:
        base_t = u + self.offset
        if not self.base.grid.contains(base_t):
            raise OutOfRangeError(
                f"shifted time {u} (base {base_t}) outside window {self.window}"
            )
        w = self.base.value(base_t, component)
        w0 = self.base.value(self.offset, component)
        return w - w0

    def increments_window(self, u0: float, u1: float,
                          component: int = 0) -> np.ndarray:
        """Increment slice covering ``[u0, u1]`` in shifted time; a contiguous
        re-indexing of the base increments."""
        g = self.base.grid
        i0 = g.index_of(u0 + self.offset)
        i1 = g.index_of(u1 + self.offset)
        return self.base.increments[component, i0:i1]


def generate_wiener(seed: int, dims: int, grid: TimeGrid) -> NoisePath:
    """Sample ``dims`` independent Wiener components with N(0, dt) increments.

    Bit-exact reproducible from ``seed``; ``dims = 0`` yields the zero path.
    """
    if dims < 0:
        raise ConfigurationError(f"dims must be >= 0, got {dims}")
    rng = np.random.default_rng(seed)
    increments = rng.normal(0.0, math.sqrt(grid.dt), size=(dims, grid.n_steps))
    return NoisePath(seed=seed, dims=dims, grid=grid, increments=increments)


def shift(path, s: float) -> MdsShift:
    """Shift a path (or a shifted path) by ``s``; offsets compose additively."""
    if isinstance(path, MdsShift):
        return MdsShift(path.base, path.offset + s)
    return MdsShift(path, s)


def _as_shift(omega) -> MdsShift:
    if isinstance(omega, NoisePath):
        return omega.as_shift()
    if isinstance(omega, MdsShift):
        return omega
    raise ConfigurationError(f"expected NoisePath or MdsShift, got {type(omega)}")


def stationary_ou(omega, t: float, component: int = 0,
                  t_hist: float = 20.0) -> float:
    """Exponentially weighted history integral of the noise at time ``t``.

    Left-point sum of ``exp(s_j - t) * dW_j`` over ``[t - t_hist, t)``; the
    neglected tail carries weight below ``exp(-t_hist)``.
    """
    sh = _as_shift(omega)
    if not (t_hist > 0):
        raise ConfigurationError(f"t_hist must be positive, got {t_hist}")
    if sh.dims == 0:
        return 0.0
    g = sh.base.grid
    tb = t + sh.offset
    lo = tb - t_hist
    if not (g.contains(lo) and g.contains(tb)):
        raise OutOfRangeError(
            f"history window [{t - t_hist}, {t}] not covered by the path"
        )
    i0 = g.index_of(lo)
    i1 = g.index_of(tb)
    s = g.nodes[i0:i1]
    dw = sh.base.increments[component, i0:i1]
    return float(np.exp(s - tb) @ dw)


class StationaryOU:
    """Precomputed stationary history integral on every node of the path grid.

    Prefix sums make the per-node value identical (to rounding) to the
    left-point sum computed by :func:`stationary_ou`; interrogation at
    off-node times interpolates linearly.  Instances are immutable and safe
    to share.
    """

    def __init__(self, path: NoisePath, component: int = 0,
                 t_hist: float = 20.0):
        if path.dims == 0:
            raise ConfigurationError("stationary process needs >= 1 component")
        self.path = path
        self.component = component
        self.t_hist = t_hist
        g = path.grid
        hist_steps = _steps_of(t_hist, g.dt)
        if hist_steps >= g.n_steps:
            raise ConfigurationError(
                "path window shorter than the history horizon"
            )
        nodes = g.nodes
        # prefix[j] = sum_{i<j} exp(s_i) dW_i; u(t_n) = exp(-t_n) *
        # (prefix[n] - prefix[n - hist_steps])
        weighted = np.exp(nodes[:-1]) * path.increments[component]
        prefix = np.concatenate(([0.0], np.cumsum(weighted)))
        self._first = hist_steps
        vals = np.full(g.n_nodes, np.nan)
        idx = np.arange(hist_steps, g.n_nodes)
        vals[idx] = np.exp(-nodes[idx]) * (prefix[idx] - prefix[idx - hist_steps])
        self.node_values = vals

    @property
    def valid_from(self) -> float:
        """Earliest base time with a full history window behind it."""
        return float(self.path.grid.nodes[self._first])

    def value(self, base_t: float) -> float:
        """Value at base-path time ``base_t`` (linear between nodes)."""
        g = self.path.grid
        if not (self.valid_from - GRID_ATOL <= base_t <= g.t_end + GRID_ATOL):
            raise OutOfRangeError(
                f"time {base_t} outside the valid window "
                f"[{self.valid_from}, {g.t_end}]"
            )
        pos = (base_t - g.t0) / g.dt
        j = min(int(pos), g.n_steps - 1)
        frac = pos - j
        v = self.node_values
        if frac == 0.0:
            return float(v[j])
        return float(v[j] + frac * (v[j + 1] - v[j]))

    def at(self, omega, t: float) -> float:
        """Value at time ``t`` as seen from the (shifted) driver ``omega``."""
        sh = _as_shift(omega)
        if sh.base is not self.path:
            raise ConfigurationError("shift does not wrap the precomputed path")
        return self.value(t + sh.offset)
