"""Semilinear nonautonomous ODEs: trajectories, evolution operators and
variational (derivative) flows.

All integrators are classical fixed-step RK4 on the caller's grid.  Backward
time is supported so that inverse evolution operators are obtained by
integration rather than matrix inversion, and so that states prescribed at a
later time can be pulled back.  Coefficient callbacks are evaluated pointwise
(nodes and half-step midpoints); state arguments may carry a leading batch
axis, with the state dimension always last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (CapabilityError, ConfigurationError, DivergenceError)
from .timebase import MdsShift, TimeGrid

#: abort integration once any state component exceeds this magnitude
DIVERGENCE_GUARD = 1e12


@dataclass(frozen=True)
class HypothesisConstants:
    """Declared constants of the decay and nonlinearity bounds.

    ``K`` and ``alpha`` bound the linear part, ``norm(Phi(t,s)) <=
    K*exp(-alpha*(t-s))``; ``M`` bounds the nonlinearity, ``L`` its Lipschitz
    constant, and ``M_j[j-1]`` the j-th derivative.
    """

    K: float
    alpha: float
    L: float = 0.0
    M: float = 0.0
    M_j: tuple = ()

    def __post_init__(self):
        if self.K < 1.0:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if not (self.alpha > 0.0):
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")
        for name, v in (("L", self.L), ("M", self.M)):
            if v < 0.0:
                raise ConfigurationError(f"{name} must be >= 0, got {v}")
        if any(v < 0.0 for v in self.M_j):
            raise ConfigurationError("derivative bounds must be >= 0")

    @property
    def M1(self) -> float:
        return self.M_j[0] if self.M_j else self.L


@dataclass
class SystemSpec:
    """The pair (A, F): linear part and nonlinearity of ``x' = A(t)x + F(t,x)``.

    ``A(t, omega) -> (n, n)`` and ``F(t, x, omega) -> like x`` (broadcasting
    over a leading batch axis of ``x``).  ``DF`` optionally holds derivative
    callbacks: ``DF[0]`` the state Jacobian ``(t, x, omega) -> (n, n)``,
    ``DF[1]`` the symmetric second derivative ``-> (n, n, n)``.
    """

    dim: int
    A: Callable
    F: Callable
    DF: Optional[Sequence[Callable]] = None
    constants: Optional[HypothesisConstants] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")

    def derivative(self, order: int) -> Callable:
        if self.DF is None or len(self.DF) < order:
            raise CapabilityError(
                f"system provides no derivative of order {order}", order=order
            )
        return self.DF[order - 1]


def validate_fixed_point(sys: SystemSpec, omega, ts, atol: float = 1e-9) -> None:
    """Probe that the origin is an equilibrium of the nonlinearity:
    ``F(t, 0) = 0`` on the sample times."""
    zero = np.zeros(sys.dim)
    for t in ts:
        v = np.asarray(sys.F(t, zero, omega), dtype=float)
        if not np.all(np.abs(v) <= atol):
            raise ConfigurationError(
                f"nonlinearity does not vanish at the origin: F({t}, 0) = {v}"
            )


def _rk4_span(f, ts: np.ndarray, y0: np.ndarray) -> np.ndarray:
    """March ``y' = f(t, y)`` across the (monotone) node times ``ts``."""
    ys = np.empty((len(ts),) + y0.shape)
    ys[0] = y0
    y = y0
    for k in range(len(ts) - 1):
        t = ts[k]
        h = ts[k + 1] - t
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
        k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
        k4 = f(ts[k + 1], y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        amax = np.abs(y).max()
        if not (amax <= DIVERGENCE_GUARD):
            raise DivergenceError(
                f"state magnitude {amax} at t={ts[k + 1]} exceeds guard",
                t_bad=float(ts[k + 1]),
            )
        ys[k + 1] = y
    return ys


def _march_from(f, grid: TimeGrid, i_anchor: int, y0: np.ndarray) -> np.ndarray:
    """Integrate from node ``i_anchor`` forward and backward to fill the grid."""
    nodes = grid.nodes
    out = np.empty((grid.n_nodes,) + y0.shape)
    out[i_anchor:] = _rk4_span(f, nodes[i_anchor:], y0)
    if i_anchor > 0:
        back = _rk4_span(f, nodes[: i_anchor + 1][::-1], y0)
        out[: i_anchor + 1] = back[::-1]
    out[i_anchor] = y0
    return out


@dataclass
class TrajectoryGrid:
    """A solution sampled on every node of ``grid``; ``states[k]`` has the
    state dimension last (a leading batch axis is allowed)."""

    grid: TimeGrid
    states: np.ndarray
    tau: float
    xi: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.states[self.grid.index_of(t)]

    def midpoints(self) -> np.ndarray:
        """Linear interpolation at step midpoints (for stage sampling)."""
        return 0.5 * (self.states[:-1] + self.states[1:])

    def save_csv(self, path) -> None:
        flat = self.states.reshape(self.grid.n_nodes, -1)
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(flat.shape[1])])
        np.savetxt(path, np.column_stack([self.grid.nodes, flat]),
                   delimiter=",", header=header, comments="")


def solve_ivp(sys: SystemSpec, omega: Optional[MdsShift], tau: float,
              xi, grid: TimeGrid) -> TrajectoryGrid:
    """Solve ``x' = A(t)x + F(t, x)`` through ``x(tau) = xi`` on the grid.

    The anchor node carries ``xi`` bitwise.  ``xi`` may be a vector ``(n,)``
    or a batch ``(B, n)``; scalars are promoted for one-dimensional systems.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape[-1] != sys.dim:
        raise ConfigurationError(
            f"state dimension {xi.shape[-1]} != system dimension {sys.dim}"
        )
    i_tau = grid.index_of(tau)
    A, F = sys.A, sys.F

    def f(t, x):
        return x @ np.transpose(A(t, omega)) + F(t, x, omega)

    states = _march_from(f, grid, i_tau, xi)
    return TrajectoryGrid(grid=grid, states=states, tau=tau, xi=xi)


@dataclass
class EvolutionOperator:
    """Dense field of solution operators ``Phi(t, s)`` of the linear part,
    anchored at ``s``: ``matrices[k] = Phi(t_k, s)`` with ``Phi(s, s) = I``
    exactly.  ``inverses[k] = Phi(s, t_k)`` is obtained by integrating the
    inverse equation, never by matrix inversion."""

    grid: TimeGrid
    anchor: float
    matrices: np.ndarray
    _sys: SystemSpec = field(repr=False)
    _omega: Optional[MdsShift] = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrices.shape[-1]

    def at(self, t: float) -> np.ndarray:
        """``Phi(t, anchor)``."""
        return self.matrices[self.grid.index_of(t)]

    @cached_property
    def inverses(self) -> np.ndarray:
        """``Phi(anchor, t_k)`` for every node, solving ``Y' = -Y A(t)``."""
        A, omega = self._sys.A, self._omega

        def f(t, Y):
            return -(Y @ A(t, omega))

        i_anchor = self.grid.index_of(self.anchor)
        return _march_from(f, self.grid, i_anchor, np.eye(self.dim))

    def inverse_at(self, t: float) -> np.ndarray:
        return self.inverses[self.grid.index_of(t)]

    def pair(self, t: float, r: float) -> np.ndarray:
        """``Phi(t, r) = Phi(t, s) Phi(s, r)`` for arbitrary grid nodes."""
        return self.at(t) @ self.inverse_at(r)

    def cocycle_residual(self, t: float, r: float, s2: float) -> float:
        """``norm(Phi(t, s2) - Phi(t, r) Phi(r, s2))`` in the spectral norm."""
        lhs = self.pair(t, s2)
        rhs = self.pair(t, r) @ self.pair(r, s2)
        return float(np.linalg.norm(lhs - rhs, ord=2))

    def save_csv(self, path) -> None:
        n = self.dim
        flat = self.matrices.reshape(self.grid.n_nodes, n * n)
        header = ",".join(
            ["t"] + [f"phi_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        )
        np.savetxt(path, np.column_stack([self.grid.nodes, flat]),
                   delimiter=",", header=header, comments="")


def evolution_operator(sys: SystemSpec, omega: Optional[MdsShift], s: float,
                       grid: TimeGrid) -> EvolutionOperator:
    """Solution operators of ``x' = A(t)x`` from identity at ``s``."""
    A = sys.A
    i_s = grid.index_of(s)

    def f(t, M):
        return A(t, omega) @ M

    matrices = _march_from(f, grid, i_s, np.eye(sys.dim))
    return EvolutionOperator(grid=grid, anchor=s, matrices=matrices,
                             _sys=sys, _omega=omega)


def variational_flow(sys: SystemSpec, omega: Optional[MdsShift], s: float,
                     eta, grid: TimeGrid, order: int = 1) -> np.ndarray:
    """Derivative flow of the general solution with respect to its initial
    state, along the trajectory through ``(s, eta)``.

    Returns the order-``order`` maps on every node: shape ``(N, n, n)`` for
    ``order = 1`` (identity at the anchor, exactly) and ``(N, n, n, n)`` for
    ``order = 2`` (zero at the anchor).  The base state and the derivative
    stack are integrated as one augmented system so all stages see consistent
    state values.
    """
    if order not in (1, 2):
        raise CapabilityError(
            f"derivative flow of order {order} is not implemented "
            "(orders 1 and 2 are)", order=order,
        )
    DF1 = sys.derivative(1)
    DF2 = sys.derivative(2) if order == 2 else None
    n = sys.dim
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if eta.shape != (n,):
        raise ConfigurationError(f"eta must be a single state of dimension {n}")
    A, F = sys.A, sys.F

    n2 = n * n
    y0 = np.concatenate([eta, np.eye(n).ravel(),
                         np.zeros(n2 * n) if order == 2 else np.zeros(0)])

    def f(t, y):
        x = y[:n]
        M = y[n:n + n2].reshape(n, n)
        a = A(t, omega)
        j = a + DF1(t, x, omega)
        dx = a @ x + F(t, x, omega)
        dM = j @ M
        if order == 1:
            return np.concatenate([dx, dM.ravel()])
        Z = y[n + n2:].reshape(n, n, n)
        d2 = DF2(t, x, omega)
        dZ = np.einsum("ij,jab->iab", j, Z) \
            + np.einsum("ijk,ja,kb->iab", d2, M, M)
        return np.concatenate([dx, dM.ravel(), dZ.ravel()])

    i_s = grid.index_of(s)
    ys = _march_from(f, grid, i_s, y0)
    if order == 1:
        return ys[:, n:n + n2].reshape(grid.n_nodes, n, n)
    return ys[:, n + n2:].reshape(grid.n_nodes, n, n, n)


def variational_decay_slack(constants: HypothesisConstants,
                            flows: np.ndarray, grid: TimeGrid,
                            s: float, norms=None) -> float:
    """Worst ratio of ``norm(D phi(t, s))`` against the certified envelope
    ``K * exp((K*M1 - alpha)(t - s))`` over ``t >= s``.

    ``norms`` may supply a weighted operator norm (callable ``(T, t, s) ->
    float``); the spectral norm is used otherwise.  A return value ``<= 1 +
    tol`` certifies the first-derivative decay bound.
    """
    i_s = grid.index_of(s)
    K, rate = constants.K, constants.K * constants.M1 - constants.alpha
    worst = 0.0
    for k in range(i_s, grid.n_nodes):
        t = grid.nodes[k]
        if norms is None:
            val = float(np.linalg.norm(flows[k], ord=2))
        else:
            val = float(norms(flows[k], t, s))
        envelope = K * np.exp(rate * (t - s))
        worst = max(worst, val / envelope)
    return worst


def _cumtrapz(values: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid antiderivative along axis 0, zero at node 0."""
    inner = 0.5 * dt * (values[1:] + values[:-1])
    out = np.zeros_like(values)
    np.cumsum(inner, axis=0, out=out[1:])
    return out


def voc_residual(sys: SystemSpec, omega: Optional[MdsShift], s: float,
                 xi, grid: TimeGrid) -> float:
    """Defect of the variation-of-constants identity, an integrator self-check.

    Returns ``sup_t norm(phi(t,s,xi) - Phi(t,s)xi - int_s^t Phi(t,r)
    F(r, phi(r)) dr)`` with trapezoid quadrature on the grid.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    traj = solve_ivp(sys, omega, s, xi, grid)
    ev = evolution_operator(sys, omega, s, grid)
    i_s = grid.index_of(s)

    fvals = np.empty((grid.n_nodes, sys.dim))
    for k, t in enumerate(grid.nodes):
        fvals[k] = sys.F(t, traj.states[k], omega)
    pulled = np.einsum("kij,kj->ki", ev.inverses, fvals)
    anti = _cumtrapz(pulled, grid.dt)
    anti -= anti[i_s]
    convolved = np.einsum("kij,kj->ki", ev.matrices, anti)
    homogeneous = np.einsum("kij,j->ki", ev.matrices, xi)
    defect = traj.states - homogeneous - convolved
    return float(np.linalg.norm(defect, axis=1).max())
