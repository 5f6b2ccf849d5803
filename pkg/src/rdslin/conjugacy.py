"""Construction and certification of the conjugacy between a semilinear
equation and its linear part on a truncated half-line grid.

The conjugacy is built exactly as the contraction argument prescribes: the
correction term is the fixed point of ``phi -> Duhamel(phi + homogeneous)``
on the space of bounded grid paths, reached by Picard iteration from the
zero path (the contraction factor ``K*L/alpha`` is itself a certified
quantity).  The forward map ``h`` adds the correction to the identity; the
inverse ``g`` subtracts the Duhamel integral along backward-evaluated
trajectories.  All bounds from the underlying theory are exposed as numbers
in :class:`LipschitzCertificate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import (ConfigurationError, HypothesisViolation,
                     NonContractionError)
from .flow import (EvolutionOperator, HypothesisConstants, SystemSpec,
                   evolution_operator, solve_ivp, validate_fixed_point,
                   variational_flow)
from .spectrum import AdaptedNormFamily
from .timebase import MdsShift, TimeGrid


@dataclass
class BoundedPathGrid:
    """A (possibly batched) bounded path sampled on every grid node.

    ``values`` has shape ``(N, n)`` or ``(N, B, n)`` with the state dimension
    last.  ``picard_gaps`` carries the iteration history when the path is a
    fixed point.
    """

    grid: TimeGrid
    values: np.ndarray
    norm_tag: str = "ambient"
    picard_gaps: Optional[list] = None

    def at(self, t: float) -> np.ndarray:
        return self.values[self.grid.index_of(t)]

    @property
    def iterations(self) -> Optional[int]:
        return None if self.picard_gaps is None else len(self.picard_gaps)


def default_horizon(alpha: float) -> float:
    """Grid length after which the neglected tail of the bounded-path space
    is below ``exp(-12)`` of the certified decay."""
    return 12.0 / alpha


class ConjugacyField:
    """All the machinery of one conjugacy problem: system, driver, grid,
    norm family and decay constants.

    Construction verifies the contraction hypothesis ``K*L < alpha`` and that
    the origin is an equilibrium; it fails loudly otherwise.  Instances are
    immutable after construction and evaluations at distinct arguments are
    independent.
    """

    def __init__(self, sys: SystemSpec, omega: Optional[MdsShift],
                 grid: TimeGrid, norms: Optional[AdaptedNormFamily] = None,
                 constants: Optional[HypothesisConstants] = None,
                 picard_tol: float = 1e-8, picard_max_iter: int = 200):
        self.sys = sys
        self.omega = omega
        self.grid = grid
        self.constants = constants or sys.constants
        if self.constants is None:
            raise ConfigurationError("no decay/nonlinearity constants supplied")
        c = self.constants
        if not (c.K * c.L < c.alpha):
            raise HypothesisViolation(
                f"contraction hypothesis fails: K*L = {c.K * c.L} >= "
                f"alpha = {c.alpha}", inequality="K*L < alpha",
            )
        self.picard_tol = picard_tol
        self.picard_max_iter = picard_max_iter
        self.norms = norms if norms is not None else \
            AdaptedNormFamily.ambient(sys.dim)
        probe_ts = np.linspace(grid.t0, grid.t_end, 5)
        validate_fixed_point(sys, omega, probe_ts)

        self.tau0 = grid.t0
        self.ev: EvolutionOperator = evolution_operator(sys, omega, self.tau0,
                                                        grid)
        # cache coefficient samples: stage values are reused by every
        # Duhamel solve on this grid
        nodes = grid.nodes
        mids = nodes[:-1] + 0.5 * grid.dt
        self._A_nodes = np.stack([sys.A(t, omega) for t in nodes])
        self._A_mids = np.stack([sys.A(t, omega) for t in mids])
        if self.norms.is_ambient:
            self._factors = None
        else:
            self._factors = np.stack(
                [self.norms.at(t).factor for t in nodes])

    # -- norms ---------------------------------------------------------

    def node_norms(self, values: np.ndarray) -> np.ndarray:
        """Per-node norm of a stacked path (fiber-weighted when adapted)."""
        if self._factors is None:
            return np.linalg.norm(values, axis=-1)
        fac = self._factors[: values.shape[0]]
        if values.ndim == 2:
            weighted = np.einsum("kij,kj->ki", fac, values)
        else:
            weighted = np.einsum("kij,kbj->kbi", fac, values)
        return np.linalg.norm(weighted, axis=-1)

    def bc_norm(self, values: np.ndarray) -> np.ndarray:
        """Sup over nodes of the per-node norms (batched)."""
        out = self.node_norms(values).max(axis=0)
        if not np.all(np.isfinite(out)):
            raise ConfigurationError("bounded-path norm is not finite")
        return out

    def state_norm(self, t: float, x: np.ndarray) -> np.ndarray:
        if self._factors is None:
            return np.linalg.norm(x, axis=-1)
        return np.linalg.norm(x @ self._factors[self.grid.index_of(t)].T,
                              axis=-1)

    @property
    def norm_tag(self) -> str:
        return "ambient" if self._factors is None else "adapted"

    # -- the two integral operators -------------------------------------

    def homogeneous_path(self, tau: float, xi) -> BoundedPathGrid:
        """Linear-flow path ``t -> Phi(t, tau) xi`` over the whole grid."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        seed = xi @ self.ev.inverse_at(tau).T
        values = np.einsum("kij,...j->k...i", self.ev.matrices, seed)
        return BoundedPathGrid(self.grid, values, self.norm_tag)

    def _duhamel_values(self, forcing_values: np.ndarray,
                        upto: Optional[int] = None) -> np.ndarray:
        """Integrate ``x' = A(t)x + F(t, phi(t))`` from zero at the left
        endpoint, with ``phi`` given by node samples (midpoints averaged)."""
        F, omega = self.sys.F, self.omega
        nodes = self.grid.nodes
        h = self.grid.dt
        last = self.grid.n_steps if upto is None else upto
        out = np.zeros((last + 1,) + forcing_values.shape[1:])
        x = out[0]
        for k in range(last):
            t = nodes[k]
            tm = t + 0.5 * h
            a0, am, a1 = self._A_nodes[k], self._A_mids[k], \
                self._A_nodes[k + 1]
            p0 = forcing_values[k]
            p1 = forcing_values[k + 1]
            pm = 0.5 * (p0 + p1)
            f0 = F(t, p0, omega)
            fm = F(tm, pm, omega)
            f1 = F(nodes[k + 1], p1, omega)
            k1 = x @ a0.T + f0
            k2 = (x + 0.5 * h * k1) @ am.T + fm
            k3 = (x + 0.5 * h * k2) @ am.T + fm
            k4 = (x + h * k3) @ a1.T + f1
            x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            out[k + 1] = x
        return out

    def duhamel_path(self, phi: BoundedPathGrid) -> BoundedPathGrid:
        """The integral operator ``phi -> int Phi(., s) F(s, phi(s)) ds``,
        realized as one inhomogeneous initial value problem."""
        if phi.grid is not self.grid and phi.grid != self.grid:
            raise ConfigurationError("path lives on a different grid")
        values = self._duhamel_values(phi.values)
        return BoundedPathGrid(self.grid, values, self.norm_tag)

    # -- fixed point and conjugacy maps ----------------------------------

    def correction_path(self, tau: float, xi, upto: Optional[int] = None,
                        return_homogeneous: bool = False):
        """Fixed point of ``phi -> Duhamel(phi + Phi(., tau) xi)`` by Picard
        iteration from the zero path.

        The iteration is Volterra: values on ``[tau0, t]`` never depend on
        later nodes, so an ``upto`` cutoff yields the restricted fixed point.
        """
        hom = self.homogeneous_path(tau, xi)
        cut = self.grid.n_steps if upto is None else upto
        hom_values = hom.values[: cut + 1]
        phi = np.zeros_like(hom_values)
        gaps = []
        ratio = self.constants.K * self.constants.L / self.constants.alpha
        for _ in range(self.picard_max_iter):
            nxt = self._duhamel_values(phi + hom_values, upto=cut)
            gap = float(np.max(self.bc_norm(nxt - phi)))
            gaps.append(gap)
            phi = nxt
            if gap < self.picard_tol:
                path = BoundedPathGrid(self.grid, phi, self.norm_tag,
                                       picard_gaps=gaps)
                return (path, hom) if return_homogeneous else path
        raise NonContractionError(
            f"no contraction after {self.picard_max_iter} iterations "
            f"(expected ratio {ratio}); last gap {gaps[-1]:.3g}",
            inequality="K*L < alpha",
        )

    def h(self, t: float, xi) -> np.ndarray:
        """Forward conjugacy: maps a state of the linear flow at time ``t``
        onto the nonlinear orbit (identity plus correction at the anchor)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        i_t = self.grid.index_of(t)
        corr = self.correction_path(t, xi, upto=i_t)
        return xi + corr.values[i_t]

    def g(self, t: float, eta) -> np.ndarray:
        """Inverse conjugacy: subtracts the Duhamel integral along the
        trajectory that reaches ``eta`` at time ``t`` (backward evaluation)."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        i_t = self.grid.index_of(t)
        if i_t == 0:
            return eta.copy()
        sub = self.grid.subgrid(self.tau0, t)
        traj = solve_ivp(self.sys, self.omega, t, eta, sub)
        integral = self._duhamel_values(traj.states, upto=i_t)
        return eta - integral[i_t]

    def conjugation_residual(self, s: float, t: float, xi) -> float:
        """Defect of the intertwining identity
        ``h(t, Phi(t, s) x) = phi(t, s, h(s, x))`` in the ``t``-fiber norm."""
        if not (s <= t):
            raise ConfigurationError("need s <= t")
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        lhs = self.h(t, xi @ self.ev.pair(t, s).T)
        hs = self.h(s, xi)
        rhs = solve_ivp(self.sys, self.omega, s, hs, self.grid).at(t)
        return float(np.max(self.state_norm(t, lhs - rhs)))

    def g_jacobian(self, t: float, eta) -> np.ndarray:
        """State derivative of the inverse map by the closed formula
        ``Phi(t, tau0) D phi(tau0, t, eta)`` (derivative flow evaluated
        backward from ``t``)."""
        c = self.constants
        if not (c.K * c.M1 < c.alpha):
            raise HypothesisViolation(
                f"smoothness hypothesis fails: K*M1 = {c.K * c.M1} >= "
                f"alpha = {c.alpha}", inequality="K*M1 < alpha",
            )
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        sub = self.grid.subgrid(self.tau0, t) if t > self.tau0 else None
        if sub is None:
            return np.eye(self.sys.dim)
        flows = variational_flow(self.sys, self.omega, t, eta, sub, order=1)
        return self.ev.at(t) @ flows[0]


# -- certification ------------------------------------------------------


@dataclass
class ProbeSpec:
    """Sampling plan for empirical constants: ``count`` single probes and
    ``pairs`` difference probes, Latin-hypercube in the ball of ``radius``,
    evaluated at the listed times."""

    count: int = 100
    pairs: int = 200
    radius: float = 5.0
    times: Sequence[float] = (0.0, 1.0, 2.0, 5.0)
    seed: int = 0

    def sample(self, dim: int, n: int) -> np.ndarray:
        sampler = qmc.LatinHypercube(d=dim, seed=self.seed)
        pts = self.radius * (2.0 * sampler.random(n) - 1.0)
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        over = norms[:, 0] > self.radius
        pts[over] *= self.radius / norms[over]
        return pts


@dataclass
class LipschitzCertificate:
    """Numerical certificate of the conjugacy bounds.

    ``*_theory`` values are evaluated from the closed-form constant
    formulas; ``*_empirical`` are worst difference quotients over the plan;
    the certificate passes iff every empirical quantity respects its bound
    with slack ``tol_bound`` and all residuals stay below ``tol_conj``.
    """

    L_H_theory: float
    L_G_theory: float
    L_H_empirical: float
    L_G_empirical: float
    near_identity_bound: float
    near_identity_empirical: float
    conjugation_residual: float
    inverse_residual: float
    contraction_bound: float
    contraction_empirical: float
    tol_bound: float
    tol_conj: float
    probe_radius: float
    probe_times: tuple
    norm_tag: str
    passed: bool = dc_field(default=False)

    def evaluate(self) -> bool:
        ok = (
            self.L_H_empirical <= self.L_H_theory * (1 + self.tol_bound)
            and self.L_G_empirical <= self.L_G_theory * (1 + self.tol_bound)
            and self.near_identity_empirical
            <= self.near_identity_bound * (1 + self.tol_bound)
            and self.conjugation_residual <= self.tol_conj
            and self.inverse_residual <= self.tol_conj
            and self.contraction_empirical
            <= self.contraction_bound * (1 + self.tol_bound)
        )
        self.passed = bool(ok)
        return self.passed

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}


def theory_lipschitz_g(c: HypothesisConstants) -> float:
    """Inverse-map Lipschitz constant ``1 + K^2 L / (2 alpha - K L)``."""
    return 1.0 + c.K ** 2 * c.L / (2.0 * c.alpha - c.K * c.L)


def theory_lipschitz_h(c: HypothesisConstants, t: float, tau0: float,
                       ell: float = 1.0) -> float:
    """Forward-map Lipschitz constant; grows like ``exp(alpha (t - tau0))``
    through the anchored homogeneous term."""
    growth = math.exp(c.alpha * (t - tau0)) * ell
    return 1.0 + c.K ** 2 * c.L / (2.0 * c.alpha) + \
        c.K ** 3 * c.L ** 2 * growth / (c.alpha * (c.alpha - c.K * c.L))


def certify(field: ConjugacyField,
            probes: Optional[ProbeSpec] = None,
            tol_bound: float = 1e-2,
            tol_conj: float = 1e-4) -> LipschitzCertificate:
    """Run the full empirical certification of one conjugacy field.

    Failures are recorded in the returned certificate, not raised.
    """
    probes = probes or ProbeSpec()
    c = field.constants
    n = field.sys.dim
    times = [t for t in probes.times if field.grid.contains(t)]
    if not times:
        raise ConfigurationError("no probe time lies inside the grid")

    singles = probes.sample(n, probes.count)
    pair_pts = probes.sample(n, 2 * probes.pairs)
    left, right = pair_pts[::2], pair_pts[1::2]
    close = np.linalg.norm(left - right, axis=1) < 1e-9
    right[close] += 1e-3

    lip_h = lip_g = 0.0
    near = 0.0
    inv_res = 0.0
    contraction = 0.0

    for t in times:
        hs = field.h(t, np.vstack([singles, left, right]))
        h_single = hs[: len(singles)]
        h_left = hs[len(singles):len(singles) + len(left)]
        h_right = hs[len(singles) + len(left):]

        gs = field.g(t, np.vstack([singles, left, right]))
        g_single = gs[: len(singles)]
        g_left = gs[len(singles):len(singles) + len(left)]
        g_right = gs[len(singles) + len(left):]

        near = max(
            near,
            float(np.max(field.state_norm(t, h_single - singles))),
            float(np.max(field.state_norm(t, g_single - singles))),
        )
        denom = np.linalg.norm(left - right, axis=1)
        lip_h = max(lip_h, float(np.max(
            field.state_norm(t, h_left - h_right) / denom)))
        lip_g = max(lip_g, float(np.max(
            field.state_norm(t, g_left - g_right) / denom)))

        back = field.g(t, h_single)
        forth = field.h(t, g_single)
        inv_res = max(
            inv_res,
            float(np.max(field.state_norm(t, back - singles))),
            float(np.max(field.state_norm(t, forth - singles))),
        )

    # contraction factor of the fixed-point operator on probe iterates
    corr = field.correction_path(times[0], singles[0])
    gaps = corr.picard_gaps
    if gaps is not None and len(gaps) >= 3:
        ratios = [gaps[i + 1] / gaps[i] for i in range(len(gaps) - 2)
                  if gaps[i] > 10 * field.picard_tol]
        contraction = max(ratios) if ratios else 0.0

    conj_res = 0.0
    rng = np.random.default_rng(probes.seed)
    for (s, t) in [(a, b) for a in times for b in times if a < b][:6]:
        xi = rng.normal(size=n) * min(1.0, probes.radius)
        conj_res = max(conj_res, field.conjugation_residual(s, t, xi))

    cert = LipschitzCertificate(
        L_H_theory=max(theory_lipschitz_h(c, t, field.tau0,
                                          field.norms.equivalence)
                       for t in times),
        L_G_theory=theory_lipschitz_g(c),
        L_H_empirical=lip_h,
        L_G_empirical=lip_g,
        near_identity_bound=c.K * c.M / c.alpha,
        near_identity_empirical=near,
        conjugation_residual=conj_res,
        inverse_residual=inv_res,
        contraction_bound=c.K * c.L / c.alpha,
        contraction_empirical=contraction,
        tol_bound=tol_bound,
        tol_conj=tol_conj,
        probe_radius=probes.radius,
        probe_times=tuple(times),
        norm_tag=field.norm_tag,
    )
    cert.evaluate()
    return cert
