"""Random dynamical systems layer: cocycles generated by shifted-coefficient
equations, the global random conjugacy in adapted norms, and the cutoff-based
local linearization.

The driver convention: a system's coefficient callbacks depend on the noise
only through the shift, so the solution family from time zero is a cocycle;
this is verified (not assumed) on probe triples before a cocycle is accepted.
The random conjugacy instantiates the half-line machinery fiber by fiber with
the exact constants ``K = 1`` and ``alpha = -(lambda_1 + a)`` delivered by
the adapted norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .conjugacy import ConjugacyField, default_horizon
from .errors import (BudgetError, ConfigurationError, HypothesisViolation,
                     NotACocycleError, NotUniformlyStable)
from .flow import HypothesisConstants, SystemSpec, solve_ivp
from .spectrum import AdaptedNormFamily
from .timebase import MdsShift, NoisePath, TimeGrid, shift


@dataclass
class CocycleSpec:
    """A verified cocycle: the solution family of a shifted-coefficient
    equation, together with its driving path and integration step."""

    sys: SystemSpec
    base: NoisePath
    dt: float = 1e-3

    def omega(self, offset: float = 0.0) -> MdsShift:
        return shift(self.base, offset)

    def trajectory(self, t: float, x, offset: float = 0.0,
                   dt: Optional[float] = None):
        dt = dt or self.dt
        n_steps = max(1, int(round(t / dt)))
        grid = TimeGrid(0.0, n_steps * dt, dt)
        return solve_ivp(self.sys, self.omega(offset), 0.0, x, grid)

    def psi(self, t: float, x, offset: float = 0.0,
            dt: Optional[float] = None) -> np.ndarray:
        """State of the cocycle at time ``t`` started from ``x`` at time 0
        under the driver shifted by ``offset``."""
        if t == 0.0:
            return np.atleast_1d(np.asarray(x, dtype=float)).copy()
        return self.trajectory(t, x, offset, dt).at(t)

    def cocycle_residual(self, s: float, t: float, x,
                         offset: float = 0.0) -> float:
        """Defect of ``psi(s+t, w) = psi(t, theta_s w) . psi(s, w)``."""
        direct = self.psi(s + t, x, offset)
        stage = self.psi(s, x, offset)
        relay = self.psi(t, stage, offset + s)
        return float(np.linalg.norm(direct - relay))


def cocycle_from_rde(sys: SystemSpec, base: NoisePath, dt: float = 1e-3,
                     probe_times: Sequence[tuple] = ((0.5, 1.5), (1.0, 2.0)),
                     probe_states: Optional[np.ndarray] = None,
                     tol_cocycle: float = 1e-6) -> CocycleSpec:
    """Wrap a shifted-coefficient equation as a cocycle, verifying first that
    restarting at ``tau`` equals running the shifted driver from zero."""
    coc = CocycleSpec(sys=sys, base=base, dt=dt)
    if probe_states is None:
        probe_states = 0.5 * np.ones((1, sys.dim))
    worst = 0.0
    for tau, t in probe_times:
        for x in probe_states:
            grid = TimeGrid(0.0, t, dt)
            full = solve_ivp(sys, coc.omega(0.0), tau, x, grid).at(t)
            restarted = coc.psi(t - tau, x, offset=tau)
            worst = max(worst, float(np.linalg.norm(full - restarted)))
    if worst > tol_cocycle:
        raise NotACocycleError(
            f"restart identity fails by {worst:.3g} (> {tol_cocycle}); the "
            "coefficient dependence is not of shifted form",
            inequality="shifted-coefficient form",
        )
    return coc


def estimate_nonlinearity_constants(
        coc: CocycleSpec, norms: AdaptedNormFamily,
        times: Sequence[float] = (0.0, 0.5, 1.0, 2.0),
        radius: float = 3.0, samples: int = 60,
        seed: int = 0) -> HypothesisConstants:
    """Estimate the fiber-norm bound and Lipschitz constant of the
    nonlinearity over probe states, with the decay pair taken from the
    adapted spectrum (``K = 1``, ``alpha = -(lambda_1 + a)``)."""
    spec = norms.spectrum
    if spec.top + spec.gap >= 0:
        raise NotUniformlyStable(
            f"top exponent {spec.top} with gap {spec.gap} is not negative"
        )
    alpha = -(spec.top + spec.gap)
    rng = np.random.default_rng(seed)
    n = coc.sys.dim
    omega = coc.omega(0.0)
    M = 0.0
    L = 0.0
    for t in times:
        nm = norms.at(t)
        xs = rng.uniform(-radius, radius, size=(samples, n))
        ys = xs + rng.uniform(-0.5, 0.5, size=(samples, n))
        fx = np.stack([coc.sys.F(t, x, omega) for x in xs])
        fy = np.stack([coc.sys.F(t, y, omega) for y in ys])
        M = max(M, float(np.max(nm.eval(fx))))
        num = nm.eval(fx - fy)
        den = nm.eval(xs - ys)
        good = den > 1e-12
        if np.any(good):
            L = max(L, float(np.max(num[good] / den[good])))
    return HypothesisConstants(K=1.0, alpha=alpha, L=L, M=M, M_j=(L,))


class RandomConjugacy:
    """The random topological conjugacy delivered fiber by fiber.

    ``h(xi)`` evaluates the representative fiber ``t_rep``; ``h_fiber(t,
    xi)`` the fiber at driver shift ``t`` (defined through the anchored
    half-line field, which is how the free evaluation time is resolved
    operationally).  ``orbit_residual`` checks the orbit-mapping property by
    two independent integration routes, the right-hand one running under the
    genuinely shifted driver.
    """

    def __init__(self, coc: CocycleSpec, norms: AdaptedNormFamily,
                 field: ConjugacyField, t_rep: float,
                 constants: HypothesisConstants):
        self.coc = coc
        self.norms = norms
        self.field = field
        self.t_rep = t_rep
        self.constants = constants

    def h_fiber(self, t: float, xi) -> np.ndarray:
        return self.field.h(t, xi)

    def h_inv_fiber(self, t: float, eta) -> np.ndarray:
        return self.field.g(t, eta)

    def h(self, xi) -> np.ndarray:
        return self.h_fiber(self.t_rep, xi)

    def h_inv(self, eta) -> np.ndarray:
        return self.h_inv_fiber(self.t_rep, eta)

    def orbit_residual(self, t: float, xi) -> float:
        """Defect of ``h(theta_t .) o Phi(t) = psi(t) o h`` based at the
        representative fiber, in the ambient norm.

        The left side propagates through the linear flow and applies the
        conjugacy at the later fiber; the right side applies the conjugacy
        first and integrates the nonlinear equation under the shifted driver.
        """
        s0 = self.t_rep
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        moved = xi @ self.field.ev.pair(s0 + t, s0).T
        lhs = self.h_fiber(s0 + t, moved)
        start = self.h_fiber(s0, xi)
        rhs = self.coc.psi(t, start, offset=s0)
        return float(np.max(np.linalg.norm(lhs - rhs, axis=-1)))

    def near_identity_sup(self, probes: np.ndarray,
                          times: Sequence[float]) -> float:
        worst = 0.0
        for t in times:
            hv = self.h_fiber(t, probes)
            gv = self.h_inv_fiber(t, probes)
            worst = max(
                worst,
                float(np.max(self.field.state_norm(t, hv - probes))),
                float(np.max(self.field.state_norm(t, gv - probes))),
            )
        return worst

    @property
    def near_identity_bound(self) -> float:
        c = self.constants
        return c.K * c.M / c.alpha


def random_conjugacy(coc: CocycleSpec, norms: AdaptedNormFamily,
                     t_rep: float = 0.0,
                     constants: Optional[HypothesisConstants] = None,
                     horizon: Optional[float] = None,
                     dt: Optional[float] = None,
                     picard_tol: float = 1e-8) -> RandomConjugacy:
    """Instantiate the half-line conjugacy for one driver realization with
    the adapted-norm constants, after checking the stability gate and the
    strict smallness of the nonlinearity."""
    spec = norms.spectrum
    if spec.top + spec.gap >= 0:
        raise NotUniformlyStable(
            f"top exponent {spec.top} with gap {spec.gap} is not negative"
        )
    if constants is None:
        constants = estimate_nonlinearity_constants(coc, norms)
    if not (constants.K * constants.L < constants.alpha):
        raise HypothesisViolation(
            f"nonlinearity too large: L = {constants.L} >= alpha = "
            f"{constants.alpha}", inequality="L < alpha",
        )
    dt = dt or coc.dt
    if horizon is None:
        horizon = default_horizon(constants.alpha)
    n_steps = int(round(horizon / dt))
    grid = TimeGrid(0.0, n_steps * dt, dt)
    field = ConjugacyField(coc.sys, coc.omega(0.0), grid, norms=norms,
                           constants=constants, picard_tol=picard_tol)
    return RandomConjugacy(coc, norms, field, t_rep, constants)


# -- smooth cutoff -----------------------------------------------------


def _bump_half(u: np.ndarray) -> np.ndarray:
    """``exp(-1/u)`` for ``u > 0``, zero otherwise (all derivatives flat)."""
    out = np.zeros_like(u)
    pos = u > 0
    with np.errstate(divide="ignore", over="ignore"):
        out[pos] = np.exp(-1.0 / u[pos])
    return out


def cutoff_profile(r) -> np.ndarray:
    """Smooth transition: exactly 1 on ``r <= 1``, exactly 0 on ``r >= 2``."""
    r = np.asarray(r, dtype=float)
    u = 2.0 - r
    f = _bump_half(u)
    g = _bump_half(1.0 - u)
    with np.errstate(invalid="ignore"):
        w = np.where(f + g > 0, f / (f + g), 0.0)
    w = np.where(r <= 1.0, 1.0, w)
    w = np.where(r >= 2.0, 0.0, w)
    return w


def cutoff_profile_prime(r) -> np.ndarray:
    """Derivative of the transition profile (zero outside ``(1, 2)``)."""
    r = np.asarray(r, dtype=float)
    u = 2.0 - r
    inside = (r > 1.0) & (r < 2.0)
    out = np.zeros_like(r)
    ui = u[inside]
    f = np.exp(-1.0 / ui)
    g = np.exp(-1.0 / (1.0 - ui))
    fp = f / ui ** 2
    gp = -g / (1.0 - ui) ** 2
    # chi(r) = w(2 - r) so chi' = -w'(u)
    out[inside] = -(fp * g - f * gp) / (f + g) ** 2
    return out


@dataclass
class CutoffSpec:
    """Radius schedule and profile of the smooth truncation.

    The truncated field agrees with the original strictly inside the random
    ball of radius ``sigma`` and vanishes outside twice that radius (hence
    outside the outer radius ``c``).  ``sigma_table`` holds the dyadic radius
    probed per unit time window.
    """

    c: float
    L0: float
    sigma_table: dict = dc_field(repr=False, default_factory=dict)
    probe_pairs: int = 100
    seed: int = 0
    lipschitz_probed: float = 0.0

    def sigma(self, offset: float = 0.0) -> float:
        window = int(math.floor(offset))
        if window not in self.sigma_table:
            known = sorted(self.sigma_table)
            if not known:
                raise ConfigurationError("cutoff has an empty radius table")
            nearest = min(known, key=lambda m: abs(m - window))
            return self.sigma_table[nearest]
        return self.sigma_table[window]

    def in_neighborhood(self, x, offset: float = 0.0) -> bool:
        return bool(np.linalg.norm(x) < self.sigma(offset))


def _probed_lipschitz(func: Callable, radius: float, dim: int, pairs: int,
                      rng) -> float:
    xs = rng.uniform(-radius, radius, size=(pairs, dim))
    ys = rng.uniform(-radius, radius, size=(pairs, dim))
    num = np.linalg.norm(func(xs) - func(ys), axis=-1)
    den = np.linalg.norm(xs - ys, axis=-1)
    good = den > 1e-12
    return float(np.max(num[good] / den[good])) if np.any(good) else 0.0


def smooth_cutoff(sys: SystemSpec, base: NoisePath, c: float, L0: float,
                  windows: Sequence[int] = (0, 1, 2, 3),
                  probe_pairs: int = 100, seed: int = 0,
                  max_halvings: int = 40) -> tuple:
    """Truncate the nonlinearity outside a probed random radius.

    Per unit time window the largest dyadic radius ``sigma <= c/2`` is kept
    for which the probed Lipschitz constant of the truncated field stays
    within the budget ``L0``; exhausting the dyadic sweep raises
    :class:`BudgetError`.  Requires a nonlinearity whose local Lipschitz
    ratio vanishes at the origin (probed on shrinking balls).

    Returns ``(cutoff_spec, truncated_system)``.
    """
    if not (c > 0 and L0 > 0):
        raise ConfigurationError("cutoff needs positive radius and budget")
    rng = np.random.default_rng(seed)
    omega = base.as_shift()
    n = sys.dim

    # flat-at-zero precondition: the local ratio must shrink with the ball
    t0 = float(windows[0])
    big = _probed_lipschitz(lambda x: sys.F(t0, x, omega), c, n, probe_pairs,
                            rng)
    small = _probed_lipschitz(lambda x: sys.F(t0, x, omega), c / 64.0, n,
                              probe_pairs, rng)
    if big > 1e-12 and small > 0.25 * big:
        raise ConfigurationError(
            "nonlinearity has no vanishing Lipschitz ratio at the origin "
            f"(ratio {small:.3g} at c/64 vs {big:.3g} at c)"
        )

    spec = CutoffSpec(c=c, L0=L0, probe_pairs=probe_pairs, seed=seed)

    def truncated(t, x, omega_, sigma):
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        rnorm = np.linalg.norm(xv, axis=-1, keepdims=True) / sigma
        return cutoff_profile(rnorm) * sys.F(t, xv, omega_)

    worst_probed = 0.0
    for m in windows:
        ts = [m + 0.25, m + 0.75]
        chosen = None
        for j in range(max_halvings):
            sigma = (c / 2.0) * 2.0 ** (-j)
            ok = True
            probed = 0.0
            for t in ts:
                lip = _probed_lipschitz(
                    lambda x: truncated(t, x, omega, sigma),
                    2.5 * sigma, n, probe_pairs, rng)
                probed = max(probed, lip)
                if lip > L0:
                    ok = False
                    break
            if ok:
                chosen = sigma
                worst_probed = max(worst_probed, probed)
                break
        if chosen is None:
            raise BudgetError(
                f"no dyadic radius within {max_halvings} halvings meets the "
                f"Lipschitz budget {L0} on window [{m}, {m + 1})",
                inequality="probed Lipschitz <= L0",
            )
        spec.sigma_table[m] = chosen
    spec.lipschitz_probed = worst_probed

    def F_cut(t, x, omega_):
        off = omega_.offset if omega_ is not None else 0.0
        return truncated(t, x, omega_, spec.sigma(off + t))

    DF_cut = None
    if sys.DF:
        DF1 = sys.DF[0]

        def DF1_cut(t, x, omega_):
            off = omega_.offset if omega_ is not None else 0.0
            sigma = spec.sigma(off + t)
            xv = np.atleast_1d(np.asarray(x, dtype=float))
            rnorm = float(np.linalg.norm(xv)) / sigma
            chi = cutoff_profile(rnorm)
            jac = chi * DF1(t, xv, omega_)
            if 1.0 < rnorm < 2.0:
                grad = xv / (np.linalg.norm(xv) * sigma)
                jac = jac + np.outer(
                    cutoff_profile_prime(rnorm) * sys.F(t, xv, omega_), grad)
            return jac

        DF_cut = (DF1_cut,)

    # the budget is what the probing certifies for the truncated field (the
    # bump overhead can exceed the base constant), and the value bound is
    # budget times outer radius
    constants = None
    if sys.constants is not None:
        base_c = sys.constants
        constants = HypothesisConstants(
            K=base_c.K, alpha=base_c.alpha, L=L0, M=L0 * c, M_j=base_c.M_j)
    sys_cut = SystemSpec(dim=n, A=sys.A, F=F_cut, DF=DF_cut,
                         constants=constants)
    return spec, sys_cut


def first_exit_time(coc: CocycleSpec, cut: CutoffSpec, x,
                    offset: float = 0.0, horizon: float = 6.0,
                    dt: Optional[float] = None) -> float:
    """First grid time the trajectory leaves the random neighborhood
    ``norm(x) < sigma(theta_t .)``; ``inf`` if it never does before the
    horizon.  Starting outside returns 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.linalg.norm(x) >= cut.sigma(offset):
        return 0.0
    dt = dt or coc.dt
    traj = coc.trajectory(horizon, x, offset, dt)
    nodes = traj.grid.nodes
    radii = np.linalg.norm(traj.states, axis=-1)
    sigmas = np.array([cut.sigma(offset + t) for t in nodes])
    outside = np.nonzero(radii >= sigmas)[0]
    if len(outside) == 0:
        return math.inf
    return float(nodes[outside[0]])


@dataclass
class LocalProbeRecord:
    x0: list
    t_max: float
    window_times: list
    orbit_residuals: list
    field_agreement: float


@dataclass
class LocalLinearizationReport:
    sigma0: float
    constants: HypothesisConstants
    records: list
    tol_conj: float
    tol_cocycle: float

    @property
    def worst_residual(self) -> float:
        vals = [r for rec in self.records for r in rec.orbit_residuals]
        return max(vals) if vals else 0.0

    @property
    def worst_agreement(self) -> float:
        return max((rec.field_agreement for rec in self.records),
                   default=0.0)

    @property
    def passed(self) -> bool:
        return (self.worst_residual <= self.tol_conj
                and self.worst_agreement <= self.tol_cocycle)

    def to_dict(self) -> dict:
        return {
            "sigma0": self.sigma0,
            "alpha": self.constants.alpha,
            "L": self.constants.L,
            "worst_residual": self.worst_residual,
            "worst_agreement": self.worst_agreement,
            "passed": self.passed,
            "records": [rec.__dict__ for rec in self.records],
        }


def local_linearize(coc: CocycleSpec, cut_and_sys: tuple,
                    norms: AdaptedNormFamily,
                    probes: np.ndarray,
                    check_times: Sequence[float] = (0.5, 1.0, 2.0),
                    horizon: Optional[float] = None,
                    constants: Optional[HypothesisConstants] = None,
                    tol_conj: float = 1e-3,
                    tol_cocycle: float = 1e-6) -> LocalLinearizationReport:
    """Linearize the truncated system and report, per probe, the conjugation
    residuals on the exit-limited window together with the agreement between
    the original and truncated cocycles there."""
    cut, sys_cut = cut_and_sys
    coc_cut = CocycleSpec(sys=sys_cut, base=coc.base, dt=coc.dt)
    if horizon is None:
        horizon = max(check_times) + 1.0
    rc = random_conjugacy(coc_cut, norms, t_rep=0.0, constants=constants,
                          horizon=horizon)
    records = []
    for x0 in np.atleast_2d(probes):
        t_max = first_exit_time(coc_cut, cut, x0,
                                horizon=max(check_times) + 1.0)
        inside = [t for t in check_times if t <= t_max]
        residuals = [rc.orbit_residual(t, x0) for t in inside]
        t_cmp = min(t_max, max(check_times))
        if t_cmp > 0:
            a = coc.trajectory(t_cmp, x0).states
            b = coc_cut.trajectory(t_cmp, x0).states
            agreement = float(np.abs(a - b).max())
        else:
            agreement = 0.0
        records.append(LocalProbeRecord(
            x0=[float(v) for v in np.atleast_1d(x0)],
            t_max=t_max, window_times=inside,
            orbit_residuals=[float(r) for r in residuals],
            field_agreement=agreement))
    return LocalLinearizationReport(
        sigma0=cut.sigma(0.0), constants=rc.constants, records=records,
        tol_conj=tol_conj, tol_cocycle=tol_cocycle)
