"""Lyapunov spectra, Oseledets flags, adapted random norms and decay
constants of linear cocycles.

The exponent estimator is the discrete QR method: a frame is pushed through
the linear flow and re-orthonormalized every ``reorth_dt`` time units;
exponents are tail-window averages of the accumulated triangular-factor
logarithms (an initial burn-in fraction is discarded so transient alignment
does not bias multiple exponents of equal value apart).  The slow-subspace
flag is read off the right singular subspaces of the accumulated transition
over a moderate window, which converges exponentially fast in the window
length.

Adapted norms are the weighted L2 integrals of the propagated flag
components, realized as quadratic forms; weighted operator norms then reduce
to one singular value decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (ConfigurationError, DegenerateNormError,
                     EstimationUncertaintyError, NotUniformlyStable)
from .flow import (EvolutionOperator, HypothesisConstants, SystemSpec,
                   _rk4_span, evolution_operator)
from .timebase import TimeGrid

#: default width for grouping exponent estimates into multiplicities (1/time)
CLUSTER_TOL = 0.05


def principal_angle(basis_a: np.ndarray, basis_b: np.ndarray) -> float:
    """Largest principal angle (radians) between equally sized subspaces
    given by orthonormal column bases."""
    if basis_a.shape != basis_b.shape:
        raise ConfigurationError("subspace dimensions differ")
    sv = np.linalg.svd(basis_a.T @ basis_b, compute_uv=False)
    return float(np.arccos(np.clip(sv.min(), -1.0, 1.0)))


def default_gap(exponents: np.ndarray) -> float:
    """Spectral-gap margin: a quarter of the smallest spacing, and small
    enough that ``lambda_1 + a < 0`` whenever the top exponent is negative."""
    candidates = []
    if len(exponents) > 1:
        candidates.append(0.25 * float(np.min(-np.diff(exponents))))
    if exponents[0] < 0:
        candidates.append(-0.5 * float(exponents[0]))
    return min(candidates) if candidates else 0.25


@dataclass
class LyapunovSpectrum:
    """Estimated spectrum of a linear cocycle.

    ``blocks[i]`` is an orthonormal ``(n, d_i)`` basis; the nested slow
    subspaces are ``V_i = span(blocks[i] | ... | blocks[k-1])``, so nesting
    holds exactly by construction.  ``gap`` is the margin ``a`` keeping the
    intervals ``[lambda_i - a, lambda_i + a]`` disjoint.
    """

    exponents: np.ndarray
    multiplicities: np.ndarray
    blocks: list = field(repr=False)
    gap: float
    horizon: float
    column_exponents: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.multiplicities.sum()) != self.dim:
            raise ConfigurationError("multiplicities do not sum to dim")
        if not (self.gap > 0):
            raise ConfigurationError("spectral gap must be positive")
        lo = self.exponents - self.gap
        hi = self.exponents + self.gap
        for i in range(len(self.exponents) - 1):
            if hi[i + 1] >= lo[i]:
                raise ConfigurationError(
                    "exponent intervals overlap at the chosen gap"
                )

    @property
    def dim(self) -> int:
        return self.blocks[0].shape[0] if self.blocks else 0

    @property
    def k(self) -> int:
        return len(self.exponents)

    @property
    def top(self) -> float:
        return float(self.exponents[0])

    def filtration(self) -> list:
        """Orthonormal bases of ``V_1 = X``  down to ``V_k`` (nested)."""
        out = []
        for i in range(self.k):
            out.append(np.hstack(self.blocks[i:]))
        return out

    def block_projectors(self) -> list:
        """Orthogonal projections onto the flag components."""
        return [b @ b.T for b in self.blocks]

    def to_dict(self) -> dict:
        return {
            "exponents": [float(v) for v in self.exponents],
            "multiplicities": [int(v) for v in self.multiplicities],
            "gap": float(self.gap),
            "horizon": float(self.horizon),
        }


def _cluster(values: np.ndarray, tol: float):
    """Group descending values into clusters of width ``tol``."""
    groups = [[0]]
    for j in range(1, len(values)):
        if values[groups[-1][0]] - values[j] <= tol:
            groups[-1].append(j)
        else:
            groups.append([j])
    return groups


def lyapunov_qr(sys: SystemSpec, omega, T: float, dt: float,
                reorth_dt: float = 0.5, burn_in: float = 0.1,
                cluster_tol: float = CLUSTER_TOL,
                frame: Optional[np.ndarray] = None,
                filtration_window: Optional[float] = None) -> LyapunovSpectrum:
    """Estimate the Lyapunov spectrum of the linear part by the QR method.

    Non-convergence (tail drift of the running averages beyond
    ``cluster_tol``) and ambiguous clustering raise
    :class:`EstimationUncertaintyError` carrying the partial estimate.
    """
    n = sys.dim
    A = sys.A
    steps_per_chunk = max(1, int(round(reorth_dt / dt)))
    chunk_dt = steps_per_chunk * dt
    n_chunks = max(2, int(round(T / chunk_dt)))
    T_eff = n_chunks * chunk_dt

    Q = np.eye(n) if frame is None else np.array(frame, dtype=float)

    def f(t, M):
        return A(t, omega) @ M

    logs = np.empty((n_chunks, n))
    rs, qs = [], []
    t = 0.0
    for c in range(n_chunks):
        ts = t + dt * np.arange(steps_per_chunk + 1)
        P = _rk4_span(f, ts, Q)[-1]
        Q, R = np.linalg.qr(P)
        sign = np.sign(np.diag(R))
        sign[sign == 0] = 1.0
        Q = Q * sign
        R = sign[:, None] * R
        logs[c] = np.log(np.diag(R))
        rs.append(R)
        qs.append(Q)
        t = ts[-1]

    times = chunk_dt * np.arange(1, n_chunks + 1)
    running = np.cumsum(logs, axis=0) / times[:, None]

    first = max(1, int(math.ceil(burn_in * n_chunks)))
    window = logs[first:].sum(axis=0) / (T_eff - first * chunk_dt)
    col_exp = np.sort(window)[::-1]

    # tail drift of the running averages over the last tenth of the horizon
    probe = max(first, int(round(0.9 * n_chunks)) - 1)
    drift = np.abs(running[-1] - running[probe]).max()

    groups = _cluster(col_exp, cluster_tol)
    exponents = np.array([col_exp[g].mean() for g in groups])
    mult = np.array([len(g) for g in groups], dtype=int)

    # the slow flag comes from the right singular subspaces of the windowed
    # transition Phi(t_m, 0) = Q_m (R_m ... R_1); rescaling along the product
    # keeps it representable (subspaces are scale-invariant)
    if len(groups) == 1:
        blocks = [np.eye(n)]
    else:
        spread = float(exponents[0] - exponents[-1])
        min_gap = float(np.min(-np.diff(exponents)))
        t_filt = filtration_window
        if t_filt is None:
            t_filt = min(T_eff, max(9.0 / min_gap, 2 * chunk_dt),
                         27.0 / max(spread, 1e-9))
        m_filt = max(1, min(n_chunks, int(round(t_filt / chunk_dt))))
        prod = np.eye(n)
        for c in range(m_filt):
            prod = rs[c] @ prod
            scale = np.abs(prod).max()
            if scale > 0:
                prod /= scale
        transition = qs[m_filt - 1] @ prod
        _, _, vt = np.linalg.svd(transition)
        blocks = []
        start = 0
        for d in mult:
            blocks.append(vt[start:start + d].T)
            start += d

    gap = default_gap(exponents)
    spec = LyapunovSpectrum(exponents=exponents, multiplicities=mult,
                            blocks=blocks, gap=gap, horizon=T_eff,
                            column_exponents=col_exp)

    if drift > cluster_tol:
        raise EstimationUncertaintyError(
            f"running Lyapunov averages still drift by {drift:.3g} "
            f"(> {cluster_tol}) at horizon {T_eff}", partial=spec,
        )
    if len(exponents) > 1:
        closest = float(np.min(-np.diff(exponents)))
        if closest < 2 * cluster_tol:
            raise EstimationUncertaintyError(
                f"adjacent exponent clusters separated by only {closest:.3g}",
                partial=spec,
            )
    return spec


def oseledets_filtration(sys: SystemSpec, omega, T: float, dt: float,
                         **kwargs) -> list:
    """Nested slow-subspace chain ``V_k subset ... subset V_1`` (orthonormal
    bases), from the same estimation run as :func:`lyapunov_qr`."""
    spec = lyapunov_qr(sys, omega, T, dt, **kwargs)
    return spec.filtration()


@dataclass
class AdaptedNorm:
    """The adapted quadratic norm at one fiber time: ``|x| = norm(factor @ x)``.

    ``factor`` is a square root of the Gram matrix assembled from the
    weighted decay integrals of the flag components; ``equivalence`` bounds
    the sandwich against the ambient norm.
    """

    t: float
    gram: np.ndarray = field(repr=False)
    factor: np.ndarray = field(repr=False)
    factor_inv: np.ndarray = field(repr=False)
    equivalence: float = 1.0
    trunc_T: float = 0.0
    quad_dt: float = 0.0

    def eval(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = x @ self.factor.T
        return np.linalg.norm(v, axis=-1) if v.ndim > 1 else float(
            np.linalg.norm(v))


def adapted_norm_eval(norm: AdaptedNorm, x) -> float:
    """Value of the adapted norm on a vector (combined over flag components)."""
    return norm.eval(x)


def weighted_operator_norm(T_mat: np.ndarray, norm_s: AdaptedNorm,
                           norm_t: AdaptedNorm) -> float:
    """Operator norm of ``T`` from the ``s``-fiber norm to the ``t``-fiber
    norm: the top singular value of ``N_t T N_s^{-1}``."""
    if norm_s.factor.shape != norm_t.factor.shape:
        raise ConfigurationError("norms act on different state dimensions")
    return float(np.linalg.norm(norm_t.factor @ T_mat @ norm_s.factor_inv,
                                ord=2))


class AdaptedNormFamily:
    """Adapted norms along the driven fibers ``t -> |.|_{theta_t omega}``.

    Fibers are precomputed at ``times``; queries snap to the nearest stored
    fiber (exact when the query is a stored time).  Falling back to the
    ambient norm (identity factor) is available via :meth:`ambient`.
    """

    def __init__(self, times: np.ndarray, norms: Sequence[AdaptedNorm],
                 spectrum: LyapunovSpectrum):
        self.times = np.asarray(times, dtype=float)
        self.norms = list(norms)
        self.spectrum = spectrum

    @property
    def equivalence(self) -> float:
        return max(nm.equivalence for nm in self.norms)

    def at(self, t: float) -> AdaptedNorm:
        idx = int(np.argmin(np.abs(self.times - t)))
        return self.norms[idx]

    def eval(self, t: float, x):
        return self.at(t).eval(x)

    def operator_norm(self, T_mat: np.ndarray, s: float, t: float) -> float:
        return weighted_operator_norm(T_mat, self.at(s), self.at(t))

    @staticmethod
    def ambient(dim: int) -> "AdaptedNormFamily":
        eye = np.eye(dim)
        nm = AdaptedNorm(t=0.0, gram=eye, factor=eye, factor_inv=eye,
                         equivalence=1.0)
        spec = LyapunovSpectrum(
            exponents=np.array([0.0]), multiplicities=np.array([dim]),
            blocks=[np.eye(dim)], gap=0.25, horizon=0.0)
        fam = AdaptedNormFamily(np.array([0.0]), [nm], spec)
        fam._is_ambient = True
        return fam

    @property
    def is_ambient(self) -> bool:
        return getattr(self, "_is_ambient", False)


def build_adapted_norms(sys: SystemSpec, omega, spectrum: LyapunovSpectrum,
                        times, trunc_T: Optional[float] = None,
                        quad_dt: float = 0.01) -> AdaptedNormFamily:
    """Assemble the adapted norm family at the requested fiber times.

    Each fiber norm is the quadratic form ``sum_i int_0^T |Phi(t+r, t) P_i
    x|^2 exp(-2(lambda_i + a) r) dr`` evaluated by the trapezoid rule; the
    horizon default ``9.2 / a`` puts the neglected tail below 1e-8 of the
    head.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    a = spectrum.gap
    if trunc_T is None:
        trunc_T = 9.2 / a
    n_quad = int(round(trunc_T / quad_dt))
    r = quad_dt * np.arange(n_quad + 1)
    trap = np.full(n_quad + 1, quad_dt)
    trap[0] = trap[-1] = 0.5 * quad_dt

    projectors = spectrum.block_projectors()
    lams = spectrum.exponents
    norms = []
    for t in times:
        # one well-conditioned integration from identity per fiber
        fiber_grid = TimeGrid(t, t + n_quad * quad_dt, quad_dt)
        stack = evolution_operator(sys, omega, float(t), fiber_grid).matrices
        gram = np.zeros((spectrum.dim, spectrum.dim))
        for lam, P in zip(lams, projectors):
            w = trap * np.exp(-2.0 * (lam + a) * r)
            Y = stack @ P
            gram += np.einsum("r,rij,rik->jk", w, Y, Y)
        gram = 0.5 * (gram + gram.T)
        evals, vecs = np.linalg.eigh(gram)
        if evals.min() <= 0:
            raise DegenerateNormError(
                f"adapted Gram matrix not positive definite at t={t}"
            )
        root = np.sqrt(evals)
        factor = (vecs * root) @ vecs.T
        factor_inv = (vecs / root) @ vecs.T
        equivalence = max(float(root.max()), float(1.0 / root.min()), 1.0)
        norms.append(AdaptedNorm(t=float(t), gram=gram, factor=factor,
                                 factor_inv=factor_inv,
                                 equivalence=equivalence,
                                 trunc_T=trunc_T, quad_dt=quad_dt))
    return AdaptedNormFamily(times, norms, spectrum)


def certify_dichotomy(ev: EvolutionOperator,
                      norms: Optional[AdaptedNormFamily],
                      sample_times: Optional[Sequence[float]] = None,
                      tol_bound: float = 1e-3) -> HypothesisConstants:
    """Decay constants ``(K, alpha)`` of the linear part, certified on
    sampled time pairs.

    With an adapted norm family and an all-negative spectrum the constants
    are ``K = 1`` and ``alpha = -(lambda_1 + gap)`` exactly; every sampled
    pair is checked against the decay bound with slack ``tol_bound``.
    Without adapted norms a least-squares fit of the spectral-norm decay is
    used, with ``K`` inflated to cover every sample.
    """
    grid = ev.grid
    if sample_times is None:
        idx = np.linspace(0, grid.n_steps, num=min(12, grid.n_nodes),
                          dtype=int)
        sample_times = [float(grid.nodes[i]) for i in sorted(set(idx))]
    pairs = [(s, t) for s in sample_times for t in sample_times if s < t]
    if not pairs:
        raise ConfigurationError("need at least two sample times")

    if norms is not None and not norms.is_ambient:
        lam1 = norms.spectrum.top
        a = norms.spectrum.gap
        if lam1 + a >= 0:
            raise NotUniformlyStable(
                f"top exponent {lam1} with gap {a} is not negative"
            )
        alpha = -(lam1 + a)
        violations = []
        for s, t in pairs:
            val = norms.operator_norm(ev.pair(t, s), s, t)
            bound = math.exp(-alpha * (t - s)) * (1.0 + tol_bound)
            if val > bound:
                violations.append((s, t, val, bound))
        if violations:
            raise EstimationUncertaintyError(
                f"adapted decay bound violated on {len(violations)} of "
                f"{len(pairs)} sampled pairs", partial=violations,
            )
        return HypothesisConstants(K=1.0, alpha=alpha)

    gaps = np.array([t - s for s, t in pairs])
    lognorms = np.array([
        math.log(max(np.linalg.norm(ev.pair(t, s), ord=2), 1e-300))
        for s, t in pairs
    ])
    slope = float(np.linalg.lstsq(
        np.column_stack([gaps, np.ones_like(gaps)]), lognorms, rcond=None
    )[0][0])
    alpha = -slope
    if alpha <= 0:
        raise NotUniformlyStable(
            f"fitted decay rate {alpha} is not positive"
        )
    K = max(1.0, float(np.exp(lognorms + alpha * gaps).max()))
    return HypothesisConstants(K=K, alpha=alpha)
