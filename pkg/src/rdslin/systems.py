"""Built-in benchmark systems.

Each system carries a closed-form or brute-force oracle:

* ``ts1`` scalar ``x' = -x + eps*sin(x)`` (deterministic, globally Lipschitz);
* ``ts2`` linear ``x' = diag(-1, -2) x``;
* ``ts3`` scalar random equation ``x' = (-1 + amp*sin(u_t)) x`` with a
  stationary history integral driving the rate;
* ``ts4`` scalar linear Stratonovich equation ``dx = lam*x dt + b*x o dW``;
* ``ts5`` scalar nonlinear Stratonovich equation
  ``dx = (-x + eps*sin x) dt + b*x o dW``.
"""

from __future__ import annotations

import numpy as np

from .flow import HypothesisConstants, SystemSpec
from .timebase import NoisePath, StationaryOU


def ts1(epsilon: float = 0.2) -> SystemSpec:
    """Scalar ``x' = -x + epsilon*sin(x)``.

    In the plain norm the linear part decays with ``K = 1, alpha = 1``; the
    nonlinearity is bounded by ``epsilon`` with Lipschitz constant
    ``epsilon``, as are its derivatives.
    """
    eps = float(epsilon)
    mA = np.array([[-1.0]])

    def A(t, omega):
        return mA

    def F(t, x, omega):
        return eps * np.sin(x)

    def DF1(t, x, omega):
        return np.atleast_2d(eps * np.cos(np.asarray(x)[..., 0]))

    def DF2(t, x, omega):
        return np.atleast_3d(-eps * np.sin(np.asarray(x)[..., 0]))

    constants = HypothesisConstants(K=1.0, alpha=1.0, L=eps, M=eps,
                                    M_j=(eps, eps))
    return SystemSpec(dim=1, A=A, F=F, DF=(DF1, DF2), constants=constants)


def ts2() -> SystemSpec:
    """Linear ``x' = diag(-1, -2) x``; exponents -1 and -2 exactly."""
    mA = np.diag([-1.0, -2.0])

    def A(t, omega):
        return mA

    def F(t, x, omega):
        return np.zeros_like(x)

    def DF1(t, x, omega):
        return np.zeros((2, 2))

    def DF2(t, x, omega):
        return np.zeros((2, 2, 2))

    constants = HypothesisConstants(K=1.0, alpha=1.0, L=0.0, M=0.0,
                                    M_j=(0.0, 0.0))
    return SystemSpec(dim=2, A=A, F=F, DF=(DF1, DF2), constants=constants)


def ts3(path: NoisePath, amp: float = 0.3, t_hist: float = 20.0,
        eps: float = 0.0) -> SystemSpec:
    """Scalar random equation ``x' = (-1 + amp*sin(u_t)) x + eps*sin(x)``.

    ``u_t`` is the stationary exponentially weighted history integral of the
    driving path, so the coefficient dependence factors through the shift:
    the Lyapunov exponent is ``-1`` (the modulation averages out by symmetry).
    ``eps = 0`` gives the linear benchmark; ``eps > 0`` adds the bounded
    nonlinearity used by the random-conjugacy layer.
    """
    ou = StationaryOU(path, t_hist=t_hist)
    amp = float(amp)
    eps = float(eps)

    def A(t, omega):
        return np.array([[-1.0 + amp * np.sin(ou.at(omega, t))]])

    def F(t, x, omega):
        if eps == 0.0:
            return np.zeros_like(x)
        return eps * np.sin(x)

    def DF1(t, x, omega):
        return np.atleast_2d(eps * np.cos(np.asarray(x)[..., 0]))

    def DF2(t, x, omega):
        return np.atleast_3d(-eps * np.sin(np.asarray(x)[..., 0]))

    constants = HypothesisConstants(K=1.0, alpha=1.0, L=eps, M=eps,
                                    M_j=(eps, eps))
    return SystemSpec(dim=1, A=A, F=F, DF=(DF1, DF2), constants=constants)


def ts3_local(path: NoisePath, amp: float = 0.3, eps: float = 0.1,
              t_hist: float = 20.0) -> SystemSpec:
    """Local-linearization form of the nonlinear random benchmark: the state
    derivative of the nonlinearity at the origin is absorbed into the linear
    part, leaving the superlinear remainder ``eps*(sin x - x)`` whose local
    Lipschitz ratio vanishes at 0 (as the cutoff construction requires)."""
    ou = StationaryOU(path, t_hist=t_hist)
    amp = float(amp)
    eps = float(eps)

    def A(t, omega):
        return np.array([[-1.0 + eps + amp * np.sin(ou.at(omega, t))]])

    def F(t, x, omega):
        return eps * (np.sin(x) - x)

    def DF1(t, x, omega):
        return np.atleast_2d(eps * (np.cos(np.asarray(x)[..., 0]) - 1.0))

    constants = HypothesisConstants(K=1.0, alpha=0.9 - eps, L=2 * eps,
                                    M=2 * eps, M_j=(2 * eps,))
    return SystemSpec(dim=1, A=A, F=F, DF=(DF1,), constants=constants)


def ts3_2d(path: NoisePath, amp: float = 0.3,
           t_hist: float = 20.0) -> SystemSpec:
    """Two-dimensional random triangular system with exponents -1 and -2 and
    a noise-dependent slow subspace (exercises filtration estimation)."""
    ou = StationaryOU(path, t_hist=t_hist)
    amp = float(amp)

    def A(t, omega):
        u = ou.at(omega, t)
        return np.array([[-1.0 + amp * np.sin(u), 1.0],
                         [0.0, -2.0 + amp * np.cos(u)]])

    def F(t, x, omega):
        return np.zeros_like(x)

    constants = HypothesisConstants(K=1.0, alpha=0.5)
    return SystemSpec(dim=2, A=A, F=F, DF=None, constants=constants)


def ts4(lam: float = -1.0, b: float = 0.3):
    """Scalar linear Stratonovich equation ``dx = lam*x dt + b*x o dW``.

    Closed form ``x_t = x_0 exp(lam*t + b*W_t)``; Lyapunov exponent ``lam``.
    """
    from .sde import SdeSystem

    lam = float(lam)
    b = float(b)

    def f0(x):
        return lam * x

    def f1(x):
        return b * x

    def df0(x):
        return np.full(np.shape(x)[:-1] + (1, 1), lam)

    def df1(x):
        return np.full(np.shape(x)[:-1] + (1, 1), b)

    return SdeSystem(dim=1, f0=f0, diffusions=(f1,), Df0=df0,
                     Ddiffusions=(df1,), smoothness=(2, 1.0))


def ts5(eps: float = 0.1, b: float = 0.3):
    """Scalar nonlinear Stratonovich equation
    ``dx = (-x + eps*sin x) dt + b*x o dW``.

    Linear part at the origin: drift rate ``-1 + eps``, diffusion rate ``b``.
    """
    from .sde import SdeSystem

    eps = float(eps)
    b = float(b)

    def f0(x):
        return -x + eps * np.sin(x)

    def f1(x):
        return b * x

    def df0(x):
        return (-1.0 + eps * np.cos(np.asarray(x)[..., 0]))[..., None, None]

    def df1(x):
        return np.full(np.shape(x)[:-1] + (1, 1), b)

    return SdeSystem(dim=1, f0=f0, diffusions=(f1,), Df0=df0,
                     Ddiffusions=(df1,), smoothness=(2, 1.0))


def scalar_linear(rate: float) -> SystemSpec:
    """Scalar ``x' = rate * x`` with zero nonlinearity (test helper)."""
    mA = np.array([[float(rate)]])

    def A(t, omega):
        return mA

    def F(t, x, omega):
        return np.zeros_like(x)

    def DF1(t, x, omega):
        return np.zeros((1, 1))

    def DF2(t, x, omega):
        return np.zeros((1, 1, 1))

    constants = None
    if rate < 0:
        constants = HypothesisConstants(K=1.0, alpha=-rate)
    return SystemSpec(dim=1, A=A, F=F, DF=(DF1, DF2), constants=constants)
