"""Analytic calculators for the asynchronous-update convergence constants:
the amplification factor rho, the stepsize rule for the lock-free SGD bound,
the backward coefficient schedule for the variance-reduced bound, and the
large-n stepsize regime."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

RHO_MAX = 1e6
RHO_TOL = 1e-10


@dataclass(frozen=True)
class AsyncModelParams:
    L: float
    alpha: float
    tau: int
    eta: float
    rho: float
    V: float | None = None

    def __post_init__(self) -> None:
        if self.L <= 0:
            raise ValueError("L must be > 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.rho <= 1:
            raise ValueError("rho must be > 1")
        if self.V is not None and self.V <= 0:
            raise ValueError("V must be > 0")


def geometric_sum(rho: float, terms: int) -> float:
    """sum_{k=0}^{terms-1} rho^k, i.e. (rho^terms - 1)/(rho - 1) without the
    0/0 at rho -> 1."""
    return float(sum(rho**k for k in range(terms)))


def rho_condition_residual(rho: float, eta: float, tau: int, L: float) -> float:
    """rho * (1 - eta - 9 eta (tau+1) L^2 (rho^{tau+1}-1)/(rho-1)) - 1.

    Non-negative exactly when rho satisfies the amplification condition.
    """
    return rho * (1.0 - eta - 9.0 * eta * (tau + 1) * L * L * geometric_sum(rho, tau + 1)) - 1.0


def solve_rho(eta: float, tau: int, L: float, rho_max: float = RHO_MAX, tol: float = RHO_TOL) -> float | None:
    """Smallest rho in (1, rho_max] satisfying the amplification condition,
    or None when the stepsize is too large for any rho in range.

    The residual is concave in rho, so the feasible set is an interval; we
    locate its left end by bisecting up to the residual's maximizer.
    """
    if eta <= 0 or L <= 0:
        raise ValueError("eta and L must be > 0")
    if tau < 0:
        raise ValueError("tau must be >= 0")

    def deriv(rho: float) -> float:
        return (1.0 - eta) - 9.0 * eta * (tau + 1) * L * L * sum(
            (k + 1) * rho**k for k in range(tau + 1)
        )

    if deriv(1.0) <= 0.0:
        return None
    if deriv(rho_max) > 0.0:
        peak = rho_max
    else:
        lo, hi = 1.0, rho_max
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if deriv(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        peak = lo
    if rho_condition_residual(peak, eta, tau, L) < 0.0:
        return None
    lo, hi = 1.0, peak
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rho_condition_residual(mid, eta, tau, L) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def hogwild_stepsize(f0: float, params: AsyncModelParams, T_tilde: int) -> tuple[float, float]:
    """Stepsize eta* = sqrt(A / (T~ B(eta*))) and the resulting bound
    sqrt(A B(eta*) / T~), with A = 2 f0 / alpha and
    B(eta) = 2 V^2 (2 tau L^2 eta rho (rho^tau - 1) / (alpha (rho - 1)) + L / (2 alpha)).

    B depends on eta, so the pair is resolved by fixed-point iteration
    starting from the eta-free part of B.
    """
    if params.V is None:
        raise ValueError("hogwild stepsize needs the gradient bound V")
    if T_tilde < 1:
        raise ValueError("T_tilde must be >= 1")
    if f0 <= 0:
        raise ValueError("f0 must be > 0")
    L, alpha, tau, rho, V = params.L, params.alpha, params.tau, params.rho, params.V
    A = 2.0 * f0 / alpha
    gs = geometric_sum(rho, tau)

    def B(eta: float) -> float:
        return 2.0 * V * V * (2.0 * tau * L * L * eta * rho * gs / alpha + L / (2.0 * alpha))

    eta = math.sqrt(A / (T_tilde * B(0.0)))
    for _ in range(1000):
        nxt = math.sqrt(A / (T_tilde * B(eta)))
        done = abs(nxt - eta) < 1e-12 * abs(nxt)
        eta = nxt
        if done:
            break
    else:
        raise RuntimeError("stepsize fixed point did not converge within 1000 iterations")
    return eta, math.sqrt(A * B(eta) / T_tilde)


@dataclass
class Theorem2Schedule:
    """Backward coefficient schedule; c has length M_tilde+1 with c[-1] == 0,
    h[m] pairs with c[m] (h[0] is defined but unused by gamma)."""

    c: np.ndarray
    h: np.ndarray
    gamma: float
    g_const: float
    f_const: float
    a_const: float
    M_tilde: int


def theorem2_schedule(
    L: float, alpha: float, tau: int, rho: float, eta: float, beta: float, M_tilde: int
) -> Theorem2Schedule:
    """Backward recursion c_m = c_{m+1}(1+a) + 2 L^2 eta^2 f from c_{M~} = 0,
    with h_m = g c_m + f and
    gamma = min_m (alpha eta / 2 - 2 c_{m+1} eta / beta - 2 eta^2 h_{m+1})."""
    if not (beta > eta > 0):
        raise ValueError("need beta > eta > 0")
    if M_tilde < 1:
        raise ValueError("M_tilde must be >= 1")
    if rho <= 1:
        raise ValueError("rho must be > 1")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if L <= 0 or not 0 < alpha <= 1:
        raise ValueError("invalid L or alpha")

    k4 = 4.0 * tau * rho * rho * geometric_sum(rho, tau)
    g = (2.0 * eta / beta) * k4 + rho
    f = (eta * L * L / 2.0) * k4 + L * rho / 2.0
    a = beta * eta + 2.0 * L * L * eta * eta * g

    c = np.zeros(M_tilde + 1)
    for m in range(M_tilde - 1, -1, -1):
        c[m] = c[m + 1] * (1.0 + a) + 2.0 * L * L * eta * eta * f
    h = g * c + f
    terms = alpha * eta / 2.0 - 2.0 * c[1:] * eta / beta - 2.0 * eta * eta * h[1:]
    gamma = float(terms.min())
    # c is strictly decreasing, so m = 0 must attain the minimum.
    assert gamma == float(terms[0])
    return Theorem2Schedule(c, h, gamma, g, f, a, M_tilde)


def c0_closed_form(L: float, eta: float, f_const: float, a_const: float, M_tilde: int) -> float:
    """c_0 = 2 L^2 eta^2 f ((1+a)^{M~} - 1) / a, equivalent to the recursion."""
    return 2.0 * L * L * eta * eta * f_const * ((1.0 + a_const) ** M_tilde - 1.0) / a_const


class RegimeReport(NamedTuple):
    eta: float
    beta: float
    M_tilde: int
    gamma: float
    valid: bool


def complexity_regime(
    n: int, mu: float, v: float, L: float, alpha: float, tau: int, rho: float
) -> RegimeReport:
    """Large-n regime eta = mu / n^{2/3}, beta = v / n^{1/3}, M~ = floor(1/a);
    valid when gamma > 0, M~ >= 1 and 4 c_0 / (alpha beta) < 1."""
    if n < 1 or mu <= 0 or v <= 0:
        raise ValueError("need n >= 1 and positive mu, v")
    eta = mu / n ** (2.0 / 3.0)
    beta = v / n ** (1.0 / 3.0)
    if eta >= beta:
        raise ValueError("eta >= beta; increase n or pick mu < v * n^{1/3}")
    k4 = 4.0 * tau * rho * rho * geometric_sum(rho, tau)
    g = (2.0 * eta / beta) * k4 + rho
    a = beta * eta + 2.0 * L * L * eta * eta * g
    M_tilde = int(math.floor(1.0 / a))
    if M_tilde < 1:
        return RegimeReport(eta, beta, 0, float("nan"), False)
    sched = theorem2_schedule(L, alpha, tau, rho, eta, beta, M_tilde)
    valid = sched.gamma > 0.0 and 4.0 * sched.c[0] / (alpha * beta) < 1.0
    return RegimeReport(eta, beta, M_tilde, sched.gamma, valid)


def lemma1_check(
    L: float,
    alpha: float,
    x: np.ndarray,
    y: np.ndarray,
    B_diag: np.ndarray,
    grad: Callable[[np.ndarray], np.ndarray],
) -> tuple[float, float, bool]:
    """Check -grad(x)^T B grad(y) <= (L^2/2)||x-y||^2 - (alpha/2)||grad(x)||^2
    for a diagonal B with entries in [alpha, 1]."""
    B_diag = np.asarray(B_diag, dtype=np.float64)
    if np.any(B_diag < alpha - 1e-12) or np.any(B_diag > 1.0 + 1e-12):
        raise ValueError("B_diag entries must lie in [alpha, 1]")
    gx = np.asarray(grad(x), dtype=np.float64)
    gy = np.asarray(grad(y), dtype=np.float64)
    lhs = -float(gx @ (B_diag * gy))
    diff = x - y
    rhs = 0.5 * L * L * float(diff @ diff) - 0.5 * alpha * float(gx @ gx)
    return lhs, rhs, lhs <= rhs + 1e-9
