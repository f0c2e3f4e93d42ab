"""Privacy accounting for the (Poisson-subsampled) Gaussian mechanism.

One training step releases the clipped gradient sum plus Gaussian noise of
standard deviation ``sigma * C`` on a Poisson sample with rate ``q``.  Its
Renyi-DP curve is computed at a fixed grid of orders, composed additively
over steps, and converted to ``(epsilon, delta)`` by minimising
``eps(alpha) + log(1/delta) / (alpha - 1)`` over the grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special

logger = logging.getLogger(__name__)

#: Orders used by every run; part of the reproducibility contract.
DEFAULT_ORDERS: tuple = (1.25, 1.5, 1.75, 2.0) + tuple(float(a) for a in range(3, 65)) + (128.0, 256.0)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    order: float | None = None  # order attaining the minimum, if any


@dataclass(frozen=True)
class SgmParams:
    q: float
    sigma: float
    steps: int

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ValueError(f"sampling rate must lie in (0, 1], got {self.q}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")


@dataclass(frozen=True)
class RdpCurve:
    orders: tuple
    eps: tuple

    def __post_init__(self):
        if len(self.orders) != len(self.eps):
            raise ValueError("orders and eps differ in length")
        if any(a <= 1 for a in self.orders):
            raise ValueError("RDP orders must exceed 1")

    def __add__(self, other: "RdpCurve") -> "RdpCurve":
        if self.orders != other.orders:
            raise ValueError("cannot add curves on different order grids")
        return RdpCurve(self.orders, tuple(a + b for a, b in zip(self.eps, other.eps)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.eps, dtype=np.float64)


def calibrate_sigma(epsilon: float, delta: float) -> float:
    """Noise multiplier giving one Gaussian release ``(epsilon, delta)``-DP.

    ``sigma = sqrt(2 ln(1.25/delta)) / epsilon``; the guarantee is stated for
    ``epsilon < 1``, larger values are computed but logged.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if epsilon >= 1:
        logger.warning("calibrate_sigma: epsilon=%g >= 1 is outside the range the bound covers", epsilon)
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def rdp_gaussian(sigma: float, alpha: float) -> float:
    """RDP of the plain Gaussian mechanism with unit sensitivity: ``alpha / (2 sigma^2)``."""
    if not alpha > 1:
        raise ValueError(f"order must exceed 1, got {alpha}")
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return math.inf
    return alpha / (2.0 * sigma**2)


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    """log E_{x~N(0,s^2)}[(mu(x)/mu0(x))^alpha] by binomial expansion.

    ``sum_i C(alpha,i) q^i (1-q)^(alpha-i) exp((i^2-i) / (2 sigma^2))``,
    accumulated with logsumexp.
    """
    i = np.arange(alpha + 1, dtype=np.float64)
    log_binom = special.gammaln(alpha + 1) - special.gammaln(i + 1) - special.gammaln(alpha - i + 1)
    log1mq = math.log1p(-q)
    terms = log_binom + i * math.log(q) + (alpha - i) * log1mq + (i * i - i) / (2.0 * sigma**2)
    return float(special.logsumexp(terms))


def _log_a_numeric(q: float, sigma: float, alpha: float) -> float:
    """Same quantity as :func:`_log_a_int` for any real ``alpha > 1`` by quadrature.

    The integrand is ``phi_sigma(x) * ((1-q) + q exp((2x-1)/(2 sigma^2)))^alpha``;
    it is scaled by its log-maximum before integrating.
    """
    s2 = sigma**2

    def log_f(x):
        log_ratio = np.logaddexp(math.log1p(-q), math.log(q) + (2.0 * x - 1.0) / (2.0 * s2))
        return -x * x / (2.0 * s2) - 0.5 * math.log(2.0 * math.pi * s2) + alpha * log_ratio

    # the integrand is log-concave-ish around its mode; find it on a coarse grid
    xs = np.linspace(-40.0 * sigma - 10.0, 40.0 * sigma + alpha + 10.0, 20001)
    lf = log_f(xs)
    peak = float(np.max(lf))
    x_peak = float(xs[np.argmax(lf)])
    width = sigma * 12.0 + 1.0
    pieces = [(-np.inf, x_peak - width), (x_peak - width, x_peak + width), (x_peak + width, np.inf)]
    total = 0.0
    for lo, hi in pieces:
        val, _ = integrate.quad(
            lambda x: math.exp(log_f(x) - peak),
            lo,
            hi,
            epsabs=0.0,
            epsrel=1e-12,
            limit=400,
            points=None if np.isinf(lo) or np.isinf(hi) else [x_peak],
        )
        total += val
    return peak + math.log(total)


def rdp_sgm(q: float, sigma: float, alpha: float) -> float:
    """RDP at order ``alpha`` of one sampled-Gaussian step (unit sensitivity).

    Integer orders use the exact binomial expansion; fractional orders fall
    back to numerical integration.
    """
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {q}")
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if not alpha > 1:
        raise ValueError(f"order must exceed 1, got {alpha}")
    if sigma == 0:
        return math.inf
    if q == 1.0:
        return rdp_gaussian(sigma, alpha)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_numeric(q, sigma, float(alpha))
    return max(log_a, 0.0) / (alpha - 1.0)


def rdp_curve(q: float, sigma: float, orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    """RDP of a single step at every order in ``orders``."""
    orders = tuple(float(a) for a in orders)
    return RdpCurve(orders, tuple(rdp_sgm(q, sigma, a) for a in orders))


def compose(curve: RdpCurve, steps: int) -> RdpCurve:
    """RDP after ``steps`` adaptive repetitions: the curve scaled by ``steps``."""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if steps == 0:
        return RdpCurve(curve.orders, tuple(0.0 for _ in curve.eps))
    return RdpCurve(curve.orders, tuple(e * steps for e in curve.eps))


def rdp_to_dp(curve: RdpCurve, delta: float) -> PrivacyBudget:
    """Convert an RDP curve to ``(epsilon, delta)``, minimising over orders."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not curve.orders:
        raise ValueError("empty RDP curve")
    orders = np.asarray(curve.orders)
    eps = curve.as_array() + math.log(1.0 / delta) / (orders - 1.0)
    best = int(np.argmin(eps))
    return PrivacyBudget(float(eps[best]), delta, float(orders[best]))


def budget_for_run(params: SgmParams, delta: float, orders: Sequence[float] = DEFAULT_ORDERS) -> PrivacyBudget:
    """Total ``(epsilon, delta)`` after ``params.steps`` sampled-Gaussian steps."""
    if params.steps == 0:
        curve = RdpCurve(tuple(float(a) for a in orders), tuple(0.0 for _ in orders))
    else:
        curve = compose(rdp_curve(params.q, params.sigma, orders), params.steps)
    return rdp_to_dp(curve, delta)


def steps_for_epochs(epochs: float, dataset_size: int, batch_size: int) -> int:
    """``ceil(epochs * N / B)``."""
    return int(math.ceil(epochs * dataset_size / batch_size - 1e-9))


def sigma_for_target(
    epsilon_target: float,
    delta: float,
    q: float,
    steps: int,
    tol: float = 1e-3,
    sigma_max: float = 1e4,
    max_iter: int = 200,
    orders: Sequence[float] = DEFAULT_ORDERS,
) -> float:
    """Smallest noise multiplier (to within ``tol``) meeting ``epsilon_target``.

    Bisection keeps an upper end that always satisfies the target, so the
    returned value never overshoots the budget.
    """
    if not epsilon_target > 0:
        raise ValueError("epsilon_target must be > 0")

    def eps(s):
        return budget_for_run(SgmParams(q, s, steps), delta, orders).epsilon

    if steps == 0:
        if eps(1.0) <= epsilon_target:
            return 0.0
        raise ValueError(f"target epsilon={epsilon_target} is below the conversion floor for delta={delta}")
    if eps(sigma_max) > epsilon_target:
        raise ValueError(
            f"target epsilon={epsilon_target} unreachable with sigma <= {sigma_max} "
            f"(q={q}, steps={steps}, delta={delta})"
        )
    lo, hi = 0.0, 1.0
    while eps(hi) > epsilon_target:
        lo, hi = hi, hi * 2.0
        if hi > sigma_max:
            hi = sigma_max
            break
    for _ in range(max_iter):
        if hi - lo <= tol:
            return hi
        mid = 0.5 * (lo + hi)
        if eps(mid) <= epsilon_target:
            hi = mid
        else:
            lo = mid
    raise ValueError(f"bisection did not converge within {max_iter} iterations")
