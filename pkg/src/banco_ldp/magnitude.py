"""One-dimensional coin-betting magnitude learner.

The bet after ``t`` coins is the potential integral

    m = 1/(2a) * integral_{-a}^{a} beta * exp(beta*x - beta**2 * y) dbeta

with ``x`` the running coin sum and ``y = t * (sigma^2/2 + G^2)``. Substituting
``beta = a*s`` gives ``m = (a/2) * F(p, q)`` with ``p = a*x`` and ``q = a^2*y``,
where ``F(p, q) = integral_{-1}^{1} s * exp(p*s - q*s**2) ds``.

``F`` is odd in ``p`` so everything below works with ``p >= 0`` and restores the
sign at the end. Three evaluation routes are used, all in log space so that the
result only overflows when ``m`` itself is not representable:

* small ``p`` and small ``q``: power series in ``p`` with positive terms,
* peak of the Gaussian inside the interval (``p <= 2q``): the erf closed form,
* peak outside the interval: an erfcx rewrite of the same closed form in which
  the large cancelling terms have been combined analytically.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx

from .quadrature import QuadratureError, adaptive_gauss_kronrod

K1 = 0.6838

_SQRT_PI = math.sqrt(math.pi)
_LOG_HALF = math.log(0.5)

# Route boundaries. Below both, the erf/erfcx forms lose ~log10(1/q) digits.
_SERIES_P_MAX = 2.0
_LINEAR_P_MAX = 1e-8
_SERIES_Q_MAX = 2.0
_SERIES_TERMS = 24
_MOMENT_START = 60
# Above this, h(z) = 1 - sqrt(pi) z erfcx(z) is taken from its asymptotic series.
_H_ASYMPTOTIC_Z = 8.0


def betting_fraction_range(G, b):
    """Half-width ``a = min(k1/G, 1/b)`` of the betting interval.

    ``b = 0`` stands for a noise model without a sub-exponential scale, where
    ``1/b`` is infinite.
    """
    if not G > 0:
        raise ValueError(f"G must be positive, got {G}")
    if b < 0:
        raise ValueError(f"b must be non-negative, got {b}")
    if b == 0:
        return K1 / G
    return min(K1 / G, 1.0 / b)


def _h(z):
    # 1 - sqrt(pi) * z * erfcx(z) for z >= 0; ~ 1/(2 z^2) for large z.
    if z < _H_ASYMPTOTIC_Z:
        return 1.0 - _SQRT_PI * z * float(erfcx(z))
    inv = 1.0 / (2.0 * z * z)
    term = inv
    total = 0.0
    k = 1
    while True:
        total += term
        k += 1
        term *= -(2 * k - 1) * inv
        if abs(term) < 1e-18 * total:
            return total


def _log_F_series(p, q, log_p):
    # F = 2 sum_k p^(2k+1)/(2k+1)! * M_{k+1}(q), M_n(q) = int_0^1 s^(2n) e^(-q s^2) ds.
    # Downward recurrence M_n = (e^-q + 2q M_{n+1}) / (2n+1) is stable for q <= 2.
    eq = math.exp(-q)
    moments = [0.0] * (_SERIES_TERMS + 2)
    m = eq / (2 * _MOMENT_START + 1)
    for n in range(_MOMENT_START - 1, 0, -1):
        m = (eq + 2.0 * q * m) / (2 * n + 1)
        if n <= _SERIES_TERMS + 1:
            moments[n] = m
    # p is factored out (as log_p) so tiny p cannot underflow the sum.
    total = 0.0
    coef = 1.0
    p2 = p * p
    for k in range(_SERIES_TERMS):
        term = coef * moments[k + 1]
        total += term
        if term < 1e-18 * total:
            break
        coef *= p2 / ((2 * k + 2) * (2 * k + 3))
    return math.log(2.0 * total) + log_p


def _log_F_erf(p, q):
    # Peak mu = p/(2q) inside [-1, 1].
    sq = math.sqrt(q)
    mu = p / (2.0 * q)
    lead = p * p / (4.0 * q)
    s = math.erf(sq * (1.0 - mu)) + math.erf(sq * (1.0 + mu))
    gauss = (p / (4.0 * q)) * math.sqrt(math.pi / q) * s
    if p < 1.0:
        edge = math.exp(-q - lead) * math.sinh(p) / q
    else:
        edge = (math.exp(p - q - lead) - math.exp(-p - q - lead)) / (2.0 * q)
    return lead + math.log(gauss - edge)


def _log_F_linear(q, log_p):
    # F(p, q) = 2p * int_0^1 s^2 e^{-q s^2} ds * (1 + O(p^2)), for tiny p.
    sq = math.sqrt(q)
    half_moment = _SQRT_PI * math.erf(sq) / (4.0 * q * sq) - math.exp(-q) / (2.0 * q)
    return math.log(2.0 * half_moment) + log_p


def _log_F_erfcx(p, q):
    # Peak outside the interval: integrand is largest at s = 1.
    sq = math.sqrt(q)
    z = (p - 2.0 * q) / (2.0 * sq)
    u = (p + 2.0 * q) / (2.0 * sq)
    root = _SQRT_PI * sq
    near = root * float(erfcx(z)) - _h(z)
    far = _h(u) + root * float(erfcx(u))
    return (p - q) - math.log(2.0 * q) + math.log(near + math.exp(-2.0 * p) * far)


def log_abs_magnitude(x, y, a):
    """Return ``(sign, log|m|)`` for the magnitude integral.

    ``sign`` is 0 (and the log is ``-inf``) when ``x == 0``.
    """
    if not y > 0:
        raise ValueError(f"y must be positive, got {y}")
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x}")
    if x == 0:
        return 0, -math.inf
    sign = 1 if x > 0 else -1
    p = a * abs(x)
    q = a * a * y
    log_p = math.log(a) + math.log(abs(x))
    if p <= _SERIES_P_MAX and q <= _SERIES_Q_MAX:
        log_f = _log_F_series(p, q, log_p)
    elif p < _LINEAR_P_MAX:
        log_f = _log_F_linear(q, log_p)
    elif p <= 2.0 * q:
        log_f = _log_F_erf(p, q)
    else:
        log_f = _log_F_erfcx(p, q)
    return sign, math.log(a) + _LOG_HALF + log_f


def magnitude_closed_form(x, y, a):
    """Closed-form bet ``m`` for coin sum ``x``, variance proxy ``y`` and range ``a``.

    Returns ``+-inf`` only when ``|m|`` exceeds the float range.
    """
    sign, log_m = log_abs_magnitude(x, y, a)
    if sign == 0:
        return 0.0
    if log_m > 709.78:
        return sign * math.inf
    return sign * math.exp(log_m)


def magnitude_quadrature_oracle(x, y, a, tol=1e-12):
    """Evaluate the magnitude integral by adaptive Gauss-Kronrod quadrature.

    Independent of the closed form. The integrand is folded onto ``[0, a]``
    as ``beta * exp(beta*|x| - beta^2*y) * (1 - exp(-2*beta*|x|))``, which is
    nonnegative, and rescaled by its largest exponent to stay in range.

    Raises :class:`QuadratureError` if ``tol`` is not reached.
    """
    if y < 0:
        raise ValueError(f"y must be non-negative, got {y}")
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    if x == 0:
        return 0.0
    ax = abs(x)
    peak = a if y == 0 else min(a, ax / (2.0 * y))
    shift = peak * ax - peak * peak * y

    def integrand(beta):
        return beta * np.exp(beta * ax - beta * beta * y - shift) * -np.expm1(-2.0 * beta * ax)

    breaks = [0.0, a] if peak in (0.0, a) else [0.0, peak, a]
    value, err = adaptive_gauss_kronrod(integrand, breaks, rtol=tol)
    try:
        scale = math.exp(shift)
    except OverflowError:
        return math.copysign(math.inf, x)
    return math.copysign(value * scale / (2.0 * a), x)


def magnitude_mp_oracle(x, y, a, dps=50):
    """Extended-precision quadrature of the magnitude integral.

    Returns ``(sign, log|m|)`` as floats so values beyond double range can be
    compared against :func:`log_abs_magnitude`.
    """
    import mpmath

    with mpmath.workdps(dps):
        x_, y_, a_ = mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(a)
        if x_ == 0:
            return 0, -math.inf
        ax = abs(x_)
        peak = a_ if y_ == 0 else min(a_, ax / (2 * y_))
        shift = peak * ax - peak * peak * y_

        def integrand(beta):
            return beta * mpmath.exp(beta * ax - beta * beta * y_ - shift) * -mpmath.expm1(-2 * beta * ax)

        pts = [0, a_] if peak in (0, a_) else [0, peak, a_]
        # Narrow Gaussians need extra breakpoints around the peak.
        if y_ > 0:
            width = 1 / mpmath.sqrt(2 * y_)
            extra = [peak + k * width for k in (-8, -3, -1, 1, 3, 8)]
            pts = sorted(set(pts) | {e for e in extra if 0 < e < a_})
        value = mpmath.quad(integrand, pts)
        log_m = mpmath.log(value) + shift - mpmath.log(2 * a_)
        return (1 if x_ > 0 else -1), float(log_m)


@dataclass
class BettingState:
    """Running state of the magnitude learner.

    ``coin_sum`` is the sum of coins seen so far, ``step`` their count and
    ``current_m`` the bet for the next round.
    """

    y_per_step: float
    a: float
    coin_sum: float = 0.0
    step: int = 0
    current_m: float = 0.0

    def __post_init__(self):
        if not self.y_per_step > 0:
            raise ValueError(f"y_per_step must be positive, got {self.y_per_step}")
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")

    @classmethod
    def from_noise(cls, G, sigma_sq, b):
        return cls(y_per_step=sigma_sq / 2.0 + G * G, a=betting_fraction_range(G, b))

    def update(self, coin):
        """Absorb one coin in place and return the new bet."""
        if not math.isfinite(coin):
            raise ValueError(f"coin must be finite, got {coin}")
        self.coin_sum += coin
        self.step += 1
        self.current_m = magnitude_closed_form(self.coin_sum, self.step * self.y_per_step, self.a)
        return self.current_m


def magnitude_update(state, coin):
    """Functional form of :meth:`BettingState.update`; ``state`` is not modified."""
    new = copy.copy(state)
    new.update(coin)
    return new


__all__ = [
    "K1",
    "BettingState",
    "QuadratureError",
    "betting_fraction_range",
    "log_abs_magnitude",
    "magnitude_closed_form",
    "magnitude_mp_oracle",
    "magnitude_quadrature_oracle",
    "magnitude_update",
]
