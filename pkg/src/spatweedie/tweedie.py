"""Compound Poisson-gamma (Tweedie, 1 < p < 2) distribution math.

The family is parametrized by mean ``mu``, dispersion ``phi`` and index
parameter ``p``, with power variance function ``V(mu) = mu**p``. For
``p`` in (1, 2) the distribution is the law of ``Y = sum_{k<=M} C_k``
with ``M ~ Poisson(xi)`` and ``C_k`` iid Gamma(shape ``eta``, scale
``zeta``), which places positive mass at exactly zero. Both links (mean
and dispersion) are logarithmic throughout this package.

Everything here is a pure function of its arguments; the sampler takes a
caller-owned ``numpy.random.Generator``. Generators must not be shared
across threads without external coordination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Exponents beyond this are a hard error: silently saturating to inf would
# corrupt the downstream linear solves.
MAX_EXPONENT = 700.0


class NumericRangeError(ArithmeticError):
    """A linear predictor drove an exponent past the floating-point range."""


def _check_p(p):
    if not 1.0 < p < 2.0:
        raise ValueError(f"index parameter p must lie in (1, 2), got {p}")


@dataclass(frozen=True)
class TweedieSpec:
    """Index parameter and (fixed logarithmic) link choices.

    ``p`` must lie strictly inside (1, 2); the boundary values 1 and 2 are
    accepted only by :func:`cp_deviance`, where they select the Poisson and
    gamma limit formulas.
    """

    p: float
    link_mean: str = "log"
    link_dispersion: str = "log"

    def __post_init__(self):
        _check_p(self.p)
        if self.link_mean != "log" or self.link_dispersion != "log":
            raise ValueError("only logarithmic links are supported")

    def variance(self, mu):
        """Power variance function V(mu) = mu**p (mu > 0)."""
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise ValueError("mu must be positive")
        return mu**self.p


@dataclass(frozen=True)
class PoissonGammaParams:
    """Poisson rate and gamma shape/scale of the mixture representation."""

    xi: float
    eta: float
    zeta: float

    def mean(self):
        return self.xi * self.eta * self.zeta

    def dispersion(self, p):
        _check_p(p)
        return self.xi ** (1.0 - p) * (self.eta * self.zeta) ** (2.0 - p) / (2.0 - p)


def cp_deviance(y, mu, p):
    """Unit deviance of the compound Poisson-gamma family.

    ``2 * (max(y,0)**(2-p) / ((1-p)(2-p)) - y*mu**(1-p)/(1-p) + mu**(2-p)/(2-p))``

    equals ``-2 * integral_y^mu (y-u)/u**p du``; it is nonnegative and zero
    iff ``y == mu``. ``p = 1`` and ``p = 2`` are accepted here only, and
    evaluate the Poisson and gamma limit formulas.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(y < 0):
        raise ValueError("y must be nonnegative")
    if np.any(mu <= 0):
        raise ValueError("mu must be positive")
    if p == 1.0:
        # Poisson limit, with y*log(y) -> 0 as y -> 0.
        ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
        return 2.0 * (ylogy - y * np.log(mu) - (y - mu))
    if p == 2.0:
        if np.any(y <= 0):
            raise ValueError("gamma limit (p=2) requires y > 0")
        return 2.0 * (-np.log(y / mu) + (y - mu) / mu)
    _check_p(p)
    return 2.0 * (
        np.maximum(y, 0.0) ** (2.0 - p) / ((1.0 - p) * (2.0 - p))
        - y * mu ** (1.0 - p) / (1.0 - p)
        + mu ** (2.0 - p) / (2.0 - p)
    )


def theta_to_mean(theta, p):
    """Invert the canonical parameter: mu = ((1-p)*theta)**(1/(1-p)).

    The natural parameter space for p in (1, 2) is the negative half-line;
    at p = 1.5 this reduces to mu = 4/theta**2.
    """
    _check_p(p)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta >= 0):
        raise ValueError("canonical parameter must be negative for 1 < p < 2")
    return ((1.0 - p) * theta) ** (1.0 / (1.0 - p))


def mean_to_theta(mu, p):
    """Canonical parameter theta = mu**(1-p)/(1-p) (negative for mu > 0)."""
    _check_p(p)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("mu must be positive")
    return mu ** (1.0 - p) / (1.0 - p)


def poisson_gamma_params(mu, phi, p):
    """Map (mu, phi, p) to the mixture parameters (xi, eta, zeta).

    Uses xi = mu**(2-p)/(phi*(2-p)), eta = (2-p)/(p-1),
    zeta = phi*(p-1)*mu**(p-1), the inverse of mu = xi*eta*zeta and
    phi = xi**(1-p)*(eta*zeta)**(2-p)/(2-p).
    """
    _check_p(p)
    if mu <= 0 or phi <= 0:
        raise ValueError("mu and phi must be positive")
    xi = mu ** (2.0 - p) / (phi * (2.0 - p))
    eta = (2.0 - p) / (p - 1.0)
    zeta = phi * (p - 1.0) * mu ** (p - 1.0)
    return PoissonGammaParams(xi=xi, eta=eta, zeta=zeta)


def sample_cp(mu, phi, p, rng, size=None):
    """Draw (y, m) exactly via the Poisson-gamma mixture.

    ``m ~ Poisson(xi)`` and, given m, ``y ~ Gamma(m*eta, zeta)`` (the sum of
    m iid Gamma(eta, zeta) variables; y = 0 when m = 0). ``mu`` and ``phi``
    may be arrays; draws are deterministic given the state of ``rng``.
    """
    _check_p(p)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(mu <= 0) or np.any(phi <= 0):
        raise ValueError("mu and phi must be positive")
    xi = mu ** (2.0 - p) / (phi * (2.0 - p))
    eta = (2.0 - p) / (p - 1.0)
    zeta = phi * (p - 1.0) * mu ** (p - 1.0)
    m = rng.poisson(xi, size=size)
    # Gamma with shape 0 is the point mass at 0, matching the m = 0 branch.
    y = np.where(m > 0, rng.gamma(m * eta, zeta, size=size), 0.0)
    return y, m


def loglik_kernel(y, lp, phi, p):
    """Per-observation effect-dependent negative log-likelihood term.

    ``phi**-1 * (y*exp(-(p-1)*lp)/(p-1) + exp((2-p)*lp)/(2-p))``

    where ``lp`` is the LOG-mean linear predictor (fitted log-mean offset
    plus any spatial effect and intercept), not the mean itself. The term
    that is free of the linear predictor is deliberately omitted, so sums
    of this kernel are objective values up to an additive constant.
    """
    _check_p(p)
    y = np.asarray(y, dtype=float)
    lp = np.asarray(lp, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise ValueError("phi must be positive")
    _guard_exponent(lp, p)
    return (y * np.exp(-(p - 1.0) * lp) / (p - 1.0) + np.exp((2.0 - p) * lp) / (2.0 - p)) / phi


def loglik_kernel_dlp(y, lp, phi, p):
    """Derivative of :func:`loglik_kernel` in the linear predictor.

    ``phi**-1 * (-y*exp(-(p-1)*lp) + exp((2-p)*lp))``
    """
    _check_p(p)
    y = np.asarray(y, dtype=float)
    lp = np.asarray(lp, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise ValueError("phi must be positive")
    _guard_exponent(lp, p)
    return (-y * np.exp(-(p - 1.0) * lp) + np.exp((2.0 - p) * lp)) / phi


def _guard_exponent(lp, p):
    hi = (2.0 - p) * np.max(lp, initial=-np.inf)
    lo = -(p - 1.0) * np.min(lp, initial=np.inf)
    worst = max(hi, lo)
    if worst > MAX_EXPONENT:
        raise NumericRangeError(
            f"linear predictor exponent {worst:.1f} exceeds {MAX_EXPONENT:.0f}"
        )
