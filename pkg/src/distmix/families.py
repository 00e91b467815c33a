"""Parametric component families: log densities, parameter scores, samplers.

Every family exposes its distribution parameters on their natural scale
(location/scale, or rate).  Predictor values are mapped onto that scale by
the transform attached to each parameter slot, so the density code can
assume valid inputs: positive scales, positive rates.  All operations are
vectorized over observations and stateless; only ``sample`` touches the
caller-supplied random generator.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

# Predictor values are clipped to this window before exponentiation so that
# wild coefficients during early optimization cannot overflow the scale or
# rate parameters.  The derivative is that of the clipped map.
ETA_CLAMP = 30.0

_LOG_2PI = math.log(2.0 * math.pi)


class Identity:
    """Identity transform for real-valued parameters."""

    name = "identity"

    @staticmethod
    def apply(eta):
        return np.asarray(eta, dtype=float)

    @staticmethod
    def deriv(eta):
        return np.ones_like(np.asarray(eta, dtype=float))


class Exp:
    """Exponential transform for positive parameters, clipped at +-ETA_CLAMP."""

    name = "exp"

    @staticmethod
    def apply(eta):
        return np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))

    @staticmethod
    def deriv(eta):
        eta = np.asarray(eta, dtype=float)
        inside = (eta > -ETA_CLAMP) & (eta < ETA_CLAMP)
        return np.where(inside, np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP)), 0.0)


class Family:
    """Base class; subclasses define a concrete response distribution."""

    kind = ""
    param_names: tuple = ()
    transforms: tuple = ()

    @property
    def n_params(self):
        return len(self.param_names)

    def log_density(self, y, theta):
        """Elementwise log f(y | theta); -inf for y outside the support."""
        raise NotImplementedError

    def score(self, y, theta):
        """Tuple of d log f / d theta_k, one array per parameter.

        Entries where the density is zero are returned as 0 so that
        responsibility-weighted sums stay finite.
        """
        raise NotImplementedError

    def sample(self, theta, rng):
        """Draw from the distribution; reproducible for a seeded ``rng``."""
        raise NotImplementedError

    def _unpack(self, theta):
        if len(theta) != self.n_params:
            raise ValueError(
                f"{self.kind} expects {self.n_params} parameters, got {len(theta)}"
            )
        return tuple(np.asarray(t, dtype=float) for t in theta)

    def __repr__(self):
        return f"{type(self).__name__}()"


def _check_positive(value, what):
    if np.any(value <= 0.0) or not np.all(np.isfinite(value)):
        raise ValueError(f"{what} must be positive and finite")
    return value


class Normal(Family):
    kind = "normal"
    param_names = ("location", "scale")
    transforms = (Identity, Exp)

    def log_density(self, y, theta):
        mu, sigma = self._unpack(theta)
        _check_positive(sigma, "normal scale")
        z = (np.asarray(y, dtype=float) - mu) / sigma
        return -0.5 * _LOG_2PI - np.log(sigma) - 0.5 * z * z

    def score(self, y, theta):
        mu, sigma = self._unpack(theta)
        _check_positive(sigma, "normal scale")
        d = np.asarray(y, dtype=float) - mu
        return (d / sigma**2, (d * d - sigma**2) / sigma**3)

    def sample(self, theta, rng):
        mu, sigma = self._unpack(theta)
        _check_positive(sigma, "normal scale")
        return rng.normal(mu, sigma)


class Laplace(Family):
    kind = "laplace"
    param_names = ("location", "scale")
    transforms = (Identity, Exp)

    def log_density(self, y, theta):
        mu, b = self._unpack(theta)
        _check_positive(b, "laplace scale")
        return -math.log(2.0) - np.log(b) - np.abs(np.asarray(y, dtype=float) - mu) / b

    def score(self, y, theta):
        mu, b = self._unpack(theta)
        _check_positive(b, "laplace scale")
        d = np.asarray(y, dtype=float) - mu
        return (np.sign(d) / b, (np.abs(d) - b) / b**2)

    def sample(self, theta, rng):
        mu, b = self._unpack(theta)
        _check_positive(b, "laplace scale")
        return rng.laplace(mu, b)


class Logistic(Family):
    """Logistic distribution parameterized by location and scale s."""

    kind = "logistic"
    param_names = ("location", "scale")
    transforms = (Identity, Exp)

    def log_density(self, y, theta):
        mu, s = self._unpack(theta)
        _check_positive(s, "logistic scale")
        z = (np.asarray(y, dtype=float) - mu) / s
        # log f = -z - 2 log(1 + exp(-z)) - log s, written via logaddexp for
        # stability at large |z|
        return -z - 2.0 * np.logaddexp(0.0, -z) - np.log(s)

    def score(self, y, theta):
        mu, s = self._unpack(theta)
        _check_positive(s, "logistic scale")
        z = (np.asarray(y, dtype=float) - mu) / s
        p = special.expit(z)
        return ((2.0 * p - 1.0) / s, (z * (2.0 * p - 1.0) - 1.0) / s)

    def sample(self, theta, rng):
        mu, s = self._unpack(theta)
        _check_positive(s, "logistic scale")
        return rng.logistic(mu, s)


class Poisson(Family):
    """Poisson counts; y outside the support gets density zero, not an error."""

    kind = "poisson"
    param_names = ("rate",)
    transforms = (Exp,)

    @staticmethod
    def _support(y):
        return (y >= 0) & (y == np.floor(y))

    def log_density(self, y, theta):
        (rate,) = self._unpack(theta)
        _check_positive(rate, "poisson rate")
        y = np.asarray(y, dtype=float)
        ok = self._support(y)
        safe = np.where(ok, y, 0.0)
        val = safe * np.log(rate) - rate - special.gammaln(safe + 1.0)
        return np.where(ok, val, -np.inf)

    def score(self, y, theta):
        (rate,) = self._unpack(theta)
        _check_positive(rate, "poisson rate")
        y = np.asarray(y, dtype=float)
        ok = self._support(y)
        return (np.where(ok, y / rate - 1.0, 0.0),)

    def sample(self, theta, rng):
        (rate,) = self._unpack(theta)
        _check_positive(rate, "poisson rate")
        return rng.poisson(rate).astype(float)


_FAMILIES = {f.kind: f for f in (Normal(), Laplace(), Logistic(), Poisson())}


def get_family(kind):
    """Look up a family singleton by its kind string."""
    try:
        return _FAMILIES[kind.lower()]
    except KeyError:
        raise ValueError(
            f"unknown family {kind!r}; choose from {sorted(_FAMILIES)}"
        ) from None
