"""Inverse Gaussian distribution parameterised by mean and standard deviation.

The shape parameter is ``lam = mu**3 / sigma**2``. Every function accepts
scalars or numpy arrays (broadcast together) and works in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

LOG_2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_LOG_PHI_TAIL = -8.0


class DomainError(ValueError):
    """Raised when an argument lies outside the distribution's support."""


def _positive(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


@dataclass(frozen=True)
class IGParams:
    """Conditional mean ``mu`` and standard deviation ``sigma`` (seconds)."""

    mu: float | np.ndarray
    sigma: float | np.ndarray

    def __post_init__(self):
        _positive("mu", self.mu)
        _positive("sigma", self.sigma)
        lam = self.lam
        if not np.all(np.isfinite(lam)) or np.any(np.asarray(lam) <= 0):
            raise DomainError(f"derived shape parameter is not finite and positive: {lam!r}")

    @property
    def lam(self):
        return lambda_from(self.mu, self.sigma)

    @classmethod
    def from_shape(cls, mu, lam) -> "IGParams":
        return cls(mu=mu, sigma=sigma_from(mu, lam))

    def __len__(self):
        return int(np.size(self.mu))


@dataclass(frozen=True)
class IGTrajectory:
    """Per-step parameters paired with the observed next interval.

    ``params.mu[i]`` and ``params.sigma[i]`` are the prediction made from
    ``x[:i+1]`` and ``targets[i]`` is the interval they are scored against.
    """

    params: IGParams
    targets: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.params.mu, dtype=np.float64))
        sigma = np.atleast_1d(np.asarray(self.params.sigma, dtype=np.float64))
        targets = np.atleast_1d(np.asarray(self.targets, dtype=np.float64))
        if not (mu.shape == sigma.shape == targets.shape) or mu.ndim != 1:
            raise DomainError(
                f"trajectory arrays must be 1-D of equal length, got mu{mu.shape}, "
                f"sigma{sigma.shape}, targets{targets.shape}"
            )
        _positive("targets", targets)
        object.__setattr__(self, "params", IGParams(mu, sigma))
        object.__setattr__(self, "targets", targets)

    @property
    def mu(self) -> np.ndarray:
        return self.params.mu

    @property
    def sigma(self) -> np.ndarray:
        return self.params.sigma

    def __len__(self):
        return self.targets.size

    def concat(self, other: "IGTrajectory") -> "IGTrajectory":
        return IGTrajectory(
            IGParams(np.concatenate([self.mu, other.mu]), np.concatenate([self.sigma, other.sigma])),
            np.concatenate([self.targets, other.targets]),
        )


def lambda_from(mu, sigma):
    """Shape parameter ``mu**3 / sigma**2``."""
    mu = _positive("mu", mu)
    sigma = _positive("sigma", sigma)
    return _out(mu**3 / sigma**2)


def sigma_from(mu, lam):
    """Standard deviation ``sqrt(mu**3 / lam)``; inverse of :func:`lambda_from`."""
    mu = _positive("mu", mu)
    lam = _positive("lam", lam)
    return _out(np.sqrt(mu**3 / lam))


def norm_cdf(z):
    """Standard normal CDF via erfc (no cancellation in the lower tail)."""
    z = np.asarray(z, dtype=np.float64)
    return _out(0.5 * erfc(-z / _SQRT2))


def _log_phi_tail(z):
    # Asymptotic series of the Mills ratio: log Phi(z) for z << 0.
    inv_z2 = 1.0 / (z * z)
    series = np.ones_like(z)
    term = np.ones_like(z)
    for k in range(1, 25):
        term = -term * (2 * k - 1) * inv_z2
        series = series + term
    return -0.5 * z * z - np.log(-z) - 0.5 * LOG_2PI + np.log(series)


def log_norm_cdf(z):
    """log Phi(z), erfc-based above -8 and asymptotic below."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    tail = z < _LOG_PHI_TAIL
    with np.errstate(divide="ignore"):
        out[~tail] = np.log(0.5 * erfc(-z[~tail] / _SQRT2))
    out[tail] = _log_phi_tail(z[tail])
    return _out(out)


def log_pdf(x, p: IGParams):
    x = _positive("x", x)
    mu = np.asarray(p.mu, dtype=np.float64)
    lam = np.asarray(p.lam, dtype=np.float64)
    return _out(0.5 * (np.log(lam) - LOG_2PI - 3.0 * np.log(x)) - lam * (x - mu) ** 2 / (2.0 * mu**2 * x))


def pdf(x, p: IGParams):
    return _out(np.exp(log_pdf(x, p)))


def cdf(x, p: IGParams):
    """F(x) = Phi(a (x/mu - 1)) + exp(2 lam/mu) Phi(-a (x/mu + 1)), a = sqrt(lam/x).

    The second product is formed as exp(2 lam/mu + log Phi(.)) so it stays
    finite when lam/mu is in the hundreds.
    """
    x = _positive("x", x)
    mu = np.asarray(p.mu, dtype=np.float64)
    lam = np.asarray(p.lam, dtype=np.float64)
    a = np.sqrt(lam / x)
    first = norm_cdf(a * (x / mu - 1.0))
    second = np.exp(2.0 * lam / mu + np.asarray(log_norm_cdf(-a * (x / mu + 1.0))))
    return _out(np.clip(first + second, 0.0, 1.0))


def sample(p: IGParams, rng: np.random.Generator, size=None):
    """Michael-Schucany-Haas transformation sampler."""
    mu = np.asarray(p.mu, dtype=np.float64)
    lam = np.asarray(p.lam, dtype=np.float64)
    if size is None:
        size = np.broadcast_shapes(mu.shape, lam.shape)
    z = rng.standard_normal(size)
    u = rng.uniform(size=size)
    return _out(msh_transform(mu, lam, z, u))


def msh_transform(mu, lam, z, u):
    """Map a standard normal ``z`` and a uniform ``u`` to an IG(mu, lam) draw."""
    phi = mu * z * z / (2.0 * lam)
    # smaller root mu(1 + phi - sqrt(phi^2 + 2 phi)), rationalised
    root = mu / (1.0 + phi + np.sqrt(phi * (phi + 2.0)))
    return np.where(u <= mu / (mu + root), root, mu * mu / root)


def nll_step(x_next, p: IGParams):
    """Per-beat negative log-likelihood written in terms of (mu, sigma)."""
    x = _positive("x_next", x_next)
    mu = np.asarray(p.mu, dtype=np.float64)
    s2 = np.asarray(p.sigma, dtype=np.float64) ** 2
    return _out(0.5 * np.log(2.0 * math.pi * x**3 * s2 / mu**3) + mu * (x - mu) ** 2 / (2.0 * s2 * x))


def nll_total(traj: IGTrajectory) -> float:
    if len(traj) == 0:
        raise DomainError("empty trajectory")
    return float(np.sum(np.atleast_1d(nll_step(traj.targets, traj.params))))
