"""Asymmetric Laplace distribution and its normal-exponential mixture form.

Scale convention: ``scale`` is the ALD scale, written sigma^2 in the model,
so the density is ``tau (1 - tau) / scale * exp(-check_loss(y - loc) / scale)``
and the mixing weight is exponential with mean ``scale``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantileLevel:
    """Quantile level with the mixture constants derived from it.

    ``xi`` shifts the conditional normal mean by ``xi * w`` and ``phi``
    scales its variance to ``scale * phi * w``.
    """

    tau: float

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau!r}")

    @property
    def xi(self) -> float:
        return (1.0 - 2.0 * self.tau) / (self.tau * (1.0 - self.tau))

    @property
    def phi(self) -> float:
        return 2.0 / (self.tau * (1.0 - self.tau))


def check_loss(u, tau):
    """Pinball loss: ``tau * u`` for ``u >= 0`` and ``(tau - 1) * u`` otherwise."""
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0.0, tau * u, (tau - 1.0) * u)
    return out if out.ndim else float(out)


def ald_logpdf(y, location, scale, tau):
    if np.any(np.asarray(scale) <= 0):
        raise ValueError("scale must be positive")
    return np.log(tau * (1.0 - tau) / scale) - check_loss(np.asarray(y) - location, tau) / scale


def ald_cdf(y, location, scale, tau):
    z = (np.asarray(y, dtype=float) - location) / scale
    # exponent clipped so the unused branch cannot overflow
    below = tau * np.exp(np.minimum((1.0 - tau) * z, 0.0))
    above = 1.0 - (1.0 - tau) * np.exp(np.minimum(-tau * z, 0.0))
    out = np.where(z < 0.0, below, above)
    return out if out.ndim else float(out)


def ald_ppf(p, location, scale, tau):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        below = location + scale * np.log(p / tau) / (1.0 - tau)
        above = location - scale * np.log((1.0 - p) / (1.0 - tau)) / tau
    out = np.where(p < tau, below, above)
    return out if out.ndim else float(out)


def mixture_draw(location, scale, tau, rng: np.random.Generator, size=None):
    """Draw ``(y, w)`` with ``w ~ Exp(mean scale)``, ``y | w ~ N(loc + xi w, scale phi w)``.

    The marginal law of ``y`` is ALD(location, scale, tau).
    """
    q = QuantileLevel(tau)
    w = rng.exponential(scale, size=size)
    z = rng.standard_normal(size=size)
    y = location + q.xi * w + np.sqrt(scale * q.phi * w) * z
    return y, w
