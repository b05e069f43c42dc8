"""Random variate generation used throughout the sampler.

Every sampler takes an explicit ``numpy.random.Generator`` (the random
stream) and never touches global state, so chains on separate streams
can run side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lapack, solve_triangular

from . import ars
from ._jit import jit
from .ars import ARSError, MaxRefinementError, NonConcavityError  # noqa: F401

RngStream = np.random.Generator


def rng_stream(seed) -> RngStream:
    """Create a PCG64 stream from an integer seed or a ``SeedSequence``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (leading minor of order {pivot} fails)")
        self.pivot = pivot


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises ``NotPositiveDefiniteError`` naming the failing pivot."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(int(info))
    if info < 0:  # pragma: no cover
        raise ValueError(f"dpotrf argument {-info} invalid")
    return c


def _check_positive(**params):
    for name, value in params.items():
        v = np.asarray(value)
        if not np.all(v > 0) or not np.all(np.isfinite(v)):
            raise ValueError(f"{name} must be positive and finite, got {value!r}")


def draw_normal(mean, sd, rng: RngStream, size=None):
    _check_positive(sd=sd)
    return rng.normal(mean, sd, size=size)


def draw_mvn(mean, cov, rng: RngStream, size=None):
    """Multivariate normal draw(s) via the Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=float)
    chol = cholesky(cov)
    if size is None:
        z = rng.standard_normal(mean.shape[0])
        return mean + chol @ z
    z = rng.standard_normal((size, mean.shape[0]))
    return mean + z @ chol.T


def draw_mvn_precision(linear, precision, rng: RngStream):
    """Draw from N(P^-1 b, P^-1) given the precision ``P`` and ``b``.

    Returns ``(draw, mean)``.
    """
    chol = cholesky(precision)
    mean = solve_triangular(chol.T, solve_triangular(chol, linear, lower=True), lower=False)
    z = rng.standard_normal(mean.shape[0])
    return mean + solve_triangular(chol.T, z, lower=False), mean


def draw_gamma(shape, rate, rng: RngStream, size=None):
    """Gamma variate, rate parametrisation (mean ``shape / rate``)."""
    _check_positive(shape=shape, rate=rate)
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def draw_inverse_gamma(shape, rate, rng: RngStream, size=None):
    return 1.0 / draw_gamma(shape, rate, rng, size=size)


def draw_inverse_wishart(df: float, scale: np.ndarray, rng: RngStream) -> np.ndarray:
    """Inverse-Wishart(df, scale) draw by Bartlett decomposition of the Wishart inverse."""
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if df <= p - 1:
        raise ValueError(f"degrees of freedom {df} must exceed dimension - 1 = {p - 1}")
    # W ~ Wishart(df, scale^-1), Sigma = W^-1
    lower = cholesky(np.linalg.inv(scale))
    a = np.zeros((p, p))
    for i in range(p):
        a[i, i] = math.sqrt(rng.chisquare(df - i))
        a[i, :i] = rng.standard_normal(i)
    inv_la = solve_triangular(lower @ a, np.eye(p), lower=True)
    sigma = inv_la.T @ inv_la
    return 0.5 * (sigma + sigma.T)


@jit
def inverse_gaussian_scalar(mu, lam, rng):
    """Michael-Schucany-Haas transformation with root selection by a uniform."""
    nu = rng.standard_normal()
    y = nu * nu
    muy = mu * y
    # smaller root of the quadratic, written without cancellation
    x = mu - 2.0 * mu * muy / (muy + math.sqrt(muy * muy + 4.0 * mu * lam * y))
    if rng.random() <= mu / (mu + x):
        return x
    return mu * mu / x


@jit
def _inverse_gaussian_fill(mu, lam, rng, out):
    for i in range(out.shape[0]):
        out[i] = inverse_gaussian_scalar(mu[i], lam[i], rng)


def draw_inverse_gaussian(mu, lam, rng: RngStream, size=None):
    """Inverse-Gaussian(mu, lambda) variates (mean ``mu``, variance ``mu**3 / lambda``)."""
    _check_positive(mu=mu, lam=lam)
    scalar = size is None and np.ndim(mu) == 0 and np.ndim(lam) == 0
    shape = size if size is not None else np.broadcast(np.asarray(mu), np.asarray(lam)).shape
    mu_b = np.ascontiguousarray(np.broadcast_to(np.asarray(mu, dtype=float), shape)).ravel()
    lam_b = np.ascontiguousarray(np.broadcast_to(np.asarray(lam, dtype=float), shape)).ravel()
    out = np.empty(mu_b.shape[0])
    _inverse_gaussian_fill(mu_b, lam_b, rng, out)
    if scalar:
        return float(out[0])
    return out.reshape(shape)


@dataclass(frozen=True)
class LogConcaveTarget:
    """Unnormalised log-density on the open interval ``(lower, upper)``.

    ``derivative`` is optional; without it the sampler builds its envelope
    from chords instead of tangents.
    """

    log_density: Callable[[float], float]
    lower: float = -math.inf
    upper: float = math.inf
    derivative: Optional[Callable[[float], float]] = None


def _python_logf(x, target):
    h = float(target.log_density(x))
    if math.isnan(h):
        h = -math.inf
    if target.derivative is None:
        return h, 0.0
    return h, float(target.derivative(x))


_PY_SAMPLER = ars.make_sampler(_python_logf, compiled=False)


def ars_sample(
    target: LogConcaveTarget,
    init_abscissae,
    rng: RngStream,
    size: Optional[int] = None,
    tol: float = ars.DEFAULT_TOL,
    max_points: int = ars.DEFAULT_MAX_POINTS,
    max_iter: int = ars.DEFAULT_MAX_ITER,
):
    """Exact draw(s) from a log-concave target by adaptive rejection sampling.

    ``init_abscissae`` must be increasing and inside the support.  On an
    unbounded side the outermost point must lie on the far side of the
    mode.  When ``size`` is given the envelope keeps adapting across the
    draws.

    Raises ``NonConcavityError`` when a chord is found above the
    log-density by more than ``tol`` (relative), and
    ``MaxRefinementError`` when the proposal budget runs out.
    """
    xs = np.asarray(init_abscissae, dtype=float)
    if xs.ndim != 1 or xs.shape[0] < 2:
        raise ValueError("need at least two initial abscissae")
    tangent = target.derivative is not None
    if not tangent and xs.shape[0] < 3:
        raise ValueError("derivative-free sampling needs at least three initial abscissae")
    out = np.empty(1 if size is None else int(size))
    status, bad = _PY_SAMPLER.ars_core(
        target, xs, float(target.lower), float(target.upper), tangent,
        rng, out, max_points, max_iter, tol,
    )
    ars.raise_for_status(status, bad)
    return float(out[0]) if size is None else out


def mode_abscissae(target: LogConcaveTarget, x0: float, step: float = 1.0) -> np.ndarray:
    """Three abscissae bracketing the mode, found by step doubling from ``x0``."""
    out = np.empty(3)
    status = _PY_SAMPLER.bracket_mode(
        target, float(x0), float(step), float(target.lower), float(target.upper), out, np.empty(3), np.empty(3)
    )
    ars.raise_for_status(status, float(x0))
    return out
