"""Gibbs updates for the longitudinal mixed submodel.

Quantile mode works with the mixture form ``y = eta + xi w + sqrt(sigma2 phi w) z``,
so given the weights every record is Gaussian with mean ``eta + xi w`` and
variance ``sigma2 phi w``.  Mean mode is the special case ``w = 1``,
``xi = 0``, ``phi = 1``; the helpers below take ``(w, xi, phi)`` explicitly so
one code path serves both.

Random effects are stored as an ``n x 2`` array ``(g0, g1)``; columns of
shared effects that are switched off stay at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._jit import jit
from .distributions import (
    draw_inverse_gamma,
    draw_inverse_wishart,
    draw_mvn_precision,
    inverse_gaussian_scalar,
)

RESIDUAL_CLAMP = 1e-10


@dataclass(frozen=True)
class LongState:
    beta_l: np.ndarray
    gamma: np.ndarray
    sigma2: float
    w: np.ndarray
    re_cov: np.ndarray

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if np.any(np.asarray(self.w) <= 0):
            raise ValueError("weights must be positive")

    def replace(self, **changes) -> "LongState":
        return replace(self, **changes)


def record_variances(w, sigma2, phi):
    """Conditional variance ``sigma2 * phi * w`` of every record."""
    return sigma2 * phi * np.asarray(w, dtype=float)


def beta_l_conditional(x, offset_y, w, sigma2, xi, phi, prior_mean, prior_cov):
    """Precision and linear term of the Gaussian full conditional of ``beta_l``.

    ``offset_y`` is ``y - eta_ls``; the ``xi w`` shift is removed here.
    Returns ``(precision, linear)``; the mean is ``precision^-1 linear``.
    """
    v_inv = 1.0 / record_variances(w, sigma2, phi)
    prior_prec = np.linalg.inv(prior_cov)
    resid = offset_y - xi * np.asarray(w, dtype=float)
    precision = (x.T * v_inv) @ x + prior_prec
    linear = x.T @ (v_inv * resid) + prior_prec @ prior_mean
    return 0.5 * (precision + precision.T), linear


def update_beta_l(x, offset_y, w, sigma2, xi, phi, prior_mean, prior_cov, rng) -> np.ndarray:
    precision, linear = beta_l_conditional(x, offset_y, w, sigma2, xi, phi, prior_mean, prior_cov)
    draw, _ = draw_mvn_precision(linear, precision, rng)
    return draw


def random_effects_conditional(z, subject, n, resid, w, sigma2, phi, re_cov):
    """Per-subject precision ``(n, q, q)`` and linear term ``(n, q)``.

    ``z`` holds the active shared-effect columns, ``resid`` is
    ``y - X beta - xi w`` and the prior is ``N(0, re_cov)``.
    """
    q = z.shape[1]
    v_inv = 1.0 / record_variances(w, sigma2, phi)
    prec = np.broadcast_to(np.linalg.inv(re_cov), (n, q, q)).copy()
    lin = np.zeros((n, q))
    for a in range(q):
        lin[:, a] = np.bincount(subject, weights=z[:, a] * resid * v_inv, minlength=n)
        for b in range(a, q):
            s = np.bincount(subject, weights=z[:, a] * z[:, b] * v_inv, minlength=n)
            prec[:, a, b] += s
            if b != a:
                prec[:, b, a] += s
    return prec, lin


def update_random_effects_longonly(z, subject, n, resid, w, sigma2, phi, re_cov, rng) -> np.ndarray:
    """Closed-form bivariate (or scalar) Gaussian draw of every subject's random effects."""
    prec, lin = random_effects_conditional(z, subject, n, resid, w, sigma2, phi, re_cov)
    chol = np.linalg.cholesky(prec)
    noise = rng.standard_normal(lin.shape)
    mean = np.linalg.solve(prec, lin[..., None])[..., 0]
    # L^-T z has covariance prec^-1
    return mean + np.linalg.solve(np.swapaxes(chol, 1, 2), noise[..., None])[..., 0]

@jit
def _weights_kernel(resid, mu_num, lam, rng, out):
    for i in range(resid.shape[0]):
        r = abs(resid[i])
        if r < RESIDUAL_CLAMP:
            r = RESIDUAL_CLAMP
        out[i] = 1.0 / inverse_gaussian_scalar(mu_num / r, lam, rng)


def weight_conditional(resid, sigma2, xi, phi):
    """Inverse-Gaussian ``(mu, lambda)`` of every ``1 / w`` given residuals ``y - eta``."""
    r = np.maximum(np.abs(np.asarray(resid, dtype=float)), RESIDUAL_CLAMP)
    s = xi * xi + 2.0 * phi
    return math.sqrt(s) / r, s / (sigma2 * phi)


def update_weights(resid, sigma2, xi, phi, rng) -> np.ndarray:
    """Draw ``1/w ~ InvGauss(sqrt(xi^2 + 2 phi) / |r|, (xi^2 + 2 phi) / (sigma2 phi))`` per record."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    resid = np.ascontiguousarray(resid, dtype=float)
    out = np.empty(resid.shape[0])
    s = xi * xi + 2.0 * phi
    _weights_kernel(resid, math.sqrt(s), s / (sigma2 * phi), rng, out)
    return out


def sigma2_conditional(resid, w, xi, phi, prior, quantile=True):
    """Inverse-gamma ``(shape, rate)``.

    Quantile mode folds in the exponential prior of the weights, which
    contributes ``N`` to the shape and ``sum(w)`` to the rate.
    """
    a0, b0 = prior
    resid = np.asarray(resid, dtype=float)
    n = resid.shape[0]
    if not quantile:
        return a0 + 0.5 * n, b0 + 0.5 * float(resid @ resid)
    w = np.asarray(w, dtype=float)
    e = resid - xi * w
    return a0 + 1.5 * n, b0 + float(np.sum(e * e / w)) / (2.0 * phi) + float(np.sum(w))


def update_sigma2(resid, w, xi, phi, prior, rng, quantile=True) -> float:
    shape, rate = sigma2_conditional(resid, w, xi, phi, prior, quantile)
    return float(draw_inverse_gamma(shape, rate, rng))


def re_cov_conditional(gamma, df, scale):
    gamma = np.asarray(gamma, dtype=float)
    return df + gamma.shape[0], scale + gamma.T @ gamma


def update_re_cov(gamma, prior, rng) -> np.ndarray:
    """Inverse-Wishart ``IW(df + n, S + sum g g^T)`` draw; ``prior`` is ``(df, S)``."""
    df, scale = re_cov_conditional(gamma, *prior)
    return draw_inverse_wishart(df, scale, rng)

